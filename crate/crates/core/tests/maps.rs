use proptest::prelude::*;
use rasp_evt::maps::{BackStep, LambdaChain};
use rasp_evt::{PiecewiseMapSpec, Point, Region};

fn builtins() -> Vec<PiecewiseMapSpec> {
    vec![
        PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap(),
        PiecewiseMapSpec::contraction_1d(0.3, 0.45).unwrap(),
        PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap(),
        PiecewiseMapSpec::baker(0.1, 0.3, 0.25).unwrap(),
        PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap(),
        PiecewiseMapSpec::quad_affine(0.3, 0.4, 0.7).unwrap(),
    ]
}

#[test]
fn lambda_sets_are_nested_and_open() {
    for map in builtins() {
        let chain = LambdaChain::new(&map).unwrap();
        for k in 0..chain.depth() {
            assert!(chain.set(k + 1).is_subset_of(&chain.set(k)), "{:?} k={k}", map.kind());
            assert!(chain.set(k + 1).is_open());
        }
    }
}

#[test]
fn piece_images_are_disjoint() {
    for map in builtins() {
        let images = map.piece_images().unwrap();
        for (i, a) in images.iter().enumerate() {
            for b in &images[i + 1..] {
                assert!(!a.intersects(b), "{:?}", map.kind());
            }
        }
    }
}

#[test]
fn lambda_sets_avoid_singular_images() {
    for map in builtins() {
        let chain = LambdaChain::with_depth(&map, 6).unwrap();
        for k in 1..=chain.depth() {
            for p in 1..=k {
                assert!(!chain.set(k).intersects(&map.singular_image(p).unwrap()));
            }
        }
    }
}

fn contracting() -> Vec<PiecewiseMapSpec> {
    builtins()
        .into_iter()
        .filter(|m| m.contraction_factor().is_some())
        .collect()
}

fn to_point(dim: usize, v: &[f64]) -> Point {
    Point::new(&v[..dim])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn contraction_certificate(which in 0usize..4, u in prop::array::uniform2(0.0f64..1.0), v in prop::array::uniform2(0.0f64..1.0)) {
        let maps = contracting();
        let map = &maps[which % maps.len()];
        let alpha = map.contraction_factor().unwrap();
        let (x, y) = (to_point(map.dim(), &u), to_point(map.dim(), &v));
        if let (Ok(i), Ok(j)) = (map.piece_index(&x), map.piece_index(&y)) {
            if i == j {
                let fx = map.evaluate(&x).unwrap();
                let fy = map.evaluate(&y).unwrap();
                prop_assert!(fx.sup_distance(&fy) <= alpha * x.sup_distance(&y) * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jk_chain_rule(which in 0usize..6, u in prop::array::uniform2(0.0f64..1.0), k in 0usize..6) {
        let maps = builtins();
        let map = &maps[which];
        let x0 = to_point(map.dim(), &u);
        prop_assume!(map.piece_index(&x0).is_ok());
        let mut x = x0;
        for _ in 0..=k {
            match map.evaluate(&x) {
                Ok(y) => x = y,
                Err(_) => return Ok(()),
            }
        }
        prop_assume!(map.j_k(&x, k + 1).is_ok());
        let BackStep::Inside { preimage, .. } = map.backward_step(&x).unwrap() else {
            panic!("a forward image must step back");
        };
        let lhs = map.j_k(&x, k + 1).unwrap();
        let rhs = map.j_k(&preimage, k).unwrap() * map.jacobian_det_inv(&preimage).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
    }

    #[test]
    fn lambda_measure_is_a_power(a in 0.05f64..0.95, k in 0usize..12) {
        let map = PiecewiseMapSpec::contraction_1d(a, 0.0).unwrap();
        let m = map.lambda_k(k).unwrap().measure_disjoint();
        prop_assert!((m - a.powi(k as i32)).abs() <= 1e-12 * a.powi(k as i32));
    }

    #[test]
    fn forward_image_of_lambda_is_next_lambda(which in 0usize..6, k in 0usize..5) {
        let maps = builtins();
        let map = &maps[which];
        let chain = LambdaChain::with_depth(map, k + 1).unwrap();
        prop_assume!(chain.depth() > k);
        let image = map.forward_image(&chain.set(k)).unwrap();
        let next = chain.set(k + 1);
        prop_assert!(image.is_subset_of(&next) && next.is_subset_of(&image));
    }
}

#[test]
fn evaluate_rejects_singular_points() {
    let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
    assert!(q.evaluate(&Point::new(&[0.5, 0.3])).is_err());
    let empty = Region::empty();
    assert!(q.forward_image(&empty).unwrap().is_empty());
}
