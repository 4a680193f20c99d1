use rasp_evt::density::{
    closed_form_cell_averages, closed_form_measure, closed_form_point, density_sup_bound, fixed_point_residual,
    stationary_density_series, stationary_histogram, ulam_operator, Grid,
};
use rasp_evt::process::NoiseParams;
use rasp_evt::{AxisBox, LambdaChain, PiecewiseMapSpec, Point, Region};

fn builtins() -> Vec<PiecewiseMapSpec> {
    vec![
        PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap(),
        PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap(),
        PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap(),
    ]
}

fn l1(a: &[f64], b: &[f64], vol: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() * vol).sum()
}

#[test]
fn closed_form_and_ulam_agree() {
    for map in builtins() {
        let g = if map.dim() == 1 { 10 } else { 5 };
        let grid = Grid::new(map.dim(), g).unwrap();
        let op = ulam_operator(&map, g).unwrap();
        for eps in [0.2, 0.5, 0.8] {
            let exact: Vec<f64> = closed_form_cell_averages(&map, eps, grid)
                .unwrap()
                .iter()
                .map(|m| m.value)
                .collect();
            let ulam = stationary_density_series(&op, eps, 1e-14).unwrap();
            let err = l1(&ulam.values, &exact, grid.cell_volume());
            let tol = if matches!(map.kind(), rasp_evt::MapKind::Baker { .. }) {
                0.05
            } else {
                1e-10
            };
            assert!(err < tol, "{:?} eps={eps}: L1 {err}", map.kind());
        }
    }
}

#[test]
fn histogram_agrees_with_closed_form() {
    for map in builtins() {
        let level = if map.dim() == 1 { 3 } else { 2 };
        for eps in [0.2, 0.5, 0.8] {
            let noise = NoiseParams::new(eps).unwrap();
            let exact = closed_form_cell_averages(&map, eps, Grid::new(map.dim(), level).unwrap()).unwrap();
            let check = |seed| {
                let h = stationary_histogram(&map, &noise, noise.default_burn_in(), 200_000, level, seed).unwrap();
                let se = h.stderr.unwrap();
                h.values
                    .iter()
                    .zip(&se)
                    .zip(&exact)
                    .all(|((v, s), e)| (v - e.value).abs() <= 4.0 * s.max(1e-12))
            };
            assert!(check(1) || check(2), "{:?} eps={eps}", map.kind());
        }
    }
}

#[test]
fn series_is_a_fixed_point() {
    for map in builtins() {
        let g = if map.dim() == 1 { 8 } else { 4 };
        let op = ulam_operator(&map, g).unwrap();
        for eps in [0.2, 0.5, 0.8] {
            let h = stationary_density_series(&op, eps, 1e-14).unwrap();
            assert!(fixed_point_residual(&op, eps, &h.values) < 1e-12);
            assert!((h.integral() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn bounded_density_when_condition_holds() {
    let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
    let bound = density_sup_bound(&q, 0.8).unwrap().expect("condition holds");
    let grid = Grid::new(2, 5).unwrap();
    let cells = closed_form_cell_averages(&q, 0.8, grid).unwrap();
    assert!(cells.iter().all(|c| c.value <= bound + 1e-12));
    for i in (0..grid.len()).step_by(7) {
        if let Ok(v) = closed_form_point(&q, 0.8, &grid.center(i), 200) {
            assert!(v.value <= bound + 1e-12);
        }
    }
    assert_eq!(density_sup_bound(&q, 0.5).unwrap(), None);
}

#[test]
fn strata_measures_sum_to_one() {
    for map in builtins() {
        for eps in [0.2, 0.5, 0.8] {
            let chain = LambdaChain::with_depth(&map, 6).unwrap();
            let depth = chain.depth();
            let mut total = closed_form_measure(&map, eps, &chain.set(depth)).unwrap().value;
            for k in 0..depth {
                let stratum = chain.set(k).difference(&chain.set(k + 1));
                total += closed_form_measure(&map, eps, &stratum).unwrap().value;
            }
            assert!((total - 1.0).abs() < 1e-9, "{:?} eps={eps}: {total}", map.kind());
        }
    }
}

#[test]
fn one_dimensional_strata_match_the_formula() {
    let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
    for eps in [0.2, 0.5, 0.8] {
        let q: f64 = (1.0 - eps) / 0.5;
        for p in 1..12 {
            let x = Point::new(&[1.5 * 0.5f64.powi(p)]);
            let expected: f64 = eps * (0..p).map(|k| q.powi(k)).sum::<f64>();
            let got = closed_form_point(&f, eps, &x, 100).unwrap().value;
            assert!((got - expected).abs() <= 1e-12 * expected);
            let lo = 0.5f64.powi(p);
            let m = closed_form_measure(&f, eps, &Region::single(AxisBox::open(&[lo], &[2.0 * lo]))).unwrap();
            assert!((m.value - expected * lo).abs() <= 1e-12);
        }
    }
}
