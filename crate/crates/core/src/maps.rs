//! Piecewise injective maps on the unit cube, the builtin examples, the
//! forward image sets `Λ_k` and the backward Jacobian products `J_k`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Interval, Point, Region, MAX_DIM};

/// Hard cap on the number of boxes any single level of a box computation may hold.
pub const BOX_CAP: usize = 1 << 15;

/// Default maximum depth of a [`LambdaChain`].
pub const DEFAULT_MAX_DEPTH: usize = 64;

/// Measure below which a forward image set is considered exhausted.
pub const DEFAULT_DEPTH_MEASURE: f64 = 1e-9;

/// A diagonal affine branch `x_i -> scale_i * x_i + offset_i`.
#[derive(Clone, Copy, PartialEq)]
pub struct AffineBranch {
    dim: usize,
    scale: [f64; MAX_DIM],
    offset: [f64; MAX_DIM],
}

impl AffineBranch {
    pub fn new(scale: &[f64], offset: &[f64]) -> Self {
        assert_eq!(scale.len(), offset.len());
        assert!(!scale.is_empty() && scale.len() <= MAX_DIM);
        let mut s = [0.0; MAX_DIM];
        let mut o = [0.0; MAX_DIM];
        s[..scale.len()].copy_from_slice(scale);
        o[..offset.len()].copy_from_slice(offset);
        AffineBranch {
            dim: scale.len(),
            scale: s,
            offset: o,
        }
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale[..self.dim]
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset[..self.dim]
    }

    pub fn apply(&self, x: &Point) -> Point {
        let mut y = *x;
        for i in 0..self.dim {
            y[i] = self.scale[i] * x[i] + self.offset[i];
        }
        y
    }

    pub fn invert(&self, y: &Point) -> Point {
        let mut x = *y;
        for i in 0..self.dim {
            x[i] = (y[i] - self.offset[i]) / self.scale[i];
        }
        x
    }

    /// `|det A|^{-1}`.
    pub fn det_inv(&self) -> f64 {
        1.0 / self.scale().iter().product::<f64>().abs()
    }

    /// Sup-metric Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.scale().iter().fold(0.0, |acc, s| f64::max(acc, s.abs()))
    }

    pub fn image(&self, b: &AxisBox) -> AxisBox {
        b.affine_image(self.scale(), self.offset())
    }

    pub fn preimage(&self, b: &AxisBox) -> AxisBox {
        b.affine_preimage(self.scale(), self.offset())
    }
}

impl fmt::Debug for AffineBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "diag{:?} x + {:?}", self.scale(), self.offset())
    }
}

/// A user supplied C¹ branch. Only pointwise evaluation is available for these.
pub trait SmoothBranch: Send + Sync {
    fn apply(&self, x: &Point) -> Point;
    fn det_inv(&self, x: &Point) -> f64;
}

#[derive(Clone)]
pub enum Branch {
    Affine(AffineBranch),
    Smooth(Arc<dyn SmoothBranch>),
}

impl fmt::Debug for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Affine(a) => a.fmt(f),
            Branch::Smooth(_) => f.write_str("<smooth branch>"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PieceSpec {
    pub region: AxisBox,
    pub branch: Branch,
}

impl PieceSpec {
    pub fn affine(region: AxisBox, branch: AffineBranch) -> Self {
        PieceSpec {
            region,
            branch: Branch::Affine(branch),
        }
    }
}

/// Identifies a map and its parameters for configs and reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapKind {
    Contraction1d { a: f64, c: f64 },
    Baker { gamma_a: f64, gamma_b: f64, alpha: f64 },
    QuadAffine { a: f64, t1: f64, t2: f64 },
    Custom,
}

impl MapKind {
    pub fn tag(&self) -> &'static str {
        match self {
            MapKind::Contraction1d { .. } => "contraction_1d",
            MapKind::Baker { .. } => "baker",
            MapKind::QuadAffine { .. } => "quad_affine",
            MapKind::Custom => "custom",
        }
    }
}

/// Outcome of one backward step from a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackStep {
    /// The point lies in the open image of `piece`; `preimage` is its unique preimage.
    Inside { piece: usize, preimage: Point },
    /// The point lies outside the closure of every piece image.
    Outside,
    /// The point lies on the boundary of some piece image.
    Boundary,
}

/// A piecewise injective map of the unit cube.
#[derive(Clone, Debug)]
pub struct PiecewiseMapSpec {
    dim: usize,
    kind: MapKind,
    pieces: Vec<PieceSpec>,
    singular: Region,
    injective: bool,
}

fn check_open_unit(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in (0, 1), got {v}")))
    }
}

fn cube_faces(dim: usize) -> Vec<AxisBox> {
    let mut out = Vec::with_capacity(2 * dim);
    for axis in 0..dim {
        for v in [0.0, 1.0] {
            let mut sides = vec![Interval::closed(0.0, 1.0); dim];
            sides[axis] = Interval::point(v);
            out.push(AxisBox::new(&sides));
        }
    }
    out
}

impl PiecewiseMapSpec {
    /// `f(x) = a x + c mod 1` on `[0, 1]`.
    pub fn contraction_1d(a: f64, c: f64) -> Result<Self> {
        check_open_unit("map.a", a)?;
        if !(c.is_finite() && (0.0..1.0).contains(&c)) {
            return Err(Error::config("map.c", format!("must lie in [0, 1), got {c}")));
        }
        let s = (1.0 - c) / a;
        let mut singular = cube_faces(1);
        let pieces = if s < 1.0 {
            singular.push(AxisBox::new(&[Interval::point(s)]));
            vec![
                PieceSpec::affine(AxisBox::open(&[0.0], &[s]), AffineBranch::new(&[a], &[c])),
                PieceSpec::affine(AxisBox::open(&[s], &[1.0]), AffineBranch::new(&[a], &[c - 1.0])),
            ]
        } else {
            vec![PieceSpec::affine(
                AxisBox::open(&[0.0], &[1.0]),
                AffineBranch::new(&[a], &[c]),
            )]
        };
        Ok(PiecewiseMapSpec {
            dim: 1,
            kind: MapKind::Contraction1d { a, c },
            pieces,
            singular: Region::from_boxes(singular),
            injective: true,
        })
    }

    /// Contracting-expanding baker map cut along `y = alpha`.
    pub fn baker(gamma_a: f64, gamma_b: f64, alpha: f64) -> Result<Self> {
        check_open_unit("map.gamma_a", gamma_a)?;
        check_open_unit("map.gamma_b", gamma_b)?;
        check_open_unit("map.alpha", alpha)?;
        if !(gamma_a < gamma_b && gamma_b < 0.5) {
            return Err(Error::config(
                "map.gamma_b",
                format!("need 0 < gamma_a < gamma_b < 1/2, got gamma_a={gamma_a}, gamma_b={gamma_b}"),
            ));
        }
        if alpha > 0.5 {
            return Err(Error::config("map.alpha", format!("must be at most 1/2, got {alpha}")));
        }
        let mut singular = cube_faces(2);
        singular.push(AxisBox::new(&[Interval::closed(0.0, 1.0), Interval::point(alpha)]));
        let pieces = vec![
            PieceSpec::affine(
                AxisBox::open(&[0.0, 0.0], &[1.0, alpha]),
                AffineBranch::new(&[gamma_a, 1.0 / alpha], &[0.0, 0.0]),
            ),
            PieceSpec::affine(
                AxisBox::open(&[0.0, alpha], &[1.0, 1.0]),
                AffineBranch::new(&[gamma_b, 1.0 / (1.0 - alpha)], &[0.5, -alpha / (1.0 - alpha)]),
            ),
        ];
        Ok(PiecewiseMapSpec {
            dim: 2,
            kind: MapKind::Baker {
                gamma_a,
                gamma_b,
                alpha,
            },
            pieces,
            singular: Region::from_boxes(singular),
            injective: true,
        })
    }

    /// Four-quadrant contraction towards the corners, cut at `x = t1` and `y = t2`.
    pub fn quad_affine(a: f64, t1: f64, t2: f64) -> Result<Self> {
        if !(a.is_finite() && (0.0..1.0).contains(&a)) {
            return Err(Error::config("map.a", format!("must lie in [0, 1), got {a}")));
        }
        if a == 0.0 {
            return Err(Error::config(
                "map.a",
                "a = 0 collapses every piece to a point and has no density",
            ));
        }
        check_open_unit("map.t1", t1)?;
        check_open_unit("map.t2", t2)?;
        let b = 1.0 - a;
        let quad = |lo: [f64; 2], hi: [f64; 2], shift: [f64; 2]| {
            PieceSpec::affine(
                AxisBox::open(&lo, &hi),
                AffineBranch::new(&[a, a], &[b * shift[0], b * shift[1]]),
            )
        };
        let pieces = vec![
            quad([0.0, 0.0], [t1, t2], [1.0, 0.0]),
            quad([t1, 0.0], [1.0, t2], [1.0, 1.0]),
            quad([0.0, t2], [t1, 1.0], [0.0, 0.0]),
            quad([t1, t2], [1.0, 1.0], [0.0, 1.0]),
        ];
        let mut singular = cube_faces(2);
        singular.push(AxisBox::new(&[Interval::point(t1), Interval::closed(0.0, 1.0)]));
        singular.push(AxisBox::new(&[Interval::closed(0.0, 1.0), Interval::point(t2)]));
        Ok(PiecewiseMapSpec {
            dim: 2,
            kind: MapKind::QuadAffine { a, t1, t2 },
            pieces,
            singular: Region::from_boxes(singular),
            injective: true,
        })
    }

    /// A map assembled from arbitrary pieces. `singular` should cover the
    /// complement of the open pieces; it is only used for set-level queries.
    pub fn custom(dim: usize, pieces: Vec<PieceSpec>, singular: Region, injective: bool) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config("map.dim", format!("dimension must be in 1..={MAX_DIM}")));
        }
        if pieces.is_empty() {
            return Err(Error::config("map.pieces", "at least one piece is required"));
        }
        for (i, p) in pieces.iter().enumerate() {
            if p.region.dim() != dim {
                return Err(Error::config(
                    "map.pieces",
                    format!("piece {i} has the wrong dimension"),
                ));
            }
            if !p.region.is_open() {
                return Err(Error::config("map.pieces", format!("piece {i} is not an open box")));
            }
            for q in &pieces[i + 1..] {
                if p.region.intersects(&q.region) {
                    return Err(Error::config("map.pieces", format!("piece {i} overlaps another piece")));
                }
            }
        }
        Ok(PiecewiseMapSpec {
            dim,
            kind: MapKind::Custom,
            pieces,
            singular,
            injective,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn pieces(&self) -> &[PieceSpec] {
        &self.pieces
    }

    pub fn singular_set(&self) -> &Region {
        &self.singular
    }

    pub fn is_injective(&self) -> bool {
        self.injective
    }

    fn check_domain(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::Domain(format!(
                "point has dimension {}, map has dimension {}",
                x.dim(),
                self.dim
            )));
        }
        if !x.in_unit_cube() {
            return Err(Error::Domain(format!("{x:?} lies outside the unit cube")));
        }
        Ok(())
    }

    pub fn piece_index(&self, x: &Point) -> Result<usize> {
        self.check_domain(x)?;
        self.pieces
            .iter()
            .position(|p| p.region.contains(x))
            .ok_or(Error::SingularHit)
    }

    /// `f(x)` with the low-order digits lost along expanding axes redrawn
    /// from `fill`, which returns uniform values in `[0, 1)`. The result is
    /// within `|scale| · ulp(x)` of `f(x)` and stays in the image of the piece.
    pub fn evaluate_refined(&self, x: &Point, mut fill: impl FnMut() -> f64) -> Result<Point> {
        let i = self.piece_index(x)?;
        let b = match &self.pieces[i].branch {
            Branch::Affine(a) => a,
            Branch::Smooth(s) => return Ok(s.apply(x)),
        };
        let y = b.apply(x);
        if b.scale().iter().all(|s| s.abs() <= 1.0) {
            return Ok(y);
        }
        let mut z = y;
        for (axis, s) in b.scale().iter().enumerate() {
            if s.abs() > 1.0 {
                let v = x[axis].abs();
                z[axis] += s.abs() * (v.next_up() - v) * (fill() - 0.5);
            }
        }
        Ok(if b.image(&self.pieces[i].region).contains(&z) {
            z
        } else {
            y
        })
    }

    pub fn evaluate(&self, x: &Point) -> Result<Point> {
        let i = self.piece_index(x)?;
        Ok(match &self.pieces[i].branch {
            Branch::Affine(a) => a.apply(x),
            Branch::Smooth(s) => s.apply(x),
        })
    }

    pub fn jacobian_det_inv(&self, x: &Point) -> Result<f64> {
        let i = self.piece_index(x)?;
        Ok(match &self.pieces[i].branch {
            Branch::Affine(a) => a.det_inv(),
            Branch::Smooth(s) => s.det_inv(x),
        })
    }

    /// The affine branch of every piece, in piece order.
    pub fn affine_branches(&self) -> Result<Vec<AffineBranch>> {
        self.pieces
            .iter()
            .map(|p| match &p.branch {
                Branch::Affine(a) => Ok(*a),
                Branch::Smooth(_) => Err(Error::Capability("exact box images need affine branches".into())),
            })
            .collect()
    }

    /// Largest `|det A_i|^{-1}` over the pieces.
    pub fn max_det_inv(&self) -> Result<f64> {
        Ok(self
            .affine_branches()?
            .iter()
            .map(AffineBranch::det_inv)
            .fold(0.0, f64::max))
    }

    /// Sup-metric contraction factor, or `None` when some branch expands.
    pub fn contraction_factor(&self) -> Option<f64> {
        let lip = self
            .affine_branches()
            .ok()?
            .iter()
            .map(AffineBranch::lipschitz)
            .fold(0.0, f64::max);
        (lip < 1.0).then_some(lip)
    }

    /// Open image boxes `f_i(X_i)`, in piece order.
    pub fn piece_images(&self) -> Result<Vec<AxisBox>> {
        Ok(self
            .affine_branches()?
            .iter()
            .zip(&self.pieces)
            .map(|(b, p)| b.image(&p.region))
            .collect())
    }

    /// One step of backward iteration through the open piece images.
    pub fn backward_step(&self, x: &Point) -> Result<BackStep> {
        let branches = self.affine_branches()?;
        let mut boundary = false;
        for (i, (b, p)) in branches.iter().zip(&self.pieces).enumerate() {
            let image = b.image(&p.region);
            if image.contains(x) {
                return Ok(BackStep::Inside {
                    piece: i,
                    preimage: b.invert(x),
                });
            }
            if image.closure().contains(x) {
                boundary = true;
            }
        }
        Ok(if boundary {
            BackStep::Boundary
        } else {
            BackStep::Outside
        })
    }

    /// Forward image `f(R \ Δ)` of a union of boxes.
    pub fn forward_image(&self, region: &Region) -> Result<Region> {
        let branches = self.affine_branches()?;
        let mut out = Region::empty();
        for b in region.boxes() {
            for (br, p) in branches.iter().zip(&self.pieces) {
                let c = b.intersect(&p.region);
                if !c.is_empty() {
                    out.push(br.image(&c));
                }
            }
        }
        Ok(out)
    }

    /// `Λ_k` as an exact union of boxes.
    pub fn lambda_k(&self, k: usize) -> Result<Region> {
        let chain = LambdaChain::with_depth(self, k)?;
        if chain.depth() < k {
            return Err(Error::Capability(format!("Lambda_{k} needs more than {BOX_CAP} boxes")));
        }
        Ok(chain.set(k))
    }

    /// `J_k(x)`, the product of `|det f'|^{-1}` along the `k`-step backward orbit.
    pub fn j_k(&self, x: &Point, k: usize) -> Result<f64> {
        self.check_domain(x)?;
        let mut y = *x;
        let mut j = 1.0;
        let branches = self.affine_branches()?;
        for step in 0..k {
            match self.backward_step(&y)? {
                BackStep::Inside { piece, preimage } => {
                    j *= branches[piece].det_inv();
                    y = preimage;
                }
                _ => {
                    return Err(Error::Precondition(format!(
                        "{x:?} is not in Lambda_{k} (backward orbit leaves after {step} steps)"
                    )))
                }
            }
        }
        Ok(j)
    }

    /// A closed superset of `f^p(Δ)` where `f` on `Δ` is any of the one-sided
    /// continuous extensions of the adjacent branches.
    pub fn singular_image(&self, p: usize) -> Result<Region> {
        let branches = self.affine_branches()?;
        let mut current = self.singular.clone();
        for _ in 0..p {
            let mut next = Region::empty();
            for s in current.boxes() {
                for (br, piece) in branches.iter().zip(&self.pieces) {
                    let c = s.intersect(&piece.region.closure());
                    if !c.is_empty() {
                        next.push(br.image(&c));
                    }
                }
            }
            if next.len() > BOX_CAP {
                return Err(Error::Capability(format!(
                    "f^{p}(Delta) needs more than {BOX_CAP} boxes"
                )));
            }
            current = next;
        }
        Ok(current)
    }
}

/// A box of `Λ_k` together with the constant value of `J_k` on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedBox {
    pub cell: AxisBox,
    pub jacobian: f64,
}

/// The forward image sets `Λ_0 ⊇ Λ_1 ⊇ ... ⊇ Λ_depth` with `J_k` on each box.
#[derive(Clone, Debug)]
pub struct LambdaChain {
    levels: Vec<Vec<WeightedBox>>,
    capped: bool,
}

impl LambdaChain {
    /// Depth chosen as the first level with measure below `1e-9`, at most 64
    /// and at most what fits in [`BOX_CAP`] boxes.
    pub fn new(map: &PiecewiseMapSpec) -> Result<Self> {
        Self::build(map, DEFAULT_MAX_DEPTH, Some(DEFAULT_DEPTH_MEASURE))
    }

    /// Exactly `depth` levels unless the box cap is hit first.
    pub fn with_depth(map: &PiecewiseMapSpec, depth: usize) -> Result<Self> {
        Self::build(map, depth, None)
    }

    fn build(map: &PiecewiseMapSpec, max_depth: usize, stop_measure: Option<f64>) -> Result<Self> {
        let branches = map.affine_branches()?;
        let mut levels = vec![vec![WeightedBox {
            cell: AxisBox::unit_closed(map.dim()),
            jacobian: 1.0,
        }]];
        let mut capped = false;
        while levels.len() <= max_depth {
            let last = levels.last().unwrap();
            if let Some(m) = stop_measure {
                if last.iter().map(|w| w.cell.measure()).sum::<f64>() < m {
                    break;
                }
            }
            let mut next = Vec::new();
            for w in last {
                for (br, p) in branches.iter().zip(map.pieces()) {
                    let c = w.cell.intersect(&p.region);
                    if !c.is_empty() {
                        next.push(WeightedBox {
                            cell: br.image(&c),
                            jacobian: w.jacobian * br.det_inv(),
                        });
                    }
                }
            }
            if next.len() > BOX_CAP {
                capped = true;
                break;
            }
            levels.push(next);
        }
        Ok(LambdaChain { levels, capped })
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// True when construction stopped because the next level exceeded [`BOX_CAP`].
    pub fn is_capped(&self) -> bool {
        self.capped
    }

    pub fn weighted(&self, k: usize) -> &[WeightedBox] {
        &self.levels[k]
    }

    pub fn set(&self, k: usize) -> Region {
        Region::from_boxes(self.levels[k].iter().map(|w| w.cell))
    }

    /// Lebesgue measure of `Λ_k`; the boxes of one level are pairwise disjoint.
    pub fn measure(&self, k: usize) -> f64 {
        self.levels[k].iter().map(|w| w.cell.measure()).sum()
    }

    /// `∫ J_k 1_{Λ_k} 1_B dx` for a box `B`.
    pub fn weighted_overlap(&self, k: usize, b: &AxisBox) -> f64 {
        self.levels[k]
            .iter()
            .map(|w| w.jacobian * w.cell.intersect(b).measure())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(x: f64) -> Point {
        Point::new(&[x])
    }

    fn p2(x: f64, y: f64) -> Point {
        Point::new(&[x, y])
    }

    #[test]
    fn evaluate_examples() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.3).unwrap();
        assert_eq!(f.pieces().len(), 1);
        let g = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        assert_eq!(g.evaluate(&p1(0.8)).unwrap()[0], 0.4);
        assert_eq!(g.evaluate(&p1(0.0)), Err(Error::SingularHit));
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        assert_eq!(q.evaluate(&p2(0.25, 0.25)).unwrap(), p2(0.625, 0.125));
        assert_eq!(q.piece_index(&p2(0.75, 0.25)).unwrap(), 1);
        assert_eq!(q.piece_index(&p2(0.5, 0.3)), Err(Error::SingularHit));
        assert!(matches!(q.evaluate(&p2(1.5, 0.3)), Err(Error::Domain(_))));
        assert!(matches!(q.evaluate(&p1(0.3)), Err(Error::Domain(_))));
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        assert_eq!(b.piece_index(&p2(0.1, 0.2)).unwrap(), 0);
    }

    #[test]
    fn split_contraction_has_two_pieces_and_three_singular_points() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.7).unwrap();
        assert_eq!(f.pieces().len(), 2);
        assert_eq!(f.singular_set().len(), 3);
        assert!(f.singular_set().contains(&p1((1.0 - 0.7) / 0.5)));
        let y = f.evaluate(&p1(0.8)).unwrap()[0];
        assert!((y - 0.1).abs() < 1e-15);
    }

    #[test]
    fn det_inv_examples() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.3).unwrap();
        assert_eq!(f.jacobian_det_inv(&p1(0.3)).unwrap(), 2.0);
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        assert!((b.jacobian_det_inv(&p2(0.3, 0.2)).unwrap() - 2.5).abs() < 1e-12);
        assert!((b.jacobian_det_inv(&p2(0.3, 0.7)).unwrap() - 1.25).abs() < 1e-12);
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.3, 0.7).unwrap();
        assert_eq!(q.jacobian_det_inv(&p2(0.9, 0.9)).unwrap(), 4.0);
    }

    #[test]
    fn parameter_ranges() {
        assert!(PiecewiseMapSpec::contraction_1d(1.0, 0.3).unwrap_err().is_config());
        assert!(PiecewiseMapSpec::baker(0.3, 0.2, 0.5).unwrap_err().is_config());
        assert!(PiecewiseMapSpec::baker(0.2, 0.4, 0.6).unwrap_err().is_config());
        assert!(PiecewiseMapSpec::quad_affine(1.0, 0.5, 0.5).unwrap_err().is_config());
    }

    #[test]
    fn lambda_examples() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        let l3 = f.lambda_k(3).unwrap();
        assert_eq!(l3, Region::single(AxisBox::open(&[0.0], &[0.125])));
        assert_eq!(f.lambda_k(0).unwrap(), Region::single(AxisBox::unit_closed(1)));
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        let l1 = b.lambda_k(1).unwrap();
        let expected = Region::from_boxes([
            AxisBox::open(&[0.0, 0.0], &[0.2, 1.0]),
            AxisBox::open(&[0.5, 0.0], &[0.9, 1.0]),
        ]);
        assert!(l1.is_subset_of(&expected) && expected.is_subset_of(&l1));
    }

    #[test]
    fn j_k_examples() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        assert_eq!(f.j_k(&p1(0.1), 0).unwrap(), 1.0);
        assert_eq!(f.j_k(&p1(0.1), 2).unwrap(), 4.0);
        assert!(matches!(f.j_k(&p1(0.7), 1), Err(Error::Precondition(_))));
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        assert_eq!(q.j_k(&p2(0.6, 0.2), 2).unwrap(), 16.0);
    }

    #[test]
    fn smooth_branches_are_not_box_capable() {
        struct Square;
        impl SmoothBranch for Square {
            fn apply(&self, x: &Point) -> Point {
                Point::new(&[x[0] * x[0]])
            }
            fn det_inv(&self, x: &Point) -> f64 {
                1.0 / (2.0 * x[0])
            }
        }
        let m = PiecewiseMapSpec::custom(
            1,
            vec![PieceSpec {
                region: AxisBox::open(&[0.0], &[1.0]),
                branch: Branch::Smooth(Arc::new(Square)),
            }],
            Region::from_boxes(cube_faces(1)),
            true,
        )
        .unwrap();
        assert_eq!(m.evaluate(&p1(0.5)).unwrap()[0], 0.25);
        assert_eq!(m.jacobian_det_inv(&p1(0.5)).unwrap(), 1.0);
        assert!(matches!(m.lambda_k(1), Err(Error::Capability(_))));
        assert!(matches!(m.j_k(&p1(0.5), 1), Err(Error::Capability(_))));
    }

    #[test]
    fn piece_images_are_disjoint() {
        for f in [
            PiecewiseMapSpec::contraction_1d(0.5, 0.7).unwrap(),
            PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap(),
            PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap(),
        ] {
            let imgs = f.piece_images().unwrap();
            for (i, a) in imgs.iter().enumerate() {
                for b in &imgs[i + 1..] {
                    assert!(!a.intersects(b));
                }
            }
        }
    }

    #[test]
    fn default_chain_depth() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.3).unwrap();
        let chain = LambdaChain::new(&f).unwrap();
        assert_eq!(chain.depth(), 30);
        assert!(chain.measure(30) < 1e-9 && chain.measure(29) >= 1e-9);
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        let chain = LambdaChain::new(&b).unwrap();
        assert!(chain.is_capped());
        assert_eq!(chain.depth(), 15);
    }

    #[test]
    fn refined_evaluation_keeps_expanding_orbits_alive() {
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        let x = Point::new(&[0.3, 0.3]);
        assert_eq!(b.evaluate_refined(&x, || 0.5).unwrap(), b.evaluate(&x).unwrap());
        let mut y = x;
        let mut plain = x;
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut fill = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut plain_failed = false;
        for _ in 0..200 {
            let next = b.evaluate_refined(&y, &mut fill).unwrap();
            assert!((next[1] - b.evaluate(&y).unwrap()[1]).abs() <= 4.0 * f64::EPSILON);
            y = next;
            match b.evaluate(&plain) {
                Ok(p) => plain = p,
                Err(_) => plain_failed = true,
            }
        }
        assert!(plain_failed);
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let z = Point::new(&[0.3, 0.1]);
        assert_eq!(
            q.evaluate_refined(&z, || panic!("no expanding axis")).unwrap(),
            q.evaluate(&z).unwrap()
        );
    }
}
