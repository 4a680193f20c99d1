//! The stationary density `h_ε` three ways: the closed-form series over the
//! forward image sets, the Ulam discretization of the transfer operator, and
//! empirical histograms of stationary samples.

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Interval, Point, Region, MAX_DIM};
use crate::maps::{AffineBranch, BackStep, MapKind, PiecewiseMapSpec, BOX_CAP};
use crate::process::{par_fold, stationary_point, NoiseParams, StreamRng};

/// Geometric tail below which closed-form series are cut off.
pub const SERIES_TOL: f64 = 1e-18;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionCheck {
    pub holds: bool,
    pub lambda: f64,
}

/// Whether `max |det A_i|^{-1} < (1 - ε)^{-1}`, the condition for a bounded density.
pub fn check_contraction_condition(map: &PiecewiseMapSpec, epsilon: f64) -> Result<ContractionCheck> {
    let lambda = map.max_det_inv()?;
    Ok(ContractionCheck {
        holds: lambda < 1.0 / (1.0 - epsilon),
        lambda,
    })
}

/// Sup-norm bound `ε / (1 - (1 - ε) λ)` of the density, when the contraction condition holds.
pub fn density_sup_bound(map: &PiecewiseMapSpec, epsilon: f64) -> Result<Option<f64>> {
    let c = check_contraction_condition(map, epsilon)?;
    Ok(c.holds.then(|| epsilon / (1.0 - (1.0 - epsilon) * c.lambda)))
}

/// Closed-form density at a point, with the stratum it was found in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointDensity {
    pub value: f64,
    /// Largest `p ≤ depth` with `x ∈ Λ_p`.
    pub level: usize,
    /// `J_level(x)`.
    pub jacobian: f64,
    /// True when `x ∈ Λ_depth`, so terms beyond the truncation may be missing.
    pub truncated: bool,
}

/// `ε Σ_{k=0}^{depth} (1-ε)^k J_k(x) 1_{Λ_k}(x)` by backward iteration.
pub fn closed_form_point(map: &PiecewiseMapSpec, epsilon: f64, x: &Point, depth: usize) -> Result<PointDensity> {
    let branches = map.affine_branches()?;
    if x.dim() != map.dim() || !x.in_unit_cube() {
        return Err(Error::Domain(format!("{x:?} is not a point of the unit cube")));
    }
    let q = 1.0 - epsilon;
    let mut y = *x;
    let mut j = 1.0;
    let mut w = 1.0;
    let mut sum = 1.0;
    for k in 1..=depth {
        match map.backward_step(&y)? {
            BackStep::Inside { piece, preimage } => {
                j *= branches[piece].det_inv();
                w *= q;
                sum += w * j;
                y = preimage;
            }
            BackStep::Outside => {
                return Ok(PointDensity {
                    value: epsilon * sum,
                    level: k - 1,
                    jacobian: j,
                    truncated: false,
                })
            }
            BackStep::Boundary => return Err(Error::Boundary { level: k }),
        }
    }
    Ok(PointDensity {
        value: epsilon * sum,
        level: depth,
        jacobian: j,
        truncated: true,
    })
}

pub fn closed_form_density(map: &PiecewiseMapSpec, epsilon: f64, x: &Point, depth: usize) -> Result<f64> {
    closed_form_point(map, epsilon, x, depth).map(|p| p.value)
}

/// A measure with a rigorous bound on the truncation error (`value ≤ true ≤ value + tail_bound`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureValue {
    pub value: f64,
    pub tail_bound: f64,
    /// Number of pullback levels evaluated.
    pub depth: usize,
}

impl MeasureValue {
    pub fn upper(&self) -> f64 {
        self.value + self.tail_bound
    }
}

#[derive(Clone, Copy, Debug)]
struct PullBranch {
    image: AxisBox,
    branch: AffineBranch,
    weight: f64,
}

/// Inverse branches used to evaluate `m(f^{-k} R)` level by level.
///
/// For the baker map the density does not depend on `y` and every box
/// pulls back to boxes whose `y` measure scales by the branch probability,
/// so the computation is done on the `x` axis with weights `α` and `1 - α`.
#[derive(Clone, Debug)]
struct PullbackSystem {
    dim: usize,
    branches: Vec<PullBranch>,
    projected: bool,
}

impl PullbackSystem {
    fn new(map: &PiecewiseMapSpec) -> Result<Self> {
        if let MapKind::Baker {
            gamma_a,
            gamma_b,
            alpha,
        } = map.kind()
        {
            return Ok(PullbackSystem {
                dim: 1,
                branches: vec![
                    PullBranch {
                        image: AxisBox::open(&[0.0], &[gamma_a]),
                        branch: AffineBranch::new(&[gamma_a], &[0.0]),
                        weight: alpha,
                    },
                    PullBranch {
                        image: AxisBox::open(&[0.5], &[0.5 + gamma_b]),
                        branch: AffineBranch::new(&[gamma_b], &[0.5]),
                        weight: 1.0 - alpha,
                    },
                ],
                projected: true,
            });
        }
        let branches = map.affine_branches()?;
        Ok(PullbackSystem {
            dim: map.dim(),
            branches: branches
                .iter()
                .zip(map.pieces())
                .map(|(b, p)| PullBranch {
                    image: b.image(&p.region),
                    branch: *b,
                    weight: 1.0,
                })
                .collect(),
            projected: false,
        })
    }

    /// Boxes and weights whose weighted measure is `m(R)` and whose pullbacks give `m(f^{-k} R)`.
    fn seed(&self, region: &Region) -> Vec<(AxisBox, f64)> {
        let full = AxisBox::unit_open(region.boxes().first().map_or(self.dim, |b| b.dim()));
        let disjoint = region.intersect_box(&full.closure()).disjoint();
        disjoint
            .boxes()
            .iter()
            .filter(|b| b.measure() > 0.0)
            .map(|b| {
                if self.projected {
                    (AxisBox::new(&[*b.side(0)]), b.side(1).length())
                } else {
                    (*b, 1.0)
                }
            })
            .collect()
    }
}

fn covers_unit(b: &AxisBox) -> bool {
    b.sides().iter().all(|s| s.lo <= 0.0 && s.hi >= 1.0)
}

/// `μ_ε(R) = ε Σ_k (1-ε)^k m(f^{-k} R)`, evaluated by pulling `R` back level by level.
pub fn closed_form_measure(map: &PiecewiseMapSpec, epsilon: f64, region: &Region) -> Result<MeasureValue> {
    let system = PullbackSystem::new(map)?;
    if let Some(b) = region.boxes().first() {
        if b.dim() != map.dim() {
            return Err(Error::Domain("region dimension does not match the map".into()));
        }
    }
    let q = 1.0 - epsilon;
    let mut live = system.seed(region);
    let mut saturated = 0.0;
    let mut w = 1.0;
    let mut value = epsilon * live.iter().map(|(b, c)| c * b.measure()).sum::<f64>();
    let mut k = 0;
    loop {
        if live.is_empty() {
            value += saturated * w * q;
            return Ok(MeasureValue {
                value,
                tail_bound: 0.0,
                depth: k,
            });
        }
        if w * q < SERIES_TOL || live.len() > BOX_CAP {
            value += saturated * w * q;
            return Ok(MeasureValue {
                value,
                tail_bound: (1.0 - saturated).max(0.0) * w * q,
                depth: k,
            });
        }
        let mut next = Vec::with_capacity(live.len());
        for (b, c) in &live {
            for pb in &system.branches {
                let part = b.intersect(&pb.image);
                if part.is_empty() || part.measure() == 0.0 {
                    continue;
                }
                let pre = pb.branch.preimage(&part);
                let weight = c * pb.weight;
                if covers_unit(&pre) {
                    saturated += weight;
                } else {
                    next.push((pre, weight));
                }
            }
        }
        live = next;
        k += 1;
        w *= q;
        value += epsilon * w * (saturated + live.iter().map(|(b, c)| c * b.measure()).sum::<f64>());
    }
}

/// The regular grid of `2^level` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub dim: usize,
    pub level: u32,
}

impl Grid {
    pub fn new(dim: usize, level: u32) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config("grid.dim", format!("dimension must be in 1..={MAX_DIM}")));
        }
        if (level as usize) * dim > 26 {
            return Err(Error::config(
                "grid_level",
                format!("2^{level} cells per axis in dimension {dim} is too many"),
            ));
        }
        Ok(Grid { dim, level })
    }

    pub fn per_axis(&self) -> usize {
        1 << self.level
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        (1.0 / self.per_axis() as f64).powi(self.dim as i32)
    }

    /// Per-axis indices of cell `i`, axis 0 varying fastest.
    pub fn multi_index(&self, mut i: usize) -> [usize; MAX_DIM] {
        let n = self.per_axis();
        let mut out = [0; MAX_DIM];
        for v in out.iter_mut().take(self.dim) {
            *v = i % n;
            i /= n;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let n = self.per_axis();
        idx.iter().rev().fold(0, |acc, &v| acc * n + v)
    }

    pub fn cell(&self, i: usize) -> AxisBox {
        let h = 1.0 / self.per_axis() as f64;
        let idx = self.multi_index(i);
        let sides: Vec<Interval> = idx[..self.dim]
            .iter()
            .map(|&j| Interval::half_open(j as f64 * h, (j + 1) as f64 * h))
            .collect();
        AxisBox::new(&sides)
    }

    pub fn center(&self, i: usize) -> Point {
        self.cell(i).center()
    }

    /// Cell containing `x`; the upper face of the cube belongs to the last cell.
    pub fn locate(&self, x: &Point) -> usize {
        let n = self.per_axis();
        let mut idx = [0; MAX_DIM];
        for (a, v) in idx.iter_mut().enumerate().take(self.dim) {
            *v = ((x[a] * n as f64).floor().max(0.0) as usize).min(n - 1);
        }
        self.flat_index(&idx[..self.dim])
    }

    /// Index ranges per axis of the cells meeting the closure of `b`.
    fn overlapping(&self, b: &AxisBox) -> Vec<usize> {
        let n = self.per_axis() as f64;
        let mut ranges = Vec::with_capacity(self.dim);
        for s in b.sides() {
            let lo = ((s.lo * n).floor().max(0.0)) as usize;
            let hi = ((s.hi * n).ceil().min(n)) as usize;
            ranges.push(lo..hi.max(lo));
        }
        let mut out = Vec::new();
        let mut idx = vec![0; self.dim];
        fn rec(g: &Grid, ranges: &[std::ops::Range<usize>], axis: usize, idx: &mut Vec<usize>, out: &mut Vec<usize>) {
            if axis == ranges.len() {
                out.push(g.flat_index(idx));
                return;
            }
            for v in ranges[axis].clone() {
                idx[axis] = v;
                rec(g, ranges, axis + 1, idx, out);
            }
        }
        rec(self, &ranges, 0, &mut idx, &mut out);
        out
    }
}

/// Sparse row-stochastic Ulam matrix `M_ij = m(C_i ∩ f^{-1} C_j) / m(C_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UlamOperator {
    grid: Grid,
    rows: Vec<Vec<(u32, f64)>>,
}

pub fn ulam_operator(map: &PiecewiseMapSpec, level: u32) -> Result<UlamOperator> {
    use rayon::prelude::*;
    let grid = Grid::new(map.dim(), level)?;
    let branches = map.affine_branches()?;
    let vol = grid.cell_volume();
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let cell = grid.cell(i);
            let mut row: Vec<(u32, f64)> = Vec::new();
            for (br, p) in branches.iter().zip(map.pieces()) {
                let part = cell.intersect(&p.region);
                if part.measure() == 0.0 {
                    continue;
                }
                let img = br.image(&part);
                let d = br.det_inv();
                for j in grid.overlapping(&img) {
                    let m = img.intersect(&grid.cell(j)).measure();
                    if m > 0.0 {
                        row.push((j as u32, m * d / vol));
                    }
                }
            }
            row.sort_by_key(|e| e.0);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            row
        })
        .collect();
    Ok(UlamOperator { grid, rows })
}

impl UlamOperator {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|e| e.0 as usize == j).map_or(0.0, |e| e.1)
    }

    /// `(row, col, value)` for every stored nonzero, row-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, v)| (i, j as usize, v)))
    }

    /// Transfer operator on cell densities: `(Pψ)_j = Σ_i ψ_i M_ij`.
    /// Sums are compensated, since many cells can collapse onto a few.
    pub fn transfer(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut comp = vec![0.0; self.len()];
        for (i, r) in self.rows.iter().enumerate() {
            let v = psi[i];
            if v == 0.0 {
                continue;
            }
            for &(j, m) in r {
                let j = j as usize;
                neumaier_add(&mut out[j], &mut comp[j], v * m);
            }
        }
        for (o, c) in out.iter_mut().zip(comp) {
            *o += c;
        }
        out
    }

    /// `∫ψ dx` for a cell density.
    pub fn mean(&self, psi: &[f64]) -> f64 {
        let (mut s, mut c) = (0.0, 0.0);
        for &v in psi {
            neumaier_add(&mut s, &mut c, v);
        }
        (s + c) * self.grid.cell_volume()
    }

    pub fn perturbed(&self, epsilon: f64) -> PerturbedOperator<'_> {
        PerturbedOperator { base: self, epsilon }
    }
}

#[inline]
fn neumaier_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

/// `M_ε = (1 - ε) M + ε R` with every row of `R` equal to the cell measures.
/// The reset part is applied as a rank-one update and never stored.
#[derive(Clone, Copy, Debug)]
pub struct PerturbedOperator<'a> {
    base: &'a UlamOperator,
    epsilon: f64,
}

impl PerturbedOperator<'_> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (1.0 - self.epsilon) * self.base.entry(i, j) + self.epsilon * self.base.grid.cell_volume()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (1.0 - self.epsilon) * self.base.row(i).iter().map(|e| e.1).sum::<f64>()
            + self.epsilon * self.base.grid.cell_volume() * self.base.len() as f64
    }

    /// `P_ε ψ = (1 - ε) P ψ + ε ∫ψ`.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let mean = self.base.mean(psi);
        let mut out = self.base.transfer(psi);
        for v in &mut out {
            *v = (1.0 - self.epsilon) * *v + self.epsilon * mean;
        }
        out
    }
}

pub fn perturbed_operator(p: &UlamOperator, epsilon: f64) -> PerturbedOperator<'_> {
    p.perturbed(epsilon)
}

/// Both sides of the iterate formula and their max-norm gap.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateComparison {
    pub iterated: Vec<f64>,
    pub formula: Vec<f64>,
    pub gap: f64,
}

/// `P_ε^n ψ` by repeated application against
/// `(1-ε)^n P^n ψ + ε ψ̄ Σ_{k<n} (1-ε)^k P^k 1`.
pub fn operator_iterates(p: &UlamOperator, epsilon: f64, psi: &[f64], n: usize) -> IterateComparison {
    let pe = p.perturbed(epsilon);
    let mut iterated = psi.to_vec();
    for _ in 0..n {
        iterated = pe.apply(&iterated);
    }
    let q = 1.0 - epsilon;
    let mean = p.mean(psi);
    let mut pk_psi = psi.to_vec();
    let mut pk_one = vec![1.0; p.len()];
    let mut acc = vec![0.0; p.len()];
    let mut w = 1.0;
    for _ in 0..n {
        for (a, v) in acc.iter_mut().zip(&pk_one) {
            *a += w * v;
        }
        pk_psi = p.transfer(&pk_psi);
        pk_one = p.transfer(&pk_one);
        w *= q;
    }
    let formula: Vec<f64> = pk_psi
        .iter()
        .zip(&acc)
        .map(|(a, s)| w * a + epsilon * mean * s)
        .collect();
    let gap = iterated
        .iter()
        .zip(&formula)
        .fold(0.0, |g, (a, b)| f64::max(g, (a - b).abs()));
    IterateComparison { iterated, formula, gap }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Ulam,
    Histogram,
}

/// A piecewise constant density on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub kind: GridKind,
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Per-cell standard errors (histograms only).
    pub stderr: Option<Vec<f64>>,
    /// Bound on the L¹ truncation error (Ulam series only).
    pub truncation: f64,
    /// Number of samples (histograms only).
    pub samples: u64,
}

impl GridDensity {
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }
}

#[derive(Clone, Debug)]
pub enum DensityProfile {
    ClosedForm {
        map: PiecewiseMapSpec,
        epsilon: f64,
        depth: usize,
    },
    Grid(GridDensity),
}

impl DensityProfile {
    pub fn closed_form(map: &PiecewiseMapSpec, epsilon: f64, depth: usize) -> Result<Self> {
        map.affine_branches()?;
        Ok(DensityProfile::ClosedForm {
            map: map.clone(),
            epsilon,
            depth,
        })
    }

    /// Density value at a point (closed form) or of the cell containing it (grid).
    pub fn value_at(&self, x: &Point) -> Result<f64> {
        match self {
            DensityProfile::ClosedForm { map, epsilon, depth } => closed_form_density(map, *epsilon, x, *depth),
            DensityProfile::Grid(g) => Ok(g.values[g.grid.locate(x)]),
        }
    }
}

/// `ε Σ_{k=0}^{K} (1-ε)^k P^k 1` with `K = ceil(ln tol / ln(1-ε))`.
pub fn stationary_density_series(p: &UlamOperator, epsilon: f64, tol: f64) -> Result<GridDensity> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::config("tol", "must be positive"));
    }
    let q = 1.0 - epsilon;
    let k_max = (tol.ln() / q.ln()).ceil().max(0.0) as usize;
    let mut term = vec![1.0; p.len()];
    let mut values = vec![0.0; p.len()];
    let mut w = epsilon;
    for k in 0..=k_max {
        for (v, t) in values.iter_mut().zip(&term) {
            *v += w * t;
        }
        if k < k_max {
            term = p.transfer(&term);
            w *= q;
        }
    }
    Ok(GridDensity {
        kind: GridKind::Ulam,
        grid: p.grid(),
        values,
        stderr: None,
        truncation: q.powi(k_max as i32 + 1),
        samples: 0,
    })
}

/// `‖P_ε h - h‖₁` on the grid.
pub fn fixed_point_residual(p: &UlamOperator, epsilon: f64, h: &[f64]) -> f64 {
    let next = p.perturbed(epsilon).apply(h);
    next.iter().zip(h).map(|(a, b)| (a - b).abs()).sum::<f64>() * p.grid().cell_volume()
}

/// `μ_ε(R)`: exact pullback evaluation for the closed form, cell overlaps for grids.
pub fn measure_of_region(profile: &DensityProfile, region: &Region) -> Result<f64> {
    match profile {
        DensityProfile::ClosedForm { map, epsilon, .. } => Ok(closed_form_measure(map, *epsilon, region)?.value),
        DensityProfile::Grid(g) => {
            let region = region.disjoint();
            let mut total = 0.0;
            for b in region.boxes() {
                for i in g.grid.overlapping(b) {
                    total += g.values[i] * b.intersect(&g.grid.cell(i)).measure();
                }
            }
            Ok(total)
        }
    }
}

/// Cell averages `μ_ε(C_i) / m(C_i)` of the closed-form density.
pub fn closed_form_cell_averages(map: &PiecewiseMapSpec, epsilon: f64, grid: Grid) -> Result<Vec<MeasureValue>> {
    use rayon::prelude::*;
    let vol = grid.cell_volume();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let m = closed_form_measure(map, epsilon, &Region::single(grid.cell(i)))?;
            Ok(MeasureValue {
                value: m.value / vol,
                tail_bound: m.tail_bound / vol,
                depth: m.depth,
            })
        })
        .collect()
}

/// Histogram with per-cell density `count / (N · vol)` and binomial standard errors.
pub fn empirical_density(samples: &[Point], level: u32) -> Result<GridDensity> {
    let first = samples
        .first()
        .ok_or_else(|| Error::config("samples", "empty sample set"))?;
    let grid = Grid::new(first.dim(), level)?;
    let mut counts = vec![0u64; grid.len()];
    for x in samples {
        counts[grid.locate(x)] += 1;
    }
    Ok(histogram_from_counts(grid, &counts))
}

fn histogram_from_counts(grid: Grid, counts: &[u64]) -> GridDensity {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let vol = grid.cell_volume();
    let values = counts.iter().map(|&c| c as f64 / (nf * vol)).collect();
    let stderr = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / nf;
            (p * (1.0 - p) / nf).sqrt() / vol
        })
        .collect();
    GridDensity {
        kind: GridKind::Histogram,
        grid,
        values,
        stderr: Some(stderr),
        truncation: 0.0,
        samples: n,
    }
}

/// Histogram of `count` stationary samples, one stream per sample.
pub fn stationary_histogram(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    burn_in: usize,
    count: u64,
    level: u32,
    seed: u64,
) -> Result<GridDensity> {
    if count == 0 {
        return Err(Error::config("run.budget", "empty sample set"));
    }
    let grid = Grid::new(map.dim(), level)?;
    let counts = par_fold(
        count,
        || vec![0u64; grid.len()],
        |mut acc, s| {
            let x = stationary_point(map, noise, burn_in, &mut StreamRng::new(seed, s))?;
            acc[grid.locate(&x)] += 1;
            Ok(acc)
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        },
    )?;
    Ok(histogram_from_counts(grid, &counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c1d() -> PiecewiseMapSpec {
        PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap()
    }

    fn p1(x: f64) -> Point {
        Point::new(&[x])
    }

    #[test]
    fn closed_form_examples() {
        let f = c1d();
        assert_eq!(closed_form_density(&f, 0.5, &p1(0.7), 64).unwrap(), 0.5);
        assert_eq!(closed_form_density(&f, 0.5, &p1(0.3), 64).unwrap(), 1.0);
        assert_eq!(closed_form_density(&f, 0.5, &p1(0.2), 64).unwrap(), 1.5);
        assert_eq!(
            closed_form_density(&f, 0.5, &p1(0.5), 64),
            Err(Error::Boundary { level: 1 })
        );
        assert_eq!(
            closed_form_density(&f, 0.5, &p1(0.25), 64),
            Err(Error::Boundary { level: 2 })
        );
    }

    #[test]
    fn closed_form_is_eps_off_first_image() {
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let d = closed_form_point(&q, 0.3, &Point::new(&[0.3, 0.1]), 64).unwrap();
        assert_eq!(d.value, 0.3);
        assert_eq!(d.level, 0);
    }

    #[test]
    fn contraction_condition_examples() {
        let f = c1d();
        let c = check_contraction_condition(&f, 0.6).unwrap();
        assert!(c.holds && c.lambda == 2.0);
        assert!(!check_contraction_condition(&f, 0.4).unwrap().holds);
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let c = check_contraction_condition(&q, 0.8).unwrap();
        assert!(c.holds && c.lambda == 4.0);
    }

    #[test]
    fn measure_examples() {
        let f = c1d();
        let whole = closed_form_measure(&f, 0.5, &Region::single(AxisBox::unit_closed(1))).unwrap();
        assert!((whole.value - 1.0).abs() < 1e-15 && whole.tail_bound == 0.0);
        let m = closed_form_measure(&f, 0.5, &Region::single(AxisBox::open(&[0.29], &[0.31]))).unwrap();
        assert!((m.value - 0.02).abs() < 1e-15, "{m:?}");
        assert_eq!(closed_form_measure(&f, 0.5, &Region::empty()).unwrap().value, 0.0);
    }

    #[test]
    fn baker_measure_is_normalized_and_product_like() {
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        for eps in [0.2, 0.5, 0.8] {
            let whole = closed_form_measure(&b, eps, &Region::single(AxisBox::unit_closed(2))).unwrap();
            assert!((whole.value - 1.0).abs() < 1e-14);
            let a = closed_form_measure(&b, eps, &Region::single(AxisBox::open(&[0.1, 0.0], &[0.6, 1.0]))).unwrap();
            let half = closed_form_measure(&b, eps, &Region::single(AxisBox::open(&[0.1, 0.2], &[0.6, 0.7]))).unwrap();
            assert!((half.value - 0.5 * a.value).abs() < 1e-14);
            assert!(a.tail_bound < 1e-15);
        }
    }

    #[test]
    fn strata_sum_to_one() {
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let chain = crate::maps::LambdaChain::with_depth(&q, 6).unwrap();
        let mut total = 0.0;
        for k in 0..6 {
            let stratum = chain.set(k).difference(&chain.set(k + 1));
            total += closed_form_measure(&q, 0.5, &stratum).unwrap().value;
        }
        total += closed_form_measure(&q, 0.5, &chain.set(6)).unwrap().value;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ulam_small_examples() {
        let f = c1d();
        let p = ulam_operator(&f, 1).unwrap();
        assert_eq!(p.entry(0, 0), 1.0);
        assert_eq!(p.entry(0, 1), 0.0);
        assert_eq!(p.entry(1, 0), 1.0);
        let pe = p.perturbed(0.5);
        for i in 0..2 {
            assert_eq!(pe.entry(i, 0), 0.75);
            assert_eq!(pe.entry(i, 1), 0.25);
        }
        let pure = p.perturbed(1.0);
        assert_eq!(pure.entry(0, 0), 0.5);
        let h = stationary_density_series(&p, 0.5, 1e-14).unwrap();
        assert!((h.values[0] - 1.5).abs() < 1e-13 && (h.values[1] - 0.5).abs() < 1e-13);
        let p2 = ulam_operator(&f, 2).unwrap();
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(p2.entry(i, j), 0.0);
            }
        }
    }

    #[test]
    fn ulam_rows_are_stochastic() {
        for (f, g) in [
            (PiecewiseMapSpec::contraction_1d(0.3, 0.45).unwrap(), 7),
            (PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap(), 4),
            (PiecewiseMapSpec::quad_affine(0.5, 0.3, 0.6).unwrap(), 4),
        ] {
            let p = ulam_operator(&f, g).unwrap();
            for i in 0..p.len() {
                let s: f64 = p.row(i).iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
                assert!(p.row(i).iter().all(|e| e.1 >= 0.0 && e.1 <= 1.0 + 1e-12));
                assert!((p.perturbed(0.3).row_sum(i) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iterates_identity_small() {
        let p = ulam_operator(&c1d(), 6).unwrap();
        let one = vec![1.0; p.len()];
        assert_eq!(operator_iterates(&p, 0.5, &one, 0).gap, 0.0);
        let c = operator_iterates(&p, 0.5, &one, 5);
        assert!(c.gap < 1e-12);
        let direct = p.perturbed(0.5).apply(&one);
        assert_eq!(operator_iterates(&p, 0.5, &one, 1).iterated, direct);
    }

    #[test]
    fn series_is_fixed_point() {
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let p = ulam_operator(&q, 4).unwrap();
        let h = stationary_density_series(&p, 0.5, 1e-12).unwrap();
        assert!(fixed_point_residual(&p, 0.5, &h.values) < 1e-12);
        assert!((h.integral() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_measure_and_histogram() {
        let samples = vec![p1(0.3)];
        let h = empirical_density(&samples, 2).unwrap();
        assert_eq!(h.values, vec![0.0, 4.0, 0.0, 0.0]);
        assert!(empirical_density(&[], 2).unwrap_err().is_config());
        let prof = DensityProfile::Grid(h);
        let m = measure_of_region(&prof, &Region::single(AxisBox::open(&[0.0], &[0.375]))).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_histogram_is_flat() {
        let f = c1d();
        let noise = NoiseParams::new(0.5).unwrap();
        let h = stationary_histogram(&f, &noise, 0, 100_000, 3, 1).unwrap();
        let se = h.stderr.as_ref().unwrap();
        for (v, s) in h.values.iter().zip(se) {
            assert!((v - 1.0).abs() < 5.0 * s);
        }
    }

    #[test]
    fn sup_bound_holds_on_grid() {
        let f = c1d();
        let eps = 0.6;
        let bound = density_sup_bound(&f, eps).unwrap().unwrap();
        let grid = Grid::new(1, 8).unwrap();
        for i in 0..grid.len() {
            if let Ok(v) = closed_form_density(&f, eps, &grid.center(i), 64) {
                assert!(v <= bound);
            }
        }
    }
}
