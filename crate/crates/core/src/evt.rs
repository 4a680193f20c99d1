//! Extreme value statistics of `Y = -log d(x, target)` along RASP orbits:
//! level sequences, block maxima, the Gumbel comparison, periodic attractors
//! and extremal index estimates.

use serde::Serialize;

use crate::density::{closed_form_measure, closed_form_point};
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Point, Region};
use crate::maps::{AffineBranch, BackStep, PiecewiseMapSpec};
use crate::process::{advance, par_map, stationary_point, NoiseParams, StreamRng};

/// Cluster separation parameter of the runs estimator.
pub const RUNS_Q: usize = 1;

/// `Y(x) = -log d(x, target)` in the sup metric.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    DistToPoint(Point),
    DistToOrbit(Vec<Point>),
}

impl Observable {
    pub fn targets(&self) -> &[Point] {
        match self {
            Observable::DistToPoint(z) => std::slice::from_ref(z),
            Observable::DistToOrbit(pts) => pts,
        }
    }

    pub fn dim(&self) -> usize {
        self.targets()[0].dim()
    }

    pub fn distance(&self, x: &Point) -> f64 {
        self.targets()
            .iter()
            .map(|t| t.sup_distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        -self.distance(x).ln()
    }

    /// `{Y > u}` as a union of open sup-metric balls of radius `e^{-u}`, clipped to the cube.
    pub fn exceedance_region(&self, u: f64) -> Region {
        let r = (-u).exp();
        let cube = AxisBox::unit_closed(self.dim());
        Region::from_boxes(self.targets().iter().map(|t| AxisBox::ball(t, r).intersect(&cube)))
    }
}

pub fn gumbel_cdf(y: f64) -> f64 {
    (-(-y).exp()).exp()
}

/// `sup |F_m - F|` over the sample points, evaluated on both sides of each jump.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("samples", "empty sample set"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m)
    }))
}

/// Empirical CDF `F̂(y)` of `samples` against `cdf` at every sample value.
pub fn cdf_table(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Vec<(f64, f64, f64)> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    let mut out = Vec::with_capacity(s.len());
    for (i, &y) in s.iter().enumerate() {
        if i + 1 < s.len() && s[i + 1] == y {
            continue;
        }
        out.push((y, (i as f64 + 1.0) / m, cdf(y)));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelMode {
    Analytic,
    Empirical,
    Inverted,
}

impl LevelMode {
    pub fn tag(&self) -> &'static str {
        match self {
            LevelMode::Analytic => "analytic",
            LevelMode::Empirical => "empirical",
            LevelMode::Inverted => "inverted",
        }
    }
}

/// Thresholds `u_n = y / a_n + b_n` with `y = -log τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelSequence {
    pub mode: LevelMode,
    pub n: u64,
    pub tau: f64,
    pub a_n: f64,
    /// Present when the level decomposes as `y / a_n + b_n`.
    pub b_n: Option<f64>,
    pub u_n: f64,
    /// Radius `e^{-u_n}` of the exceedance balls.
    pub radius: f64,
}

fn check_tau(n: u64, tau: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::config("run.n", "block length must be at least 1"));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::config(
            "levels.tau",
            format!("must be positive and finite, got {tau}"),
        ));
    }
    if tau > n as f64 {
        return Err(Error::config(
            "levels.tau",
            format!("must not exceed n = {n}, got {tau}"),
        ));
    }
    Ok(())
}

/// Stratum data of a ball on which the closed-form density is constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StratumBall {
    /// `p` with the ball inside `Λ_p \ closure(Λ_{p+1})`.
    pub level: usize,
    pub density: f64,
    /// `J_p` on the ball.
    pub jacobian: f64,
}

/// Checks that `B(z, r)` lies in the cube and inside a single stratum
/// `Λ_p \ closure(Λ_{p+1})`, where `J_p` and hence `h_ε` are constant.
pub fn stratum_ball(map: &PiecewiseMapSpec, epsilon: f64, z: &Point, r: f64) -> Result<StratumBall> {
    let ball = AxisBox::ball(z, r);
    if !ball.is_subset_of(&AxisBox::unit_open(map.dim())) {
        return Err(Error::Level(format!(
            "ball of radius {r:e} around {z:?} leaves the domain"
        )));
    }
    let branches = map.affine_branches()?;
    let images = map.piece_images()?;
    let mut b = ball;
    let mut j = 1.0;
    let mut q = 1.0;
    let mut sum = 1.0;
    for level in 0..crate::maps::DEFAULT_MAX_DEPTH * 4 {
        match images.iter().position(|img| b.is_subset_of(img)) {
            Some(i) => {
                j *= branches[i].det_inv();
                q *= 1.0 - epsilon;
                sum += q * j;
                b = branches[i].preimage(&b);
            }
            None => {
                if images.iter().any(|img| img.closure().intersects(&b)) {
                    return Err(Error::Level(format!(
                        "ball of radius {r:e} around {z:?} straddles the boundary of Lambda_{}",
                        level + 1
                    )));
                }
                return Ok(StratumBall {
                    level,
                    density: epsilon * sum,
                    jacobian: j,
                });
            }
        }
    }
    Err(Error::Level(format!(
        "{z:?} lies too deep in the forward image sets for a constant-density ball"
    )))
}

/// Analytic levels `a_n = D`, `b_n = log 2 + log(n h_ε(z)) / D` for a point target.
pub fn level_sequence_analytic(
    map: &PiecewiseMapSpec,
    epsilon: f64,
    z: &Point,
    n: u64,
    tau: f64,
) -> Result<LevelSequence> {
    check_tau(n, tau)?;
    let d = map.dim() as f64;
    let pd = closed_form_point(map, epsilon, z, 4 * crate::maps::DEFAULT_MAX_DEPTH)?;
    if pd.truncated {
        return Err(Error::Level(format!(
            "{z:?} lies in every computed Lambda_k; use inverted or empirical levels"
        )));
    }
    let b_n = 2f64.ln() + (n as f64 * pd.value).ln() / d;
    let u_n = -tau.ln() / d + b_n;
    let radius = (-u_n).exp();
    let s = stratum_ball(map, epsilon, z, radius)?;
    debug_assert_eq!(s.level, pd.level);
    Ok(LevelSequence {
        mode: LevelMode::Analytic,
        n,
        tau,
        a_n: d,
        b_n: Some(b_n),
        u_n,
        radius,
    })
}

/// Analytic levels around a periodic orbit, for maps whose density is
/// bounded (`λ < (1-ε)^{-1}`): `p (2r)^D n h̄ = τ` with `h̄` the mean density over the orbit points.
pub fn level_sequence_analytic_orbit(
    map: &PiecewiseMapSpec,
    epsilon: f64,
    orbit: &[Point],
    n: u64,
    tau: f64,
) -> Result<LevelSequence> {
    check_tau(n, tau)?;
    let check = crate::density::check_contraction_condition(map, epsilon)?;
    if !check.holds {
        return Err(Error::Level(format!(
            "density is unbounded near the attractor (lambda = {} >= 1/(1-eps)); use inverted levels",
            check.lambda
        )));
    }
    let depth = ((1e-16f64).ln() / ((1.0 - epsilon) * check.lambda).ln()).ceil() as usize + 1;
    let mut h = 0.0;
    for w in orbit {
        h += closed_form_point(map, epsilon, w, depth)?.value;
    }
    h /= orbit.len() as f64;
    let d = map.dim() as f64;
    let p = orbit.len() as f64;
    let b_n = 2f64.ln() + (n as f64 * h * p).ln() / d;
    let u_n = -tau.ln() / d + b_n;
    let radius = (-u_n).exp();
    check_disjoint_balls(map, orbit, radius)?;
    Ok(LevelSequence {
        mode: LevelMode::Analytic,
        n,
        tau,
        a_n: d,
        b_n: Some(b_n),
        u_n,
        radius,
    })
}

fn check_disjoint_balls(map: &PiecewiseMapSpec, pts: &[Point], r: f64) -> Result<()> {
    let cube = AxisBox::unit_open(map.dim());
    for (i, a) in pts.iter().enumerate() {
        let ba = AxisBox::ball(a, r);
        if !ba.is_subset_of(&cube) {
            return Err(Error::Level(format!("ball around {a:?} leaves the domain")));
        }
        for b in &pts[i + 1..] {
            if ba.intersects(&AxisBox::ball(b, r)) {
                return Err(Error::Level("balls around the orbit points overlap".into()));
            }
        }
    }
    Ok(())
}

/// Empirical `(1 - τ/n)`-quantile of `Y_0` samples: the midpoint between the
/// `k`-th and `(k+1)`-th largest values, `k = round(N τ / n)`.
pub fn empirical_quantile_level(samples: &[f64], n: u64, tau: f64) -> Result<LevelSequence> {
    check_tau(n, tau)?;
    let big_n = samples.len();
    let k = (big_n as f64 * tau / n as f64).round() as usize;
    if k == 0 {
        return Err(Error::Budget(format!(
            "{big_n} samples cannot resolve an exceedance probability of {:e}",
            tau / n as f64
        )));
    }
    if k >= big_n {
        return Err(Error::Budget("target quantile lies below every sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let lo = s[big_n - k - 1];
    let hi = s[big_n - k];
    let u_n = if hi.is_infinite() { lo } else { 0.5 * (lo + hi) };
    Ok(LevelSequence {
        mode: LevelMode::Empirical,
        n,
        tau,
        a_n: 1.0,
        b_n: None,
        u_n,
        radius: (-u_n).exp(),
    })
}

/// `Y_0` at `budget` independent stationary samples.
pub fn sample_observable(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    par_map(budget, |s| {
        Ok(obs.eval(&stationary_point(map, noise, burn_in, &mut StreamRng::new(seed, s))?))
    })
}

pub fn level_sequence_empirical(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    n: u64,
    tau: f64,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<LevelSequence> {
    check_tau(n, tau)?;
    if (budget as f64) * tau / (n as f64) < 1.0 {
        return Err(Error::Budget(format!(
            "budget {budget} is too small for tau/n = {:e}",
            tau / n as f64
        )));
    }
    let ys = sample_observable(map, noise, obs, burn_in, budget, seed)?;
    empirical_quantile_level(&ys, n, tau)
}

/// Level with `n μ_ε({Y > u}) = τ` exactly, found by bisection on the
/// closed-form measure of the exceedance set.
pub fn level_sequence_inverted(
    map: &PiecewiseMapSpec,
    epsilon: f64,
    obs: &Observable,
    n: u64,
    tau: f64,
) -> Result<LevelSequence> {
    check_tau(n, tau)?;
    let target = tau / n as f64;
    let mass =
        |r: f64| -> Result<f64> { Ok(closed_form_measure(map, epsilon, &obs.exceedance_region(-r.ln()))?.value) };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if mass(hi)? < target {
        return Err(Error::Level("exceedance probability cannot reach tau/n".into()));
    }
    for _ in 0..200 {
        let mid = if lo == 0.0 { hi * 0.5 } else { (lo * hi).sqrt() };
        if mass(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if lo > 0.0 && hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let radius = if lo > 0.0 && (mass(lo)? - target).abs() < (mass(hi)? - target).abs() {
        lo
    } else {
        hi
    };
    Ok(LevelSequence {
        mode: LevelMode::Inverted,
        n,
        tau,
        a_n: obs.dim() as f64,
        b_n: None,
        u_n: -radius.ln(),
        radius,
    })
}

/// `n P̂(Y_0 > u)` with its binomial standard error and, where the closed form applies, the exact value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExceedanceRate {
    pub estimate: f64,
    pub stderr: f64,
    pub exact: Option<f64>,
    pub samples: u64,
}

pub fn exceedance_rate_check(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    u: f64,
    n: u64,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<ExceedanceRate> {
    if !u.is_finite() {
        return Err(Error::config("levels", "threshold must be finite"));
    }
    if budget == 0 {
        return Err(Error::config("run.budget", "must be at least 1"));
    }
    let hits = crate::process::par_fold(
        budget,
        || 0u64,
        |acc, s| {
            let x = stationary_point(map, noise, burn_in, &mut StreamRng::new(seed, s))?;
            Ok(acc + (obs.eval(&x) > u) as u64)
        },
        |a, b| a + b,
    )?;
    let p = hits as f64 / budget as f64;
    let exact = closed_form_measure(map, noise.epsilon(), &obs.exceedance_region(u))
        .ok()
        .filter(|m| m.tail_bound < 1e-15)
        .map(|m| n as f64 * m.value);
    Ok(ExceedanceRate {
        estimate: n as f64 * p,
        stderr: n as f64 * (p * (1.0 - p) / budget as f64).sqrt(),
        exact,
        samples: budget,
    })
}

/// A periodic orbit of the unperturbed map, in orbit order.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit {
    pub points: Vec<Point>,
    pub period: usize,
}

/// Detection tolerance for periodic orbits.
pub const ATTRACTOR_DELTA: f64 = 1e-12;
pub const ATTRACTOR_MAX_ITER: usize = 100_000;
pub const ATTRACTOR_PROBES: usize = 32;
pub const ATTRACTOR_MAX_PERIOD: usize = 64;

/// Periodic orbits reached from a grid of probe points, each verified to
/// satisfy `f^p(w) ≈ w` and to stay at least `10 δ` away from the singular set.
pub fn attractor_orbit(map: &PiecewiseMapSpec) -> Result<Vec<PeriodicOrbit>> {
    let branches = map.affine_branches()?;
    if map.contraction_factor().is_none() {
        return Err(Error::Attractor("the map is not piecewise contracting".into()));
    }
    let delta = ATTRACTOR_DELTA;
    let dim = map.dim();
    let per = ATTRACTOR_PROBES;
    let mut found: Vec<PeriodicOrbit> = Vec::new();
    let mut converged_any = false;
    for probe in 0..per.pow(dim as u32) {
        let mut c = Vec::with_capacity(dim);
        let mut idx = probe;
        for _ in 0..dim {
            c.push(((idx % per) as f64 + 0.5) / per as f64);
            idx /= per;
        }
        let Some((start, pieces)) = converge(map, &Point::new(&c), delta) else {
            continue;
        };
        converged_any = true;
        let w = polish(&branches, &pieces, &start);
        let mut points = Vec::with_capacity(pieces.len());
        let mut x = w;
        for _ in 0..pieces.len() {
            points.push(x);
            x = map.evaluate(&x).map_err(|_| {
                Error::AssumptionViolated(format!("periodic orbit through {w:?} meets the singular set"))
            })?;
        }
        if x.sup_distance(&w) > delta {
            return Err(Error::Attractor(format!(
                "f^p(w) misses w = {w:?} by more than {delta:e}"
            )));
        }
        if found
            .iter()
            .any(|o| o.points.iter().any(|q| q.sup_distance(&points[0]) < 1e3 * delta))
        {
            continue;
        }
        for q in &points {
            let d = map.singular_set().distance_to(q);
            if d < 10.0 * delta {
                return Err(Error::AssumptionViolated(format!(
                    "periodic point {q:?} lies within {d:e} of the singular set"
                )));
            }
        }
        let first = (0..points.len())
            .min_by(|&a, &b| {
                points[a]
                    .as_slice()
                    .partial_cmp(points[b].as_slice())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        points.rotate_left(first);
        found.push(PeriodicOrbit {
            period: points.len(),
            points,
        });
    }
    if !converged_any {
        return Err(Error::Attractor(format!(
            "no probe orbit converged within {ATTRACTOR_MAX_ITER} iterations"
        )));
    }
    Ok(found)
}

/// Iterates until `x_t` is within `delta` of `x_{t-p}` for some `p ≤ 64`; returns the
/// periodic-looking state and the pieces visited over one period.
fn converge(map: &PiecewiseMapSpec, x0: &Point, delta: f64) -> Option<(Point, Vec<usize>)> {
    let mut hist: Vec<Point> = Vec::with_capacity(ATTRACTOR_MAX_PERIOD + 1);
    let mut x = *x0;
    for _ in 0..ATTRACTOR_MAX_ITER {
        if hist.len() > ATTRACTOR_MAX_PERIOD {
            hist.remove(0);
        }
        hist.push(x);
        let len = hist.len();
        for p in 1..len {
            if hist[len - 1 - p].sup_distance(&x) < delta {
                let mut pieces = Vec::with_capacity(p);
                let mut y = x;
                for _ in 0..p {
                    pieces.push(map.piece_index(&y).ok()?);
                    y = map.evaluate(&y).ok()?;
                }
                return Some((x, pieces));
            }
        }
        x = map.evaluate(&x).ok()?;
    }
    None
}

/// Exact fixed point of the affine composition `f_{i_p} ∘ ... ∘ f_{i_1}`.
fn polish(branches: &[AffineBranch], pieces: &[usize], approx: &Point) -> Point {
    let dim = approx.dim();
    let mut w = *approx;
    for a in 0..dim {
        let (mut s, mut o) = (1.0, 0.0);
        for &i in pieces {
            let b = &branches[i];
            s *= b.scale()[a];
            o = b.scale()[a] * o + b.offset()[a];
        }
        w[a] = o / (1.0 - s);
    }
    w
}

pub fn extremal_index_analytic(epsilon: f64, m_u: f64) -> f64 {
    epsilon * (1.0 - m_u)
}

/// Whether a union of boxes is forward invariant, `f(U) ⊆ U`.
pub fn is_forward_invariant(map: &PiecewiseMapSpec, u: &Region) -> Result<bool> {
    Ok(map.forward_image(u)?.is_subset_of(u))
}

/// Block maxima with the exceedances above `retain` recorded as `(time, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockData {
    pub n: usize,
    pub maxima: Vec<f64>,
    pub exceedances: Vec<Vec<(u32, f64)>>,
    pub retain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    pub n: usize,
    pub blocks: u64,
    pub burn_in: usize,
    /// Slice one long orbit into consecutive blocks instead of restarting each block.
    pub sliced: bool,
}

fn run_block<N: crate::process::NoiseSource>(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    n: usize,
    retain: f64,
    x: &mut Point,
    src: &mut N,
) -> Result<(f64, Vec<(u32, f64)>)> {
    let mut max = f64::NEG_INFINITY;
    let mut exc = Vec::new();
    for t in 0..n {
        if t > 0 {
            *x = advance(map, noise, x, src)?.0;
        }
        let y = obs.eval(x);
        max = max.max(y);
        if y > retain {
            exc.push((t as u32, y));
        }
    }
    Ok((max, exc))
}

pub fn block_maxima(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    spec: &BlockSpec,
    retain: f64,
    seed: u64,
) -> Result<BlockData> {
    if spec.n == 0 {
        return Err(Error::config("run.n", "block length must be at least 1"));
    }
    if spec.blocks == 0 {
        return Err(Error::config("run.blocks", "block count must be at least 1"));
    }
    let results: Vec<(f64, Vec<(u32, f64)>)> = if spec.sliced {
        let mut src = StreamRng::new(seed, 0);
        let mut x = stationary_point(map, noise, spec.burn_in, &mut src)?;
        let mut out = Vec::with_capacity(spec.blocks as usize);
        for b in 0..spec.blocks {
            if b > 0 {
                x = advance(map, noise, &x, &mut src)?.0;
            }
            out.push(run_block(map, noise, obs, spec.n, retain, &mut x, &mut src)?);
        }
        out
    } else {
        par_map(spec.blocks, |b| {
            let mut src = StreamRng::new(seed, b);
            let mut x = stationary_point(map, noise, spec.burn_in, &mut src)?;
            run_block(map, noise, obs, spec.n, retain, &mut x, &mut src)
        })?
    };
    let (maxima, exceedances) = results.into_iter().unzip();
    Ok(BlockData {
        n: spec.n,
        maxima,
        exceedances,
        retain,
    })
}

/// Extremal index estimates from block data at threshold `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaEstimates {
    pub p_max_below: f64,
    pub p_max_below_stderr: f64,
    pub exceedance_prob: f64,
    pub exceedances: u64,
    pub clusters: u64,
    pub blocks: u64,
    pub theta_logp: Option<f64>,
    pub theta_runs: Option<f64>,
    /// Grouped jackknife standard errors, when both estimates exist.
    pub logp_stderr: Option<f64>,
    pub runs_stderr: Option<f64>,
    pub difference_stderr: Option<f64>,
}

/// Number of jackknife groups used for the extremal index standard errors.
pub const JACKKNIFE_GROUPS: usize = 20;

#[derive(Clone, Copy, Debug, Default)]
struct Counts {
    blocks: u64,
    below: u64,
    exceedances: u64,
    clusters: u64,
}

impl Counts {
    fn sub(self, o: Counts) -> Counts {
        Counts {
            blocks: self.blocks - o.blocks,
            below: self.below - o.below,
            exceedances: self.exceedances - o.exceedances,
            clusters: self.clusters - o.clusters,
        }
    }

    fn add(&mut self, o: Counts) {
        self.blocks += o.blocks;
        self.below += o.below;
        self.exceedances += o.exceedances;
        self.clusters += o.clusters;
    }

    fn logp(&self) -> Option<f64> {
        (self.below > 0 && self.below < self.blocks && self.exceedances > 0).then(|| {
            let p = self.below as f64 / self.blocks as f64;
            -p.ln() * self.blocks as f64 / self.exceedances as f64
        })
    }

    fn runs(&self) -> Option<f64> {
        (self.exceedances > 0).then(|| self.clusters as f64 / self.exceedances as f64)
    }
}

fn block_counts(max: f64, exc: &[(u32, f64)], u: f64) -> Counts {
    let mut c = Counts {
        blocks: 1,
        below: (max <= u) as u64,
        ..Counts::default()
    };
    let mut last: Option<u32> = None;
    for &(t, y) in exc {
        if y <= u {
            continue;
        }
        c.exceedances += 1;
        match last {
            Some(prev) if (t - prev - 1) as usize <= RUNS_Q => {}
            _ => c.clusters += 1,
        }
        last = Some(t);
    }
    c
}

fn jackknife(groups: &[Counts], total: Counts, f: impl Fn(&Counts) -> Option<f64>) -> Option<f64> {
    let g = groups.len();
    if g < 2 {
        return None;
    }
    let vals: Vec<f64> = groups.iter().map(|c| f(&total.sub(*c))).collect::<Option<_>>()?;
    let mean = vals.iter().sum::<f64>() / g as f64;
    let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss * (g as f64 - 1.0) / g as f64).sqrt())
}

pub fn extremal_index_empirical(data: &BlockData, u: f64) -> Result<ThetaEstimates> {
    if u < data.retain {
        return Err(Error::Precondition(format!(
            "threshold {u} is below the retained level {}",
            data.retain
        )));
    }
    let b = data.maxima.len();
    let ngroups = JACKKNIFE_GROUPS.min(b);
    let mut groups = vec![Counts::default(); ngroups];
    let mut total = Counts::default();
    for (i, (m, exc)) in data.maxima.iter().zip(&data.exceedances).enumerate() {
        let c = block_counts(*m, exc, u);
        groups[i * ngroups / b].add(c);
        total.add(c);
    }
    if total.exceedances == 0 {
        return Err(Error::Undefined(format!("no exceedances of {u} in {b} blocks")));
    }
    let n = data.n;
    let p = total.below as f64 / b as f64;
    let theta_logp = total.logp();
    let theta_runs = total.runs();
    Ok(ThetaEstimates {
        p_max_below: p,
        p_max_below_stderr: (p * (1.0 - p) / b as f64).sqrt(),
        exceedance_prob: total.exceedances as f64 / (n as f64 * b as f64),
        exceedances: total.exceedances,
        clusters: total.clusters,
        blocks: b as u64,
        theta_logp,
        theta_runs,
        logp_stderr: jackknife(&groups, total, |c| c.logp()),
        runs_stderr: jackknife(&groups, total, |c| c.runs()),
        difference_stderr: jackknife(&groups, total, |c| Some(c.logp()? - c.runs()?)),
    })
}

/// Number of backward steps a point survives, for reporting where a target sits.
pub fn stratum_level(map: &PiecewiseMapSpec, z: &Point, max: usize) -> Result<Option<usize>> {
    let mut y = *z;
    for k in 0..max {
        match map.backward_step(&y)? {
            BackStep::Inside { preimage, .. } => y = preimage,
            BackStep::Outside => return Ok(Some(k)),
            BackStep::Boundary => return Err(Error::Boundary { level: k + 1 }),
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(x: f64) -> Point {
        Point::new(&[x])
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn observable_examples() {
        let o = Observable::DistToPoint(p1(0.5));
        assert_eq!(o.eval(&p1(0.5)), f64::INFINITY);
        let o = Observable::DistToPoint(p1(0.3));
        assert!((o.eval(&p1(0.4)) - 2.302585).abs() < 1e-5);
        let o = Observable::DistToOrbit(vec![p1(0.2), p1(0.6)]);
        assert!((o.eval(&p1(0.55)) - 2.9957).abs() < 1e-4);
    }

    #[test]
    fn gumbel_examples() {
        assert!((gumbel_cdf(0.0) - 0.3678794).abs() < 1e-7);
        assert!((gumbel_cdf(-(2.0f64).ln()) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(gumbel_cdf(1e3), 1.0);
    }

    #[test]
    fn ks_examples() {
        let d = ks_distance(&[0.0], gumbel_cdf).unwrap();
        assert!((d - 0.6321206).abs() < 1e-6);
        let m = 200;
        let q: Vec<f64> = (0..m)
            .map(|i| {
                let p = (i as f64 + 0.5) / m as f64;
                -(-p.ln()).ln()
            })
            .collect();
        assert!(ks_distance(&q, gumbel_cdf).unwrap() <= 0.5 / m as f64 + 1e-12);
        assert!(ks_distance(&[1.0, 2.0, 3.0], |_| 0.5).unwrap() >= 0.5);
        assert!(ks_distance(&[], gumbel_cdf).unwrap_err().is_config());
    }

    #[test]
    fn analytic_level_examples() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        let l = level_sequence_analytic(&f, 0.5, &p1(0.3), 100, 1.0).unwrap();
        assert_eq!(l.a_n, 1.0);
        assert!((l.b_n.unwrap() - 200f64.ln()).abs() < 1e-12);
        assert_eq!(l.u_n, l.b_n.unwrap());
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let l = level_sequence_analytic(&q, 0.5, &Point::new(&[0.3, 0.1]), 10_000, 1.0).unwrap();
        assert!((l.b_n.unwrap() - (2f64.ln() + 0.5 * 5000f64.ln())).abs() < 1e-12);
        assert!((l.b_n.unwrap() - 4.9520).abs() < 5e-4);
        assert!(matches!(
            level_sequence_analytic(&f, 0.5, &p1(0.2501), 100, 1.0),
            Err(Error::Level(_))
        ));
        assert_eq!(
            level_sequence_analytic(&f, 0.5, &p1(0.25), 100, 1.0),
            Err(Error::Boundary { level: 2 })
        );
    }

    #[test]
    fn analytic_ball_has_mass_tau_over_n() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        for tau in [0.5, 1.0, 2.0] {
            let l = level_sequence_analytic(&f, 0.5, &p1(0.3), 100, tau).unwrap();
            let obs = Observable::DistToPoint(p1(0.3));
            let m = closed_form_measure(&f, 0.5, &obs.exceedance_region(l.u_n)).unwrap();
            assert!((100.0 * m.value - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_quantile() {
        let s: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let l = empirical_quantile_level(&s, 100, 50.0).unwrap();
        assert_eq!(l.u_n, 49.5);
        let l = empirical_quantile_level(&s, 10, 1.0).unwrap();
        assert_eq!(l.u_n, 90.5);
        assert!(matches!(empirical_quantile_level(&s, 1000, 1.0), Err(Error::Budget(_))));
        assert!(empirical_quantile_level(&s, 100, 0.0).unwrap_err().is_config());
        assert!(empirical_quantile_level(&s, 100, 101.0).unwrap_err().is_config());
    }

    #[test]
    fn inverted_matches_analytic_off_attractor() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        let obs = Observable::DistToPoint(p1(0.3));
        let a = level_sequence_analytic(&f, 0.5, &p1(0.3), 1000, 1.0).unwrap();
        let b = level_sequence_inverted(&f, 0.5, &obs, 1000, 1.0).unwrap();
        assert!((a.radius / b.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attractor_examples() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.3).unwrap();
        let o = attractor_orbit(&f).unwrap();
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].period, 1);
        assert!((o[0].points[0][0] - 0.6).abs() < 1e-12);
        let g = PiecewiseMapSpec::contraction_1d(0.5, 0.7).unwrap();
        let o = attractor_orbit(&g).unwrap();
        assert_eq!(o[0].period, 2);
        assert!((o[0].points[0][0] - 1.0 / 15.0).abs() < 1e-12);
        assert!((o[0].points[1][0] - 11.0 / 15.0).abs() < 1e-12);
        let h = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        assert!(matches!(attractor_orbit(&h), Err(Error::AssumptionViolated(_))));
        let b = PiecewiseMapSpec::baker(0.2, 0.4, 0.5).unwrap();
        assert!(matches!(attractor_orbit(&b), Err(Error::Attractor(_))));
    }

    #[test]
    fn quad_attractor_is_a_four_cycle() {
        let q = PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).unwrap();
        let orbits = attractor_orbit(&q).unwrap();
        assert_eq!(orbits.len(), 1);
        let o = &orbits[0];
        assert_eq!(o.period, 4);
        let expected = [[0.2, 0.4], [0.6, 0.2], [0.8, 0.6], [0.4, 0.8]];
        for (p, e) in o.points.iter().zip(expected) {
            assert!(p.sup_distance(&Point::new(&e)) < 1e-12, "{p:?}");
        }
        let mut x = o.points[0];
        for _ in 0..4 {
            x = q.evaluate(&x).unwrap();
        }
        assert!(x.sup_distance(&o.points[0]) < ATTRACTOR_DELTA);
    }

    #[test]
    fn extremal_index_analytic_examples() {
        assert_eq!(extremal_index_analytic(0.3, 0.0), 0.3);
        assert!((extremal_index_analytic(0.5, 0.01) - 0.495).abs() < 1e-15);
        assert!((extremal_index_analytic(0.2, 0.1) - 0.18).abs() < 1e-15);
    }

    #[test]
    fn runs_and_logp_on_synthetic_blocks() {
        let data = BlockData {
            n: 4,
            maxima: vec![5.0, 0.0],
            exceedances: vec![vec![(0, 5.0), (1, 5.0), (2, 5.0), (3, 5.0)], vec![]],
            retain: 1.0,
        };
        let t = extremal_index_empirical(&data, 1.0).unwrap();
        assert_eq!(t.exceedances, 4);
        assert_eq!(t.clusters, 1);
        assert_eq!(t.theta_runs, Some(0.25));
        assert!((t.theta_logp.unwrap() - 2f64.ln() * 2.0 / 4.0).abs() < 1e-15);
        let split = BlockData {
            n: 10,
            maxima: vec![5.0],
            exceedances: vec![vec![(0, 5.0), (2, 5.0), (5, 5.0)]],
            retain: 1.0,
        };
        let t = extremal_index_empirical(&split, 1.0).unwrap();
        assert_eq!(t.clusters, 2);
        assert_eq!(t.theta_logp, None);
        let none = BlockData {
            n: 10,
            maxima: vec![0.0],
            exceedances: vec![vec![]],
            retain: 1.0,
        };
        assert!(matches!(extremal_index_empirical(&none, 1.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn block_maxima_basics() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap();
        let noise = NoiseParams::new(0.5).unwrap();
        let obs = Observable::DistToPoint(p1(0.3));
        let spec = BlockSpec {
            n: 1,
            blocks: 50,
            burn_in: 20,
            sliced: false,
        };
        let d = block_maxima(&f, &noise, &obs, &spec, 0.0, 3).unwrap();
        let direct = sample_observable(&f, &noise, &obs, 20, 50, 3).unwrap();
        assert_eq!(d.maxima, direct);
        let long = block_maxima(&f, &noise, &obs, &BlockSpec { n: 20, ..spec }, 0.0, 3).unwrap();
        let short = block_maxima(&f, &noise, &obs, &BlockSpec { n: 10, ..spec }, 0.0, 3).unwrap();
        assert!(long.maxima.iter().zip(&short.maxima).all(|(a, b)| a >= b));
        assert!(block_maxima(&f, &noise, &obs, &BlockSpec { blocks: 0, ..spec }, 0.0, 3)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn forward_invariance_of_attractor_ball() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.3).unwrap();
        let u = Observable::DistToPoint(p1(0.6)).exceedance_region(5.0);
        assert!(is_forward_invariant(&f, &u).unwrap());
        let v = Observable::DistToPoint(p1(0.3)).exceedance_region(5.0);
        assert!(!is_forward_invariant(&f, &v).unwrap());
    }
}
