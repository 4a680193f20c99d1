//! Monte Carlo checks of the dependence conditions: annealed correlation
//! decay, mixing gaps, short-return sums and return probabilities.

use serde::Serialize;

use crate::density::closed_form_measure;
use crate::error::{Error, Result};
use crate::evt::{is_forward_invariant, stratum_ball, Observable};
use crate::geometry::{AxisBox, Point, Region};
use crate::maps::PiecewiseMapSpec;
use crate::process::{advance, par_fold, stationary_point, NoiseParams, NoiseSource, StreamRng};

/// Observables for the correlation estimates.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    Indicator(Region),
    /// `-log d(x, z)`, unbounded.
    NegLogDistance(Point),
}

impl TestFunction {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Indicator(r) => r.contains(x) as u8 as f64,
            TestFunction::NegLogDistance(z) => -z.sup_distance(x).ln(),
        }
    }

    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            TestFunction::Constant(c) => Some(c.abs()),
            TestFunction::Indicator(_) => Some(1.0),
            TestFunction::NegLogDistance(_) => None,
        }
    }

    /// `‖ψ h_ε‖₁` where the closed form gives it.
    pub fn weighted_l1(&self, map: &PiecewiseMapSpec, epsilon: f64) -> Option<f64> {
        match self {
            TestFunction::Constant(c) => Some(c.abs()),
            TestFunction::Indicator(r) => closed_form_measure(map, epsilon, r).ok().map(|m| m.upper()),
            TestFunction::NegLogDistance(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
}

impl CorrelationEstimate {
    pub fn within_bound(&self, sigmas: f64) -> bool {
        self.estimate.abs() <= self.bound + sigmas * self.stderr
    }
}

/// Sums for `mean(XY) - mean(X) mean(Y)` with a delta-method standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct CovSums {
    n: f64,
    xy: f64,
    x: f64,
    y: f64,
    xy2: f64,
    x2: f64,
    y2: f64,
    xy_x: f64,
    xy_y: f64,
    x_y: f64,
}

impl CovSums {
    fn add(&mut self, xy: f64, x: f64, y: f64) {
        self.n += 1.0;
        self.xy += xy;
        self.x += x;
        self.y += y;
        self.xy2 += xy * xy;
        self.x2 += x * x;
        self.y2 += y * y;
        self.xy_x += xy * x;
        self.xy_y += xy * y;
        self.x_y += x * y;
    }

    fn merge(mut self, o: &CovSums) -> Self {
        self.n += o.n;
        self.xy += o.xy;
        self.x += o.x;
        self.y += o.y;
        self.xy2 += o.xy2;
        self.x2 += o.x2;
        self.y2 += o.y2;
        self.xy_x += o.xy_x;
        self.xy_y += o.xy_y;
        self.x_y += o.x_y;
        self
    }

    fn estimate(&self) -> (f64, f64) {
        let n = self.n;
        let (mxy, mx, my) = (self.xy / n, self.x / n, self.y / n);
        let est = mxy - mx * my;
        // influence g = XY - my X - mx Y
        let (cx, cy) = (my, mx);
        let e2 = self.xy2 / n + cx * cx * self.x2 / n + cy * cy * self.y2 / n
            - 2.0 * cx * self.xy_x / n
            - 2.0 * cy * self.xy_y / n
            + 2.0 * cx * cy * self.x_y / n;
        let e1 = mxy - cx * mx - cy * my;
        let var = (e2 - e1 * e1).max(0.0);
        (est, (var / n).sqrt())
    }
}

/// Correlation estimates at lags `1..=max_lag`, all read off the same orbits.
pub fn correlation_profile(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    phi: &TestFunction,
    psi: &TestFunction,
    max_lag: usize,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<Vec<CorrelationEstimate>> {
    if max_lag == 0 {
        return Err(Error::config("lag", "minimum lag is 1"));
    }
    let Some(phi_sup) = phi.sup_norm() else {
        return Err(Error::config("phi", "the observable phi must be bounded"));
    };
    if budget < 2 {
        return Err(Error::config("run.budget", "need at least 2 samples"));
    }
    let sums = par_fold(
        budget,
        || (vec![CovSums::default(); max_lag], 0.0f64, 0.0f64),
        |(mut acc, mut l1, mut l1sq), s| {
            let mut src = StreamRng::new(seed, s);
            let x0 = stationary_point(map, noise, burn_in, &mut src)?;
            let p0 = psi.eval(&x0);
            l1 += p0.abs();
            l1sq += p0 * p0;
            let mut x = x0;
            for a in acc.iter_mut() {
                x = advance(map, noise, &x, &mut src)?.0;
                let f = phi.eval(&x);
                a.add(p0 * f, p0, f);
            }
            Ok((acc, l1, l1sq))
        },
        |(a, l1a, sqa), (b, l1b, sqb)| {
            (
                a.iter().zip(&b).map(|(x, y)| x.merge(y)).collect(),
                l1a + l1b,
                sqa + sqb,
            )
        },
    )?;
    let (acc, l1, l1sq) = sums;
    let n = budget as f64;
    let psi_l1 = match psi.weighted_l1(map, noise.epsilon()) {
        Some(v) => v,
        None => {
            let m = l1 / n;
            m + 4.0 * ((l1sq / n - m * m).max(0.0) / n).sqrt()
        }
    };
    let q = 1.0 - noise.epsilon();
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (estimate, stderr) = s.estimate();
            CorrelationEstimate {
                n: i + 1,
                estimate,
                stderr,
                bound: 2.0 * q.powi(i as i32 + 1) * phi_sup * psi_l1,
            }
        })
        .collect())
}

pub fn correlation_estimate(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    phi: &TestFunction,
    psi: &TestFunction,
    n: usize,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<CorrelationEstimate> {
    if n == 0 {
        return Err(Error::config("lag", "minimum lag is 1"));
    }
    let mut v = correlation_profile(map, noise, phi, psi, n, burn_in, budget, seed)?;
    Ok(v.pop().expect("non-empty profile"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapEstimate {
    pub gap: f64,
    pub stderr: f64,
    pub bound: Option<f64>,
    pub warning: Option<String>,
}

fn in_cluster_set(u: &Region, xs: &[Point], i: usize, q: usize) -> bool {
    u.contains(&xs[i]) && (q == 0 || !u.contains(&xs[i + 1]))
}

fn low_budget_warning(budget: u64, mass: f64) -> Option<String> {
    let expected = budget as f64 * mass;
    (expected < 10.0).then(|| format!("only {expected:.2} expected events for budget {budget}"))
}

/// `|P(A ∩ W_{t,ℓ}(A)) - P(A) P(W_{0,ℓ}(A))|` for `A = A^{(q)}(U)`, with
/// `W_{s,ℓ}(A)` the event of no `A` at times `s..s+ℓ`.
pub fn mixing_gap_estimate(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    u: &Region,
    q: usize,
    t: usize,
    ell: usize,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<GapEstimate> {
    if q > 1 {
        return Err(Error::config("q", "only q = 0 and q = 1 are supported"));
    }
    if t == 0 {
        return Err(Error::config("t", "gap offset must be at least 1"));
    }
    if budget < 2 {
        return Err(Error::config("run.budget", "need at least 2 samples"));
    }
    let len = (t + ell).max(ell) + q + 1;
    let sums = par_fold(
        budget,
        CovSums::default,
        |mut acc, s| {
            let mut src = StreamRng::new(seed, s);
            let mut xs = Vec::with_capacity(len);
            xs.push(stationary_point(map, noise, burn_in, &mut src)?);
            for i in 1..len {
                let next = advance(map, noise, &xs[i - 1], &mut src)?.0;
                xs.push(next);
            }
            let a0 = in_cluster_set(u, &xs, 0, q) as u8 as f64;
            let w0 = (0..ell).all(|i| !in_cluster_set(u, &xs, i, q)) as u8 as f64;
            let wt = (t..t + ell).all(|i| !in_cluster_set(u, &xs, i, q)) as u8 as f64;
            acc.add(a0 * wt, a0, w0);
            Ok(acc)
        },
        |a, b| a.merge(&b),
    )?;
    let n = budget as f64;
    let gap = (sums.xy / n - (sums.x / n) * (sums.y / n)).abs();
    let (_, mut stderr) = sums.estimate();
    let mu = closed_form_measure(map, noise.epsilon(), u).map(|m| m.upper()).ok();
    let eps = noise.epsilon();
    let bound = mu.map(|m| match q {
        0 => 2.0 * (1.0 - eps).powi(t as i32) * m,
        _ => 2.0 * eps * m * (1.0 - eps).powi(t as i32),
    });
    let warning = mu.and_then(|m| low_budget_warning(budget, m));
    if warning.is_some() {
        stderr = stderr.max((mu.unwrap_or(0.0) / n).sqrt());
    }
    Ok(GapEstimate {
        gap,
        stderr,
        bound,
        warning,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProbabilityMode {
    Analytic,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReturnProbability {
    pub j: usize,
    pub value: f64,
    pub stderr: f64,
    pub mode: ProbabilityMode,
}

/// Exact `Pr_j = P(Y_0 > u, Y_j > u)` for `U = B(z, r)` inside a constant-density stratum `Λ_p \ closure(Λ_{p+1})`:
/// `ε μ_ε(U) Σ_{k=0}^{min(j-1,p)} (1-ε)^k J_k m(U)`.
pub fn return_prob_analytic(
    map: &PiecewiseMapSpec,
    epsilon: f64,
    z: &Point,
    r: f64,
    j: usize,
) -> Result<ReturnProbability> {
    if j == 0 {
        return Err(Error::config("j", "lag must be at least 1"));
    }
    let s = stratum_ball(map, epsilon, z, r)?;
    let m = AxisBox::ball(z, r).measure();
    let mu = s.density * m;
    let mut sum = 0.0;
    let mut q = 1.0;
    for k in 0..=(j - 1).min(s.level) {
        sum += q * map.j_k(z, k)? * m;
        q *= 1.0 - epsilon;
    }
    Ok(ReturnProbability {
        j,
        value: epsilon * mu * sum,
        stderr: 0.0,
        mode: ProbabilityMode::Analytic,
    })
}

fn uniform_in<N: NoiseSource>(b: &AxisBox, src: &mut N) -> Point {
    let mut p = src.uniform_point(b.dim());
    for a in 0..b.dim() {
        let s = b.side(a);
        p[a] = s.lo + (s.hi - s.lo) * p[a];
    }
    p
}

/// Weighted start distribution for return-type sums: either uniform on a
/// single constant-density ball with weight `μ_ε(U)`, or stationary samples.
enum Start {
    Ball { ball: AxisBox, weight: f64 },
    Stationary { burn_in: usize },
}

impl Start {
    fn for_target(map: &PiecewiseMapSpec, epsilon: f64, obs: &Observable, u: f64, burn_in: usize) -> Start {
        if let Observable::DistToPoint(z) = obs {
            let r = (-u).exp();
            if let Ok(s) = stratum_ball(map, epsilon, z, r) {
                let ball = AxisBox::ball(z, r);
                return Start::Ball {
                    weight: s.density * ball.measure(),
                    ball,
                };
            }
        }
        Start::Stationary { burn_in }
    }

    /// Start point and its weight, zero when a stationary start misses `U`.
    fn draw(
        &self,
        map: &PiecewiseMapSpec,
        noise: &NoiseParams,
        u: &Region,
        src: &mut StreamRng,
    ) -> Result<(Point, f64)> {
        match self {
            Start::Ball { ball, weight } => Ok((uniform_in(ball, src), *weight)),
            Start::Stationary { burn_in } => {
                let x = stationary_point(map, noise, *burn_in, src)?;
                let w = u.contains(&x) as u8 as f64;
                Ok((x, w))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SumEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub analytic: Option<f64>,
    pub terms: usize,
}

fn mean_and_stderr(sum: f64, sum2: f64, n: f64) -> (f64, f64) {
    let m = sum / n;
    (m, ((sum2 / n - m * m).max(0.0) / n).sqrt())
}

/// Monte Carlo `Pr_j` for a point target.
pub fn return_prob_mc(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    u: f64,
    j: usize,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<ReturnProbability> {
    if j == 0 {
        return Err(Error::config("j", "lag must be at least 1"));
    }
    let region = obs.exceedance_region(u);
    let start = Start::for_target(map, noise.epsilon(), obs, u, burn_in);
    let (s, s2) = par_fold(
        budget,
        || (0.0, 0.0),
        |(a, b), i| {
            let mut src = StreamRng::new(seed, i);
            let (mut x, w) = start.draw(map, noise, &region, &mut src)?;
            if w == 0.0 {
                return Ok((a, b));
            }
            for _ in 0..j {
                x = advance(map, noise, &x, &mut src)?.0;
            }
            let v = w * region.contains(&x) as u8 as f64;
            Ok((a + v, b + v * v))
        },
        |(a, b), (c, d)| (a + c, b + d),
    )?;
    let (value, stderr) = mean_and_stderr(s, s2, budget as f64);
    Ok(ReturnProbability {
        j,
        value,
        stderr,
        mode: ProbabilityMode::MonteCarlo,
    })
}

/// `n Σ_{j=1}^{⌊n/k_n⌋} P(Y_0 > u, Y_j > u)`.
pub fn dprime_sum(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    u: f64,
    n: u64,
    k_n: u64,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<SumEstimate> {
    if k_n < 2 {
        return Err(Error::config("k_n", "must be at least 2"));
    }
    if budget < 2 {
        return Err(Error::config("run.budget", "need at least 2 samples"));
    }
    let terms = (n / k_n) as usize;
    let region = obs.exceedance_region(u);
    let start = Start::for_target(map, noise.epsilon(), obs, u, burn_in);
    let (s, s2) = par_fold(
        budget,
        || (0.0, 0.0),
        |(a, b), i| {
            let mut src = StreamRng::new(seed, i);
            let (mut x, w) = start.draw(map, noise, &region, &mut src)?;
            if w == 0.0 {
                return Ok((a, b));
            }
            let mut hits = 0u32;
            for _ in 0..terms {
                x = advance(map, noise, &x, &mut src)?.0;
                hits += region.contains(&x) as u32;
            }
            let v = w * hits as f64;
            Ok((a + v, b + v * v))
        },
        |(a, b), (c, d)| (a + c, b + d),
    )?;
    let (m, se) = mean_and_stderr(s, s2, budget as f64);
    let analytic = match obs {
        Observable::DistToPoint(z) => {
            let r = (-u).exp();
            (1..=terms)
                .map(|j| return_prob_analytic(map, noise.epsilon(), z, r, j).map(|p| p.value))
                .sum::<Result<f64>>()
                .ok()
                .map(|v| n as f64 * v)
        }
        Observable::DistToOrbit(_) => None,
    };
    Ok(SumEstimate {
        estimate: n as f64 * m,
        stderr: n as f64 * se,
        analytic,
        terms,
    })
}

/// `n Σ_{j=2}^{⌊n/k_n⌋-1} P(A ∩ T^{-j} A)` with `A = U ∩ {next state outside U}`, for a forward invariant `U`.
///
/// On a forward invariant `U` the event `A` forces a reset at the first step,
/// so the start point may be taken anywhere in `U` with weight `μ_ε(U)`.
pub fn cluster_return_sum(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    u: &Region,
    n: u64,
    k_n: u64,
    budget: u64,
    seed: u64,
) -> Result<SumEstimate> {
    if k_n < 2 {
        return Err(Error::config("k_n", "must be at least 2"));
    }
    if budget < 2 {
        return Err(Error::config("run.budget", "need at least 2 samples"));
    }
    let last = (n / k_n).saturating_sub(1) as usize;
    let terms = last.saturating_sub(1);
    let mass = closed_form_measure(map, noise.epsilon(), u)?.value;
    if mass == 0.0 || terms == 0 {
        return Ok(SumEstimate {
            estimate: 0.0,
            stderr: 0.0,
            analytic: None,
            terms,
        });
    }
    if !is_forward_invariant(map, u)? {
        return Err(Error::AssumptionViolated("f(U) is not contained in U".into()));
    }
    let cells = u.disjoint();
    let start = cells
        .boxes()
        .iter()
        .copied()
        .max_by(|a, b| a.measure().total_cmp(&b.measure()))
        .expect("non-empty region");
    let (s, s2) = par_fold(
        budget,
        || (0.0, 0.0),
        |(a, b), i| {
            let mut src = StreamRng::new(seed, i);
            let mut x = uniform_in(&start, &mut src);
            let mut inside = Vec::with_capacity(last + 2);
            inside.push(true);
            for _ in 0..=last {
                x = advance(map, noise, &x, &mut src)?.0;
                inside.push(u.contains(&x));
            }
            if inside[1] {
                return Ok((a, b));
            }
            let hits = (2..=last).filter(|&j| inside[j] && !inside[j + 1]).count() as f64;
            let v = mass * hits;
            Ok((a + v, b + v * v))
        },
        |(a, b), (c, d)| (a + c, b + d),
    )?;
    let (m, se) = mean_and_stderr(s, s2, budget as f64);
    Ok(SumEstimate {
        estimate: n as f64 * m,
        stderr: n as f64 * se,
        analytic: None,
        terms,
    })
}

/// Stationary estimates of `P(U)` and `P(A^{(1)})` and of their ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusterSetEstimate {
    pub p_u: f64,
    pub p_a: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// `ε m(U^c)`.
    pub reference: f64,
    pub samples: u64,
}

pub fn cluster_set_probability(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    u: &Region,
    burn_in: usize,
    budget: u64,
    seed: u64,
) -> Result<ClusterSetEstimate> {
    let (hits_u, hits_a) = par_fold(
        budget,
        || (0u64, 0u64),
        |(a, b), i| {
            let mut src = StreamRng::new(seed, i);
            let x = stationary_point(map, noise, burn_in, &mut src)?;
            if !u.contains(&x) {
                return Ok((a, b));
            }
            let y = advance(map, noise, &x, &mut src)?.0;
            Ok((a + 1, b + !u.contains(&y) as u64))
        },
        |(a, b), (c, d)| (a + c, b + d),
    )?;
    if hits_u == 0 {
        return Err(Error::Undefined(format!(
            "no stationary sample hit U in {budget} draws"
        )));
    }
    let ratio = hits_a as f64 / hits_u as f64;
    let n = budget as f64;
    Ok(ClusterSetEstimate {
        p_u: hits_u as f64 / n,
        p_a: hits_a as f64 / n,
        ratio,
        ratio_stderr: (ratio * (1.0 - ratio) / hits_u as f64).sqrt(),
        reference: noise.epsilon() * (1.0 - u.measure_disjoint()),
        samples: budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(x: f64) -> Point {
        Point::new(&[x])
    }

    fn contraction() -> PiecewiseMapSpec {
        PiecewiseMapSpec::contraction_1d(0.5, 0.0).unwrap()
    }

    #[test]
    fn return_probability_examples() {
        let f = contraction();
        let z = p1(0.3);
        let p1v = return_prob_analytic(&f, 0.5, &z, 0.01, 1).unwrap().value;
        assert!((p1v - 0.0002).abs() < 1e-15);
        for j in 2..6 {
            let v = return_prob_analytic(&f, 0.5, &z, 0.01, j).unwrap().value;
            assert!((v - 0.0004).abs() < 1e-15);
            assert!((v - 0.02f64 * 0.02).abs() < 1e-12);
            assert!(p1v <= v);
        }
        assert!(matches!(
            return_prob_analytic(&f, 0.5, &p1(0.251), 0.01, 1),
            Err(Error::Level(_))
        ));
        assert!(return_prob_analytic(&f, 0.5, &z, 0.01, 0).unwrap_err().is_config());
    }

    #[test]
    fn dprime_analytic_example() {
        let f = contraction();
        let noise = NoiseParams::new(0.5).unwrap();
        let obs = Observable::DistToPoint(p1(0.3));
        let u = -(0.01f64).ln();
        let d = dprime_sum(&f, &noise, &obs, u, 100, 10, 20, 1000, 1).unwrap();
        assert!((d.analytic.unwrap() - 0.38).abs() < 1e-12);
        let d2 = dprime_sum(&f, &noise, &obs, u, 100, 20, 20, 1000, 1).unwrap();
        assert!(d2.analytic.unwrap() < d.analytic.unwrap());
        assert!(dprime_sum(&f, &noise, &obs, u, 100, 1, 20, 1000, 1)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn constants_are_uncorrelated() {
        let f = contraction();
        let noise = NoiseParams::new(0.5).unwrap();
        let one = TestFunction::Constant(1.0);
        for c in correlation_profile(&f, &noise, &one, &one, 5, 20, 500, 2).unwrap() {
            assert_eq!(c.estimate, 0.0);
        }
        let unbounded = TestFunction::NegLogDistance(p1(0.3));
        assert!(correlation_estimate(&f, &noise, &unbounded, &one, 1, 20, 100, 2)
            .unwrap_err()
            .is_config());
        assert!(correlation_estimate(&f, &noise, &one, &one, 0, 20, 100, 2)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn empty_window_gap_is_zero() {
        let f = contraction();
        let noise = NoiseParams::new(0.5).unwrap();
        let u = Region::single(AxisBox::open(&[0.2], &[0.4]));
        let g = mixing_gap_estimate(&f, &noise, &u, 0, 3, 0, 20, 2000, 5).unwrap();
        assert_eq!(g.gap, 0.0);
        let far = mixing_gap_estimate(&f, &noise, &u, 1, 200, 2, 20, 2000, 5).unwrap();
        assert!(far.bound.unwrap() < 1e-60);
        assert!(mixing_gap_estimate(&f, &noise, &u, 2, 3, 1, 20, 2000, 5)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn cluster_return_requires_invariance() {
        let f = PiecewiseMapSpec::contraction_1d(0.5, 0.3).unwrap();
        let noise = NoiseParams::new(0.5).unwrap();
        let bad = Region::single(AxisBox::open(&[0.2], &[0.3]));
        assert!(matches!(
            cluster_return_sum(&f, &noise, &bad, 100, 10, 100, 1),
            Err(Error::AssumptionViolated(_))
        ));
        let empty = Region::empty();
        assert_eq!(
            cluster_return_sum(&f, &noise, &empty, 100, 10, 100, 1)
                .unwrap()
                .estimate,
            0.0
        );
    }
}
