//! The desk-scale acceptance suite, shared by the `validate` command and the
//! acceptance test target.

use std::fmt;
use std::time::Instant;

use crate::density::{
    closed_form_cell_averages, closed_form_measure, closed_form_point, operator_iterates, stationary_density_series,
    stationary_histogram, ulam_operator, Grid,
};
use crate::diagnostics::{
    cluster_return_sum, cluster_set_probability, correlation_profile, dprime_sum, return_prob_analytic, return_prob_mc,
    TestFunction,
};
use crate::error::Result;
use crate::evt::{
    attractor_orbit, block_maxima, exceedance_rate_check, extremal_index_empirical, gumbel_cdf, is_forward_invariant,
    ks_distance, level_sequence_analytic, level_sequence_inverted, BlockSpec, Observable,
};
use crate::geometry::{AxisBox, Point, Region};
use crate::maps::{LambdaChain, PiecewiseMapSpec};
use crate::process::NoiseParams;

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "density three-way agreement"),
    (2, "iterate formula identity"),
    (3, "exceedance calibration"),
    (4, "Gumbel law off the attractor"),
    (5, "extremal index on the attractor"),
    (6, "annealed correlation bound"),
    (7, "return probability identities"),
    (8, "short-return sum trends"),
    (9, "cluster-set probability"),
    (10, "structural invariants"),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationOptions {
    /// Ten times smaller budgets with widened tolerances.
    pub quick: bool,
    pub seed: u64,
    /// Added to the noise level simulated in the extremal index criterion only.
    pub epsilon_offset: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            quick: false,
            seed: 20_240_601,
            epsilon_offset: 0.0,
        }
    }
}

impl ValidationOptions {
    fn budget(&self, full: u64) -> u64 {
        if self.quick {
            full / 10
        } else {
            full
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

type Outcome = Result<(bool, String)>;

/// Runs a statistical check, repeating it once with a fresh seed on failure.
fn soft(seed: u64, check: impl Fn(u64) -> Outcome) -> Outcome {
    let (ok, detail) = check(seed)?;
    if ok {
        return Ok((ok, detail));
    }
    let (ok2, detail2) = check(seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok((ok2, format!("first run failed ({detail}); rerun: {detail2}")))
}

pub fn run_criterion(id: u8, opts: &ValidationOptions) -> CriterionResult {
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map_or("unknown criterion", |(_, n)| n);
    let start = Instant::now();
    let outcome = match id {
        1 => density_agreement(opts),
        2 => iterate_identity(opts),
        3 => exceedance_calibration(opts),
        4 => gumbel_law(opts),
        5 => extremal_index(opts),
        6 => correlation_bound(opts),
        7 => return_probabilities(opts),
        8 => return_sum_trends(opts),
        9 => cluster_set(opts),
        10 => structural(opts),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(opts: &ValidationOptions) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|(id, _)| run_criterion(*id, opts)).collect()
}

fn contraction() -> PiecewiseMapSpec {
    PiecewiseMapSpec::contraction_1d(0.5, 0.0).expect("valid builtin")
}

fn attracting() -> PiecewiseMapSpec {
    PiecewiseMapSpec::contraction_1d(0.5, 0.3).expect("valid builtin")
}

fn builtins() -> Vec<(&'static str, PiecewiseMapSpec)> {
    vec![
        ("contraction_1d(0.5,0)", contraction()),
        (
            "baker(0.2,0.4,0.5)",
            PiecewiseMapSpec::baker(0.2, 0.4, 0.5).expect("valid builtin"),
        ),
        (
            "quad_affine(0.5,0.5,0.5)",
            PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5).expect("valid builtin"),
        ),
    ]
}

fn density_agreement(opts: &ValidationOptions) -> Outcome {
    let f = contraction();
    let eps = 0.5;
    let mut worst_formula: f64 = 0.0;
    for p in 1..=30 {
        let x = Point::new(&[1.5 * 0.5f64.powi(p)]);
        let h = closed_form_point(&f, eps, &x, 200)?.value;
        worst_formula = worst_formula.max((h - 0.5 * p as f64).abs() / (0.5 * p as f64));
    }
    let g = 12;
    let ulam = stationary_density_series(&ulam_operator(&f, g)?, eps, 1e-15)?;
    let exact = closed_form_cell_averages(&f, eps, Grid::new(1, g)?)?;
    let ulam_err = ulam.values[1..]
        .iter()
        .zip(&exact[1..])
        .map(|(u, e)| (u - e.value).abs() / e.value)
        .fold(0.0, f64::max);
    let samples = opts.budget(10_000_000);
    let hist_level = 4;
    let cells = closed_form_cell_averages(&f, eps, Grid::new(1, hist_level)?)?;
    let noise = NoiseParams::new(eps)?;
    let (hist_ok, hist_detail) = soft(opts.seed, |seed| {
        let hist = stationary_histogram(&f, &noise, noise.default_burn_in(), samples, hist_level, seed)?;
        let se = hist.stderr.as_ref().expect("histogram stderr");
        let worst = hist
            .values
            .iter()
            .zip(se)
            .zip(&cells)
            .map(|((v, s), c)| (v - c.value).abs() / s)
            .fold(0.0, f64::max);
        Ok((
            worst <= 3.0,
            format!("histogram worst |z| = {worst:.2} over {} cells", cells.len()),
        ))
    })?;
    let ok = worst_formula < 1e-12 && ulam_err < 1e-2 && hist_ok;
    Ok((
        ok,
        format!("h(1.5*2^-p) = p/2 rel err {worst_formula:.1e}; Ulam g={g} sup rel err {ulam_err:.2e}; {hist_detail}"),
    ))
}

fn iterate_identity(_opts: &ValidationOptions) -> Outcome {
    let mut worst: f64 = 0.0;
    for (_, map) in builtins() {
        for g in [4, 6, 8] {
            let p = ulam_operator(&map, g)?;
            let psi: Vec<f64> = (0..p.len()).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect();
            for eps in [0.2, 0.5, 0.8] {
                for n in [1, 5, 20] {
                    worst = worst.max(operator_iterates(&p, eps, &psi, n).gap);
                }
            }
        }
    }
    Ok((
        worst < 1e-10,
        format!("max-norm gap {worst:.2e} over 3 maps, g in {{4,6,8}}, n in {{1,5,20}}"),
    ))
}

fn exceedance_calibration(opts: &ValidationOptions) -> Outcome {
    let f = contraction();
    let eps = 0.5;
    let noise = NoiseParams::new(eps)?;
    let z = Point::new(&[0.3]);
    let obs = Observable::DistToPoint(z);
    let budget = opts.budget(1_000_000);
    let mut worst_exact: f64 = 0.0;
    let mut levels = Vec::new();
    for n in [100u64, 1000] {
        for tau in [0.5, 1.0, 2.0] {
            let l = level_sequence_analytic(&f, eps, &z, n, tau)?;
            let exact = n as f64 * closed_form_measure(&f, eps, &obs.exceedance_region(l.u_n))?.value;
            worst_exact = worst_exact.max((exact - tau).abs());
            levels.push((n, tau, l.u_n, exact));
        }
    }
    let (mc_ok, detail) = soft(opts.seed, |seed| {
        let mut worst_z: f64 = 0.0;
        for &(n, _, u, exact) in &levels {
            let r = exceedance_rate_check(&f, &noise, &obs, u, n, noise.default_burn_in(), budget, seed)?;
            worst_z = worst_z.max((r.estimate - exact).abs() / r.stderr);
        }
        Ok((worst_z <= 3.0, format!("MC worst |z| = {worst_z:.2}")))
    })?;
    Ok((
        worst_exact < 1e-12 && mc_ok,
        format!("exact n*mu(ball) - tau max {worst_exact:.1e}; {detail}"),
    ))
}

fn gumbel_law(opts: &ValidationOptions) -> Outcome {
    let f = contraction();
    let eps = 0.5;
    let noise = NoiseParams::new(eps)?;
    let z = Point::new(&[0.3]);
    let n = 1000;
    let l = level_sequence_analytic(&f, eps, &z, n as u64, 1.0)?;
    let b_n = l.b_n.expect("analytic levels decompose");
    let spec = BlockSpec {
        n,
        blocks: opts.budget(10_000),
        burn_in: noise.default_burn_in(),
        sliced: false,
    };
    let limit = if opts.quick { 0.06 } else { 0.025 };
    soft(opts.seed, |seed| {
        let data = block_maxima(&f, &noise, &Observable::DistToPoint(z), &spec, f64::INFINITY, seed)?;
        let rescaled: Vec<f64> = data.maxima.iter().map(|m| l.a_n * (m - b_n)).collect();
        let ks = ks_distance(&rescaled, gumbel_cdf)?;
        Ok((
            ks < limit,
            format!("KS = {ks:.4} (limit {limit}) over {} blocks", spec.blocks),
        ))
    })
}

fn extremal_index(opts: &ValidationOptions) -> Outcome {
    let f = attracting();
    let orbits = attractor_orbit(&f)?;
    let w = &orbits[0];
    let fixed_ok = w.period == 1 && (w.points[0][0] - 0.6).abs() < 1e-12;
    let obs = Observable::DistToOrbit(w.points.clone());
    let n = 1000usize;
    let tol = if opts.quick { 0.1 } else { 0.05 };
    let mut ok = fixed_ok;
    let mut details = vec![format!("attractor {:?} period {}", w.points[0].as_slice(), w.period)];
    for eps in [0.2, 0.5] {
        let sim_eps = eps + opts.epsilon_offset;
        let noise = NoiseParams::new(sim_eps)?;
        let l = level_sequence_inverted(&f, sim_eps, &obs, n as u64, 1.0)?;
        let spec = BlockSpec {
            n,
            blocks: opts.budget(10_000),
            burn_in: noise.default_burn_in(),
            sliced: false,
        };
        let (pass, detail) = soft(opts.seed, |seed| {
            let data = block_maxima(&f, &noise, &obs, &spec, l.u_n, seed)?;
            let t = extremal_index_empirical(&data, l.u_n)?;
            let logp = t.theta_logp.unwrap_or(f64::NAN);
            let runs = t.theta_runs.unwrap_or(f64::NAN);
            let target = (-eps).exp();
            let zp = (t.p_max_below - target).abs() / t.p_max_below_stderr;
            let pass = (logp - eps).abs() <= tol && (runs - eps).abs() <= tol && zp <= 3.0;
            Ok((
                pass,
                format!(
                    "eps={eps}: theta_logp={logp:.4} theta_runs={runs:.4} P(M<=u)={:.4} vs e^-eps={target:.4} (|z|={zp:.2})",
                    t.p_max_below
                ),
            ))
        })?;
        ok &= pass;
        details.push(detail);
    }
    Ok((ok, details.join("; ")))
}

fn correlation_bound(opts: &ValidationOptions) -> Outcome {
    let budget = opts.budget(200_000);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut reruns = 0;
    for (name, map) in builtins() {
        let dim = map.dim();
        let a = TestFunction::Indicator(Region::single(AxisBox::open(&vec![0.1; dim], &vec![0.6; dim])));
        for eps in [0.2, 0.5, 0.8] {
            let noise = NoiseParams::new(eps)?;
            let (pass, excess) = {
                let run = |seed| -> Result<(bool, f64)> {
                    let prof = correlation_profile(&map, &noise, &a, &a, 30, noise.default_burn_in(), budget, seed)?;
                    let excess = prof
                        .iter()
                        .map(|c| (c.estimate.abs() - c.bound) / c.stderr.max(f64::MIN_POSITIVE))
                        .fold(f64::NEG_INFINITY, f64::max);
                    Ok((prof.iter().all(|c| c.within_bound(4.0)), excess))
                };
                let first = run(opts.seed)?;
                if first.0 {
                    first
                } else {
                    reruns += 1;
                    run(opts.seed ^ 0x9e37_79b9_7f4a_7c15)?
                }
            };
            worst = worst.max(excess);
            if !pass {
                failures.push(format!("{name} eps={eps}"));
            }
        }
    }
    Ok((
        failures.is_empty(),
        format!(
            "max (|est|-bound)/stderr = {worst:.2} over 3 maps x 3 eps x 30 lags, {reruns} reruns{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    ))
}

fn return_probabilities(opts: &ValidationOptions) -> Outcome {
    let f = contraction();
    let eps = 0.5;
    let z = Point::new(&[0.3]);
    let r = 0.01;
    let mu = closed_form_measure(&f, eps, &Region::single(AxisBox::ball(&z, r)))?.value;
    let mut worst_formula: f64 = 0.0;
    for j in 1..=20 {
        let v = return_prob_analytic(&f, eps, &z, r, j)?.value;
        worst_formula = worst_formula.max((v - 0.0002 * j.min(2) as f64).abs());
    }
    let square_gap = (return_prob_analytic(&f, eps, &z, r, 2)?.value - mu * mu).abs();
    let noise = NoiseParams::new(eps)?;
    let obs = Observable::DistToPoint(z);
    let u = -r.ln();
    let budget = opts.budget(1_000_000);
    let (mc_ok, detail) = soft(opts.seed, |seed| {
        let mut worst_z: f64 = 0.0;
        for j in [1, 2, 3, 5] {
            let mc = return_prob_mc(&f, &noise, &obs, u, j, noise.default_burn_in(), budget, seed)?;
            let exact = return_prob_analytic(&f, eps, &z, r, j)?.value;
            worst_z = worst_z.max((mc.value - exact).abs() / mc.stderr);
        }
        Ok((worst_z <= 3.0, format!("MC worst |z| = {worst_z:.2}")))
    })?;
    Ok((
        worst_formula < 1e-15 && square_gap < 1e-12 && mc_ok,
        format!("Pr_j - 0.0002 min(j,2) max {worst_formula:.1e}; |Pr_2 - mu^2| = {square_gap:.1e}; {detail}"),
    ))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn return_sum_trends(opts: &ValidationOptions) -> Outcome {
    let eps = 0.5;
    let noise = NoiseParams::new(eps)?;
    let f = contraction();
    let z = Point::new(&[0.3]);
    let obs = Observable::DistToPoint(z);
    let g = attracting();
    let orbit = attractor_orbit(&g)?;
    let att = Observable::DistToOrbit(orbit[0].points.clone());
    let budget = opts.budget(200_000);
    let ns = [100u64, 1000, 10_000];
    soft(opts.seed, |seed| {
        let mut dprime = Vec::new();
        let mut analytic = Vec::new();
        let mut cluster = Vec::new();
        for n in ns {
            let k_n = (n as f64).sqrt().round() as u64;
            let l = level_sequence_analytic(&f, eps, &z, n, 1.0)?;
            let d = dprime_sum(&f, &noise, &obs, l.u_n, n, k_n, noise.default_burn_in(), budget, seed)?;
            dprime.push(d.estimate);
            analytic.push(d.analytic.unwrap_or(f64::NAN));
            let la = level_sequence_inverted(&g, eps, &att, n, 1.0)?;
            let c = cluster_return_sum(&g, &noise, &att.exceedance_region(la.u_n), n, k_n, budget, seed)?;
            cluster.push(c.estimate);
        }
        let ok = strictly_decreasing(&dprime) && strictly_decreasing(&cluster) && dprime[2] < 0.05 && cluster[2] < 0.05;
        Ok((
            ok,
            format!("D' sums {dprime:.4?} (analytic {analytic:.4?}); cluster sums {cluster:.4?} over n = {ns:?}"),
        ))
    })
}

fn cluster_set(opts: &ValidationOptions) -> Outcome {
    let eps = 0.5;
    let noise = NoiseParams::new(eps)?;
    let budget = opts.budget(1_000_000);
    let maps = [
        ("contraction_1d(0.5,0.3)", attracting()),
        (
            "quad_affine(0.5,0.5,0.5)",
            PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5)?,
        ),
    ];
    let mut regions = Vec::new();
    for (name, map) in &maps {
        let orbit = attractor_orbit(map)?;
        let obs = Observable::DistToOrbit(orbit[0].points.clone());
        let l = level_sequence_inverted(map, eps, &obs, 100, 1.0)?;
        regions.push((name, map, obs.exceedance_region(l.u_n)));
    }
    soft(opts.seed, |seed| {
        let mut ok = true;
        let mut details = Vec::new();
        for (name, map, u) in &regions {
            let c = cluster_set_probability(map, &noise, u, noise.default_burn_in(), budget, seed)?;
            let zc = (c.ratio - c.reference).abs() / c.ratio_stderr;
            ok &= zc <= 3.0;
            details.push(format!(
                "{name}: P(A)/P(U) = {:.4} vs eps*m(U^c) = {:.4} (|z|={zc:.2})",
                c.ratio, c.reference
            ));
        }
        Ok((ok, details.join("; ")))
    })
}

fn structural(_opts: &ValidationOptions) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, map) in builtins() {
        let chain = LambdaChain::with_depth(&map, 10)?;
        let depth = chain.depth();
        let mut nested = true;
        let mut open = true;
        let mut disjoint = true;
        for k in 0..depth {
            nested &= chain.set(k + 1).is_subset_of(&chain.set(k));
        }
        for k in 1..=depth {
            let lk = chain.set(k);
            open &= lk.is_open();
            for p in 1..=k {
                disjoint &= !lk.intersects(&map.singular_image(p)?);
            }
        }
        ok &= nested && open && disjoint;
        details.push(format!(
            "{name}: depth {depth} nested={nested} open={open} avoids f^p(Delta)={disjoint}"
        ));
    }
    let eps = 0.5;
    for map in [attracting(), PiecewiseMapSpec::quad_affine(0.5, 0.5, 0.5)?] {
        let orbit = attractor_orbit(&map)?;
        let obs = Observable::DistToOrbit(orbit[0].points.clone());
        let mut invariant = true;
        for n in [100u64, 1000, 10_000] {
            let l = level_sequence_inverted(&map, eps, &obs, n, 1.0)?;
            invariant &= is_forward_invariant(&map, &obs.exceedance_region(l.u_n))?;
        }
        ok &= invariant;
        details.push(format!("{}: f(U_n) in U_n = {invariant}", map.kind().tag()));
    }
    Ok((ok, details.join("; ")))
}
