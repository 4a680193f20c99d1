use rasp_evt::config::{ExperimentConfig, ObservableConfig};
use rasp_evt::density::{
    closed_form_cell_averages, closed_form_point, stationary_density_series, stationary_histogram, ulam_operator, Grid,
};
use rasp_evt::diagnostics::{
    cluster_return_sum, cluster_set_probability, correlation_profile, dprime_sum, mixing_gap_estimate,
    return_prob_analytic, return_prob_mc, TestFunction,
};
use rasp_evt::evt::{
    attractor_orbit, block_maxima, cdf_table, exceedance_rate_check, extremal_index_analytic, extremal_index_empirical,
    gumbel_cdf, ks_distance, level_sequence_analytic, level_sequence_analytic_orbit, level_sequence_empirical,
    level_sequence_inverted, BlockSpec, ExceedanceRate, LevelMode, LevelSequence, Observable, ThetaEstimates,
};
use rasp_evt::maps::DEFAULT_MAX_DEPTH;
use rasp_evt::process::{draw_reset, orbit as random_orbit, NoiseParams, StreamRng};
use rasp_evt::validation::{run_criterion, ValidationOptions, CRITERIA};
use rasp_evt::{AxisBox, Error, PiecewiseMapSpec, Point, Region};
use serde::Serialize;

use crate::output::{num, opt, RunDir};
use crate::CliError;

fn announce(dir: &RunDir) {
    println!("wrote {}", dir.path().display());
}

/// The observable named by the config, with the attractor period when it targets a periodic orbit.
fn observable(config: &ExperimentConfig, map: &PiecewiseMapSpec) -> Result<(Observable, Option<usize>), Error> {
    match &config.observable {
        ObservableConfig::Point(z) => Ok((Observable::DistToPoint(Point::new(z)), None)),
        ObservableConfig::Attractor => {
            let orbits = attractor_orbit(map)?;
            let o = orbits
                .into_iter()
                .next()
                .ok_or_else(|| Error::Attractor("no periodic orbit found".into()))?;
            Ok((Observable::DistToOrbit(o.points), Some(o.period)))
        }
    }
}

fn levels(
    config: &ExperimentConfig,
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    obs: &Observable,
    n: u64,
) -> Result<LevelSequence, Error> {
    let tau = config.level_target.tau();
    match (config.level_mode, obs) {
        (LevelMode::Analytic, Observable::DistToPoint(z)) => level_sequence_analytic(map, config.epsilon, z, n, tau),
        (LevelMode::Analytic, Observable::DistToOrbit(pts)) => {
            level_sequence_analytic_orbit(map, config.epsilon, pts, n, tau)
        }
        (LevelMode::Empirical, _) => level_sequence_empirical(
            map,
            noise,
            obs,
            n,
            tau,
            config.burn_in()?,
            config.run.budget,
            config.seed,
        ),
        (LevelMode::Inverted, _) => level_sequence_inverted(map, config.epsilon, obs, n, tau),
    }
}

fn coords(p: &Point) -> Vec<f64> {
    p.as_slice().to_vec()
}

#[derive(Serialize)]
struct DensitySummary {
    map: &'static str,
    epsilon: f64,
    grid_level: u32,
    cells: usize,
    boundary_cells: usize,
    ulam_sup_rel_error_off_boundaries: f64,
    ulam_l1_error: f64,
    histogram_l1_error: f64,
    histogram_worst_abs_z: f64,
    histogram_samples: u64,
}

pub fn density(config: &ExperimentConfig) -> Result<(), CliError> {
    let map = config.build_map()?;
    let noise = config.noise()?;
    let eps = config.epsilon;
    let grid = Grid::new(map.dim(), config.grid_level)?;
    let exact = closed_form_cell_averages(&map, eps, grid)?;
    let ulam = stationary_density_series(&ulam_operator(&map, config.grid_level)?, eps, 1e-15)?;
    let hist = stationary_histogram(
        &map,
        &noise,
        config.burn_in()?,
        config.run.budget,
        config.grid_level,
        config.seed,
    )?;
    let hist_se = hist.stderr.clone().unwrap_or_else(|| vec![0.0; grid.len()]);

    let dir = RunDir::create(config)?;
    let mut csv = dir.csv("density.csv");
    let mut header: Vec<String> = (1..=map.dim()).map(|a| format!("x_{a}")).collect();
    header.extend(
        [
            "closed_form",
            "ulam",
            "histogram",
            "histogram_stderr",
            "ulam_rel_error",
            "stratum_boundary",
        ]
        .map(String::from),
    );
    csv.row(&header)?;

    let vol = grid.cell_volume();
    let mut sup_rel: f64 = 0.0;
    let mut boundary_cells = 0;
    let (mut ulam_l1, mut hist_l1, mut worst_z) = (0.0, 0.0, 0.0f64);
    for i in 0..grid.len() {
        let c = grid.center(i);
        let e = exact[i].value;
        let centre = closed_form_point(&map, eps, &c, 4 * DEFAULT_MAX_DEPTH);
        let constant = matches!(&centre, Ok(p) if !p.truncated && (p.value - e).abs() <= 1e-9 * e.abs().max(1e-300));
        let rel = if e > 0.0 {
            (ulam.values[i] - e).abs() / e
        } else {
            f64::NAN
        };
        if constant {
            if rel.is_finite() {
                sup_rel = sup_rel.max(rel);
            }
        } else {
            boundary_cells += 1;
        }
        ulam_l1 += (ulam.values[i] - e).abs() * vol;
        hist_l1 += (hist.values[i] - e).abs() * vol;
        if hist_se[i] > 0.0 {
            worst_z = worst_z.max((hist.values[i] - e).abs() / hist_se[i]);
        }
        let mut row: Vec<String> = c.as_slice().iter().map(|v| num(*v)).collect();
        row.extend([
            num(e),
            num(ulam.values[i]),
            num(hist.values[i]),
            num(hist_se[i]),
            num(rel),
            (!constant as u8).to_string(),
        ]);
        csv.row(&row)?;
    }
    csv.write()?;
    dir.json(
        "density.json",
        &DensitySummary {
            map: config.map.kind(),
            epsilon: eps,
            grid_level: config.grid_level,
            cells: grid.len(),
            boundary_cells,
            ulam_sup_rel_error_off_boundaries: sup_rel,
            ulam_l1_error: ulam_l1,
            histogram_l1_error: hist_l1,
            histogram_worst_abs_z: worst_z,
            histogram_samples: hist.samples,
        },
    )?;
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct OrbitSummary {
    map: &'static str,
    epsilon: f64,
    stream: u64,
    steps: usize,
    resets: usize,
    x0: Vec<f64>,
    last: Vec<f64>,
}

pub fn orbit(config: &ExperimentConfig, x0: Option<&str>, steps: Option<usize>, stream: u64) -> Result<(), CliError> {
    let map = config.build_map()?;
    let noise = config.noise()?;
    let x0 = match x0 {
        Some(text) => {
            let v = text
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|_| Error::config("x0", format!("cannot parse {text:?}")))?;
            if v.len() != map.dim() {
                return Err(Error::config("x0", format!("expected {} coordinates, got {}", map.dim(), v.len())).into());
            }
            Point::try_new(&v).map_err(|e| Error::config("x0", e.to_string()))?
        }
        None => draw_reset(&map, &mut StreamRng::new(config.seed, u64::MAX - stream)),
    };
    let steps = steps.unwrap_or(config.run.n as usize);
    let o = random_orbit(&map, &noise, &x0, steps, config.seed, stream)?;

    let dir = RunDir::create(config)?;
    let mut csv = dir.csv("orbit.csv");
    let mut header = vec!["step".to_string()];
    header.extend((1..=map.dim()).map(|a| format!("x_{a}")));
    header.push("event".into());
    csv.row(&header)?;
    for (k, x) in o.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.as_slice().iter().map(|v| num(*v)));
        row.push(if k == 0 {
            "S".into()
        } else {
            o.events[k - 1].kind.code().to_string()
        });
        csv.row(&row)?;
    }
    csv.write()?;
    dir.json(
        "orbit.json",
        &OrbitSummary {
            map: config.map.kind(),
            epsilon: config.epsilon,
            stream,
            steps,
            resets: o.reset_count(),
            x0: coords(&x0),
            last: coords(o.states.last().expect("non-empty orbit")),
        },
    )?;
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct EvtReport {
    map: &'static str,
    epsilon: f64,
    observable: &'static str,
    targets: Vec<Vec<f64>>,
    period: Option<usize>,
    levels: LevelSequence,
    block_length: usize,
    blocks: u64,
    sliced: bool,
    ks_distance: f64,
    ks_distance_theta: f64,
    theta_reference: f64,
    p_max_below: f64,
    p_max_below_reference: f64,
    theta: Option<ThetaEstimates>,
    theta_error: Option<String>,
    exceedance_rate: ExceedanceRate,
}

pub fn evt(config: &ExperimentConfig, sliced: bool) -> Result<(), CliError> {
    let map = config.build_map()?;
    let noise = config.noise()?;
    let burn_in = config.burn_in()?;
    let (obs, period) = observable(config, &map)?;
    let n = config.run.n;
    let l = levels(config, &map, &noise, &obs, n)?;
    let spec = BlockSpec {
        n: n as usize,
        blocks: config.run.blocks,
        burn_in,
        sliced,
    };
    let data = block_maxima(&map, &noise, &obs, &spec, l.u_n, config.seed)?;
    let a = obs.dim() as f64;
    let b = l.u_n + l.tau.ln() / a;
    let rescaled: Vec<f64> = data.maxima.iter().map(|m| a * (m - b)).collect();

    let theta_reference = match period {
        Some(_) => extremal_index_analytic(config.epsilon, obs.exceedance_region(l.u_n).measure_disjoint()),
        None => 1.0,
    };
    let g_theta = |y: f64| gumbel_cdf(y).powf(theta_reference);
    let ks = ks_distance(&rescaled, gumbel_cdf)?;
    let ks_theta = ks_distance(&rescaled, g_theta)?;
    let (theta, theta_error) = match extremal_index_empirical(&data, l.u_n) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let p_below = data.maxima.iter().filter(|&&m| m <= l.u_n).count() as f64 / data.maxima.len() as f64;
    let rate = exceedance_rate_check(&map, &noise, &obs, l.u_n, n, burn_in, config.run.budget, config.seed)?;

    let dir = RunDir::create(config)?;
    let mut maxima = dir.csv("maxima.csv");
    maxima.row(["block_index", "M_n", "rescaled"])?;
    for (i, (m, r)) in data.maxima.iter().zip(&rescaled).enumerate() {
        maxima.row([i.to_string(), num(*m), num(*r)])?;
    }
    maxima.write()?;
    let mut cdf = dir.csv("cdf.csv");
    cdf.row(["y", "empirical", "gumbel", "gumbel_theta"])?;
    for (y, f, g) in cdf_table(&rescaled, gumbel_cdf) {
        cdf.row([num(y), num(f), num(g), num(g_theta(y))])?;
    }
    cdf.write()?;
    dir.json(
        "evt.json",
        &EvtReport {
            map: config.map.kind(),
            epsilon: config.epsilon,
            observable: if period.is_some() { "attractor" } else { "point" },
            targets: obs.targets().iter().map(coords).collect(),
            period,
            levels: l,
            block_length: spec.n,
            blocks: spec.blocks,
            sliced,
            ks_distance: ks,
            ks_distance_theta: ks_theta,
            theta_reference,
            p_max_below: p_below,
            p_max_below_reference: (-theta_reference * l.tau).exp(),
            theta,
            theta_error,
            exceedance_rate: rate,
        },
    )?;
    announce(&dir);
    Ok(())
}

const TREND: [u64; 3] = [100, 1000, 10_000];

/// One diagnostics row, or the reason it could not be computed.
fn row_or_note(
    params: String,
    quantity: &str,
    r: Result<(f64, f64, Option<f64>), Error>,
) -> Result<[String; 6], CliError> {
    match r {
        Ok((est, se, reference)) => Ok([
            quantity.into(),
            params,
            num(est),
            num(se),
            opt(reference),
            String::new(),
        ]),
        Err(e) if e.is_config() => Err(e.into()),
        Err(e) => Ok([
            quantity.into(),
            params,
            String::new(),
            String::new(),
            String::new(),
            e.to_string(),
        ]),
    }
}

pub fn diagnose(config: &ExperimentConfig) -> Result<(), CliError> {
    let map = config.build_map()?;
    let noise = config.noise()?;
    let burn_in = config.burn_in()?;
    let budget = config.run.budget;
    let seed = config.seed;
    let eps = config.epsilon;
    let (obs, period) = observable(config, &map)?;
    let mut rows = Vec::new();

    let d = map.dim();
    let a = TestFunction::Indicator(Region::single(AxisBox::open(&vec![0.1; d], &vec![0.6; d])));
    for c in correlation_profile(&map, &noise, &a, &a, 30, burn_in, budget, seed)? {
        rows.push(row_or_note(
            format!("lag={}", c.n),
            "correlation",
            Ok((c.estimate, c.stderr, Some(c.bound))),
        )?);
    }

    let level = levels(config, &map, &noise, &obs, config.run.n);
    let q = period.map_or(0, |_| 1);
    for t in [1usize, 5, 20] {
        let ell = 5;
        let r = level.clone().and_then(|l| {
            let g = mixing_gap_estimate(
                &map,
                &noise,
                &obs.exceedance_region(l.u_n),
                q,
                t,
                ell,
                burn_in,
                budget,
                seed,
            )?;
            Ok((g.gap, g.stderr, g.bound))
        });
        rows.push(row_or_note(
            format!("n={};q={q};t={t};ell={ell}", config.run.n),
            "mixing_gap",
            r,
        )?);
    }

    match &obs {
        Observable::DistToPoint(z) => {
            for j in 1..=5usize {
                let r = level.clone().and_then(|l| {
                    let mc = return_prob_mc(&map, &noise, &obs, l.u_n, j, burn_in, budget, seed)?;
                    let exact = return_prob_analytic(&map, eps, z, l.radius, j).ok().map(|p| p.value);
                    Ok((mc.value, mc.stderr, exact))
                });
                rows.push(row_or_note(
                    format!("n={};j={j}", config.run.n),
                    "return_probability",
                    r,
                )?);
            }
            for n in TREND {
                let k_n = (n as f64).sqrt().round() as u64;
                let r = levels(config, &map, &noise, &obs, n).and_then(|l| {
                    let s = dprime_sum(&map, &noise, &obs, l.u_n, n, k_n, burn_in, budget, seed)?;
                    Ok((s.estimate, s.stderr, s.analytic))
                });
                rows.push(row_or_note(format!("n={n};k_n={k_n}"), "dprime_sum", r)?);
            }
        }
        Observable::DistToOrbit(_) => {
            let r = level.clone().and_then(|l| {
                let c = cluster_set_probability(&map, &noise, &obs.exceedance_region(l.u_n), burn_in, budget, seed)?;
                Ok((c.ratio, c.ratio_stderr, Some(c.reference)))
            });
            rows.push(row_or_note(format!("n={}", config.run.n), "cluster_set_ratio", r)?);
            for n in TREND {
                let k_n = (n as f64).sqrt().round() as u64;
                let r = levels(config, &map, &noise, &obs, n).and_then(|l| {
                    let s = cluster_return_sum(&map, &noise, &obs.exceedance_region(l.u_n), n, k_n, budget, seed)?;
                    Ok((s.estimate, s.stderr, None))
                });
                rows.push(row_or_note(format!("n={n};k_n={k_n}"), "cluster_return_sum", r)?);
            }
        }
    }

    let dir = RunDir::create(config)?;
    let mut csv = dir.csv("diagnostics.csv");
    csv.row(["quantity", "parameters", "estimate", "stderr", "reference", "note"])?;
    for r in &rows {
        csv.row(r)?;
    }
    csv.write()?;
    announce(&dir);
    Ok(())
}

pub fn validate(
    config: &ExperimentConfig,
    seed: Option<u64>,
    quick: bool,
    epsilon_offset: f64,
    only: &[u8],
) -> Result<(), CliError> {
    let mut opts = ValidationOptions {
        quick,
        epsilon_offset,
        ..ValidationOptions::default()
    };
    if let Some(s) = seed {
        opts.seed = s;
    }
    let ids: Vec<u8> = if only.is_empty() {
        CRITERIA.iter().map(|(id, _)| *id).collect()
    } else {
        only.to_vec()
    };
    let dir = RunDir::create(config)?;
    let mut csv = dir.csv("validation.csv");
    csv.row(["criterion", "name", "passed", "detail"])?;
    let mut failed = 0;
    for id in ids {
        let r = run_criterion(id, &opts);
        println!("{r}");
        failed += !r.passed as usize;
        csv.row([
            r.id.to_string(),
            r.name.to_string(),
            r.passed.to_string(),
            r.detail.clone(),
        ])?;
    }
    csv.write()?;
    if failed > 0 {
        return Err(CliError::Acceptance { failed });
    }
    Ok(())
}
