//! The RASP random orbit: at each step apply the map with probability `1 - ε`
//! or reset to a uniform point of the cube with probability `ε`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, MAX_DIM};
use crate::maps::PiecewiseMapSpec;

/// Number of stream indices folded sequentially inside one parallel task.
pub const CHUNK: u64 = 256;

/// Largest number of stored per-step records a batch may allocate.
pub const MAX_BATCH_RECORDS: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    epsilon: f64,
}

impl NoiseParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 && epsilon < 1.0 {
            Ok(NoiseParams { epsilon })
        } else {
            Err(Error::config("epsilon", format!("must lie in (0, 1), got {epsilon}")))
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Smallest `b` with `(1 - ε)^b < 1e-6`.
    pub fn default_burn_in(&self) -> usize {
        burn_in_for(self.epsilon, 1e-6)
    }
}

/// Smallest `b` with `(1 - ε)^b < tol`.
pub fn burn_in_for(epsilon: f64, tol: f64) -> usize {
    let q = 1.0 - epsilon;
    let mut b = (tol.ln() / q.ln()).floor().max(0.0) as usize;
    while q.powi(b as i32) >= tol {
        b += 1;
    }
    b
}

/// Source of the Bernoulli switch and of reset points.
pub trait NoiseSource {
    /// `true` when the map is applied (`η = 1`).
    fn apply_map(&mut self, epsilon: f64) -> bool;
    /// A point uniform on `[0, 1)^dim`.
    fn uniform_point(&mut self, dim: usize) -> Point;
    /// Uniform value in `[0, 1)` for digits lost along expanding directions.
    fn fill(&mut self) -> f64 {
        0.5
    }
}

/// The random stream for `(seed, stream_index)`: ChaCha8 keyed by the seed,
/// with the stream index selecting an independent ChaCha stream.
#[derive(Clone, Debug)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        StreamRng(rng)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

impl NoiseSource for StreamRng {
    fn apply_map(&mut self, epsilon: f64) -> bool {
        self.0.random::<f64>() >= epsilon
    }

    fn fill(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    fn uniform_point(&mut self, dim: usize) -> Point {
        let mut c = [0.0; MAX_DIM];
        for v in &mut c[..dim] {
            *v = self.0.random::<f64>();
        }
        Point::new(&c[..dim])
    }
}

/// Replays fixed decisions; panics when exhausted.
#[derive(Clone, Debug, Default)]
pub struct ScriptedNoise {
    pub switches: VecDeque<bool>,
    pub points: VecDeque<Point>,
}

impl ScriptedNoise {
    pub fn new(switches: impl IntoIterator<Item = bool>, points: impl IntoIterator<Item = Point>) -> Self {
        ScriptedNoise {
            switches: switches.into_iter().collect(),
            points: points.into_iter().collect(),
        }
    }
}

impl NoiseSource for ScriptedNoise {
    fn apply_map(&mut self, _epsilon: f64) -> bool {
        self.switches.pop_front().expect("scripted switches exhausted")
    }

    fn uniform_point(&mut self, _dim: usize) -> Point {
        self.points.pop_front().expect("scripted points exhausted")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    MapApplied,
    Reset,
}

impl StepKind {
    pub fn code(&self) -> char {
        match self {
            StepKind::MapApplied => 'M',
            StepKind::Reset => 'R',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepEvent {
    pub kind: StepKind,
    pub reset_point: Option<Point>,
}

/// A uniform point of the cube off the singular set.
pub fn draw_reset<N: NoiseSource>(map: &PiecewiseMapSpec, src: &mut N) -> Point {
    loop {
        let p = src.uniform_point(map.dim());
        if map.piece_index(&p).is_ok() {
            return p;
        }
    }
}

/// One RASP step without event bookkeeping. Returns the new state and whether a reset occurred.
#[inline]
pub fn advance<N: NoiseSource>(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    x: &Point,
    src: &mut N,
) -> Result<(Point, bool)> {
    if src.apply_map(noise.epsilon) {
        Ok((map.evaluate_refined(x, || src.fill())?, false))
    } else {
        Ok((draw_reset(map, src), true))
    }
}

pub fn step<N: NoiseSource>(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    x: &Point,
    src: &mut N,
) -> Result<(Point, StepEvent)> {
    let (y, reset) = advance(map, noise, x, src)?;
    let event = if reset {
        StepEvent {
            kind: StepKind::Reset,
            reset_point: Some(y),
        }
    } else {
        StepEvent {
            kind: StepKind::MapApplied,
            reset_point: None,
        }
    };
    Ok((y, event))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomOrbit {
    pub states: Vec<Point>,
    pub events: Vec<StepEvent>,
    pub seed: u64,
    pub stream_index: u64,
}

impl RandomOrbit {
    pub fn reset_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == StepKind::Reset).count()
    }
}

/// `x_0, ..., x_n` driven by the stream `(seed, stream_index)`.
pub fn orbit(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    x0: &Point,
    n: usize,
    seed: u64,
    stream_index: u64,
) -> Result<RandomOrbit> {
    if n == 0 {
        return Err(Error::config("run.n", "orbit length must be at least 1"));
    }
    map.piece_index(x0).map_err(|e| match e {
        Error::SingularHit => Error::Precondition(format!("x0 = {x0:?} lies on the singular set")),
        other => other,
    })?;
    let mut src = StreamRng::new(seed, stream_index);
    let mut states = Vec::with_capacity(n + 1);
    let mut events = Vec::with_capacity(n);
    states.push(*x0);
    let mut x = *x0;
    for k in 0..n {
        let (y, ev) = step(map, noise, &x, &mut src).map_err(|e| singular_diagnostic(e, k, &x))?;
        states.push(y);
        events.push(ev);
        x = y;
    }
    Ok(RandomOrbit {
        states,
        events,
        seed,
        stream_index,
    })
}

fn singular_diagnostic(e: Error, k: usize, x: &Point) -> Error {
    match e {
        Error::SingularHit => Error::Domain(format!(
            "orbit aborted: map applied at step {k} to {x:?} on the singular set"
        )),
        other => other,
    }
}

/// Runs `burn_in` steps from a uniform start and returns the endpoint.
pub fn stationary_point<N: NoiseSource>(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    burn_in: usize,
    src: &mut N,
) -> Result<Point> {
    let mut x = draw_reset(map, src);
    for _ in 0..burn_in {
        x = advance(map, noise, &x, src)?.0;
    }
    Ok(x)
}

pub fn sample_stationary(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    burn_in: usize,
    seed: u64,
    stream_index: u64,
) -> Result<Point> {
    stationary_point(map, noise, burn_in, &mut StreamRng::new(seed, stream_index))
}

/// Deterministic parallel fold over stream indices `0..count`.
///
/// Indices are split into fixed chunks of [`CHUNK`]; each chunk is folded in
/// index order and the chunk results are merged in chunk order, so the
/// result does not depend on the number of worker threads.
pub fn par_fold<A, I, F, M>(count: u64, init: I, fold: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(A, u64) -> Result<A> + Sync,
    M: Fn(A, A) -> A,
{
    let chunks = count.div_ceil(CHUNK);
    let partials: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(count);
            (lo..hi).try_fold(init(), &fold)
        })
        .collect::<Result<Vec<A>>>()?;
    Ok(partials.into_iter().fold(init(), merge))
}

/// Per-index results of `f(stream_index)` for `0..count`, in index order.
pub fn par_map<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..count).into_par_iter().map(&f).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSpec {
    pub count: u64,
    pub n: usize,
    pub burn_in: usize,
}

/// Per-orbit record of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSummary {
    pub stream_index: u64,
    /// First state after burn-in.
    pub start: Point,
    pub end: Point,
    pub resets: usize,
    /// `indicator(x_k)` for `k = 0..n`, empty when no indicator was given.
    pub exceedances: Vec<bool>,
}

/// `count` independent stationary-start orbits of `n` steps each.
pub fn batch_orbits(
    map: &PiecewiseMapSpec,
    noise: &NoiseParams,
    spec: &BatchSpec,
    seed: u64,
    indicator: Option<&(dyn Fn(&Point) -> bool + Sync)>,
) -> Result<Vec<OrbitSummary>> {
    if spec.count == 0 {
        return Err(Error::config("run.blocks", "batch count must be at least 1"));
    }
    let records = spec.count.saturating_mul(spec.n as u64 + 1);
    if indicator.is_some() && records > MAX_BATCH_RECORDS {
        return Err(Error::Batch(format!(
            "{records} indicator records exceed the limit of {MAX_BATCH_RECORDS}"
        )));
    }
    par_map(spec.count, |s| {
        let mut src = StreamRng::new(seed, s);
        let start = stationary_point(map, noise, spec.burn_in, &mut src)?;
        let mut x = start;
        let mut resets = 0;
        let mut exceedances = Vec::new();
        if let Some(ind) = indicator {
            exceedances.reserve(spec.n);
            exceedances.push(ind(&x));
        }
        for k in 0..spec.n {
            let (y, r) = advance(map, noise, &x, &mut src).map_err(|e| singular_diagnostic(e, k, &x))?;
            resets += r as usize;
            x = y;
            if let Some(ind) = indicator {
                if k + 1 < spec.n {
                    exceedances.push(ind(&x));
                }
            }
        }
        Ok(OrbitSummary {
            stream_index: s,
            start,
            end: x,
            resets,
            exceedances,
        })
    })
}
