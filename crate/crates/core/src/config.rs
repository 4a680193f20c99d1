//! Experiment configuration: a flat `key = value` text format with dotted
//! section keys and `#` comments.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::density::Grid;
use crate::error::{Error, Result};
use crate::evt::LevelMode;
use crate::geometry::Point;
use crate::maps::PiecewiseMapSpec;
use crate::process::NoiseParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapConfig {
    Contraction1d { a: f64, c: f64 },
    Baker { gamma_a: f64, gamma_b: f64, alpha: f64 },
    QuadAffine { a: f64, t1: f64, t2: f64 },
}

impl MapConfig {
    pub fn build(&self) -> Result<PiecewiseMapSpec> {
        match *self {
            MapConfig::Contraction1d { a, c } => PiecewiseMapSpec::contraction_1d(a, c),
            MapConfig::Baker {
                gamma_a,
                gamma_b,
                alpha,
            } => PiecewiseMapSpec::baker(gamma_a, gamma_b, alpha),
            MapConfig::QuadAffine { a, t1, t2 } => PiecewiseMapSpec::quad_affine(a, t1, t2),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MapConfig::Contraction1d { .. } => "contraction_1d",
            MapConfig::Baker { .. } => "baker",
            MapConfig::QuadAffine { .. } => "quad_affine",
        }
    }

    fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            MapConfig::Contraction1d { a, c } => vec![("a", a), ("c", c)],
            MapConfig::Baker {
                gamma_a,
                gamma_b,
                alpha,
            } => vec![("gamma_a", gamma_a), ("gamma_b", gamma_b), ("alpha", alpha)],
            MapConfig::QuadAffine { a, t1, t2 } => vec![("a", a), ("t1", t1), ("t2", t2)],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MapConfig::Contraction1d { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservableConfig {
    Point(Vec<f64>),
    Attractor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LevelTarget {
    Tau(f64),
    Y(f64),
}

impl LevelTarget {
    pub fn tau(&self) -> f64 {
        match *self {
            LevelTarget::Tau(t) => t,
            LevelTarget::Y(y) => (-y).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: u64,
    pub blocks: u64,
    /// `None` selects the default burn-in for the noise level.
    pub burn_in: Option<usize>,
    pub budget: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub map: MapConfig,
    pub epsilon: f64,
    pub observable: ObservableConfig,
    pub run: RunConfig,
    pub level_mode: LevelMode,
    pub level_target: LevelTarget,
    pub seed: u64,
    pub output: String,
    pub grid_level: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            map: MapConfig::Contraction1d { a: 0.5, c: 0.0 },
            epsilon: 0.5,
            observable: ObservableConfig::Point(vec![0.3]),
            run: RunConfig {
                n: 1000,
                blocks: 10_000,
                burn_in: None,
                budget: 1_000_000,
            },
            level_mode: LevelMode::Analytic,
            level_target: LevelTarget::Tau(1.0),
            seed: 0,
            output: "out".into(),
            grid_level: 12,
        }
    }
}

const KEYS: &[&str] = &[
    "map.kind",
    "map.a",
    "map.c",
    "map.gamma_a",
    "map.gamma_b",
    "map.alpha",
    "map.t1",
    "map.t2",
    "epsilon",
    "observable.kind",
    "observable.z",
    "run.n",
    "run.blocks",
    "run.burn_in",
    "run.budget",
    "levels.mode",
    "levels.tau",
    "levels.y",
    "seed",
    "output",
    "grid_level",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl ExperimentConfig {
    /// Parses and validates a configuration. Missing keys take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got {line:?}"),
                ));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::config(k, "unknown key"));
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(Error::config(k, "duplicate key"));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        let get = |k: &str| entries.iter().find(|(e, _)| e == k).map(|(_, v)| v.as_str());
        let d = ExperimentConfig::default();
        let num = |k: &str, default: f64| -> Result<f64> { get(k).map_or(Ok(default), |v| parse_num(k, v)) };

        let map_params = [
            "map.a",
            "map.c",
            "map.gamma_a",
            "map.gamma_b",
            "map.alpha",
            "map.t1",
            "map.t2",
        ];
        let kind = get("map.kind").unwrap_or("contraction_1d");
        let allowed: &[&str] = match kind {
            "contraction_1d" => &["map.a", "map.c"],
            "baker" => &["map.gamma_a", "map.gamma_b", "map.alpha"],
            "quad_affine" => &["map.a", "map.t1", "map.t2"],
            other => {
                return Err(Error::config(
                    "map.kind",
                    format!("unknown map {other:?}; expected contraction_1d, baker or quad_affine"),
                ))
            }
        };
        if let Some(k) = map_params.iter().find(|k| get(k).is_some() && !allowed.contains(k)) {
            return Err(Error::config(*k, format!("not a parameter of {kind}")));
        }
        let map = match kind {
            "contraction_1d" => MapConfig::Contraction1d {
                a: num("map.a", 0.5)?,
                c: num("map.c", 0.0)?,
            },
            "baker" => MapConfig::Baker {
                gamma_a: num("map.gamma_a", 0.2)?,
                gamma_b: num("map.gamma_b", 0.4)?,
                alpha: num("map.alpha", 0.5)?,
            },
            _ => MapConfig::QuadAffine {
                a: num("map.a", 0.5)?,
                t1: num("map.t1", 0.5)?,
                t2: num("map.t2", 0.5)?,
            },
        };

        let observable = match get("observable.kind").unwrap_or("point") {
            "point" => ObservableConfig::Point(match get("observable.z") {
                Some(v) => parse_list("observable.z", v)?,
                None => vec![0.3; map.dim()],
            }),
            "attractor" => {
                if get("observable.z").is_some() {
                    return Err(Error::config(
                        "observable.z",
                        "not used with observable.kind = attractor",
                    ));
                }
                ObservableConfig::Attractor
            }
            other => {
                return Err(Error::config(
                    "observable.kind",
                    format!("unknown observable {other:?}; expected point or attractor"),
                ))
            }
        };

        let level_mode = match get("levels.mode").unwrap_or("analytic") {
            "analytic" => LevelMode::Analytic,
            "empirical" => LevelMode::Empirical,
            "inverted" => LevelMode::Inverted,
            other => {
                return Err(Error::config(
                    "levels.mode",
                    format!("unknown mode {other:?}; expected analytic, empirical or inverted"),
                ))
            }
        };
        let level_target = match (get("levels.tau"), get("levels.y")) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "levels.y",
                    "give either levels.tau or levels.y, not both",
                ))
            }
            (Some(t), None) => LevelTarget::Tau(parse_num("levels.tau", t)?),
            (None, Some(y)) => LevelTarget::Y(parse_num("levels.y", y)?),
            (None, None) => LevelTarget::Tau(1.0),
        };

        let cfg = ExperimentConfig {
            map,
            epsilon: num("epsilon", d.epsilon)?,
            observable,
            run: RunConfig {
                n: get("run.n").map_or(Ok(d.run.n), |v| parse_num("run.n", v))?,
                blocks: get("run.blocks").map_or(Ok(d.run.blocks), |v| parse_num("run.blocks", v))?,
                burn_in: get("run.burn_in").map(|v| parse_num("run.burn_in", v)).transpose()?,
                budget: get("run.budget").map_or(Ok(d.run.budget), |v| parse_num("run.budget", v))?,
            },
            level_mode,
            level_target,
            seed: get("seed").map_or(Ok(d.seed), |v| parse_num("seed", v))?,
            output: get("output").map_or(d.output.clone(), str::to_string),
            grid_level: get("grid_level").map_or(Ok(d.grid_level), |v| parse_num("grid_level", v))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks for every field, with the offending key in the error.
    pub fn validate(&self) -> Result<()> {
        let map = self.map.build()?;
        NoiseParams::new(self.epsilon)?;
        if let ObservableConfig::Point(z) = &self.observable {
            if z.len() != map.dim() {
                return Err(Error::config(
                    "observable.z",
                    format!("expected {} coordinates, got {}", map.dim(), z.len()),
                ));
            }
            if z.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
                return Err(Error::config("observable.z", "coordinates must lie in [0, 1]"));
            }
        }
        if self.run.n == 0 {
            return Err(Error::config("run.n", "block length must be at least 1"));
        }
        if self.run.blocks == 0 {
            return Err(Error::config("run.blocks", "block count must be at least 1"));
        }
        if self.run.budget == 0 {
            return Err(Error::config("run.budget", "must be at least 1"));
        }
        let (key, raw) = match self.level_target {
            LevelTarget::Tau(t) => ("levels.tau", t),
            LevelTarget::Y(y) => ("levels.y", y),
        };
        let tau = self.level_target.tau();
        if !raw.is_finite() || !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config(
                key,
                format!("gives tau = {tau}; tau must be positive and finite"),
            ));
        }
        if tau > self.run.n as f64 {
            return Err(Error::config(
                key,
                format!("gives tau = {tau} above run.n = {}", self.run.n),
            ));
        }
        Grid::new(map.dim(), self.grid_level).map_err(|e| match e {
            Error::Config { message, .. } => Error::config("grid_level", message),
            other => other,
        })?;
        if self.output.is_empty() {
            return Err(Error::config("output", "must not be empty"));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "map.kind = {}", self.map.kind());
        for (k, v) in self.map.params() {
            let _ = writeln!(s, "map.{k} = {v:?}");
        }
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        match &self.observable {
            ObservableConfig::Point(z) => {
                let zs: Vec<String> = z.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "observable.kind = point");
                let _ = writeln!(s, "observable.z = {}", zs.join(", "));
            }
            ObservableConfig::Attractor => {
                let _ = writeln!(s, "observable.kind = attractor");
            }
        }
        let _ = writeln!(s, "run.n = {}", self.run.n);
        let _ = writeln!(s, "run.blocks = {}", self.run.blocks);
        if let Some(b) = self.run.burn_in {
            let _ = writeln!(s, "run.burn_in = {b}");
        }
        let _ = writeln!(s, "run.budget = {}", self.run.budget);
        let _ = writeln!(s, "levels.mode = {}", self.level_mode.tag());
        match self.level_target {
            LevelTarget::Tau(t) => {
                let _ = writeln!(s, "levels.tau = {t:?}");
            }
            LevelTarget::Y(y) => {
                let _ = writeln!(s, "levels.y = {y:?}");
            }
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output);
        let _ = writeln!(s, "grid_level = {}", self.grid_level);
        s
    }

    /// SHA-256 of the canonical text without the output directory, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.clear();
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First 16 hex digits of [`hash`](Self::hash), used for run directories and file headers.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}", self.short_hash(), self.seed)
    }

    pub fn build_map(&self) -> Result<PiecewiseMapSpec> {
        self.map.build()
    }

    pub fn noise(&self) -> Result<NoiseParams> {
        NoiseParams::new(self.epsilon)
    }

    pub fn burn_in(&self) -> Result<usize> {
        Ok(self.run.burn_in.unwrap_or(self.noise()?.default_burn_in()))
    }

    pub fn point_target(&self) -> Option<Point> {
        match &self.observable {
            ObservableConfig::Point(z) => Some(Point::new(z)),
            ObservableConfig::Attractor => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_a_full_config() {
        let text = "
            # density run
            map.kind = quad_affine
            map.a = 0.5
            map.t1 = 0.5
            map.t2 = 0.5
            epsilon = 0.8   # strong noise
            observable.z = 0.3, 0.1
            run.n = 100
            levels.y = 0.0
            seed = 42
            grid_level = 6
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(
            c.map,
            MapConfig::QuadAffine {
                a: 0.5,
                t1: 0.5,
                t2: 0.5
            }
        );
        assert_eq!(c.epsilon, 0.8);
        assert_eq!(c.observable, ObservableConfig::Point(vec![0.3, 0.1]));
        assert_eq!(c.level_target.tau(), 1.0);
        assert_eq!(c.seed, 42);
        assert_eq!(c.run.blocks, 10_000);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |t: &str| match ExperimentConfig::parse(t).unwrap_err() {
            Error::Config { field, .. } => field,
            e => panic!("{e:?}"),
        };
        assert_eq!(field("epsilon = 1.2"), "epsilon");
        assert_eq!(field("run.blocks = 0"), "run.blocks");
        assert_eq!(field("run.n = ten"), "run.n");
        assert_eq!(field("levels.tau = 0"), "levels.tau");
        assert_eq!(field("map.kind = tent"), "map.kind");
        assert_eq!(field("map.alpha = 0.3"), "map.alpha");
        assert_eq!(field("observable.z = 0.3, 0.3"), "observable.z");
        assert_eq!(field("colour = red"), "colour");
        assert_eq!(field("seed = 1\nseed = 2"), "seed");
        assert_eq!(field("grid_level = 40"), "grid_level");
        assert_eq!(field("map.kind = baker\nmap.gamma_a = 0.45"), "map.gamma_b");
    }

    #[test]
    fn hash_ignores_output_but_not_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert!(a.header().starts_with("# config_hash="));
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        let map = prop_oneof![
            (0.01f64..0.99, 0.0f64..0.99).prop_map(|(a, c)| MapConfig::Contraction1d { a, c }),
            (0.01f64..0.2, 0.21f64..0.49, 0.01f64..0.5).prop_map(|(gamma_a, gamma_b, alpha)| MapConfig::Baker {
                gamma_a,
                gamma_b,
                alpha
            }),
            (0.01f64..0.99, 0.01f64..0.99, 0.01f64..0.99).prop_map(|(a, t1, t2)| MapConfig::QuadAffine { a, t1, t2 }),
        ];
        (
            map,
            0.01f64..0.99,
            any::<bool>(),
            (
                1u64..100_000,
                1u64..100_000,
                proptest::option::of(0usize..100),
                1u64..10_000_000,
            ),
            0usize..3,
            (any::<bool>(), 0.01f64..1.0),
            any::<u64>(),
            "[a-z][a-z0-9_/]{0,12}",
            0u32..8,
        )
            .prop_map(
                |(
                    map,
                    epsilon,
                    attractor,
                    (n, blocks, burn_in, budget),
                    mode,
                    (use_y, t),
                    seed,
                    output,
                    grid_level,
                )| {
                    let observable = if attractor {
                        ObservableConfig::Attractor
                    } else {
                        ObservableConfig::Point(vec![0.3; map.dim()])
                    };
                    ExperimentConfig {
                        map,
                        epsilon,
                        observable,
                        run: RunConfig {
                            n,
                            blocks,
                            burn_in,
                            budget,
                        },
                        level_mode: [LevelMode::Analytic, LevelMode::Empirical, LevelMode::Inverted][mode],
                        level_target: if use_y {
                            LevelTarget::Y(-t.ln())
                        } else {
                            LevelTarget::Tau(t)
                        },
                        seed,
                        output,
                        grid_level,
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn round_trip(c in arb_config()) {
            let text = c.to_text();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
