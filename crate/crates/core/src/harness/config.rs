//! Experiment configuration and its key-value text format.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys:
//!
//! | key | value |
//! |---|---|
//! | `system` | `lsv` or `billiard` |
//! | `gamma` | LSV parameter (lsv only) |
//! | `table` | `machta3` or a path to a table file (billiard only) |
//! | `k0` | inducing-set threshold `K0` (billiard only, default 100) |
//! | `alpha` | observable tail index |
//! | `pole` | `x:coefficient` (lsv) or `r,theta:coefficient` (billiard); repeatable |
//! | `shift` | additive constant of the observable (default 0) |
//! | `n_grid` | comma-separated horizons, or `min..max*ratio` |
//! | `replicas` | `M >= 200` |
//! | `seed` | master seed (mandatory) |
//! | `burn_in` | equilibrium burn-in (default 10000) |
//! | `mode` | `full`, `induced` or `both` (default `full`) |
//! | `mean_iterates` | orbit length used to estimate `μ(φ)` (default 10^7) |
//! | `out` | output directory (default `out`) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::billiard::{BilliardTable, TableSpec};
use crate::harness::HarnessError;
use crate::interval::{LsvMap, DEFAULT_BURN_IN};
use crate::observables::{ObservableSpec, PhasePoint, PhaseSpace, Pole};

pub const MIN_REPLICAS: usize = 200;
pub const MIN_GRID_POINTS: usize = 4;
pub const DEFAULT_K0: u64 = 100;
pub const DEFAULT_MEAN_ITERATES: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemConfig {
    Lsv { gamma: f64 },
    Billiard { table: String, k0: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Induced,
    Both,
}

/// A pole as written in the config: position coordinates and coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoleConfig {
    pub at: [f64; 2],
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub alpha: f64,
    pub poles: Vec<PoleConfig>,
    pub shift: f64,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub mode: Mode,
    pub mean_iterates: u64,
    pub out: PathBuf,
}

/// Geometric horizon grid `min, min*ratio, …` up to `max`.
pub fn geometric_grid(min: u64, max: u64, ratio: u64) -> Vec<u64> {
    let mut grid = Vec::new();
    let mut n = min;
    while n <= max && n > 0 {
        grid.push(n);
        n = match n.checked_mul(ratio) {
            Some(v) if ratio > 1 => v,
            _ => break,
        };
    }
    grid
}

/// A built-in table by name, or a table file.
pub fn load_table(name: &str) -> Result<BilliardTable, HarnessError> {
    let spec = match TableSpec::builtin(name) {
        Some(spec) => spec,
        None => {
            let text =
                std::fs::read_to_string(name).map_err(|e| HarnessError::InvalidConfig(format!("table {name}: {e}")))?;
            TableSpec::parse(&text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?
        }
    };
    BilliardTable::build(&spec).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
}

impl ExperimentConfig {
    /// Configuration for an LSV experiment with a single pole.
    pub fn lsv(gamma: f64, x0: f64, alpha: f64, n_grid: Vec<u64>, replicas: usize, seed: u64) -> Self {
        Self {
            system: SystemConfig::Lsv { gamma },
            alpha,
            poles: vec![PoleConfig { at: [x0, 0.0], coefficient: 1.0 }],
            shift: 0.0,
            n_grid,
            replicas,
            seed,
            burn_in: DEFAULT_BURN_IN,
            mode: Mode::Full,
            mean_iterates: DEFAULT_MEAN_ITERATES,
            out: PathBuf::from("out"),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.replicas < MIN_REPLICAS {
            return bad(format!("replicas = {} is below the minimum {MIN_REPLICAS}", self.replicas));
        }
        if self.n_grid.len() < MIN_GRID_POINTS {
            return bad(format!("n_grid needs at least {MIN_GRID_POINTS} points"));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_grid must be positive and strictly increasing".into());
        }
        let ratio = self.n_grid[1] as f64 / self.n_grid[0] as f64;
        if self.n_grid.windows(2).any(|w| ((w[1] as f64 / w[0] as f64) / ratio - 1.0).abs() > 1e-9) {
            return bad("n_grid must be geometric".into());
        }
        if self.poles.is_empty() {
            return bad("at least one pole is required".into());
        }
        if self.mean_iterates == 0 {
            return bad("mean_iterates must be positive".into());
        }
        if let SystemConfig::Billiard { k0: 0, .. } = self.system {
            return bad("k0 must be at least 1".into());
        }
        self.observable_on(&self.phase_space()?)?;
        Ok(())
    }

    pub fn lsv_map(&self) -> Result<Option<LsvMap<f64>>, HarnessError> {
        match self.system {
            SystemConfig::Lsv { gamma } => Ok(Some(LsvMap::new(gamma).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?)),
            SystemConfig::Billiard { .. } => Ok(None),
        }
    }

    pub fn billiard_table(&self) -> Result<Option<BilliardTable>, HarnessError> {
        match &self.system {
            SystemConfig::Billiard { table, .. } => load_table(table).map(Some),
            SystemConfig::Lsv { .. } => Ok(None),
        }
    }

    fn phase_space(&self) -> Result<PhaseSpace<f64>, HarnessError> {
        Ok(match self.system {
            SystemConfig::Lsv { gamma } => {
                LsvMap::new(gamma).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
                PhaseSpace::Interval
            }
            SystemConfig::Billiard { .. } => {
                let table = self.billiard_table()?.expect("billiard system");
                PhaseSpace::Billiard { perimeter: table.total_length() }
            }
        })
    }

    fn observable_on(&self, space: &PhaseSpace<f64>) -> Result<ObservableSpec<f64>, HarnessError> {
        let poles = self
            .poles
            .iter()
            .map(|p| Pole {
                location: match space {
                    PhaseSpace::Interval => PhasePoint::Interval(p.at[0]),
                    PhaseSpace::Billiard { .. } => PhasePoint::Collision { r: p.at[0], theta: p.at[1] },
                },
                coefficient: p.coefficient,
            })
            .collect();
        ObservableSpec::new(*space, poles, self.alpha, self.shift).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn observable(&self) -> Result<ObservableSpec<f64>, HarnessError> {
        self.observable_on(&self.phase_space()?)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut kv: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Parse { line: i + 1, msg: "expected key = value".into() })?;
            kv.entry(k.trim().to_string()).or_default().push((i + 1, v.trim().to_string()));
        }
        const KNOWN: [&str; 14] = [
            "system", "gamma", "table", "k0", "alpha", "pole", "shift", "n_grid", "replicas", "seed", "burn_in", "mode",
            "mean_iterates", "out",
        ];
        for (k, vs) in &kv {
            if !KNOWN.contains(&k.as_str()) {
                return Err(HarnessError::Parse { line: vs[0].0, msg: format!("unknown key {k}") });
            }
            if k != "pole" && vs.len() > 1 {
                return Err(HarnessError::Parse { line: vs[1].0, msg: format!("duplicate key {k}") });
            }
        }
        let get = |k: &str| kv.get(k).map(|v| (v[0].0, v[0].1.as_str()));
        let required = |k: &str| get(k).ok_or_else(|| HarnessError::InvalidConfig(format!("missing key {k}")));
        fn num<T: std::str::FromStr>((line, v): (usize, &str)) -> Result<T, HarnessError> {
            v.parse().map_err(|_| HarnessError::Parse { line, msg: format!("cannot parse {v:?}") })
        }

        let system = match required("system")?.1 {
            "lsv" => SystemConfig::Lsv { gamma: num(required("gamma")?)? },
            "billiard" => SystemConfig::Billiard {
                table: get("table").map(|v| v.1.to_string()).unwrap_or_else(|| "machta3".into()),
                k0: get("k0").map(num).transpose()?.unwrap_or(DEFAULT_K0),
            },
            other => {
                let line = required("system")?.0;
                return Err(HarnessError::Parse { line, msg: format!("unknown system {other:?}") });
            }
        };
        let mut poles = Vec::new();
        for (line, v) in kv.get("pole").map(Vec::as_slice).unwrap_or(&[]) {
            let (at, c) = v.split_once(':').unwrap_or((v.as_str(), "1"));
            let coords: Vec<&str> = at.split(',').map(str::trim).collect();
            let x: f64 = num((*line, coords[0]))?;
            let y: f64 = match coords.get(1) {
                Some(s) => num((*line, s))?,
                None => 0.0,
            };
            if coords.len() > 2 {
                return Err(HarnessError::Parse { line: *line, msg: "pole takes at most two coordinates".into() });
            }
            poles.push(PoleConfig { at: [x, y], coefficient: num((*line, c.trim()))? });
        }
        let n_grid = parse_grid(required("n_grid")?)?;
        let mode = match get("mode") {
            None => Mode::Full,
            Some((_, "full")) => Mode::Full,
            Some((_, "induced")) => Mode::Induced,
            Some((_, "both")) => Mode::Both,
            Some((line, other)) => return Err(HarnessError::Parse { line, msg: format!("unknown mode {other:?}") }),
        };
        let config = Self {
            system,
            alpha: num(required("alpha")?)?,
            poles,
            shift: get("shift").map(num).transpose()?.unwrap_or(0.0),
            n_grid,
            replicas: num(required("replicas")?)?,
            seed: num(required("seed")?)?,
            burn_in: get("burn_in").map(num).transpose()?.unwrap_or(DEFAULT_BURN_IN),
            mode,
            mean_iterates: get("mean_iterates").map(num).transpose()?.unwrap_or(DEFAULT_MEAN_ITERATES),
            out: PathBuf::from(get("out").map(|v| v.1).unwrap_or("out")),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.system {
            SystemConfig::Lsv { gamma } => {
                let _ = writeln!(s, "system = lsv\ngamma = {gamma:?}");
            }
            SystemConfig::Billiard { table, k0 } => {
                let _ = writeln!(s, "system = billiard\ntable = {table}\nk0 = {k0}");
            }
        }
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        for p in &self.poles {
            match self.system {
                SystemConfig::Lsv { .. } => {
                    let _ = writeln!(s, "pole = {:?}:{:?}", p.at[0], p.coefficient);
                }
                SystemConfig::Billiard { .. } => {
                    let _ = writeln!(s, "pole = {:?},{:?}:{:?}", p.at[0], p.at[1], p.coefficient);
                }
            }
        }
        let grid: Vec<String> = self.n_grid.iter().map(u64::to_string).collect();
        let mode = match self.mode {
            Mode::Full => "full",
            Mode::Induced => "induced",
            Mode::Both => "both",
        };
        let _ = writeln!(
            s,
            "shift = {:?}\nn_grid = {}\nreplicas = {}\nseed = {}\nburn_in = {}\nmode = {mode}\nmean_iterates = {}\nout = {}",
            self.shift,
            grid.join(", "),
            self.replicas,
            self.seed,
            self.burn_in,
            self.mean_iterates,
            self.out.display()
        );
        s
    }
}

fn parse_grid((line, v): (usize, &str)) -> Result<Vec<u64>, HarnessError> {
    let bad = |msg: &str| HarnessError::Parse { line, msg: format!("n_grid {v:?}: {msg}") };
    let term = |s: &str| -> Result<u64, HarnessError> {
        let s = s.trim();
        match s.split_once('^') {
            Some((b, e)) => {
                let b: u64 = b.trim().parse().map_err(|_| bad("bad base"))?;
                let e: u32 = e.trim().parse().map_err(|_| bad("bad exponent"))?;
                b.checked_pow(e).ok_or_else(|| bad("overflow"))
            }
            None => s.parse().map_err(|_| bad("bad integer")),
        }
    };
    if let Some((range, ratio)) = v.split_once('*') {
        let (lo, hi) = range.split_once("..").ok_or_else(|| bad("expected min..max*ratio"))?;
        let ratio = term(ratio)?;
        if ratio < 2 {
            return Err(bad("ratio must be at least 2"));
        }
        Ok(geometric_grid(term(lo)?, term(hi)?, ratio))
    } else {
        v.split(',').map(term).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
        # phase-transition point
        system = lsv
        gamma = 0.6
        alpha = 1.25
        pole = 0.3:1.0
        n_grid = 2^12..2^20*2
        replicas = 2000
        seed = 7
    ";

    #[test]
    fn parses_documented_format() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.system, SystemConfig::Lsv { gamma: 0.6 });
        assert_eq!(c.n_grid, (12..=20).map(|k| 1u64 << k).collect::<Vec<_>>());
        assert_eq!(c.poles, vec![PoleConfig { at: [0.3, 0.0], coefficient: 1.0 }]);
        assert_eq!(c.mode, Mode::Full);
        assert_eq!(c.burn_in, DEFAULT_BURN_IN);
    }

    #[test]
    fn text_round_trip() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        let b = ExperimentConfig::parse(
            "system = billiard\nk0 = 50\nalpha = 0.8\npole = 1.0,1.2:2\nn_grid = 100,200,400,800\nreplicas = 200\nseed = 1\nmode = both",
        )
        .unwrap();
        assert_eq!(ExperimentConfig::parse(&b.to_text()).unwrap(), b);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = SAMPLE.replace("seed = 7", "");
        assert!(matches!(ExperimentConfig::parse(&text), Err(HarnessError::InvalidConfig(m)) if m.contains("seed")));
    }

    #[test]
    fn rejects_small_ensembles_and_grids() {
        assert!(ExperimentConfig::parse(&SAMPLE.replace("2000", "199")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("2^12..2^20*2", "16,32,64")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("2^12..2^20*2", "16,32,64,100")).is_err());
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(ExperimentConfig::parse(&format!("{SAMPLE}\ncolour = red")), Err(HarnessError::Parse { .. })));
        assert!(matches!(ExperimentConfig::parse(&format!("{SAMPLE}\nseed = 8")), Err(HarnessError::Parse { .. })));
    }

    #[test]
    fn rejects_invalid_observable() {
        assert!(ExperimentConfig::parse(&SAMPLE.replace("alpha = 1.25", "alpha = 2.5")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("pole = 0.3:1.0", "")).is_err());
    }
}
