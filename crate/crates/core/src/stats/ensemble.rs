use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;
use crate::stats::{ols, quantile_sorted, StatsError};

pub const DEFAULT_QUANTILE_PAIR: (f64, f64) = (0.25, 0.75);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnsembleMeta {
    pub system: String,
    pub observable: String,
    pub seed: u64,
}

/// Centered Birkhoff sums `S_n - c_n`: one row of `M` replica values per `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumEnsemble {
    grid: Vec<u64>,
    rows: Vec<Vec<f64>>,
    pub meta: EnsembleMeta,
}

impl SumEnsemble {
    pub fn new(grid: Vec<u64>, rows: Vec<Vec<f64>>, meta: EnsembleMeta) -> Result<Self, StatsError> {
        if grid.len() < 4 {
            return Err(StatsError::InvalidEnsemble(format!("grid has {} points, need >= 4", grid.len())));
        }
        if rows.len() != grid.len() {
            return Err(StatsError::InvalidEnsemble(format!(
                "{} rows for {} grid points",
                rows.len(),
                grid.len()
            )));
        }
        if grid[0] == 0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(StatsError::InvalidEnsemble("grid must be positive and strictly increasing".into()));
        }
        let ratio = grid[1] as f64 / grid[0] as f64;
        if grid
            .windows(2)
            .any(|w| ((w[1] as f64 / w[0] as f64) / ratio - 1.0).abs() > 1e-6)
        {
            return Err(StatsError::InvalidEnsemble("grid is not geometric".into()));
        }
        let m = rows[0].len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(StatsError::InvalidEnsemble("rows must share a non-zero replica count".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StatsError::InvalidEnsemble("non-finite replica value".into()));
        }
        Ok(Self { grid, rows, meta })
    }

    pub fn grid(&self) -> &[u64] {
        &self.grid
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn replicas(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, n: u64) -> Option<&[f64]> {
        self.grid.iter().position(|&g| g == n).map(|i| self.rows[i].as_slice())
    }

    /// Writes `n,replica_id,value` lines. Values use the shortest
    /// round-tripping decimal form, so equal ensembles give equal bytes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n,replica_id,value")?;
        for (n, row) in self.grid.iter().zip(&self.rows) {
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{n},{i},{v:?}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv(text: &str, meta: EnsembleMeta) -> Result<Self, StatsError> {
        let mut grid: Vec<u64> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || StatsError::InvalidEnsemble(format!("malformed CSV line {}", lineno + 1));
            let mut parts = line.split(',');
            let n: u64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            let id: usize = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            if grid.last() != Some(&n) {
                grid.push(n);
                rows.push(Vec::new());
            }
            let row = rows.last_mut().expect("row pushed");
            if id != row.len() {
                return Err(bad());
            }
            row.push(v);
        }
        Self::new(grid, rows, meta)
    }
}

/// Fit of a power law `spread(n) ∝ n^θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub theta_hat: f64,
    pub stderr: f64,
    pub r_squared: f64,
}

impl ExponentFit {
    /// `|θ̂ - target| <= tol`.
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.theta_hat - target).abs() <= tol
    }

    /// Whether two fits agree within `z` joint standard errors.
    pub fn agrees_with(&self, other: &ExponentFit, z: f64) -> bool {
        let joint = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.theta_hat - other.theta_hat).abs() <= z * joint
    }
}

fn log_spreads<'a>(rows: impl Iterator<Item = (u64, Vec<f64>)> + 'a, (lo, hi): (f64, f64)) -> Result<Vec<f64>, StatsError> {
    rows.map(|(n, mut row)| {
        row.sort_by(f64::total_cmp);
        let spread = quantile_sorted(&row, hi) - quantile_sorted(&row, lo);
        if spread > 0.0 {
            Ok(spread.ln())
        } else {
            Err(StatsError::NonPositiveSpread { n, spread })
        }
    })
    .collect()
}

/// Standard deviation of the fitted exponent over `resamples` bootstrap
/// resamples of whole replicas. Rows share replicas, so regression residuals
/// are correlated and the regression standard error understates this.
pub fn bootstrap_exponent_stderr(
    ensemble: &SumEnsemble,
    quantile_pair: (f64, f64),
    resamples: usize,
    seed: u64,
) -> Result<f64, StatsError> {
    if resamples < 2 {
        return Err(StatsError::InvalidParameter("need at least two resamples".into()));
    }
    let m = ensemble.replicas();
    let xs: Vec<f64> = ensemble.grid.iter().map(|&n| (n as f64).ln()).collect();
    let mut rng = stream_rng(seed, 0);
    let mut slopes = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let ids: Vec<usize> = (0..m).map(|_| rng.gen_range(0..m)).collect();
        let rows = ensemble.grid.iter().zip(&ensemble.rows).map(|(&n, row)| (n, ids.iter().map(|&i| row[i]).collect()));
        slopes.push(ols(&xs, &log_spreads(rows, quantile_pair)?)?.slope);
    }
    let mean = slopes.iter().sum::<f64>() / resamples as f64;
    let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

/// Slope of log interquantile spread against log n.
pub fn scaling_exponent(ensemble: &SumEnsemble, quantile_pair: (f64, f64)) -> Result<ExponentFit, StatsError> {
    let (lo, hi) = quantile_pair;
    if !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(StatsError::InvalidParameter(format!("bad quantile pair ({lo}, {hi})")));
    }
    let xs: Vec<f64> = ensemble.grid.iter().map(|&n| (n as f64).ln()).collect();
    let ys = log_spreads(ensemble.grid.iter().zip(&ensemble.rows).map(|(&n, row)| (n, row.clone())), quantile_pair)?;
    let fit = ols(&xs, &ys)?;
    Ok(ExponentFit {
        theta_hat: fit.slope,
        stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
    })
}
