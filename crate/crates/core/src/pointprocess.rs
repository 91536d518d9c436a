//! Exceedance point processes, Poisson-limit diagnostics, the small-values
//! functional and the max-sum diagnostic for Birkhoff sums.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::rng::stream_rng;
use crate::stats::{ols, quantile_sorted, LinearFit, StatsError};

#[derive(Debug, Error)]
pub enum PointProcessError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {need} replicas, got {got}")]
    TooFewReplicas { need: usize, got: usize },
    #[error("mean count is zero")]
    ZeroMean,
    #[error("orbit of length {len} too short for lag {lag}")]
    OrbitTooShort { len: usize, lag: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Marked points `(j/n, v_j / b_n)` of the exceedance process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedPoints {
    pub points: Vec<(f64, f64)>,
    pub n: usize,
    /// Marks below this are not recorded.
    pub threshold: f64,
}

impl MarkedPoints {
    /// Number of points with mark above `v`.
    pub fn count_above(&self, v: f64) -> usize {
        self.points.iter().filter(|p| p.1 > v).count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,mark")?;
        for (t, m) in &self.points {
            writeln!(w, "{t:?},{m:?}")?;
        }
        Ok(())
    }

    /// Reads points written by [`MarkedPoints::write_csv`]; `n` and the
    /// threshold are not stored in the file and must be supplied.
    pub fn read_csv<R: BufRead>(r: R, n: usize, threshold: f64) -> Result<Self, PointProcessError> {
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "time,mark" {
                    return Err(PointProcessError::Parse { line: 1, msg: "expected header `time,mark`".into() });
                }
                continue;
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| PointProcessError::Parse {
                    line: i + 1,
                    msg: format!("not a number: `{s}`"),
                })
            };
            let (t, m) = line.split_once(',').ok_or(PointProcessError::Parse {
                line: i + 1,
                msg: "expected two columns".into(),
            })?;
            points.push((parse(t)?, parse(m)?));
        }
        Ok(Self { points, n, threshold })
    }
}

/// All `(j/n, v_j / b_n)`, `j = 1..=n`, whose mark reaches `threshold`.
pub fn exceedance_process(values: &[f64], b_n: f64, threshold: f64) -> Result<MarkedPoints, PointProcessError> {
    if !(b_n > 0.0) || !(threshold > 0.0) {
        return Err(PointProcessError::InvalidParameter(format!(
            "b_n = {b_n} and the mark threshold {threshold} must be positive"
        )));
    }
    let n = values.len();
    let points = values
        .iter()
        .enumerate()
        .filter_map(|(j, v)| {
            let m = v / b_n;
            (m >= threshold).then(|| ((j + 1) as f64 / n as f64, m))
        })
        .collect();
    Ok(MarkedPoints { points, n, threshold })
}

/// Variance-to-mean ratio of replica counts with a bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dispersion {
    pub mean: f64,
    pub variance: f64,
    pub ratio: f64,
    pub ci: (f64, f64),
}

impl Dispersion {
    pub fn contains_one(&self) -> bool {
        self.ci.0 <= 1.0 && 1.0 <= self.ci.1
    }
}

pub const MIN_DISPERSION_REPLICAS: usize = 200;

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Percentile-bootstrap interval at `level` (e.g. 0.95) from `resamples`
/// resamples drawn from stream `seed`.
pub fn poisson_dispersion(counts: &[u64], level: f64, resamples: usize, seed: u64) -> Result<Dispersion, PointProcessError> {
    if counts.len() < MIN_DISPERSION_REPLICAS {
        return Err(PointProcessError::TooFewReplicas {
            need: MIN_DISPERSION_REPLICAS,
            got: counts.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) || resamples < 10 {
        return Err(PointProcessError::InvalidParameter("level must be in (0,1), resamples >= 10".into()));
    }
    let (mean, variance) = mean_var(counts.iter().map(|&c| c as f64));
    if mean == 0.0 {
        return Err(PointProcessError::ZeroMean);
    }
    let mut rng = stream_rng(seed, 0);
    let m = counts.len();
    let mut ratios: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..m).map(|_| counts[rng.gen_range(0..m)] as f64).collect();
            let (mu, v) = mean_var(sample.iter().copied());
            if mu > 0.0 {
                v / mu
            } else {
                0.0
            }
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Dispersion {
        mean,
        variance,
        ratio: variance / mean,
        ci: (quantile_sorted(&ratios, tail), quantile_sorted(&ratios, 1.0 - tail)),
    })
}

/// Mean number of points with mark above each `v`, and the log-log fit of
/// mean count against `v`: slope `≈ -α`, `exp(intercept)` the intensity
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityTail {
    pub marks: Vec<f64>,
    pub mean_counts: Vec<f64>,
    pub fit: LinearFit,
}

pub fn intensity_tail(replicas: &[MarkedPoints], marks: &[f64]) -> Result<IntensityTail, PointProcessError> {
    if replicas.is_empty() || marks.len() < 2 || marks.iter().any(|&v| !(v > 0.0)) {
        return Err(PointProcessError::InvalidParameter("need replicas and at least two positive marks".into()));
    }
    let mean_counts: Vec<f64> = marks
        .iter()
        .map(|&v| replicas.iter().map(|r| r.count_above(v) as f64).sum::<f64>() / replicas.len() as f64)
        .collect();
    if mean_counts.contains(&0.0) {
        return Err(PointProcessError::ZeroMean);
    }
    let lx: Vec<f64> = marks.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = mean_counts.iter().map(|c| c.ln()).collect();
    let fit = ols(&lx, &ly)?;
    Ok(IntensityTail {
        marks: marks.to_vec(),
        mean_counts,
        fit,
    })
}

/// `⌊k ln n⌋`.
pub fn lag_horizon(k: f64, n: usize) -> usize {
    (k * (n as f64).ln()).floor().max(1.0) as usize
}

/// Default `k = 8 / |ln θ̂|`, with `θ̂` the lag-one autocorrelation of the
/// sequence truncated at its 99% quantile (clamped to `[0.05, 0.95]`).
pub fn default_lag_constant(values: &[f64]) -> f64 {
    let mut s: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if s.len() < 3 {
        return 8.0 / 0.05f64.ln().abs();
    }
    s.sort_by(f64::total_cmp);
    let cut = quantile_sorted(&s, 0.99);
    let t: Vec<f64> = values.iter().map(|&v| if v.abs() <= cut { v } else { 0.0 }).collect();
    let rho = autocovariance(&t, 1) / autocovariance(&t, 0);
    let theta = rho.abs().clamp(0.05, 0.95);
    8.0 / theta.ln().abs()
}

fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs[..n - lag]
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / (n - lag) as f64
}

/// `(n / b_n²) Σ_{j=1}^{⌊k ln n⌋} max{0, Ĉov_j}` with `b_n = n^{1/α}` and
/// `Ĉov_j` the lag-`j` autocovariance along `orbit` of
/// `φ_n = φ 1{|φ| ≤ ε b_n}`, centered by its orbit mean. `eps = ∞` disables
/// the truncation.
pub fn small_values_functional(orbit: &[f64], alpha: f64, eps: f64, k: f64, n: usize) -> Result<f64, PointProcessError> {
    if !(alpha > 0.0 && alpha < 2.0) || !(eps > 0.0) || !(k > 0.0) || n < 2 {
        return Err(PointProcessError::InvalidParameter(format!(
            "alpha = {alpha}, eps = {eps}, k = {k}, n = {n}"
        )));
    }
    let lag = lag_horizon(k, n);
    if orbit.len() <= 2 * lag {
        return Err(PointProcessError::OrbitTooShort { len: orbit.len(), lag });
    }
    let b_n = (n as f64).powf(1.0 / alpha);
    let cut = eps * b_n;
    let t: Vec<f64> = orbit.iter().map(|&v| if v.abs() <= cut { v } else { 0.0 }).collect();
    let sum: f64 = (1..=lag).map(|j| autocovariance(&t, j).max(0.0)).sum();
    Ok(n as f64 / (b_n * b_n) * sum)
}

/// `n^{-(1/α + ε)} max_{j ≤ n} |Σ_{i ≤ j} (v_i - center)|` with `n = values.len()`.
pub fn max_sum_diagnostic(values: &[f64], alpha: f64, eps: f64, center: f64) -> Result<f64, PointProcessError> {
    if !(alpha > 0.0 && alpha < 2.0) || !(eps >= 0.0) {
        return Err(PointProcessError::InvalidParameter(format!("alpha = {alpha}, eps = {eps}")));
    }
    Ok(prefix_max_sum_diagnostics(values, alpha, eps, center, &[values.len()])?[0])
}

/// [`max_sum_diagnostic`] for each prefix length in `ns` of one orbit.
pub fn prefix_max_sum_diagnostics(
    values: &[f64],
    alpha: f64,
    eps: f64,
    center: f64,
    ns: &[usize],
) -> Result<Vec<f64>, PointProcessError> {
    if ns.iter().any(|&n| n == 0 || n > values.len()) {
        return Err(PointProcessError::InvalidParameter("prefix lengths must lie in 1..=len".into()));
    }
    let mut out = Vec::with_capacity(ns.len());
    let (mut s, mut best) = (0.0f64, 0.0f64);
    let mut done = 0usize;
    let mut order: Vec<usize> = (0..ns.len()).collect();
    order.sort_by_key(|&i| ns[i]);
    let mut result = vec![0.0; ns.len()];
    for i in order {
        for v in &values[done..ns[i]] {
            s += v - center;
            best = best.max(s.abs());
        }
        done = ns[i];
        result[i] = best * (ns[i] as f64).powf(-(1.0 / alpha + eps));
    }
    out.extend(result);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Pareto, Poisson};

    #[test]
    fn exceedances() {
        let v = [0.5, 3.0, 1.0, 10.0];
        let mp = exceedance_process(&v, 2.0, 0.5).unwrap();
        assert_eq!(mp.points, vec![(0.5, 1.5), (0.75, 0.5), (1.0, 5.0)]);
        assert_eq!(mp.count_above(1.0), 2);
        assert!(exceedance_process(&v, 100.0, 0.5).unwrap().points.is_empty());
        assert!(exceedance_process(&v, 0.0, 0.5).is_err());
    }

    #[test]
    fn exceedance_count_matches_threshold() {
        let mut rng = stream_rng(1, 0);
        let pareto = Pareto::new(1.0, 1.5).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| pareto.sample(&mut rng)).collect();
        let mp = exceedance_process(&v, 10.0, 0.3).unwrap();
        assert_eq!(mp.points.len(), v.iter().filter(|&&x| x / 10.0 >= 0.3).count());
        assert!(mp.points.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn csv_round_trip() {
        let mp = exceedance_process(&[1.0, 7.0, 0.1, 9.5], 3.0, 0.25).unwrap();
        let mut buf = Vec::new();
        mp.write_csv(&mut buf).unwrap();
        let back = MarkedPoints::read_csv(buf.as_slice(), 4, 0.25).unwrap();
        assert_eq!(back, mp);
    }

    #[test]
    fn dispersion_of_poisson_counts() {
        let mut rng = stream_rng(2, 0);
        let pois = Poisson::new(3.0).unwrap();
        let counts: Vec<u64> = (0..2000).map(|_| pois.sample(&mut rng) as u64).collect();
        let d = poisson_dispersion(&counts, 0.95, 1000, 7).unwrap();
        assert!(d.contains_one(), "{d:?}");
        let doubled: Vec<u64> = counts.iter().map(|c| 2 * c).collect();
        let d2 = poisson_dispersion(&doubled, 0.95, 1000, 7).unwrap();
        assert!((d2.ratio - 2.0).abs() < 0.25 && !d2.contains_one(), "{d2:?}");
        let constant = vec![4u64; 300];
        let d3 = poisson_dispersion(&constant, 0.95, 200, 7).unwrap();
        assert_eq!(d3.ratio, 0.0);
        assert!(poisson_dispersion(&vec![0; 300], 0.95, 100, 1).is_err());
        assert!(poisson_dispersion(&[1, 2, 3], 0.95, 100, 1).is_err());
    }

    #[test]
    fn iid_intensity_tail() {
        // P(X > x) = x^{-α}: with b_n = n^{1/α}, n P(X > v b_n) = v^{-α}
        let alpha = 1.5;
        let pareto = Pareto::new(1.0, alpha).unwrap();
        let n = 4096usize;
        let b_n = (n as f64).powf(1.0 / alpha);
        let replicas: Vec<MarkedPoints> = (0..1000)
            .map(|i| {
                let mut rng = stream_rng(3, i);
                let v: Vec<f64> = (0..n).map(|_| pareto.sample(&mut rng)).collect();
                exceedance_process(&v, b_n, 0.25).unwrap()
            })
            .collect();
        let tail = intensity_tail(&replicas, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!((tail.fit.slope + alpha).abs() < 0.15, "{tail:?}");
        assert!((tail.mean_counts[0] - 1.0).abs() < 0.1);
    }

    #[test]
    fn small_values_vanish_for_iid() {
        let pareto = Pareto::new(1.0, 1.5).unwrap();
        let mut rng = stream_rng(4, 0);
        let v: Vec<f64> = (0..2_000_000).map(|_| pareto.sample(&mut rng)).collect();
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let s = small_values_functional(&v, 1.5, eps, 4.0, 1 << 16).unwrap();
            assert!(s < 0.05, "eps = {eps}: {s}");
        }
        assert!(small_values_functional(&v[..10], 1.5, 0.1, 4.0, 1 << 16).is_err());
    }

    #[test]
    fn small_values_untruncated_is_centered_autocovariance() {
        // AR(1)-like positive correlation: x_{i+1} = 0.5 x_i + e_i
        let mut rng = stream_rng(5, 0);
        let mut x = 0.0;
        let v: Vec<f64> = (0..100_000)
            .map(|_| {
                x = 0.5 * x + rng.gen::<f64>();
                x + 10.0
            })
            .collect();
        let n = 1000;
        let k = 2.0;
        let s = small_values_functional(&v, 1.5, f64::INFINITY, k, n).unwrap();
        let lag = lag_horizon(k, n);
        let b2 = (n as f64).powf(2.0 / 1.5);
        let direct: f64 = (1..=lag).map(|j| autocovariance(&v, j).max(0.0)).sum::<f64>() * n as f64 / b2;
        assert!((s - direct).abs() < 1e-12 * direct.abs());
        // shifting the raw values does not change the centered covariances
        let shifted: Vec<f64> = v.iter().map(|x| x + 100.0).collect();
        let s2 = small_values_functional(&shifted, 1.5, f64::INFINITY, k, n).unwrap();
        assert!((s - s2).abs() < 1e-9 * s.abs());
    }

    #[test]
    fn max_sum() {
        assert_eq!(max_sum_diagnostic(&[0.0; 64], 1.5, 0.1, 0.0).unwrap(), 0.0);
        let v = [1.0, 1.0, -3.0, 1.0];
        // partial sums 1, 2, -1, 0: max |.| = 2
        let d = max_sum_diagnostic(&v, 1.5, 0.1, 0.0).unwrap();
        assert!((d - 2.0 * 4f64.powf(-(1.0 / 1.5 + 0.1))).abs() < 1e-15);
        // strictly decreasing in ε for a fixed non-zero maximum
        let eps: Vec<f64> = [0.0, 0.05, 0.1, 0.2].iter().map(|&e| max_sum_diagnostic(&v, 1.5, e, 0.0).unwrap()).collect();
        assert!(eps.windows(2).all(|w| w[1] < w[0]));
        let p = prefix_max_sum_diagnostics(&v, 1.5, 0.0, 0.0, &[4, 2]).unwrap();
        assert_eq!(p[1], 2.0 * 2f64.powf(-1.0 / 1.5));
    }

    #[test]
    fn lag_constant_is_positive() {
        let mut rng = stream_rng(6, 0);
        let v: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let k = default_lag_constant(&v);
        assert!(k > 0.0 && k <= 8.0 / 0.05f64.ln().abs() + 1e-12);
    }
}
