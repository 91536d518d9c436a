//! Fixed experiments behind the tail, point-process, Karamata and billiard
//! checks. Each is a pure function of its parameters and seed; work is split
//! into chunks with their own random streams so results do not depend on the
//! worker count.

use rand::Rng;
use rand_distr::{Distribution, Pareto};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::billiard::{
    collide, flip, shoot, sinetheta_sample, velocity, BilliardError, BilliardTable, CollisionState, CuspSpec, InducedOrbit,
    TableSpec,
};
use crate::harness::HarnessError;
use crate::interval::LsvMap;
use crate::observables::{MeanEstimate, ObservableSpec};
use crate::pointprocess::{
    default_lag_constant, exceedance_process, intensity_tail, poisson_dispersion, prefix_max_sum_diagnostics,
    small_values_functional, Dispersion, IntensityTail, MarkedPoints,
};
use crate::rng::{stream_rng, AUX_STREAM_BASE};
use crate::stats::{hill_tail_index, karamata_residuals, pareto_cell_means, median, ols, sample_stable, KaramataTable, LinearFit};

fn internal<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Internal(e.to_string())
}

/// Hill estimate with its asymptotic normal interval `α̂ (1 ± z/√k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub index: f64,
    pub k: usize,
    pub samples: usize,
    pub ci: (f64, f64),
}

impl TailFit {
    pub fn from_samples(samples: &[f64], k: usize) -> Result<Self, HarnessError> {
        const Z: f64 = 1.959964;
        let index = hill_tail_index(samples, k).map_err(internal)?;
        let half = Z * index / (k as f64).sqrt();
        Ok(Self { index, k, samples: samples.len(), ci: (index - half, index + half) })
    }

    pub fn excludes(&self, value: f64) -> bool {
        value < self.ci.0 || value > self.ci.1
    }
}

/// `⌈√N⌉` order statistics.
pub fn sqrt_k(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// Splits `total` items into `chunks` near-equal parts.
fn chunk_sizes(total: u64, chunks: u64) -> Vec<u64> {
    (0..chunks).map(|i| total / chunks + u64::from(i < total % chunks)).collect()
}

const CHUNKS: u64 = 64;

/// Return times to `Y = [1/2, 1]` along induced orbits started from
/// equilibrium conditioned on `Y`.
pub fn lsv_return_times(map: &LsvMap<f64>, returns: u64, seed: u64) -> Result<Vec<f64>, HarnessError> {
    let parts: Result<Vec<Vec<f64>>, HarnessError> = chunk_sizes(returns, CHUNKS)
        .into_par_iter()
        .enumerate()
        .map(|(i, len)| {
            let mut rng = stream_rng(seed, i as u64);
            let mut y = lsv_start_in_y(map, &mut rng);
            (0..len)
                .map(|_| {
                    let (r, next) = map.first_return(y).map_err(internal)?;
                    y = next;
                    Ok(r as f64)
                })
                .collect()
        })
        .collect();
    Ok(parts?.concat())
}

fn lsv_start_in_y<R: Rng>(map: &LsvMap<f64>, rng: &mut R) -> f64 {
    let mut y = map.equilibrium_sample(rng, 1000);
    while y < 0.5 {
        y = map.apply(y);
    }
    y
}

pub fn lsv_return_tail(gamma: f64, returns: u64, seed: u64) -> Result<TailFit, HarnessError> {
    let map = LsvMap::new(gamma).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let rs = lsv_return_times(&map, returns, seed)?;
    TailFit::from_samples(&rs, sqrt_k(rs.len()))
}

/// Observable values along equilibrium orbits of `T_γ`.
pub fn lsv_observable_tail(gamma: f64, observable: &ObservableSpec<f64>, samples: u64, seed: u64) -> Result<TailFit, HarnessError> {
    let map = LsvMap::new(gamma).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let parts: Vec<Vec<f64>> = chunk_sizes(samples, CHUNKS)
        .into_par_iter()
        .enumerate()
        .map(|(i, len)| {
            let mut rng = stream_rng(seed, i as u64);
            let mut x = map.equilibrium_sample(&mut rng, 10_000);
            (0..len)
                .map(|_| {
                    x = map.apply(x);
                    observable.eval_interval(x)
                })
                .collect()
        })
        .collect();
    let vs = parts.concat();
    TailFit::from_samples(&vs, sqrt_k(vs.len()))
}

/// Observable values at the successive points of one induced orbit on `Y`.
pub fn lsv_induced_values(map: &LsvMap<f64>, observable: &ObservableSpec<f64>, len: usize, seed: u64, stream: u64) -> Result<Vec<f64>, HarnessError> {
    let mut rng = stream_rng(seed, stream);
    let mut y = lsv_start_in_y(map, &mut rng);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(observable.eval_interval(y));
        y = map.first_return(y).map_err(internal)?.1;
    }
    Ok(out)
}

/// `μ_Y(d(·, x_0)^{-1/α})` along induced orbits, with the pole's contribution
/// inside `|y - x_0| < δ` replaced by its local average `δ^{-1/α}/(1 - 1/α)`.
pub fn lsv_induced_pole_mean(map: &LsvMap<f64>, x0: f64, alpha: f64, delta: f64, len: u64, seed: u64) -> Result<MeanEstimate, HarnessError> {
    let p = -1.0 / alpha;
    let inside = delta.powf(p) / (1.0 + p);
    let batches: Result<Vec<(f64, u64)>, HarnessError> = chunk_sizes(len, CHUNKS)
        .into_par_iter()
        .enumerate()
        .map(|(i, n)| {
            let mut rng = stream_rng(seed, AUX_STREAM_BASE + i as u64);
            let mut y = lsv_start_in_y(map, &mut rng);
            let mut s = 0.0;
            for _ in 0..n {
                let d = (y - x0).abs();
                s += if d < delta { inside } else { d.powf(p) };
                y = map.first_return(y).map_err(internal)?.1;
            }
            Ok((s / n.max(1) as f64, n))
        })
        .collect();
    let batches = batches?;
    let means: Vec<f64> = batches.iter().map(|b| b.0).collect();
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(MeanEstimate { mean, stderr: (var / k).sqrt(), samples: len })
}

/// Induced LSV system with a single pole inside `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InducedPoleSystem {
    pub gamma: f64,
    pub x0: f64,
    pub alpha: f64,
}

impl InducedPoleSystem {
    fn parts(&self) -> Result<(LsvMap<f64>, ObservableSpec<f64>), HarnessError> {
        if !(self.x0 > 0.5 && self.x0 < 1.0) {
            return Err(HarnessError::InvalidConfig(format!("pole {} must lie inside Y = (1/2, 1)", self.x0)));
        }
        let map = LsvMap::new(self.gamma).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let obs = ObservableSpec::interval_pole(self.x0, self.alpha).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        Ok((map, obs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonResult {
    pub b_n: f64,
    pub mark_threshold: f64,
    pub mean_count_above_one: f64,
    pub dispersion: Dispersion,
    pub intensity: IntensityTail,
}

/// Exceedance processes of `replicas` independent induced orbits of length
/// `n`. `b_n` is the empirical `1 - 1/n` quantile of the observable under
/// `μ_Y`, from a separate orbit of `calibration` points, so the intensity
/// constant is fitted rather than assumed.
pub fn poisson_experiment(
    system: InducedPoleSystem,
    replicas: usize,
    n: usize,
    marks: &[f64],
    mark_threshold: f64,
    calibration: usize,
    seed: u64,
) -> Result<PoissonResult, HarnessError> {
    let (map, obs) = system.parts()?;
    let mut calib = lsv_induced_values(&map, &obs, calibration, seed, AUX_STREAM_BASE)?;
    let rank = calib.len() - (calib.len() as f64 / n as f64).round().max(1.0) as usize;
    calib.select_nth_unstable_by(rank, f64::total_cmp);
    let b_n = calib[rank];
    let processes: Result<Vec<MarkedPoints>, HarnessError> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let vs = lsv_induced_values(&map, &obs, n, seed, r)?;
            exceedance_process(&vs, b_n, mark_threshold).map_err(internal)
        })
        .collect();
    let processes = processes?;
    let counts: Vec<u64> = processes.iter().map(|p| p.count_above(1.0) as u64).collect();
    let dispersion = poisson_dispersion(&counts, 0.95, 2000, seed).map_err(internal)?;
    let intensity = intensity_tail(&processes, marks).map_err(internal)?;
    Ok(PoissonResult {
        b_n,
        mark_threshold,
        mean_count_above_one: dispersion.mean,
        dispersion,
        intensity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallValuesResult {
    pub n: usize,
    pub k: f64,
    pub eps: Vec<f64>,
    pub estimates: Vec<f64>,
    pub iid_control: Vec<f64>,
}

impl SmallValuesResult {
    pub fn non_increasing(&self) -> bool {
        self.estimates.windows(2).all(|w| w[1] <= w[0])
    }
}

/// The small-values functional on one long induced orbit, for each `ε` in
/// decreasing order, next to an iid Pareto control of the same length.
pub fn small_values_experiment(
    system: InducedPoleSystem,
    orbit_len: usize,
    n: usize,
    eps: &[f64],
    seed: u64,
) -> Result<SmallValuesResult, HarnessError> {
    let (map, obs) = system.parts()?;
    let orbit = lsv_induced_values(&map, &obs, orbit_len, seed, 0)?;
    let k = default_lag_constant(&orbit);
    let estimates = eps
        .iter()
        .map(|&e| small_values_functional(&orbit, system.alpha, e, k, n).map_err(internal))
        .collect::<Result<Vec<_>, _>>()?;
    drop(orbit);
    let mut rng = stream_rng(seed, AUX_STREAM_BASE + 7);
    let pareto = Pareto::new(1.0, system.alpha).map_err(internal)?;
    let iid: Vec<f64> = (0..orbit_len).map(|_| pareto.sample(&mut rng)).collect();
    let k_iid = default_lag_constant(&iid);
    let iid_control = eps
        .iter()
        .map(|&e| small_values_functional(&iid, system.alpha, e, k_iid, n).map_err(internal))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SmallValuesResult { n, k, eps: eps.to_vec(), estimates, iid_control })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxSumResult {
    pub grid: Vec<usize>,
    pub eps: f64,
    pub center: MeanEstimate,
    pub medians: Vec<f64>,
    pub control_medians: Vec<f64>,
    /// Log-log slope of the control medians against `n`.
    pub control_fit: LinearFit,
}

impl MaxSumResult {
    pub fn decreasing(&self) -> bool {
        self.medians.windows(2).all(|w| w[1] < w[0])
    }

    /// The `ε = 0` control shows no decay: its slope is not significantly negative.
    pub fn control_flat(&self) -> bool {
        self.control_fit.slope > -2.0 * self.control_fit.slope_stderr
    }
}

/// Medians over `replicas` induced orbits of the max-sum diagnostic at each
/// prefix length in `grid`, centered by `μ_Y(φ)`; plus the `ε = 0` control on
/// `control_replicas` iid symmetric α-stable sequences.
pub fn max_sum_experiment(
    system: InducedPoleSystem,
    eps: f64,
    grid: &[usize],
    replicas: usize,
    control_replicas: usize,
    center_len: u64,
    seed: u64,
) -> Result<MaxSumResult, HarnessError> {
    let (map, obs) = system.parts()?;
    let n_max = *grid.iter().max().ok_or_else(|| HarnessError::InvalidConfig("empty grid".into()))?;
    let center = lsv_induced_pole_mean(&map, system.x0, system.alpha, 1e-3, center_len, seed)?;
    let rows: Result<Vec<Vec<f64>>, HarnessError> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let vs = lsv_induced_values(&map, &obs, n_max, seed, r)?;
            prefix_max_sum_diagnostics(&vs, system.alpha, eps, center.mean, grid).map_err(internal)
        })
        .collect();
    let control_rows: Vec<Vec<f64>> = (0..control_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, AUX_STREAM_BASE + (1 << 20) + r);
            let vs: Vec<f64> = (0..n_max).map(|_| sample_stable(system.alpha, 0.0, &mut rng)).collect();
            prefix_max_sum_diagnostics(&vs, system.alpha, 0.0, 0.0, grid).expect("valid prefixes")
        })
        .collect();
    let column_medians = |rows: &[Vec<f64>]| -> Vec<f64> {
        (0..grid.len()).map(|i| median(&rows.iter().map(|r| r[i]).collect::<Vec<_>>())).collect()
    };
    let medians = column_medians(&rows?);
    let control_medians = column_medians(&control_rows);
    let lx: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = control_medians.iter().map(|m| m.ln()).collect();
    let control_fit = ols(&lx, &ly).map_err(internal)?;
    Ok(MaxSumResult { grid: grid.to_vec(), eps, center, medians, control_medians, control_fit })
}

/// Source of the exact Pareto data of the Karamata suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoSource {
    /// Independent draws.
    Iid { seed: u64 },
    /// Cell means of the quantile function; free of sampling noise.
    CellMeans,
}

/// Karamata table for an exact Pareto(α) sample of size `samples`.
pub fn karamata_experiment(alpha: f64, samples: u64, eps: &[f64], n_grid: &[f64], source: ParetoSource) -> Result<KaramataTable, HarnessError> {
    match source {
        ParetoSource::Iid { seed } => {
            let pareto = Pareto::new(1.0, alpha).map_err(internal)?;
            let mut rng = stream_rng(seed, 0);
            let draws = (0..samples).map(|_| pareto.sample(&mut rng));
            karamata_residuals(draws, alpha, eps, n_grid).map_err(internal)
        }
        ParetoSource::CellMeans => karamata_residuals(pareto_cell_means(alpha, samples as usize), alpha, eps, n_grid).map_err(internal),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BilliardTail {
    pub fit: TailFit,
    pub fraction_above_one: f64,
    pub max_return: f64,
    pub discarded_orbits: usize,
    pub grazing: usize,
}

/// Return times of the induced billiard map from `chunks` orbits started at
/// invariant samples conditioned on `M`. `k = ⌈N^{1/3}⌉`: almost every return
/// time is 1, so only the top few hundred values lie in the power-law regime.
pub fn billiard_return_tail(table: &BilliardTable, k0: u64, returns: u64, seed: u64) -> Result<BilliardTail, HarnessError> {
    const RETURN_CAP: u64 = 1 << 22;
    let parts: Vec<(Vec<f64>, usize, usize)> = chunk_sizes(returns, CHUNKS)
        .into_par_iter()
        .enumerate()
        .map(|(i, len)| {
            let mut rng = stream_rng(seed, i as u64);
            let mut out = Vec::with_capacity(len as usize);
            let (mut discarded, mut grazing) = (0usize, 0usize);
            'restart: while (out.len() as u64) < len {
                let s = sinetheta_sample(table, &mut rng);
                let mut orbit = match InducedOrbit::new(table, &s, k0, RETURN_CAP) {
                    Ok(o) => o,
                    Err(BilliardError::NotInInducingSet) => continue,
                    Err(e) => {
                        discarded += 1;
                        grazing += usize::from(matches!(e, BilliardError::Grazing { .. }));
                        continue;
                    }
                };
                while (out.len() as u64) < len {
                    match orbit.next_return(|_| {}) {
                        Ok(ret) => out.push(ret.r as f64),
                        Err(e) => {
                            discarded += 1;
                            grazing += usize::from(matches!(e, BilliardError::Grazing { .. }));
                            continue 'restart;
                        }
                    }
                }
            }
            (out, discarded, grazing)
        })
        .collect();
    let discarded = parts.iter().map(|p| p.1).sum();
    let grazing = parts.iter().map(|p| p.2).sum();
    let rs: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    let k = (rs.len() as f64).cbrt().ceil() as usize;
    let fit = TailFit::from_samples(&rs, k)?;
    Ok(BilliardTail {
        fit,
        fraction_above_one: rs.iter().filter(|&&r| r > 1.0).count() as f64 / rs.len() as f64,
        max_return: rs.iter().copied().fold(0.0, f64::max),
        discarded_orbits: discarded,
        grazing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryReport {
    pub table: String,
    pub gamma_max: f64,
    pub samples: usize,
    pub failed: usize,
    pub max_speed_error: f64,
    pub max_reversal_error: f64,
    pub chi2: f64,
    pub chi2_dof: usize,
    pub chi2_p_value: f64,
}

/// Pushes invariant samples through one collision and compares `(r, u)`
/// histograms, `u = (1 - cos θ)/2` (uniform under the invariant measure), on
/// a `bins × bins` grid by a two-sample χ² test; also records the speed and
/// time-reversal errors.
pub fn billiard_geometry_checks(table: &BilliardTable, samples: usize, bins: usize, seed: u64) -> GeometryReport {
    let l = table.total_length();
    let cell = |s: &CollisionState| {
        let i = ((s.r / l) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        let u = (1.0 - s.theta.cos()) / 2.0;
        let j = (u * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        i * bins + j
    };
    // (before counts, after counts, failed, speed drift, reversibility drift)
    type Chunk = (Vec<u64>, Vec<u64>, usize, f64, f64);
    let parts: Vec<Chunk> = chunk_sizes(samples as u64, CHUNKS)
        .into_par_iter()
        .enumerate()
        .map(|(c, len)| {
            let mut rng = stream_rng(seed, c as u64);
            let (mut before, mut after) = (vec![0u64; bins * bins], vec![0u64; bins * bins]);
            let (mut failed, mut speed, mut rev) = (0usize, 0.0f64, 0.0f64);
            for _ in 0..len {
                let s = sinetheta_sample(table, &mut rng);
                before[cell(&s)] += 1;
                let Ok(t) = collide(table, &s) else {
                    failed += 1;
                    continue;
                };
                after[cell(&t)] += 1;
                speed = speed.max((velocity(table, &t).norm() - 1.0).abs());
                if let Ok(back) = collide(table, &flip(t)).map(flip) {
                    let dr = (back.r - s.r).abs();
                    rev = rev.max(dr.min(l - dr) + (back.theta - s.theta).abs());
                }
            }
            (before, after, failed, speed, rev)
        })
        .collect();
    let mut before = vec![0u64; bins * bins];
    let mut after = vec![0u64; bins * bins];
    let (mut failed, mut speed, mut rev) = (0usize, 0.0f64, 0.0f64);
    for (b, a, f, s, r) in parts {
        before.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        after.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        failed += f;
        speed = speed.max(s);
        rev = rev.max(r);
    }
    // two-sample χ² for binned counts with unequal totals
    let (nb, na) = (before.iter().sum::<u64>() as f64, after.iter().sum::<u64>() as f64);
    let (k1, k2) = ((na / nb).sqrt(), (nb / na).sqrt());
    let mut chi2 = 0.0;
    let mut used = 0usize;
    for (&b, &a) in before.iter().zip(&after) {
        if a + b > 0 {
            chi2 += (k1 * b as f64 - k2 * a as f64).powi(2) / (a + b) as f64;
            used += 1;
        }
    }
    let dof = used.saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(chi2);
    GeometryReport {
        table: table.name().to_string(),
        gamma_max: table.gamma_max(),
        samples,
        failed,
        max_speed_error: speed,
        max_reversal_error: rev,
        chi2,
        chi2_dof: dof,
        chi2_p_value: p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrappingRow {
    pub beta: f64,
    pub entries: usize,
    pub mean_run: f64,
    pub stderr: f64,
}

/// Mean number of consecutive collisions in cusp 0 of symmetric 3-cusp
/// tables of each flatness `β`. Every table sees the same entry ensemble:
/// flights from the table centre toward the cusp tip, with direction offsets
/// of random sign and magnitude uniform in `[CONE/2, CONE]`, a band inside
/// the flattest cusp's mouth. Offsets near zero are excluded because the run
/// length diverges for flights along the axis.
pub fn cusp_trapping(betas: &[f64], entries: usize, seed: u64) -> Result<Vec<TrappingRow>, HarnessError> {
    const EXTENT: f64 = 0.2;
    const CONE: f64 = 2e-4;
    const MAX_RUN: usize = 10_000_000;
    betas
        .iter()
        .map(|&beta| {
            let cusp = CuspSpec { beta, c_plus: 1.0, c_minus: 1.0, extent: EXTENT };
            let spec = TableSpec::symmetric(&format!("trap{beta}"), 3, cusp).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
            let table = BilliardTable::build(&spec).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
            let tip = table.point(table.cusp_r(0).expect("cusp 0")).0;
            let axis = tip.angle();
            let mut rng = stream_rng(seed, 0);
            let mut runs = Vec::with_capacity(entries);
            for _ in 0..entries {
                let off = rng.gen_range(CONE / 2.0..CONE);
                let a = axis + if rng.gen_bool(0.5) { off } else { -off };
                let Ok(mut st) = shoot(&table, [0.0, 0.0], [a.cos(), a.sin()]) else { continue };
                let mut run = 0usize;
                let mut ok = true;
                while table.cusp_at(&st) == Some(0) && run < MAX_RUN {
                    run += 1;
                    match collide(&table, &st) {
                        Ok(next) => st = next,
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    runs.push(run as f64);
                }
            }
            let n = runs.len() as f64;
            let mean = runs.iter().sum::<f64>() / n;
            let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(TrappingRow { beta, entries: runs.len(), mean_run: mean, stderr: (var / n).sqrt() })
        })
        .collect()
}
