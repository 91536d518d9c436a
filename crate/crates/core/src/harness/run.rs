//! Seeded parallel Monte Carlo ensembles of centered Birkhoff sums.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::billiard::{collide, in_inducing_set, sinetheta_sample, BilliardError, BilliardTable, CollisionState, InducedOrbit};
use crate::harness::predict::{predict_limit_law, CaseReport, PredictedLaw, SystemParams};
use crate::harness::{ExperimentConfig, HarnessError, Mode, SystemConfig};
use crate::interval::LsvMap;
use crate::observables::{batch_means, boundary_limit, cusp_integrals, MeanEstimate, ObservableSpec};
use crate::rng::{stream_rng, AUX_STREAM_BASE};
use crate::stats::{
    bootstrap_exponent_stderr, ks_critical_value, ks_two_sample, median, quantile_sorted, sample_stable, scaling_exponent, self_similarity_check,
    EnsembleMeta, ExponentFit, SumEnsemble, DEFAULT_QUANTILE_PAIR,
};

/// Largest tolerated share of discarded replicas.
pub const MAX_DISCARD_FRACTION: f64 = 1e-3;
/// KS level of the distributional checks.
pub const KS_LEVEL: f64 = 0.01;
/// Induced replicas use stream ids offset by this, keeping them independent
/// of the full-orbit replicas of the same experiment.
const INDUCED_STREAM_OFFSET: u64 = 1 << 40;
/// Stream-id stride between retries of a quarantined replica.
const RETRY_STRIDE: u64 = 1 << 32;
/// Cap on the lookahead buffer of one billiard return.
const BILLIARD_RETURN_CAP: u64 = 1 << 22;
/// Cap on one LSV return.
const LSV_RETURN_CAP: u64 = 1 << 40;
/// Samples used to estimate the measure of the billiard inducing set.
const INDUCING_MEASURE_SAMPLES: u64 = 1_000_000;
/// Replica-bootstrap resamples behind the reported exponent spread.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Batches of the batch-means standard error.
const MEAN_BATCHES: u64 = 64;

/// Which dynamics generated an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Birkhoff sums of `φ` under `T`.
    Full,
    /// Birkhoff sums of the induced observable under `F = T^R`.
    Induced,
}

/// Bookkeeping of replicas that were discarded and redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Quarantine {
    pub replicas: usize,
    pub discarded: usize,
    pub grazing: usize,
    pub precision: usize,
    pub return_cap: usize,
    pub other: usize,
}

impl Quarantine {
    fn record(&mut self, failure: &Failure) {
        self.discarded += 1;
        match failure {
            Failure::Billiard(BilliardError::Grazing { .. }) => self.grazing += 1,
            Failure::Billiard(BilliardError::PrecisionExhausted { .. }) => self.precision += 1,
            Failure::Billiard(BilliardError::ReturnCapExceeded { .. }) | Failure::ReturnCap => self.return_cap += 1,
            _ => self.other += 1,
        }
    }

    pub fn discard_fraction(&self) -> f64 {
        self.discarded as f64 / (self.replicas + self.discarded).max(1) as f64
    }
}

#[derive(Debug)]
enum Failure {
    Billiard(BilliardError),
    ReturnCap,
    NonFinite,
}

/// Distributional checks of one ensemble at the predicted index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionChecks {
    pub index: f64,
    /// Horizons `(n, 2n)` compared by the self-similarity check.
    pub horizons: (u64, u64),
    pub self_similarity: f64,
    pub oracle_skew: f64,
    /// KS distance between the standardized terminal sums and the stable oracle.
    pub oracle_ks: f64,
    pub ks_critical: f64,
    pub self_similarity_pass: bool,
    pub oracle_pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub route: Route,
    pub ensemble: SumEnsemble,
    /// `None` when the spreads are degenerate (e.g. a zero observable).
    pub fit: Option<ExponentFit>,
    pub fit_error: Option<String>,
    pub checks: Option<DistributionChecks>,
    pub quarantine: Quarantine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteringInfo {
    /// Centering constant per step; zero when `α < 1`.
    pub c: f64,
    pub mean: MeanEstimate,
    /// Measure of the inducing set.
    pub inducing_measure: MeanEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub predicted: Result<PredictedLaw, String>,
    pub centering: CenteringInfo,
    pub runs: Vec<EnsembleRun>,
}

impl ExperimentResult {
    pub fn run(&self, route: Route) -> Option<&EnsembleRun> {
        self.runs.iter().find(|r| r.route == route)
    }
}

enum System {
    Lsv(LsvMap<f64>),
    Billiard { table: BilliardTable, k0: u64 },
}

/// Everything a replica needs, shared read-only across workers.
struct Setup {
    system: System,
    observable: ObservableSpec<f64>,
    c: f64,
    seed: u64,
    burn_in: usize,
}

fn build_setup(config: &ExperimentConfig) -> Result<(Setup, CenteringInfo, Option<CaseReport>, SystemParams), HarnessError> {
    config.validate()?;
    let observable = config.observable()?;
    let alpha = observable.alpha();
    let (system, mean, inducing, report, params) = match &config.system {
        SystemConfig::Lsv { gamma } => {
            let map = config.lsv_map()?.expect("lsv system");
            let (mean, inducing) = lsv_orbit_means(&map, &observable, config.mean_iterates, config.burn_in, config.seed);
            let gap = observable.eval_interval(0.0) - mean.mean;
            let report = CaseReport::LsvGap { gap, stderr: mean.stderr, z: 2.0 };
            (System::Lsv(map), mean, inducing, Some(report), SystemParams::Lsv { gamma: *gamma })
        }
        SystemConfig::Billiard { k0, .. } => {
            let table = config.billiard_table()?.expect("billiard system");
            let (mean, inducing) = billiard_means(&table, &observable, *k0, config.mean_iterates, config.seed);
            let report = billiard_case_report(&table, &observable, mean.mean)?;
            let params = SystemParams::Billiard {
                gamma_max: table.gamma_max(),
                perimeter: table.total_length(),
                cusp_positions: (0..table.cusp_count()).filter_map(|i| table.cusp_r(i)).collect(),
            };
            (System::Billiard { table, k0: *k0 }, mean, inducing, Some(report), params)
        }
    };
    let c = if alpha > 1.0 { mean.mean } else { 0.0 };
    let setup = Setup { system, observable, c, seed: config.seed, burn_in: config.burn_in };
    Ok((setup, CenteringInfo { c, mean, inducing_measure: inducing }, report, params))
}

/// Orbit averages of `φ` and of `1_Y` along one equilibrium orbit.
fn lsv_orbit_means(map: &LsvMap<f64>, observable: &ObservableSpec<f64>, iterates: u64, burn_in: usize, seed: u64) -> (MeanEstimate, MeanEstimate) {
    let mut rng = stream_rng(seed, AUX_STREAM_BASE);
    let mut x = map.equilibrium_sample(&mut rng, burn_in);
    let per_batch = (iterates / MEAN_BATCHES).max(1);
    let mut batch_phi = Vec::with_capacity(MEAN_BATCHES as usize);
    let mut batch_y = Vec::with_capacity(MEAN_BATCHES as usize);
    for _ in 0..MEAN_BATCHES {
        let (mut s, mut count, mut in_y) = (0.0, 0u64, 0u64);
        for _ in 0..per_batch {
            x = map.apply(x);
            let v = observable.eval_interval(x);
            if v.is_finite() {
                s += v;
                count += 1;
            }
            in_y += u64::from(x >= 0.5);
        }
        batch_phi.push(s / count.max(1) as f64);
        batch_y.push(in_y as f64 / per_batch as f64);
    }
    (summarize_batches(&batch_phi, per_batch), summarize_batches(&batch_y, per_batch))
}

fn summarize_batches(batch: &[f64], per_batch: u64) -> MeanEstimate {
    let k = batch.len() as f64;
    let mean = batch.iter().sum::<f64>() / k;
    let var = batch.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1.0);
    MeanEstimate { mean, stderr: (var / k).sqrt(), samples: per_batch * batch.len() as u64 }
}

/// `μ(φ)` from iid invariant samples and `μ(M)` from membership tests.
fn billiard_means(table: &BilliardTable, observable: &ObservableSpec<f64>, k0: u64, iterates: u64, seed: u64) -> (MeanEstimate, MeanEstimate) {
    let mut rng = stream_rng(seed, AUX_STREAM_BASE);
    let mean = batch_means(
        std::iter::from_fn(|| {
            let s = sinetheta_sample(table, &mut rng);
            Some(observable.eval_collision(s.r, s.theta))
        })
        .filter(|v| v.is_finite()),
        iterates,
        MEAN_BATCHES,
    );
    let mut rng = stream_rng(seed, AUX_STREAM_BASE + 1);
    let inducing = batch_means(
        std::iter::from_fn(|| {
            let s = sinetheta_sample(table, &mut rng);
            in_inducing_set(table, &s, k0).ok().map(|b| f64::from(u8::from(b)))
        }),
        INDUCING_MEASURE_SAMPLES.min(iterates),
        MEAN_BATCHES,
    );
    (mean, inducing)
}

/// Cusp integrals of `φ - μ(φ)` over the cusps of maximal flatness.
pub fn billiard_case_report(table: &BilliardTable, observable: &ObservableSpec<f64>, mean: f64) -> Result<CaseReport, HarnessError> {
    let beta_max = table.beta_max();
    let mut integrals = Vec::new();
    for i in 0..table.cusp_count() {
        let spec = table.cusp_spec(i).expect("cusp index in range");
        if (spec.beta - beta_max).abs() > 1e-12 {
            continue;
        }
        let r_i = table.cusp_r(i).expect("cusp index in range");
        let l = table.total_length();
        let psi = |theta: f64| {
            let f = |r: f64| observable.eval_collision(r.rem_euclid(l), theta) - mean;
            (boundary_limit(f, r_i, 1.0, 1e-3), boundary_limit(f, r_i, -1.0, 1e-3))
        };
        integrals.push(cusp_integrals(psi, spec.gamma()).map_err(|e| HarnessError::Internal(e.to_string()))?);
    }
    Ok(CaseReport::Billiard { integrals, vanishes_near_cusps: false })
}

/// Runs one replica, redrawing with a fresh stream on orbit failure.
fn quarantined<F>(replica: u64, mut attempt: F) -> (Result<Vec<f64>, Failure>, Vec<Failure>)
where
    F: FnMut(u64) -> Result<Vec<f64>, Failure>,
{
    const MAX_RETRIES: u64 = 16;
    let mut failures = Vec::new();
    for k in 0..=MAX_RETRIES {
        match attempt(replica + k * RETRY_STRIDE) {
            Ok(v) => return (Ok(v), failures),
            Err(e) => failures.push(e),
        }
    }
    let last = failures.pop().expect("at least one failure");
    (Err(last), failures)
}

/// Records `running` at every grid horizon reached by `step`.
struct GridRecorder<'a> {
    grid: &'a [u64],
    next: usize,
    out: Vec<f64>,
}

impl<'a> GridRecorder<'a> {
    fn new(grid: &'a [u64]) -> Self {
        Self { grid, next: 0, out: Vec::with_capacity(grid.len()) }
    }

    fn done(&self) -> bool {
        self.next == self.grid.len()
    }

    fn at(&mut self, step: u64, running: f64) {
        while !self.done() && self.grid[self.next] == step {
            self.out.push(running);
            self.next += 1;
        }
    }
}

fn full_replica(setup: &Setup, grid: &[u64], stream: u64) -> Result<Vec<f64>, Failure> {
    let mut rng = stream_rng(setup.seed, stream);
    let n_max = *grid.last().expect("non-empty grid");
    let mut rec = GridRecorder::new(grid);
    let mut s = 0.0;
    match &setup.system {
        System::Lsv(map) => {
            let mut x = map.equilibrium_sample(&mut rng, setup.burn_in);
            for j in 1..=n_max {
                x = map.apply(x);
                s += setup.observable.eval_interval(x) - setup.c;
                rec.at(j, s);
            }
        }
        System::Billiard { table, .. } => {
            let mut state = sinetheta_sample(table, &mut rng);
            for j in 1..=n_max {
                state = collide(table, &state).map_err(Failure::Billiard)?;
                s += setup.observable.eval_collision(state.r, state.theta) - setup.c;
                rec.at(j, s);
            }
        }
    }
    if !s.is_finite() {
        return Err(Failure::NonFinite);
    }
    Ok(rec.out)
}

fn induced_replica(setup: &Setup, grid: &[u64], stream: u64) -> Result<Vec<f64>, Failure> {
    let mut rng = stream_rng(setup.seed, INDUCED_STREAM_OFFSET + stream);
    let k_max = *grid.last().expect("non-empty grid");
    let mut rec = GridRecorder::new(grid);
    let mut s = 0.0;
    let c = setup.c;
    let obs = &setup.observable;
    match &setup.system {
        System::Lsv(map) => {
            let mut y = map.equilibrium_sample(&mut rng, setup.burn_in);
            // equilibrium conditioned on Y: run on to the next visit
            while y < 0.5 {
                y = map.apply(y);
            }
            for k in 1..=k_max {
                let (_, next, total) = map
                    .induced_sum(y, LSV_RETURN_CAP, |x| obs.eval_interval(x) - c)
                    .map_err(|_| Failure::ReturnCap)?;
                y = next;
                s += total;
                rec.at(k, s);
            }
        }
        System::Billiard { table, k0 } => {
            let mut orbit = billiard_induced_start(table, *k0, &mut rng)?;
            for k in 1..=k_max {
                let mut total = 0.0;
                orbit
                    .next_return(|st| total += obs.eval_collision(st.r, st.theta) - c)
                    .map_err(Failure::Billiard)?;
                s += total;
                rec.at(k, s);
            }
        }
    }
    if !s.is_finite() {
        return Err(Failure::NonFinite);
    }
    Ok(rec.out)
}

/// Invariant sample conditioned on `M`, by rejection.
fn billiard_induced_start<'a, R: Rng>(table: &'a BilliardTable, k0: u64, rng: &mut R) -> Result<InducedOrbit<'a>, Failure> {
    const MAX_REJECTIONS: usize = 100_000;
    for _ in 0..MAX_REJECTIONS {
        let s: CollisionState = sinetheta_sample(table, rng);
        match InducedOrbit::new(table, &s, k0, BILLIARD_RETURN_CAP) {
            Ok(orbit) => return Ok(orbit),
            Err(BilliardError::NotInInducingSet) => continue,
            Err(e) => return Err(Failure::Billiard(e)),
        }
    }
    Err(Failure::Billiard(BilliardError::NotInInducingSet))
}

fn run_route(
    setup: &Setup,
    grid: &[u64],
    route: Route,
    replicas: usize,
    meta: EnsembleMeta,
) -> Result<(SumEnsemble, Quarantine), HarnessError> {
    let results: Vec<_> = (0..replicas as u64)
        .into_par_iter()
        .map(|replica| {
            quarantined(replica, |stream| match route {
                Route::Full => full_replica(setup, grid, stream),
                Route::Induced => induced_replica(setup, grid, stream),
            })
        })
        .collect();
    let mut quarantine = Quarantine { replicas, ..Quarantine::default() };
    let mut rows = vec![Vec::with_capacity(replicas); grid.len()];
    for (replica, (result, failures)) in results.into_iter().enumerate() {
        failures.iter().for_each(|f| quarantine.record(f));
        match result {
            Ok(values) => rows.iter_mut().zip(values).for_each(|(row, v)| row.push(v)),
            Err(f) => {
                quarantine.record(&f);
                return Err(HarnessError::ReplicaFailed { replica, reason: format!("{f:?}") });
            }
        }
    }
    if quarantine.discard_fraction() > MAX_DISCARD_FRACTION {
        return Err(HarnessError::TooManyDiscarded { discarded: quarantine.discarded, replicas });
    }
    let ensemble = SumEnsemble::new(grid.to_vec(), rows, meta).map_err(|e| HarnessError::Internal(e.to_string()))?;
    Ok((ensemble, quarantine))
}

/// Induced horizons `⌊n μ(Y)⌉`, kept exactly geometric.
pub fn induced_grid(n_grid: &[u64], inducing_measure: f64) -> Result<Vec<u64>, HarnessError> {
    let k0 = (n_grid[0] as f64 * inducing_measure).round() as u64;
    if k0 == 0 || !(inducing_measure > 0.0 && inducing_measure <= 1.0) {
        return Err(HarnessError::InvalidConfig(format!(
            "induced horizon vanishes (n = {}, measure {inducing_measure})",
            n_grid[0]
        )));
    }
    Ok(n_grid.iter().map(|&n| k0 * n / n_grid[0]).collect())
}

fn standardized(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = DEFAULT_QUANTILE_PAIR;
    let iqr = quantile_sorted(&s, hi) - quantile_sorted(&s, lo);
    let m = quantile_sorted(&s, 0.5);
    values.iter().map(|v| (v - m) / iqr).collect()
}

/// Self-similarity at the largest doubling on the grid, and a KS comparison
/// of the location/scale-standardized terminal sums with stable draws.
pub fn distribution_checks(ensemble: &SumEnsemble, index: f64, skew: f64, seed: u64) -> Option<DistributionChecks> {
    let grid = ensemble.grid();
    let i = (0..grid.len() - 1).rev().find(|&i| grid[i + 1] == 2 * grid[i])?;
    let (a, b) = (&ensemble.rows()[i], &ensemble.rows()[i + 1]);
    let m = a.len();
    let self_similarity = self_similarity_check(a, b, index).ok()?;
    let oracle_n = 20 * m;
    let mut rng = stream_rng(seed, AUX_STREAM_BASE + 2);
    let oracle: Vec<f64> = (0..oracle_n).map(|_| sample_stable(index, skew, &mut rng)).collect();
    let terminal = ensemble.rows().last()?;
    let oracle_ks = ks_two_sample(&standardized(terminal), &standardized(&oracle)).ok()?;
    let ks_critical_ss = ks_critical_value(m, m, KS_LEVEL);
    let ks_critical = ks_critical_value(m, oracle_n, KS_LEVEL);
    Some(DistributionChecks {
        index,
        horizons: (grid[i], grid[i + 1]),
        self_similarity,
        oracle_skew: skew,
        oracle_ks,
        ks_critical,
        self_similarity_pass: self_similarity <= ks_critical_ss,
        oracle_pass: oracle_ks <= ks_critical,
    })
}

fn sign_or_zero(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    if v.iter().all(|&c| c > 0.0) {
        1.0
    } else if v.iter().all(|&c| c < 0.0) {
        -1.0
    } else {
        0.0
    }
}

/// Skewness of the predicted limit: the sign of whichever effect dominates.
fn predicted_skew(law: &PredictedLaw, observable: &ObservableSpec<f64>, report: Option<&CaseReport>) -> f64 {
    use crate::harness::CaseId::*;
    let pole_sign = sign_or_zero(observable.poles().iter().map(|p| p.coefficient));
    match law.case_id {
        Main1b | IntermB => match report {
            Some(CaseReport::LsvGap { gap, .. }) => gap.signum(),
            Some(CaseReport::Billiard { integrals, .. }) => integrals.iter().map(|i| i.i_psi).sum::<f64>().signum(),
            None => 0.0,
        },
        _ => pole_sign,
    }
}

fn describe(config: &ExperimentConfig) -> (String, String) {
    let system = match &config.system {
        SystemConfig::Lsv { gamma } => format!("lsv gamma={gamma}"),
        SystemConfig::Billiard { table, k0 } => format!("billiard table={table} k0={k0}"),
    };
    let poles: Vec<String> = config
        .poles
        .iter()
        .map(|p| format!("{}@({},{})", p.coefficient, p.at[0], p.at[1]))
        .collect();
    (system, format!("alpha={} poles=[{}] shift={}", config.alpha, poles.join(" "), config.shift))
}

/// Estimates the centering constants and selects the limit law of a config
/// without running any ensemble.
pub fn predict_config(config: &ExperimentConfig) -> Result<(PredictedLaw, CenteringInfo), HarnessError> {
    let (setup, centering, report, params) = build_setup(config)?;
    let law = predict_limit_law(&params, &setup.observable, report.as_ref())?;
    Ok((law, centering))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let (setup, centering, report, params) = build_setup(config)?;
    let predicted = predict_limit_law(&params, &setup.observable, report.as_ref()).map_err(|e| e.to_string());
    let routes: &[Route] = match config.mode {
        Mode::Full => &[Route::Full],
        Mode::Induced => &[Route::Induced],
        Mode::Both => &[Route::Full, Route::Induced],
    };
    let (system, observable) = describe(config);
    let mut runs = Vec::new();
    for &route in routes {
        let grid = match route {
            Route::Full => config.n_grid.clone(),
            Route::Induced => induced_grid(&config.n_grid, centering.inducing_measure.mean)?,
        };
        let meta = EnsembleMeta { system: system.clone(), observable: observable.clone(), seed: config.seed };
        let (ensemble, quarantine) = run_route(&setup, &grid, route, config.replicas, meta)?;
        let (fit, fit_error) = match scaling_exponent(&ensemble, DEFAULT_QUANTILE_PAIR) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(format!("degenerate exponent fit: {e}"))),
        };
        let checks = match (&predicted, fit) {
            (Ok(law), Some(_)) => law.stable_index.and_then(|index| {
                let skew = predicted_skew(law, &setup.observable, report.as_ref());
                distribution_checks(&ensemble, index, skew, config.seed)
            }),
            _ => None,
        };
        runs.push(EnsembleRun { route, ensemble, fit, fit_error, checks, quarantine });
    }
    Ok(ExperimentResult { config: config.clone(), predicted, centering, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftComparison {
    pub full: ExponentFit,
    pub induced: ExponentFit,
    /// `|θ̂_full - θ̂_induced| / sqrt(se_full² + se_induced²)`.
    pub z_score: f64,
    /// The same difference over replica-bootstrap standard errors.
    pub bootstrap_z_score: f64,
    pub agree: bool,
    /// Exponent used to rescale the terminal sums.
    pub rescale_exponent: f64,
    pub terminal_ks: f64,
    pub ks_critical: f64,
    pub inducing_measure: f64,
}

/// Fits the exponent along the ambient and the induced route and compares the
/// rescaled, median-aligned terminal distributions.
pub fn compare_induced_lifted(config: &ExperimentConfig) -> Result<(ExperimentResult, LiftComparison), HarnessError> {
    if config.mode != Mode::Both {
        return Err(HarnessError::InvalidConfig("compare_induced_lifted needs mode = both".into()));
    }
    let result = run_experiment(config)?;
    let fit_of = |route: Route| -> Result<(&EnsembleRun, ExponentFit), HarnessError> {
        let run = result.run(route).expect("both routes ran");
        let fit = run.fit.ok_or_else(|| {
            HarnessError::Degenerate(run.fit_error.clone().unwrap_or_else(|| "no exponent fit".into()))
        })?;
        Ok((run, fit))
    };
    let (full_run, full) = fit_of(Route::Full)?;
    let (induced_run, induced) = fit_of(Route::Induced)?;
    let joint = (full.stderr.powi(2) + induced.stderr.powi(2)).sqrt();
    let z_score = (full.theta_hat - induced.theta_hat).abs() / joint;
    let boot = |run: &EnsembleRun| {
        bootstrap_exponent_stderr(&run.ensemble, DEFAULT_QUANTILE_PAIR, BOOTSTRAP_RESAMPLES, config.seed)
            .map_err(|e| HarnessError::Internal(e.to_string()))
    };
    let bootstrap_joint = (boot(full_run)?.powi(2) + boot(induced_run)?.powi(2)).sqrt();
    let bootstrap_z_score = (full.theta_hat - induced.theta_hat).abs() / bootstrap_joint;
    let rescale_exponent = match &result.predicted {
        Ok(PredictedLaw { scaling_exponent: Some(e), .. }) => *e,
        _ => full.theta_hat,
    };
    let n_max = *config.n_grid.last().expect("validated grid") as f64;
    let scale = n_max.powf(-rescale_exponent);
    let aligned = |v: &[f64]| -> Vec<f64> {
        let m = median(v);
        v.iter().map(|x| (x - m) * scale).collect()
    };
    let a = aligned(full_run.ensemble.rows().last().expect("rows"));
    let b = aligned(induced_run.ensemble.rows().last().expect("rows"));
    let terminal_ks = ks_two_sample(&a, &b).map_err(|e| HarnessError::Internal(e.to_string()))?;
    let comparison = LiftComparison {
        full,
        induced,
        z_score,
        bootstrap_z_score,
        agree: z_score <= 2.0,
        rescale_exponent,
        terminal_ks,
        ks_critical: ks_critical_value(a.len(), b.len(), KS_LEVEL),
        inducing_measure: result.centering.inducing_measure.mean,
    };
    Ok((result, comparison))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{emit_report, PoleConfig, Report};

    fn small(gamma: f64, x0: f64, alpha: f64) -> ExperimentConfig {
        let mut c = ExperimentConfig::lsv(gamma, x0, alpha, vec![256, 512, 1024, 2048], 200, 11);
        c.mean_iterates = 200_000;
        c.burn_in = 1000;
        c
    }

    #[test]
    fn zero_observable_is_degenerate() {
        let mut c = small(0.6, 0.3, 1.25);
        c.poles = vec![PoleConfig { at: [0.3, 0.0], coefficient: 0.0 }];
        let r = run_experiment(&c).unwrap();
        let run = r.run(Route::Full).unwrap();
        assert!(run.ensemble.rows().iter().flatten().all(|&v| v == 0.0));
        assert!(run.fit.is_none() && run.fit_error.is_some());
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let c = small(0.6, 0.3, 1.25).with_mode(Mode::Both);
        let csv = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let r = pool.install(|| run_experiment(&c)).unwrap();
            r.runs
                .iter()
                .map(|run| {
                    let mut buf = Vec::new();
                    run.ensemble.write_csv(&mut buf).unwrap();
                    buf
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(csv(1), csv(3));
    }

    /// Induced sums along an orbit equal the ambient sums at the return times.
    #[test]
    fn induced_sums_match_ambient_sums_at_returns() {
        let map = LsvMap::new(0.7).unwrap();
        let obs = ObservableSpec::interval_pole(0.3, 1.25).unwrap();
        let c = 2.0;
        let mut y = 0.8123;
        let mut x = y;
        let (mut induced, mut ambient, mut t) = (0.0f64, 0.0f64, 0u64);
        for _ in 0..500 {
            let (r, next, total) = map.induced_sum(y, LSV_RETURN_CAP, |z| obs.eval_interval(z) - c).unwrap();
            y = next;
            induced += total;
            for _ in 0..r {
                x = map.apply(x);
                ambient += obs.eval_interval(x) - c;
            }
            t += r;
            assert!((induced - ambient).abs() <= 1e-9 * ambient.abs().max(1.0), "t = {t}");
        }
        assert!(t > 500);
    }

    #[test]
    fn induced_grid_is_geometric() {
        assert_eq!(induced_grid(&[1000, 2000, 4000, 8000], 0.3).unwrap(), vec![300, 600, 1200, 2400]);
        assert!(induced_grid(&[1, 2, 4, 8], 0.3).is_err());
    }

    #[test]
    fn lifted_comparison_and_report() {
        let c = small(0.6, 0.3, 1.25).with_mode(Mode::Both);
        let (result, lift) = compare_induced_lifted(&c).unwrap();
        assert!(lift.full.theta_hat.is_finite() && lift.induced.theta_hat.is_finite());
        assert!(lift.inducing_measure > 0.0 && lift.inducing_measure < 1.0);
        assert_eq!(result.predicted.as_ref().unwrap().case_id, crate::harness::CaseId::IntermA);
        assert!(compare_induced_lifted(&small(0.6, 0.3, 1.25)).is_err(), "mode must be both");

        let dir = tempfile::tempdir().unwrap();
        let report = Report { experiments: vec![result], lifts: vec![lift], ..Report::default() };
        let files = emit_report(&report, dir.path()).unwrap();
        assert!(files.iter().any(|f| f.ends_with("ensemble_0_induced.csv")));
        assert!(files.iter().any(|f| f.ends_with("exponent_fit_0_full.dat")));
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["discarded_replicas"], 0);
        assert_eq!(summary["grazing_orbits"], 0);
        assert_eq!(summary["status"], "ok");
    }

    #[test]
    fn empty_report_says_no_data() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&Report::default(), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        assert!(text.contains("\"no-data\""));
    }

    #[test]
    fn billiard_induced_route_runs() {
        let mut c = ExperimentConfig::parse(
            "system = billiard\nk0 = 20\nalpha = 0.8\npole = 1.0,1.2:1\nn_grid = 64,128,256,512\nreplicas = 200\nseed = 3\nmode = both\nmean_iterates = 20000",
        )
        .unwrap();
        c.burn_in = 0;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.predicted.as_ref().unwrap().case_id, crate::harness::CaseId::Main1a);
        for run in &r.runs {
            assert_eq!(run.ensemble.replicas(), 200);
            assert!(run.quarantine.discard_fraction() <= MAX_DISCARD_FRACTION);
        }
    }
}
