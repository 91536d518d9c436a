use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use stablelab::harness::diagnostics::{
    billiard_geometry_checks, billiard_return_tail, cusp_trapping, karamata_experiment, max_sum_experiment,
    poisson_experiment, small_values_experiment, InducedPoleSystem, ParetoSource,
};
use stablelab::harness::{
    compare_induced_lifted, config_hash, emit_report, load_table, predict_config, run_experiment, AcceptanceRule, ExperimentConfig,
    Mode, PlotData, Report, SystemConfig,
};
use stablelab::stats::{scaling_exponent, EnsembleMeta, KaramataItem, SumEnsemble, DEFAULT_QUANTILE_PAIR};
use stablelab::HarnessError;

/// Monte Carlo laboratory for stable limits of heavy-tailed Birkhoff sums.
#[derive(Parser)]
#[command(name = "stablelab", version)]
struct Cli {
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the predicted limit law of a config.
    Predict,
    /// Run the ensembles of a config and fit the scaling exponent.
    Run {
        /// Allowed distance between fitted and predicted exponent.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Compare the ambient and the induced route of a config.
    Induced,
    /// Point-process diagnostics of the induced LSV system.
    Pointprocess {
        #[arg(long, value_enum, default_value_t = PointExperiment::All)]
        experiment: PointExperiment,
        #[arg(long, default_value_t = 0.6)]
        gamma: f64,
        /// Pole position; must lie in (1/2, 1).
        #[arg(long, default_value_t = 0.7)]
        x0: f64,
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        /// Replicas of the iid stable control of the max-sum diagnostic.
        #[arg(long, default_value_t = 250)]
        control_replicas: usize,
        /// Orbit length of the exceedance and small-values experiments.
        #[arg(long, default_value_t = 1 << 16)]
        n: usize,
    },
    /// Karamata ratios on exact Pareto data.
    Karamata {
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        #[arg(long, default_value_t = 250_000_000)]
        samples: u64,
        /// Use iid draws instead of the noise-free cell-mean sample.
        #[arg(long)]
        iid: bool,
    },
    /// Geometry, invariance and return-time checks of a billiard table.
    BilliardCheck {
        #[arg(long, default_value = "machta3")]
        table: String,
        #[arg(long, default_value_t = 100)]
        k0: u64,
        #[arg(long, default_value_t = 10_000_000)]
        returns: u64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Also measure cusp trapping times against cusp flatness.
        #[arg(long)]
        trapping: bool,
    },
    /// Re-fit the ensemble CSVs found in the output directory.
    Report,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PointExperiment {
    Poisson,
    SmallValues,
    MaxSum,
    All,
}

struct Settings {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Settings {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = self.config.clone().context("this subcommand needs --config")?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        Ok(config)
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.config.as_ref().map(|c| c.seed)).unwrap_or(1)
    }

    fn out(&self) -> PathBuf {
        self.out
            .clone()
            .or(self.config.as_ref().map(|c| c.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn rule(name: &str, passed: bool, detail: String) -> AcceptanceRule {
    AcceptanceRule { name: name.into(), passed, detail }
}

fn finish(report: &Report, out: &Path) -> Result<bool> {
    let written = emit_report(report, out)?;
    for r in &report.rules {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(report.rules.iter().all(|r| r.passed))
}

fn predict(settings: &Settings) -> Result<bool> {
    let config = settings.config()?;
    let (law, centering) = predict_config(&config)?;
    let summary = json!({
        "config_hash": config_hash(&config),
        "predicted": law,
        "centering": centering,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(true)
}

fn run(settings: &Settings, tolerance: f64) -> Result<bool> {
    let config = settings.config()?;
    let result = run_experiment(&config)?;
    let mut rules = Vec::new();
    let exponent = result.predicted.as_ref().ok().and_then(|law| law.scaling_exponent);
    for run in &result.runs {
        let route = format!("{:?}", run.route).to_lowercase();
        match (run.fit, exponent) {
            (Some(fit), Some(e)) => rules.push(rule(
                &format!("exponent_{route}"),
                fit.within(e, tolerance),
                format!("theta_hat = {:.4} ± {:.4}, predicted {e:.4}, tolerance {tolerance}", fit.theta_hat, fit.stderr),
            )),
            (fit, _) => println!(
                "{route}: fit {:?}, no exponent asserted ({})",
                fit.map(|f| f.theta_hat),
                run.fit_error.clone().unwrap_or_else(|| "no prediction".into())
            ),
        }
        if let Some(checks) = &run.checks {
            rules.push(rule(
                &format!("self_similarity_{route}"),
                checks.self_similarity_pass,
                format!("KS {:.4} at index {:.4}", checks.self_similarity, checks.index),
            ));
        }
    }
    let report = Report { experiments: vec![result], rules, ..Report::default() };
    finish(&report, &config.out)
}

fn induced(settings: &Settings) -> Result<bool> {
    let config = settings.config()?.with_mode(Mode::Both);
    let (result, lift) = compare_induced_lifted(&config)?;
    let rules = vec![rule(
        "lift_agreement",
        lift.agree,
        format!(
            "full {:.4} ± {:.4}, induced {:.4} ± {:.4}, z = {:.2}",
            lift.full.theta_hat, lift.full.stderr, lift.induced.theta_hat, lift.induced.stderr, lift.z_score
        ),
    )];
    let report = Report { experiments: vec![result], lifts: vec![lift], rules, ..Report::default() };
    finish(&report, &config.out)
}

#[allow(clippy::too_many_arguments)]
fn pointprocess(
    settings: &Settings,
    experiment: PointExperiment,
    system: InducedPoleSystem,
    replicas: usize,
    control_replicas: usize,
    n: usize,
) -> Result<bool> {
    const CALIBRATION: usize = 10_000_000;
    const SMALL_VALUES_ORBIT: usize = 10_000_000;
    const CENTER_LEN: u64 = 100_000_000;
    let seed = settings.seed();
    let mut report = Report::default();
    let wants = |e: PointExperiment| experiment == e || experiment == PointExperiment::All;
    if wants(PointExperiment::Poisson) {
        let p = poisson_experiment(system, replicas, n, &[1.0, 2.0, 4.0, 8.0], 0.25, CALIBRATION, seed)?;
        report.rules.push(rule(
            "poisson_dispersion",
            p.dispersion.contains_one(),
            format!("ratio {:.4}, CI ({:.4}, {:.4})", p.dispersion.ratio, p.dispersion.ci.0, p.dispersion.ci.1),
        ));
        let slope = p.intensity.fit.slope;
        report.rules.push(rule(
            "intensity_slope",
            (slope + system.alpha).abs() <= 0.15,
            format!("slope {slope:.4}, expected {:.4}", -system.alpha),
        ));
        report.plots.push(PlotData {
            name: "poisson_intensity".into(),
            columns: ["log_mark".into(), "log_mean_count".into()],
            points: p.intensity.marks.iter().zip(&p.intensity.mean_counts).map(|(m, c)| (m.ln(), c.ln())).collect(),
        });
        report.extra.insert("poisson".into(), serde_json::to_value(&p)?);
    }
    if wants(PointExperiment::SmallValues) {
        let s = small_values_experiment(system, SMALL_VALUES_ORBIT, n, &[0.4, 0.2, 0.1, 0.05], seed)?;
        report.rules.push(rule("small_values_monotone", s.non_increasing(), format!("{:?}", s.estimates)));
        let control = s.iid_control.iter().cloned().fold(0.0, f64::max);
        report.rules.push(rule("small_values_iid_control", control < 1e-2, format!("max {control:.2e}")));
        report.extra.insert("small_values".into(), serde_json::to_value(&s)?);
    }
    if wants(PointExperiment::MaxSum) {
        let grid: Vec<usize> = (12..=20).map(|k| 1 << k).collect();
        let m = max_sum_experiment(system, 0.1, &grid, replicas, control_replicas, CENTER_LEN, seed)?;
        report.rules.push(rule("max_sum_decreasing", m.decreasing(), format!("{:?}", m.medians)));
        report.rules.push(rule(
            "max_sum_control_flat",
            m.control_flat(),
            format!("slope {:.4} ± {:.4}", m.control_fit.slope, m.control_fit.slope_stderr),
        ));
        report.plots.push(PlotData {
            name: "max_sum_medians".into(),
            columns: ["log_n".into(), "log_median".into()],
            points: grid.iter().zip(&m.medians).map(|(&n, v)| ((n as f64).ln(), v.ln())).collect(),
        });
        report.extra.insert("max_sum".into(), serde_json::to_value(&m)?);
    }
    finish(&report, &settings.out())
}

fn karamata(settings: &Settings, alpha: f64, samples: u64, iid: bool) -> Result<bool> {
    let eps = [0.5, 1.0, 2.0];
    let n_grid = [1e4, 1e5, 1e6];
    let source = if iid { ParetoSource::Iid { seed: settings.seed() } } else { ParetoSource::CellMeans };
    let table = karamata_experiment(alpha, samples, &eps, &n_grid, source)?;
    // the residual rules apply at the largest horizon; smaller ones show the decay
    let n_max = n_grid[n_grid.len() - 1];
    let worst = table
        .rows
        .iter()
        .filter(|r| r.n == n_max && !r.insufficient)
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    let at_one = table
        .rows_for(KaramataItem::TailCount)
        .filter(|r| r.n == n_max && r.eps == 1.0 && !r.insufficient)
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    let mut report = Report::default();
    report.rules.push(rule("karamata_residuals", worst < 0.05, format!("max residual {worst:.4} at n = {n_max:e}")));
    report.rules.push(rule("karamata_tail_count_at_one", at_one < 0.02, format!("residual {at_one:.2e}")));
    report.extra.insert("karamata".into(), serde_json::to_value(&table)?);
    finish(&report, &settings.out())
}

fn billiard_check(settings: &Settings, table_name: &str, k0: u64, returns: u64, samples: usize, trapping: bool) -> Result<bool> {
    let (table_name, k0) = match settings.config.as_ref().map(|c| &c.system) {
        Some(SystemConfig::Billiard { table, k0 }) => (table.as_str(), *k0),
        _ => (table_name, k0),
    };
    let table = load_table(table_name)?;
    let seed = settings.seed();
    let geometry = billiard_geometry_checks(&table, samples, 20, seed);
    let mut report = Report::default();
    report.rules.push(rule(
        "speed_preservation",
        geometry.max_speed_error <= 1e-12,
        format!("max error {:.2e}", geometry.max_speed_error),
    ));
    report.rules.push(rule(
        "time_reversal",
        geometry.max_reversal_error <= 1e-9,
        format!("max error {:.2e}", geometry.max_reversal_error),
    ));
    report.rules.push(rule(
        "measure_invariance",
        geometry.chi2_p_value >= 0.01,
        format!("chi2 = {:.1} on {} dof, p = {:.3}", geometry.chi2, geometry.chi2_dof, geometry.chi2_p_value),
    ));
    let tail = billiard_return_tail(&table, k0, returns, seed)?;
    let gamma = table.gamma_max();
    report.rules.push(rule(
        "return_tail_excludes_gamma",
        tail.fit.excludes(gamma),
        format!(
            "index {:.4}, CI ({:.4}, {:.4}), 1/gamma = {:.4}",
            tail.fit.index,
            tail.fit.ci.0,
            tail.fit.ci.1,
            1.0 / gamma
        ),
    ));
    report.extra.insert("geometry".into(), serde_json::to_value(&geometry)?);
    report.extra.insert("return_tail".into(), serde_json::to_value(&tail)?);
    if trapping {
        let rows = cusp_trapping(&[2.5, 3.0, 4.0], 200, seed)?;
        let monotone = rows.windows(2).all(|w| w[1].mean_run > w[0].mean_run);
        report.rules.push(rule("trapping_monotone", monotone, format!("{:?}", rows.iter().map(|r| r.mean_run).collect::<Vec<_>>())));
        report.extra.insert("trapping".into(), serde_json::to_value(&rows)?);
    }
    finish(&report, &settings.out())
}

fn refit(settings: &Settings) -> Result<bool> {
    let out = settings.out();
    let mut entries: Vec<PathBuf> = fs::read_dir(&out)
        .with_context(|| format!("reading {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ensemble_") && n.ends_with(".csv"))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!(HarnessError::InvalidConfig(format!("no ensemble CSVs in {}", out.display())));
    }
    let mut fits = BTreeMap::new();
    for path in &entries {
        let text = fs::read_to_string(path)?;
        let ensemble = SumEnsemble::read_csv(&text, EnsembleMeta::default())
            .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let fit = scaling_exponent(&ensemble, DEFAULT_QUANTILE_PAIR);
        match &fit {
            Ok(f) => println!("{name}: theta_hat = {:.4} ± {:.4} (R² {:.4})", f.theta_hat, f.stderr, f.r_squared),
            Err(e) => println!("{name}: {e}"),
        }
        fits.insert(name, fit.map_or_else(|e| json!({ "error": e.to_string() }), |f| json!(f)));
    }
    let path = out.join("refit.json");
    fs::write(&path, serde_json::to_string_pretty(&fits)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(true)
}

fn dispatch(cli: Cli) -> Result<bool> {
    let config = cli
        .config
        .as_deref()
        .map(ExperimentConfig::load)
        .transpose()
        .map_err(|e| match e {
            HarnessError::Io(m) => HarnessError::InvalidConfig(m),
            e => e,
        })?;
    let settings = Settings { config, seed: cli.seed, out: cli.out };
    match cli.command {
        Command::Predict => predict(&settings),
        Command::Run { tolerance } => run(&settings, tolerance),
        Command::Induced => induced(&settings),
        Command::Pointprocess { experiment, gamma, x0, alpha, replicas, control_replicas, n } => {
            let (gamma, x0, alpha) = match settings.config.as_ref() {
                Some(c) => match (&c.system, c.poles.first()) {
                    (SystemConfig::Lsv { gamma }, Some(p)) => (*gamma, p.at[0], c.alpha),
                    _ => bail!(HarnessError::InvalidConfig("pointprocess needs an lsv config with a pole".into())),
                },
                None => (gamma, x0, alpha),
            };
            let replicas = settings.config.as_ref().map_or(replicas, |c| c.replicas);
            pointprocess(&settings, experiment, InducedPoleSystem { gamma, x0, alpha }, replicas, control_replicas, n)
        }
        Command::Karamata { alpha, samples, iid } => {
            let alpha = settings.config.as_ref().map_or(alpha, |c| c.alpha);
            karamata(&settings, alpha, samples, iid)
        }
        Command::BilliardCheck { table, k0, returns, samples, trapping } => {
            billiard_check(&settings, &table, k0, returns, samples, trapping)
        }
        Command::Report => refit(&settings),
    }
}

/// 0 pass, 1 acceptance failure or run error, 2 invalid input.
fn exit_code(outcome: &Result<bool>) -> u8 {
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => match e.downcast_ref::<HarnessError>() {
            Some(h) if !h.is_invalid_input() => 1,
            _ => 2,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = dispatch(cli);
    if let Err(e) = &outcome {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(exit_code(&outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> String {
        format!("{}/../../configs/smoke.conf", env!("CARGO_MANIFEST_DIR"))
    }

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("stablelab").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let c = cli(&["run", "--config", "a.conf", "--seed", "3", "--threads", "2", "--tolerance", "0.1"]);
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.threads, Some(2));
        assert!(matches!(c.command, Command::Run { tolerance } if tolerance == 0.1));
    }

    #[test]
    fn predict_smoke_config() {
        let outcome = dispatch(cli(&["predict", "--config", &smoke_config()]));
        assert_eq!(exit_code(&outcome), 0);
    }

    #[test]
    fn run_writes_report_and_report_refits_it() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let outcome = dispatch(cli(&["run", "--config", &smoke_config(), "--out", out]));
        assert!(outcome.is_ok());
        assert!(dir.path().join("summary.json").exists());
        assert!(dir.path().join("ensemble_0_full.csv").exists());
        let outcome = dispatch(cli(&["report", "--out", out]));
        assert_eq!(exit_code(&outcome), 0);
        assert!(dir.path().join("refit.json").exists());
    }

    #[test]
    fn boundary_config_is_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boundary.conf");
        let text = fs::read_to_string(smoke_config()).unwrap().replace("gamma = 0.6", "gamma = 0.8");
        fs::write(&path, text).unwrap();
        let outcome = dispatch(cli(&["predict", "--config", path.to_str().unwrap()]));
        assert_eq!(exit_code(&outcome), 2);
    }

    #[test]
    fn missing_config_and_empty_report_are_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(exit_code(&dispatch(cli(&["run"]))), 2);
        assert_eq!(exit_code(&dispatch(cli(&["report", "--out", dir.path().to_str().unwrap()]))), 2);
        assert_eq!(exit_code(&dispatch(cli(&["run", "--config", "/nonexistent.conf"]))), 2);
    }

    #[test]
    fn karamata_cell_means_pass() {
        let dir = tempfile::tempdir().unwrap();
        let args = ["karamata", "--samples", "20000000", "--out", dir.path().to_str().unwrap()];
        let outcome = dispatch(cli(&args));
        assert_eq!(exit_code(&outcome), 0, "{outcome:?}");
    }
}
