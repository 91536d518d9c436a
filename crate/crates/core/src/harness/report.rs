//! Report files: ensemble CSVs, a JSON summary and two-column plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::harness::{ExperimentConfig, ExperimentResult, HarnessError, LiftComparison, Route};
use crate::stats::{quantile_sorted, DEFAULT_QUANTILE_PAIR};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceRule {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Two-column series written as `<name>.dat`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub name: String,
    pub columns: [String; 2],
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub experiments: Vec<ExperimentResult>,
    pub lifts: Vec<LiftComparison>,
    pub rules: Vec<AcceptanceRule>,
    pub plots: Vec<PlotData>,
    /// Free-form sections merged into the summary.
    pub extra: BTreeMap<String, Value>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.experiments.is_empty() && self.lifts.is_empty() && self.rules.is_empty() && self.plots.is_empty() && self.extra.is_empty()
    }
}

/// FNV-1a hash of the canonical config text.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config.to_text().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn route_name(route: Route) -> &'static str {
    match route {
        Route::Full => "full",
        Route::Induced => "induced",
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn spread_series(result: &ExperimentResult, route: Route) -> Option<PlotData> {
    let run = result.run(route)?;
    let (lo, hi) = DEFAULT_QUANTILE_PAIR;
    let points = run
        .ensemble
        .grid()
        .iter()
        .zip(run.ensemble.rows())
        .map(|(&n, row)| {
            let mut s = row.clone();
            s.sort_by(f64::total_cmp);
            ((n as f64).ln(), (quantile_sorted(&s, hi) - quantile_sorted(&s, lo)).ln())
        })
        .collect();
    Some(PlotData { name: String::new(), columns: ["log_n".into(), "log_spread".into()], points })
}

fn experiment_json(result: &ExperimentResult, files: &[String]) -> Value {
    let runs: Vec<Value> = result
        .runs
        .iter()
        .map(|r| {
            json!({
                "route": r.route,
                "replicas": r.ensemble.replicas(),
                "grid": r.ensemble.grid(),
                "fit": r.fit,
                "fit_error": r.fit_error,
                "checks": r.checks,
                "quarantine": r.quarantine,
            })
        })
        .collect();
    json!({
        "config_hash": config_hash(&result.config),
        "config": result.config,
        "predicted": match &result.predicted {
            Ok(law) => json!(law),
            Err(e) => json!({ "refused": e }),
        },
        "centering": result.centering,
        "runs": runs,
        "files": files,
    })
}

/// Writes the report under `out` and returns the paths written. Output is a
/// pure function of the report contents.
pub fn emit_report(report: &Report, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut written = Vec::new();
    let summary_path = out.join("summary.json");
    if report.is_empty() {
        let text = serde_json::to_string_pretty(&json!({ "status": "no-data" })).expect("static json");
        fs::write(&summary_path, text + "\n").map_err(|e| io_err(&summary_path, e))?;
        written.push(summary_path);
        return Ok(written);
    }

    let mut plots = report.plots.clone();
    let mut experiments = Vec::new();
    let (mut discarded, mut grazing) = (0usize, 0usize);
    for (i, result) in report.experiments.iter().enumerate() {
        let mut files = Vec::new();
        for run in &result.runs {
            discarded += run.quarantine.discarded;
            grazing += run.quarantine.grazing;
            let name = format!("ensemble_{i}_{}.csv", route_name(run.route));
            let path = out.join(&name);
            let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = BufWriter::new(file);
            run.ensemble.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
            written.push(path);
            files.push(name);
            if let Some(mut p) = spread_series(result, run.route) {
                p.name = format!("exponent_fit_{i}_{}", route_name(run.route));
                plots.push(p);
            }
        }
        experiments.push(experiment_json(result, &files));
    }

    let mut plot_files = Vec::new();
    for p in &plots {
        let name = format!("{}.dat", p.name);
        let path = out.join(&name);
        let mut text = format!("# {} {}\n", p.columns[0], p.columns[1]);
        for (x, y) in &p.points {
            text.push_str(&format!("{x:?} {y:?}\n"));
        }
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        written.push(path);
        plot_files.push(name);
    }

    let passed = report.rules.iter().all(|r| r.passed);
    let mut summary = json!({
        "status": if report.rules.is_empty() { "ok" } else if passed { "pass" } else { "fail" },
        "experiments": experiments,
        "lift_comparisons": report.lifts,
        "rules": report.rules,
        "discarded_replicas": discarded,
        "grazing_orbits": grazing,
        "plot_files": plot_files,
    });
    if let Value::Object(map) = &mut summary {
        for (k, v) in &report.extra {
            map.insert(k.clone(), v.clone());
        }
    }
    let text = serde_json::to_string_pretty(&summary).map_err(|e| HarnessError::Internal(e.to_string()))?;
    fs::write(&summary_path, text + "\n").map_err(|e| io_err(&summary_path, e))?;
    written.push(summary_path);
    Ok(written)
}
