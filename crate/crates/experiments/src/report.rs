//! CSV report files.

use std::path::{Path, PathBuf};

use crate::compare::ComparisonReport;
use crate::critical::CriticalRow;
use crate::error::ExperimentError;
use crate::sensitivity::{ScenarioOutcome, SensitivityReport};

fn to_string(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

fn row<const N: usize>(w: &mut csv::Writer<Vec<u8>>, fields: [String; N]) {
    w.write_record(&fields).expect("writing to memory cannot fail");
}

/// `outage,overloaded_line,loading_pct`, percentages to 2 decimals.
pub fn table1_csv(rows: &[CriticalRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    row(&mut w, ["outage", "overloaded_line", "loading_pct"].map(String::from));
    for r in rows {
        row(
            &mut w,
            [r.outage.to_string(), r.overloaded.to_string(), format!("{:.2}", r.loading_pct)],
        );
    }
    to_string(w)
}

pub fn table2_csv(report: &ComparisonReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    row(
        &mut w,
        ["formulation", "cost", "increase_pct", "failures", "total_shed_mw", "error"].map(String::from),
    );
    for r in &report.rows {
        let (cost, inc) = match r.cost() {
            Some(c) => (
                format!("{c:.1}"),
                report.increase_pct(r.kind).map_or(String::new(), |p| format!("{p:.2}")),
            ),
            None => (String::new(), String::new()),
        };
        let err = r.solution.as_ref().err().cloned().unwrap_or_default();
        row(
            &mut w,
            [
                r.kind.to_string(),
                cost,
                inc,
                r.failures().to_string(),
                format!("{:.1}", r.total_shed_mw()),
                err,
            ],
        );
    }
    to_string(w)
}

/// One row per scenario and protected outage; discarded and failed
/// scenarios get a single row with an empty outage.
pub fn sensitivity_csv(report: &SensitivityReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    row(
        &mut w,
        [
            "scenario", "feasible", "cost", "outage", "triggered", "failed", "shed_mw", "failure_mode", "marked",
            "error",
        ]
        .map(String::from),
    );
    for s in &report.rows {
        match &s.outcome {
            ScenarioOutcome::Solved { cost, cascades } => {
                for c in cascades {
                    row(
                        &mut w,
                        [
                            s.index.to_string(),
                            "true".into(),
                            format!("{cost:.2}"),
                            c.outage.to_string(),
                            c.triggered.to_string(),
                            c.failed.to_string(),
                            format!("{:.2}", c.shed_mw),
                            c.mode.map_or(String::new(), |m| m.name().to_string()),
                            c.marked.to_string(),
                            c.error.clone().unwrap_or_default(),
                        ],
                    );
                }
            }
            other => {
                let err = match other {
                    ScenarioOutcome::Error(e) => e.clone(),
                    _ => String::new(),
                };
                let mut f: [String; 10] = Default::default();
                f[0] = s.index.to_string();
                f[1] = "false".into();
                f[9] = err;
                row(&mut w, f);
            }
        }
    }
    to_string(w)
}

/// Plain-text summary of the aggregate counts.
pub fn sensitivity_summary(report: &SensitivityReport) -> String {
    let a = &report.aggregate;
    format!(
        "scenarios {} feasible {} discarded {} errors {} failing {} failed_cascades {} triggered {} shed_mw {:.1} worst_mw {:.1}\n",
        a.scenarios,
        a.feasible,
        a.discarded,
        a.errors,
        a.failing_scenarios,
        a.failed_cascades,
        a.triggered_cascades,
        a.total_shed_mw,
        a.worst_shed_mw
    )
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_report(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir.display(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| ExperimentError::io(path.display(), e))?;
    Ok(path)
}
