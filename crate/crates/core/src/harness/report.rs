use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::ReportBundle;
use crate::error::{Error, Result};
use crate::estimation::ATEReport;
use crate::fmt17;

pub const REPORT_SCHEMA: &str = "ate-harness/report/v1";
pub const REPORT_FILE: &str = "report.json";
pub const RUNS_FILE: &str = "runs.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// On-disk form of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub tool_version: String,
    pub report: ATEReport,
}

impl ReportDocument {
    pub fn new(report: ATEReport) -> Self {
        ReportDocument {
            schema: REPORT_SCHEMA.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            report,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn render_report_json(doc: &ReportDocument) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_report_json(text: &str) -> Result<ReportDocument> {
    let doc: ReportDocument = serde_json::from_str(text)?;
    if doc.schema != REPORT_SCHEMA {
        return Err(Error::Contract(format!("unsupported report schema `{}`", doc.schema)));
    }
    Ok(doc)
}

/// One row per run: system, arm, every method variable, split, sizes, mean loss.
pub fn render_runs_csv(bundle: &ReportBundle) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["system_id".to_string(), "arm".to_string()];
    header.extend(bundle.variables.iter().cloned());
    header.extend(["split_seed", "N", "M", "mean_loss"].map(String::from));
    w.write_record(&header)?;
    for r in &bundle.records {
        let mut row = vec![r.system_id.to_string(), r.arm.to_string()];
        row.extend(
            bundle
                .variables
                .iter()
                .map(|v| r.full_values.get(v).cloned().unwrap_or_default()),
        );
        row.push(r.split_seed.to_string());
        row.push(r.n_train.to_string());
        row.push(r.n_test.to_string());
        row.push(fmt17::format(r.mean_loss));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `report.json`, `runs.csv` and `config.toml` into `dir`.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (REPORT_FILE, render_report_json(&ReportDocument::new(bundle.report.clone()))?),
        (RUNS_FILE, render_runs_csv(bundle)?),
        (CONFIG_FILE, bundle.config_echo.clone()),
    ];
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Short human-readable summary of a report.
pub fn render_summary(report: &ATEReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "design      {}", report.design);
    let _ = writeln!(s, "metric      {} ({:?})", report.metric.metric_id, report.metric.orientation);
    let _ = writeln!(
        s,
        "treatment   {}  EGE {:.6} over {} systems",
        report.treatment_label, report.ege_treatment.value, report.ege_treatment.systems
    );
    let _ = writeln!(
        s,
        "control     {}  EGE {:.6} over {} systems",
        report.control_label, report.ege_control.value, report.ege_control.systems
    );
    let _ = writeln!(s, "ATE         {:+.6}", report.ate);
    if let Some(ci) = &report.confidence_interval {
        let _ = writeln!(
            s,
            "interval    [{:+.6}, {:+.6}] at {:.0}% ({:?})",
            ci.lo,
            ci.hi,
            ci.level * 100.0,
            ci.method
        );
    }
    for t in &report.tests {
        let _ = writeln!(
            s,
            "test        {}: p = {:.4} (K = {}{}), {}",
            t.test_id,
            t.p_value,
            t.k,
            if t.exhaustive { ", exact" } else { "" },
            if t.reject { "reject" } else { "retain" }
        );
    }
    if report.degenerate_runs > 0 {
        let _ = writeln!(s, "degenerate  {} runs fell back to the majority class", report.degenerate_runs);
    }
    let _ = writeln!(s, "master seed {}", report.master_seed);
    s
}
