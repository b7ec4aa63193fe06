//! CSV and JSON serialisation of run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::experiment::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub const CSV_HEADER: &str = "round,mta,asr,n_flagged,n_rescued,degenerate,critical_layers";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn csv_text<R: Serialize>(header: &str, rows: impl IntoIterator<Item = R>) -> Result<String, SimError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(',')).map_err(|e| SimError::Serialize(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| SimError::Serialize(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Serialize(e.to_string()))
}

/// Per-round rows plus one trailing `# summary` line. Contains nothing
/// time-dependent, so equal runs give byte-identical output.
pub fn to_csv(report: &RunReport) -> Result<String, SimError> {
    let rows = report.rounds.iter().map(|r| {
        (
            r.round,
            format!("{:.6}", r.mta),
            format!("{:.6}", r.asr),
            r.n_flagged,
            r.n_rescued,
            r.degenerate,
            r.critical_layers.join(";"),
        )
    });
    let mut out = csv_text(CSV_HEADER, rows)?;
    let _ = writeln!(
        out,
        "# summary tpr={},fpr={},mcc={},config_hash={},seed={}",
        opt(report.tpr),
        opt(report.fpr),
        opt(report.mcc),
        report.config_hash,
        report.seed
    );
    Ok(out)
}

pub fn to_json(report: &RunReport) -> Result<String, SimError> {
    serde_json::to_string_pretty(report).map_err(|e| SimError::Serialize(e.to_string()))
}

pub fn from_json(text: &str) -> Result<RunReport, SimError> {
    serde_json::from_str(text).map_err(|e| SimError::Serialize(e.to_string()))
}

pub const SUMMARY_HEADER: &str = "label,seed,final_mta,final_asr,tpr,fpr,mcc,config_hash";

/// One row per run: the sweep/ablation overview.
pub fn summary_csv(reports: &[RunReport]) -> Result<String, SimError> {
    let rows = reports.iter().map(|r| {
        (
            r.label.as_deref().unwrap_or(""),
            r.seed,
            format!("{:.6}", r.final_mta()),
            format!("{:.6}", r.final_asr()),
            opt(r.tpr),
            opt(r.fpr),
            opt(r.mcc),
            r.config_hash.as_str(),
        )
    });
    csv_text(SUMMARY_HEADER, rows)
}

fn write(path: &Path, text: &str) -> Result<(), SimError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| SimError::Io { path: path.to_path_buf(), source })
}

pub fn emit_report(report: &RunReport, path: &Path, format: Format) -> Result<(), SimError> {
    let text = match format {
        Format::Csv => to_csv(report)?,
        Format::Json => to_json(report)?,
    };
    write(path, &text)
}

pub fn emit_summary(reports: &[RunReport], path: &Path) -> Result<(), SimError> {
    write(path, &summary_csv(reports)?)
}
