use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::controls::ControlReport;
use super::recal::RecalibrationReport;
use super::run::{AuditReport, FoldRow};
use crate::error::{Error, Result};
use crate::synth::MonteCarloSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidInput(format!("unknown format '{other}'"))),
        }
    }
}

/// Parses a comma-separated format list such as `json,csv`.
pub fn parse_formats(s: &str) -> Result<Vec<Format>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Unwritable(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::Unwritable(format!("{}: {e}", path.display())))?;
    body.push('\n');
    fs::write(path, body).map_err(io_err(path))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Unwritable(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Unwritable(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub(crate) fn num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn flag(x: Option<bool>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

// file-name-safe version of a model or dataset label
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

pub const AUDIT_CSV_HEADER: [&str; 12] =
    ["model", "dataset", "fold", "horizon", "c_index", "p_raw", "bh_rejected", "ibs", "ess", "weight_cv", "merged_groups", "floored_weights"];

/// One CSV row per fold-level test.
pub fn audit_csv_rows(rows: &[FoldRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let diag = |k: &str| r.one_cal.as_ref().and_then(|c| c.diagnostics.get(k).copied());
            vec![
                r.model.clone(),
                r.dataset.clone(),
                r.fold.to_string(),
                num(r.horizon),
                num(r.c_index),
                num(r.p_raw()),
                flag(r.bh_rejected),
                num(r.ibs.map(|v| v.normalized)),
                num(diag("ess")),
                num(diag("weight_cv")),
                num(diag("merged_groups")),
                num(diag("floored_weights")),
            ]
        })
        .collect()
}

fn write_calibration_points(dir: &Path, prefix: &str, rows: &[FoldRow], written: &mut Vec<PathBuf>) -> Result<()> {
    let points_dir = dir.join("calibration_points");
    let mut made = false;
    for r in rows {
        let Some(one_cal) = &r.one_cal else { continue };
        if !made {
            ensure_dir(&points_dir)?;
            made = true;
        }
        let path = points_dir.join(format!("{prefix}{}__{}__fold{}.csv", slug(&r.model), slug(&r.dataset), r.fold));
        let body: Vec<Vec<String>> = one_cal
            .points()
            .iter()
            .map(|p| {
                vec![
                    p.group_index.to_string(),
                    p.mean_predicted_survival.to_string(),
                    p.observed_survival.to_string(),
                    p.weighted_n.to_string(),
                ]
            })
            .collect();
        write_csv(&path, &["group_index", "mean_predicted_survival", "observed_survival", "weighted_n"], &body)?;
        written.push(path);
    }
    Ok(())
}

/// Writes `audit_report.json`, `audit_report.csv` and per-fold calibration points.
pub fn emit_audit(report: &AuditReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let p = dir.join("audit_report.json");
        write_json(&p, report)?;
        written.push(p);
    }
    if formats.contains(&Format::Csv) {
        let p = dir.join("audit_report.csv");
        write_csv(&p, &AUDIT_CSV_HEADER, &audit_csv_rows(&report.rows))?;
        written.push(p);
        write_calibration_points(dir, "", &report.rows, &mut written)?;
    }
    Ok(written)
}

/// Writes `controls_report.json` and the two control audits as CSV.
pub fn emit_controls(report: &ControlReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let p = dir.join("controls_report.json");
        write_json(&p, report)?;
        written.push(p);
    }
    if formats.contains(&Format::Csv) {
        for (name, audit) in [("controls_positive.csv", &report.positive.audit), ("controls_negative.csv", &report.negative.audit)] {
            let p = dir.join(name);
            write_csv(&p, &AUDIT_CSV_HEADER, &audit_csv_rows(&audit.rows))?;
            written.push(p);
        }
        let p = dir.join("controls_breslow.csv");
        let rows: Vec<Vec<String>> = report
            .breslow
            .folds
            .iter()
            .map(|f| {
                vec![
                    f.fold.to_string(),
                    num(f.horizon),
                    num(f.p_km_shift),
                    num(f.p_full_breslow),
                    num(f.delta_p),
                    f.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(&p, &["fold", "horizon", "p_km_shift", "p_full_breslow", "delta_p", "error"], &rows)?;
        written.push(p);
        let p = dir.join("controls_dcal_demo.csv");
        let rows: Vec<Vec<String>> = report
            .dcal_demo
            .iter()
            .map(|f| {
                let d = f.demo.as_ref();
                vec![
                    f.fold.to_string(),
                    num(d.map(|d| d.d_cal.p_value)),
                    num(d.map(|d| d.one_cal.p_value)),
                    flag(d.map(|d| d.d_cal_passes)),
                    flag(d.map(|d| d.one_cal_rejects)),
                    f.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(&p, &["fold", "d_cal_p", "one_cal_p", "d_cal_passes", "one_cal_rejects", "error"], &rows)?;
        written.push(p);
        write_calibration_points(dir, "positive__", &report.positive.audit.rows, &mut written)?;
        write_calibration_points(dir, "negative__", &report.negative.audit.rows, &mut written)?;
    }
    Ok(written)
}

/// Writes `recalibration_report.json` and `recalibration.csv`.
pub fn emit_recalibration(report: &RecalibrationReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let p = dir.join("recalibration_report.json");
        write_json(&p, report)?;
        written.push(p);
    }
    if formats.contains(&Format::Csv) {
        let p = dir.join("recalibration.csv");
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    report.model.clone(),
                    report.dataset.clone(),
                    r.fold.to_string(),
                    num(r.horizon),
                    num(r.p_before),
                    num(r.p_after),
                    flag(r.rejected_before),
                    flag(r.rejected_after),
                    num(r.ibs_before),
                    num(r.ibs_after),
                    num(r.c_index_before),
                    num(r.c_index_after),
                    flag(r.c_index_unchanged),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &p,
            &[
                "model",
                "dataset",
                "fold",
                "horizon",
                "p_before",
                "p_after",
                "rejected_before",
                "rejected_after",
                "ibs_before",
                "ibs_after",
                "c_index_before",
                "c_index_after",
                "c_index_unchanged",
                "error",
            ],
            &rows,
        )?;
        written.push(p);
    }
    Ok(written)
}

/// Writes `{stem}_replicates.csv` and `{stem}_summary.json`.
pub fn emit_monte_carlo(summary: &MonteCarloSummary, dir: &Path, stem: &str, formats: &[Format]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Csv) {
        let p = dir.join(format!("{stem}_replicates.csv"));
        let rows: Vec<Vec<String>> = summary
            .per_replicate
            .iter()
            .map(|o| {
                vec![
                    o.index.to_string(),
                    o.seed.to_string(),
                    o.attempts.to_string(),
                    o.n_patients.to_string(),
                    o.n_events.to_string(),
                    o.censored_fraction.to_string(),
                    o.horizon.to_string(),
                    o.statistic.to_string(),
                    o.p_value.to_string(),
                    o.ess_ratio.to_string(),
                    o.weight_cv.to_string(),
                    o.nonzero_ess_ratio.to_string(),
                    o.nonzero_weight_cv.to_string(),
                ]
            })
            .collect();
        write_csv(
            &p,
            &[
                "replicate",
                "seed",
                "attempts",
                "n_patients",
                "n_events",
                "censored_fraction",
                "horizon",
                "statistic",
                "p_value",
                "ess_ratio",
                "weight_cv",
                "nonzero_ess_ratio",
                "nonzero_weight_cv",
            ],
            &rows,
        )?;
        written.push(p);
    }
    if formats.contains(&Format::Json) {
        #[derive(Serialize)]
        struct Summary<'a> {
            schema_version: &'a str,
            #[serde(flatten)]
            summary: &'a MonteCarloSummary,
        }
        let p = dir.join(format!("{stem}_summary.json"));
        write_json(&p, &Summary { schema_version: super::run::SCHEMA_VERSION, summary })?;
        written.push(p);
    }
    Ok(written)
}
