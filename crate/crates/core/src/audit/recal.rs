use serde::{Deserialize, Serialize};

use super::ingest::DatasetBundle;
use super::run::{build_fold_curves, AuditOptions, Metadata, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::metrics::benjamini_hochberg;
use crate::recalibrate::{cross_fold_recalibrate, FittedMap, FoldInput, FoldMetrics, PlattWeighting, RecalMethod, RecalOptions};
use crate::survival::median_event_time;

/// Largest |C_after − C_before| accepted as unchanged.
pub const C_INDEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalFoldRow {
    pub fold: u32,
    pub horizon: Option<f64>,
    pub n_patients: usize,
    pub n_fit: usize,
    pub p_before: Option<f64>,
    pub p_after: Option<f64>,
    pub rejected_before: Option<bool>,
    pub rejected_after: Option<bool>,
    pub ibs_before: Option<f64>,
    pub ibs_after: Option<f64>,
    pub c_index_before: Option<f64>,
    pub c_index_after: Option<f64>,
    /// Set only for a fitted Platt map with negative slope.
    pub c_index_unchanged: Option<bool>,
    pub map: Option<FittedMap>,
    /// True when no fitting patient is also evaluated in this fold.
    pub leakage_free: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationReport {
    pub schema_version: String,
    pub metadata: Metadata,
    pub model: String,
    pub dataset: String,
    pub method: RecalMethod,
    pub rows: Vec<RecalFoldRow>,
    /// Folds rejected after Benjamini-Hochberg over this run's before (resp. after) p-values.
    pub failures_before: usize,
    pub failures_after: usize,
    pub raw_failures_before: usize,
    pub raw_failures_after: usize,
    pub mean_ibs_before: Option<f64>,
    pub mean_ibs_after: Option<f64>,
    pub c_index_unchanged: Option<bool>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn bh_flags(p: &[Option<f64>], fdr: f64) -> Result<Vec<Option<bool>>> {
    let present: Vec<f64> = p.iter().flatten().copied().collect();
    if present.is_empty() {
        return Ok(vec![None; p.len()]);
    }
    let d = benjamini_hochberg(&present, fdr)?;
    let mut it = d.rejected.into_iter();
    Ok(p.iter().map(|x| x.map(|_| it.next().expect("one decision per p-value"))).collect())
}

fn metric_values(m: &FoldMetrics) -> (Option<f64>, Option<f64>, Option<f64>) {
    (
        m.one_cal.as_ref().ok().map(|r| r.p_value),
        m.ibs.as_ref().ok().map(|r| r.normalized),
        m.c_index.as_ref().ok().copied(),
    )
}

/// Cross-fold recalibration of one model's predictions with before/after comparison.
pub fn run_recalibration(
    bundle: &DatasetBundle,
    method: RecalMethod,
    weighting: PlattWeighting,
    opts: &AuditOptions,
) -> Result<RecalibrationReport> {
    let folds = bundle.predictions.folds();
    if folds.len() < 2 {
        return Err(Error::InvalidInput("recalibration needs at least 2 folds".into()));
    }
    let mut inputs = Vec::new();
    let mut failed = Vec::new();
    for &fold in &folds {
        let built = build_fold_curves(bundle, fold, opts).and_then(|fc| {
            let h = match opts.horizon {
                Some(h) => h,
                None => median_event_time(&fc.records)?,
            };
            Ok(FoldInput { fold, curves: fc.curves, records: fc.records, horizon: h })
        });
        match built {
            Ok(f) => inputs.push(f),
            Err(e) => failed.push((fold, e)),
        }
    }
    let ropts = RecalOptions { one_cal: opts.one_cal, weighting, ibs_points: opts.ibs_points };
    let results = if inputs.len() >= 2 { cross_fold_recalibrate(&inputs, method, &ropts)? } else { Vec::new() };

    let mut rows: Vec<RecalFoldRow> = results
        .iter()
        .map(|r| {
            let (p_before, ibs_before, c_before) = metric_values(&r.before);
            let eval: std::collections::HashSet<&str> = r.eval_patient_ids.iter().map(String::as_str).collect();
            let leakage_free = r.fit_patient_ids.iter().all(|id| !eval.contains(id.as_str()));
            let mut row = RecalFoldRow {
                fold: r.fold,
                horizon: Some(r.horizon),
                n_patients: r.eval_patient_ids.len(),
                n_fit: r.fit_patient_ids.len(),
                p_before,
                p_after: None,
                rejected_before: None,
                rejected_after: None,
                ibs_before,
                ibs_after: None,
                c_index_before: c_before,
                c_index_after: None,
                c_index_unchanged: None,
                map: None,
                leakage_free,
                error: r.before.one_cal.as_ref().err().map(|e| e.code().to_string()),
            };
            match &r.after {
                Ok((map, after)) => {
                    let (p, ibs, c) = metric_values(after);
                    row.p_after = p;
                    row.ibs_after = ibs;
                    row.c_index_after = c;
                    if let FittedMap::Platt(s) = map {
                        if s.slope < 0.0 {
                            row.c_index_unchanged = c_before.zip(c).map(|(a, b)| (a - b).abs() <= C_INDEX_TOLERANCE);
                        }
                    }
                    row.map = Some(map.clone());
                }
                Err(e) => row.error = Some(e.code().to_string()),
            }
            row
        })
        .collect();
    for (fold, e) in failed {
        rows.push(RecalFoldRow {
            fold,
            horizon: None,
            n_patients: 0,
            n_fit: 0,
            p_before: None,
            p_after: None,
            rejected_before: None,
            rejected_after: None,
            ibs_before: None,
            ibs_after: None,
            c_index_before: None,
            c_index_after: None,
            c_index_unchanged: None,
            map: None,
            leakage_free: true,
            error: Some(e.code().to_string()),
        });
    }
    rows.sort_by_key(|r| r.fold);

    let before: Vec<Option<f64>> = rows.iter().map(|r| r.p_before).collect();
    let after: Vec<Option<f64>> = rows.iter().map(|r| r.p_after).collect();
    for (row, (b, a)) in rows.iter_mut().zip(bh_flags(&before, opts.fdr)?.into_iter().zip(bh_flags(&after, opts.fdr)?)) {
        row.rejected_before = b;
        row.rejected_after = a;
    }
    let count = |f: &dyn Fn(&RecalFoldRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let checks: Vec<bool> = rows.iter().filter_map(|r| r.c_index_unchanged).collect();
    let mut metadata = Metadata::from_options(opts);
    metadata.extra.insert("recalibration_method".into(), method.as_str().into());
    metadata.extra.insert("recalibration_weighting".into(), weighting.as_str().into());
    metadata.extra.insert("platt_feature".into(), "predicted survival at the target fold's horizon, fitted on all other folds".into());
    metadata.extra.insert("isotonic_map".into(), "PAVA on predicted event probability, linear interpolation, clamped ends".into());
    metadata.extra.insert("c_index_tolerance".into(), C_INDEX_TOLERANCE.to_string());
    Ok(RecalibrationReport {
        schema_version: SCHEMA_VERSION.into(),
        metadata,
        model: bundle.predictions.model_name.clone(),
        dataset: bundle.dataset.clone(),
        method,
        failures_before: count(&|r| r.rejected_before == Some(true)),
        failures_after: count(&|r| r.rejected_after == Some(true)),
        raw_failures_before: count(&|r| r.p_before.is_some_and(|p| p < opts.fdr)),
        raw_failures_after: count(&|r| r.p_after.is_some_and(|p| p < opts.fdr)),
        mean_ibs_before: mean(&rows.iter().filter_map(|r| r.ibs_before).collect::<Vec<_>>()),
        mean_ibs_after: mean(&rows.iter().filter_map(|r| r.ibs_after).collect::<Vec<_>>()),
        c_index_unchanged: (!checks.is_empty()).then(|| checks.iter().all(|&b| b)),
        rows,
    })
}
