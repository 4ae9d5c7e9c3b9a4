use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ingest::{DatasetBundle, Payload, PredictionKind};
use crate::controls::{step_grid, RNG_NAME};
use crate::curves::{
    breslow_shift, curve_from_hazards, enforce_monotone, hazards_from_logits, median_risk, quartile_edges, Interpolation,
    SurvivalCurve,
};
use crate::error::{Error, Result};
use crate::metrics::{
    benjamini_hochberg, c_index, d_calibration, ibs_grid, integrated_brier, one_calibration, BhDecision, CalibrationResult,
    IntegratedBrier, OneCalOptions,
};
use crate::survival::{censoring_km, kaplan_meier, median_event_time, SurvivalRecord};

pub const SCHEMA_VERSION: &str = "survcal.audit/1";

/// How fold-level p-values are grouped into Benjamini-Hochberg families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BhFamily {
    /// One family over every fold-level test in the report.
    #[default]
    All,
    Model,
    Dataset,
    ModelDataset,
}

impl BhFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            BhFamily::All => "all",
            BhFamily::Model => "model",
            BhFamily::Dataset => "dataset",
            BhFamily::ModelDataset => "model_dataset",
        }
    }

    fn key(&self, model: &str, dataset: &str) -> String {
        match self {
            BhFamily::All => "all".to_string(),
            BhFamily::Model => model.to_string(),
            BhFamily::Dataset => dataset.to_string(),
            BhFamily::ModelDataset => format!("{model}/{dataset}"),
        }
    }
}

impl std::str::FromStr for BhFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(BhFamily::All),
            "model" => Ok(BhFamily::Model),
            "dataset" => Ok(BhFamily::Dataset),
            "model_dataset" => Ok(BhFamily::ModelDataset),
            other => Err(Error::InvalidInput(format!("unknown bh family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub fdr: f64,
    pub one_cal: OneCalOptions,
    /// Fixed horizon for every fold; per-fold median event time when `None`.
    pub horizon: Option<f64>,
    pub d_calibration: bool,
    pub d_cal_bins: usize,
    pub interpolation: Interpolation,
    pub hazard_points: usize,
    pub ibs_points: usize,
    pub bh_family: BhFamily,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            fdr: 0.05,
            one_cal: OneCalOptions::default(),
            horizon: None,
            d_calibration: true,
            d_cal_bins: 10,
            interpolation: Interpolation::Step,
            hazard_points: 20,
            ibs_points: 100,
            bh_family: BhFamily::All,
            seed: 0,
        }
    }
}

/// Every design setting that changes numbers in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub fdr: f64,
    pub n_groups: usize,
    pub dof_rule: String,
    pub group_construction: String,
    pub degenerate_group_rule: String,
    pub horizon_rule: String,
    pub ipcw_rule: String,
    pub ipcw_floor_rule: String,
    pub ess_definitions: String,
    pub km_tie_rule: String,
    pub risk_curve_construction: String,
    pub exponent_clamp: f64,
    pub quartile_rule: String,
    pub percentile_convention: String,
    pub interpolation: Interpolation,
    pub hazard_points: usize,
    pub c_index_risk: String,
    pub ibs_rule: String,
    pub ibs_points: usize,
    pub d_calibration: bool,
    pub d_cal_bins: usize,
    pub bh_family: BhFamily,
    pub rng: String,
    pub seed_derivation: String,
    pub seed: u64,
    /// Extra settings contributed by controls or recalibration runs.
    pub extra: BTreeMap<String, String>,
}

impl Metadata {
    pub fn from_options(o: &AuditOptions) -> Self {
        Self {
            tool: "survcal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            fdr: o.fdr,
            n_groups: o.one_cal.n_groups,
            dof_rule: format!("retained groups - {}", o.one_cal.dof_offset),
            group_construction: "equal-count groups of weighted patients sorted by predicted event probability, ties by patient_id, larger groups first".into(),
            degenerate_group_rule: "groups with mean prediction 0 or 1 merged into a neighbour".into(),
            horizon_rule: match o.horizon {
                Some(h) => format!("fixed {h}"),
                None => "median event time of the validation fold".into(),
            },
            ipcw_rule: "event at T<=h: 1/G(T-); T>h: 1/G(h); censored at or before h: 0; G = censoring KM of the validation fold".into(),
            ipcw_floor_rule: "G = 0 floored at its smallest positive value, counted in floored_weights".into(),
            ess_definitions: "ess, ess_ratio, weight_cv over nonzero weights; cohort_ess_ratio, cohort_weight_cv over all patients".into(),
            km_tie_rule: "events precede censorings at tied times".into(),
            risk_curve_construction: "S0(t)^exp(risk - median_risk), S0 = KM of training folds, median over validation risks".into(),
            exponent_clamp: crate::curves::EXPONENT_CLAMP,
            quartile_rule: "quartiles of uncensored training-fold event times".into(),
            percentile_convention: "linear interpolation at position q*(n-1)".into(),
            interpolation: o.interpolation,
            hazard_points: o.hazard_points,
            c_index_risk: "1 - S(horizon)".into(),
            ibs_rule: "trapezoid over evenly spaced grid from min to max observed time; raw and span-normalised".into(),
            ibs_points: o.ibs_points,
            d_calibration: o.d_calibration,
            d_cal_bins: o.d_cal_bins,
            bh_family: o.bh_family,
            rng: RNG_NAME.into(),
            seed_derivation: "splitmix64(seed + 0x9E3779B97F4A7C15*(index+1))".into(),
            seed: o.seed,
            extra: BTreeMap::new(),
        }
    }
}

/// One fold-level test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub model: String,
    pub dataset: String,
    pub fold: u32,
    pub n_patients: usize,
    pub n_events: usize,
    pub horizon: Option<f64>,
    pub c_index: Option<f64>,
    pub one_cal: Option<CalibrationResult>,
    pub d_cal: Option<CalibrationResult>,
    pub ibs: Option<IntegratedBrier>,
    pub bh_family: Option<String>,
    pub bh_rejected: Option<bool>,
    pub bh_adjusted_p: Option<f64>,
    /// Error code of the step that stopped this fold, if any.
    pub error: Option<String>,
    pub error_detail: Option<String>,
    /// Errors of individual metrics that did not stop the fold.
    pub metric_errors: BTreeMap<String, String>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl FoldRow {
    pub fn p_raw(&self) -> Option<f64> {
        self.one_cal.as_ref().map(|r| r.p_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub model: String,
    pub dataset: String,
    pub folds_total: usize,
    pub folds_tested: usize,
    pub folds_failed: usize,
    pub folds_errored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDecision {
    pub family: String,
    pub decision: BhDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: String,
    pub metadata: Metadata,
    pub rows: Vec<FoldRow>,
    pub bh: Vec<FamilyDecision>,
    pub rollups: Vec<Rollup>,
}

/// Validation curves of one fold.
pub struct FoldCurves {
    pub records: Vec<SurvivalRecord>,
    pub curves: Vec<SurvivalCurve>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Splits a bundle into (validation, training) records for `fold`; validation keeps prediction order.
pub fn split_fold<'a>(bundle: &'a DatasetBundle, fold: u32) -> (Vec<(&'a SurvivalRecord, &'a Payload)>, Vec<SurvivalRecord>) {
    let by_id: BTreeMap<&str, &SurvivalRecord> = bundle.records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let validation = bundle
        .predictions
        .rows
        .iter()
        .filter(|p| p.fold == fold)
        .filter_map(|p| by_id.get(p.patient_id.as_str()).map(|r| (*r, &p.payload)))
        .collect();
    let training = bundle.records.iter().filter(|r| r.fold != fold).cloned().collect();
    (validation, training)
}

/// Builds validation curves for one fold according to the prediction kind.
pub fn build_fold_curves(bundle: &DatasetBundle, fold: u32, opts: &AuditOptions) -> Result<FoldCurves> {
    let (validation, training) = split_fold(bundle, fold);
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let records: Vec<SurvivalRecord> = validation.iter().map(|(r, _)| (*r).clone()).collect();
    let mut diagnostics = BTreeMap::new();
    let curves = match bundle.predictions.kind {
        PredictionKind::Risk => {
            if training.is_empty() {
                return Err(Error::InvalidInput("risk predictions need at least one training fold".into()));
            }
            let baseline = kaplan_meier(&training)?;
            let risks: Vec<f64> = validation
                .iter()
                .map(|(_, p)| match p {
                    Payload::Risk(r) => *r,
                    _ => unreachable!("kind is uniform within a file"),
                })
                .collect();
            let center = median_risk(&risks)?;
            let grid = step_grid(baseline.times());
            let mut clamped = 0usize;
            let mut curves = Vec::with_capacity(records.len());
            for (r, &risk) in records.iter().zip(&risks) {
                let s = breslow_shift(&r.patient_id, &baseline, risk, center, &grid)?;
                clamped += usize::from(s.clamped);
                curves.push(s.curve);
            }
            diagnostics.insert("median_risk".into(), center);
            diagnostics.insert("clamped_exponents".into(), clamped as f64);
            curves
        }
        PredictionKind::HazardLogits => {
            let edges = quartile_edges(&training)?;
            for (i, e) in edges.edges().iter().enumerate() {
                diagnostics.insert(format!("bin_edge_{i}"), *e);
            }
            validation
                .iter()
                .map(|(r, p)| match p {
                    Payload::Logits(l) => {
                        curve_from_hazards(&r.patient_id, hazards_from_logits(*l), &edges, opts.hazard_points, opts.interpolation)
                    }
                    _ => unreachable!("kind is uniform within a file"),
                })
                .collect::<Result<_>>()?
        }
        PredictionKind::ExplicitCurve => validation
            .iter()
            .map(|(r, p)| match p {
                Payload::Curve { grid, probs } => {
                    Ok(enforce_monotone(SurvivalCurve::new(r.patient_id.clone(), grid.clone(), probs.clone())?))
                }
                _ => unreachable!("kind is uniform within a file"),
            })
            .collect::<Result<_>>()?,
    };
    let unpredicted = bundle.records.iter().filter(|r| r.fold == fold).count() - records.len();
    diagnostics.insert("unpredicted_patients".into(), unpredicted as f64);
    Ok(FoldCurves { records, curves, diagnostics })
}

pub(crate) fn error_row(model: &str, dataset: &str, fold: u32, e: &Error) -> FoldRow {
    FoldRow {
        model: model.to_string(),
        dataset: dataset.to_string(),
        fold,
        n_patients: 0,
        n_events: 0,
        horizon: None,
        c_index: None,
        one_cal: None,
        d_cal: None,
        ibs: None,
        bh_family: None,
        bh_rejected: None,
        bh_adjusted_p: None,
        error: Some(e.code().to_string()),
        error_detail: Some(e.to_string()),
        metric_errors: BTreeMap::new(),
        diagnostics: BTreeMap::new(),
    }
}

/// Scores already-built validation curves of one fold.
pub fn evaluate_fold(model: &str, dataset: &str, fold: u32, fc: &FoldCurves, opts: &AuditOptions) -> FoldRow {
    let records = &fc.records;
    let horizon = match opts.horizon {
        Some(h) => Ok(h),
        None => median_event_time(records),
    };
    let mut row = error_row(model, dataset, fold, &Error::EmptyDataset);
    row.error = None;
    row.error_detail = None;
    row.n_patients = records.len();
    row.n_events = records.iter().filter(|r| r.event).count();
    row.diagnostics = fc.diagnostics.clone();
    let h = match horizon {
        Ok(h) => h,
        Err(e) => {
            row.error = Some(e.code().to_string());
            row.error_detail = Some(e.to_string());
            return row;
        }
    };
    row.horizon = Some(h);
    let risks: Vec<f64> = fc.curves.iter().map(|c| 1.0 - c.eval(h)).collect();
    match c_index(&risks, records) {
        Ok(c) => row.c_index = Some(c),
        Err(e) => {
            row.metric_errors.insert("c_index".into(), e.code().into());
        }
    }
    match one_calibration(&fc.curves, records, h, &opts.one_cal) {
        Ok(r) => row.one_cal = Some(r),
        Err(e) => {
            row.error = Some(e.code().to_string());
            row.error_detail = Some(e.to_string());
        }
    }
    let ibs = censoring_km(records).and_then(|g| integrated_brier(&fc.curves, records, &g, &ibs_grid(records, opts.ibs_points)?));
    match ibs {
        Ok(v) => row.ibs = Some(v),
        Err(e) => {
            row.metric_errors.insert("ibs".into(), e.code().into());
        }
    }
    if opts.d_calibration {
        match d_calibration(&fc.curves, records, opts.d_cal_bins) {
            Ok(r) => row.d_cal = Some(r),
            Err(e) => {
                row.metric_errors.insert("d_cal".into(), e.code().into());
            }
        }
    }
    row
}

fn audit_fold(bundle: &DatasetBundle, fold: u32, opts: &AuditOptions) -> FoldRow {
    let model = &bundle.predictions.model_name;
    match build_fold_curves(bundle, fold, opts) {
        Ok(fc) => evaluate_fold(model, &bundle.dataset, fold, &fc, opts),
        Err(e) => {
            let mut row = error_row(model, &bundle.dataset, fold, &e);
            let (validation, _) = split_fold(bundle, fold);
            row.n_patients = validation.len();
            row.n_events = validation.iter().filter(|(r, _)| r.event).count();
            row
        }
    }
}

/// Applies BH per family, fills row decisions and builds rollups.
pub fn finalize(mut rows: Vec<FoldRow>, opts: &AuditOptions, metadata: Metadata) -> Result<AuditReport> {
    rows.sort_by(|a, b| (&a.model, &a.dataset, a.fold).cmp(&(&b.model, &b.dataset, b.fold)));
    let mut families: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if r.p_raw().is_some() {
            families.entry(opts.bh_family.key(&r.model, &r.dataset)).or_default().push(i);
        }
    }
    let mut bh = Vec::new();
    for (family, idx) in families {
        let p: Vec<f64> = idx.iter().map(|&i| rows[i].p_raw().unwrap()).collect();
        let decision = benjamini_hochberg(&p, opts.fdr)?;
        for (k, &i) in idx.iter().enumerate() {
            rows[i].bh_family = Some(family.clone());
            rows[i].bh_rejected = Some(decision.rejected[k]);
            rows[i].bh_adjusted_p = Some(decision.adjusted_p[k]);
        }
        bh.push(FamilyDecision { family, decision });
    }
    let mut rollups: BTreeMap<(String, String), Rollup> = BTreeMap::new();
    for r in &rows {
        let e = rollups.entry((r.model.clone(), r.dataset.clone())).or_insert_with(|| Rollup {
            model: r.model.clone(),
            dataset: r.dataset.clone(),
            folds_total: 0,
            folds_tested: 0,
            folds_failed: 0,
            folds_errored: 0,
        });
        e.folds_total += 1;
        if r.p_raw().is_some() {
            e.folds_tested += 1;
        }
        if r.bh_rejected == Some(true) {
            e.folds_failed += 1;
        }
        if r.error.is_some() {
            e.folds_errored += 1;
        }
    }
    Ok(AuditReport {
        schema_version: SCHEMA_VERSION.into(),
        metadata,
        rows,
        bh,
        rollups: rollups.into_values().collect(),
    })
}

/// Per-fold audit of every bundle followed by Benjamini-Hochberg over the collected p-values.
pub fn run_audit(bundles: &[DatasetBundle], opts: &AuditOptions) -> Result<AuditReport> {
    let jobs: Vec<(usize, u32)> =
        bundles.iter().enumerate().flat_map(|(b, bundle)| bundle.predictions.folds().into_iter().map(move |f| (b, f))).collect();
    let rows: Vec<FoldRow> = jobs.par_iter().map(|&(b, f)| audit_fold(&bundles[b], f, opts)).collect();
    finalize(rows, opts, Metadata::from_options(opts))
}
