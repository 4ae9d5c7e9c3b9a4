use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ingest::{DatasetBundle, FeatureMatrix, Payload, PredictionKind, PredictionRow, FoldPredictions};
use super::run::{build_fold_curves, error_row, evaluate_fold, finalize, AuditOptions, AuditReport, Metadata, SCHEMA_VERSION};
use crate::controls::{
    breslow_curve, breslow_validation, cox_fit, cox_predict_risk, permute_predictions, select_top_variance_features, CoxModel,
};
use crate::curves::{curve_from_hazards, quartile_edges, BinEdges, Interpolation, SurvivalCurve};
use crate::error::{Error, Result};
use crate::metrics::{d_calibration, one_calibration, CalibrationResult, OneCalOptions};
use crate::survival::{median, median_event_time, SurvivalRecord};
use crate::synth::{derive_seed, generate, GeneratorConfig};

pub const POSITIVE_MODEL: &str = "cox_ph";
pub const NEGATIVE_MODEL: &str = "cox_ph_permuted";

// stream index separating D-calibration shuffles from the negative-control permutations
const DCAL_STREAM: u64 = 0xDCA1;

/// Labels with an aligned feature matrix (row i belongs to records[i]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBundle {
    pub dataset: String,
    pub records: Vec<SurvivalRecord>,
    pub features: Vec<Vec<f64>>,
}

impl ControlBundle {
    /// Aligns a feature matrix to labels; every labelled patient needs a feature row.
    pub fn new(dataset: &str, records: Vec<SurvivalRecord>, matrix: &FeatureMatrix) -> Result<Self> {
        let ids: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
        let features = matrix
            .rows_for(&ids)
            .ok_or_else(|| Error::InvalidInput("feature matrix is missing labelled patients".into()))?;
        Ok(Self { dataset: dataset.to_string(), records, features })
    }

    fn folds(&self) -> Vec<u32> {
        let mut f: Vec<u32> = self.records.iter().map(|r| r.fold).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlOptions {
    pub top_k: usize,
    pub penalizer: f64,
    pub breslow_tolerance: f64,
    /// Fraction of tested folds the negative control must reject.
    pub negative_min_fraction: f64,
    pub negative_median_p: f64,
    pub dcal_demo: bool,
    pub dcal_points: usize,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            top_k: 20,
            penalizer: 0.1,
            breslow_tolerance: 0.02,
            negative_min_fraction: 0.8,
            negative_median_p: 0.01,
            dcal_demo: true,
            dcal_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveControl {
    pub audit: AuditReport,
    pub expectation: String,
    pub rejected_folds: usize,
    pub min_raw_p: Option<f64>,
    pub passed: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbsComparison {
    pub fold: u32,
    pub original: Option<f64>,
    pub permuted: Option<f64>,
    pub degraded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControl {
    pub audit: AuditReport,
    pub expectation: String,
    pub rejected_folds: usize,
    pub tested_folds: usize,
    pub median_raw_p: Option<f64>,
    pub ibs: Vec<IbsComparison>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowFold {
    pub fold: u32,
    pub horizon: Option<f64>,
    pub p_km_shift: Option<f64>,
    pub p_full_breslow: Option<f64>,
    pub delta_p: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowControl {
    pub expectation: String,
    pub tolerance: f64,
    pub folds: Vec<BreslowFold>,
    pub passed: bool,
}

/// Shuffled 4-bin curves scored by both tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcalDemo {
    pub horizon: f64,
    pub d_cal: CalibrationResult,
    pub one_cal: CalibrationResult,
    pub d_cal_passes: bool,
    pub one_cal_rejects: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcalDemoFold {
    pub fold: u32,
    pub demo: Option<DcalDemo>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub schema_version: String,
    pub metadata: Metadata,
    pub dataset: String,
    pub positive: PositiveControl,
    pub negative: NegativeControl,
    pub breslow: BreslowControl,
    pub dcal_demo: Vec<DcalDemoFold>,
}

/// Curves through knots (0, 1), (e_b, S_b) built from survival probabilities at the four bin edges.
pub fn four_bin_curves(
    patient_ids: &[&str],
    survival_at_edges: &[[f64; 4]],
    edges: &BinEdges,
    n_points: usize,
    interpolation: Interpolation,
) -> Result<Vec<SurvivalCurve>> {
    patient_ids
        .iter()
        .zip(survival_at_edges)
        .map(|(id, s)| {
            let mut prev = 1.0;
            let hazards = s.map(|si| {
                let si = si.clamp(0.0, 1.0);
                let h = if prev > 0.0 { (1.0 - si / prev).clamp(0.0, 1.0) } else { 1.0 };
                prev = si;
                h
            });
            curve_from_hazards(id, hazards, edges, n_points, interpolation)
        })
        .collect()
}

/// Shuffles curves across patients and runs D-calibration and 1-calibration on the result.
pub fn shuffled_dcal_demo(
    curves: &[SurvivalCurve],
    records: &[SurvivalRecord],
    horizon: f64,
    seed: u64,
    one_cal: &OneCalOptions,
    d_cal_bins: usize,
    alpha: f64,
) -> Result<DcalDemo> {
    let shuffled = permute_predictions(curves, seed);
    let d_cal = d_calibration(&shuffled, records, d_cal_bins)?;
    let one = one_calibration(&shuffled, records, horizon, one_cal)?;
    Ok(DcalDemo {
        horizon,
        d_cal_passes: d_cal.p_value > alpha,
        one_cal_rejects: one.p_value < alpha,
        d_cal,
        one_cal: one,
    })
}

/// One synthetic replicate of the D-calibration demonstration: true survival sampled at
/// event-time quartiles, turned into linearly interpolated 4-bin curves, then shuffled.
pub fn dcal_demo_replicate(config: &GeneratorConfig, points: usize, one_cal: &OneCalOptions, d_cal_bins: usize, alpha: f64) -> Result<DcalDemo> {
    let cohort = generate(config)?;
    let edges = quartile_edges(&cohort.records)?;
    let e = edges.edges();
    let at_edges: Vec<[f64; 4]> = (0..cohort.records.len()).map(|i| e.map(|t| cohort.true_survival(i, t))).collect();
    let ids: Vec<&str> = cohort.records.iter().map(|r| r.patient_id.as_str()).collect();
    let curves = four_bin_curves(&ids, &at_edges, &edges, points, Interpolation::Linear)?;
    let h = median_event_time(&cohort.records)?;
    shuffled_dcal_demo(&curves, &cohort.records, h, derive_seed(config.seed, DCAL_STREAM), one_cal, d_cal_bins, alpha)
}

struct FoldFit {
    fold: u32,
    selected: Vec<usize>,
    model: Result<CoxModel>,
}

fn select_rows(rows: &[&Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect()
}

fn fit_fold(bundle: &ControlBundle, fold: u32, copts: &ControlOptions) -> FoldFit {
    let train: Vec<usize> = (0..bundle.records.len()).filter(|&i| bundle.records[i].fold != fold).collect();
    let rows: Vec<&Vec<f64>> = train.iter().map(|&i| &bundle.features[i]).collect();
    let owned: Vec<Vec<f64>> = rows.iter().map(|r| (*r).clone()).collect();
    let p = owned.first().map_or(0, Vec::len);
    let selected = match select_top_variance_features(&owned, copts.top_k.min(p)) {
        Ok(s) => s,
        Err(e) => return FoldFit { fold, selected: Vec::new(), model: Err(e) },
    };
    let records: Vec<SurvivalRecord> = train.iter().map(|&i| bundle.records[i].clone()).collect();
    let model = cox_fit(&select_rows(&rows, &selected), &records, copts.penalizer);
    FoldFit { fold, selected, model }
}

fn validation_indices(bundle: &ControlBundle, fold: u32) -> Vec<usize> {
    (0..bundle.records.len()).filter(|&i| bundle.records[i].fold == fold).collect()
}

fn fold_risks(bundle: &ControlBundle, fit: &FoldFit) -> Result<Vec<f64>> {
    let model = fit.model.as_ref().map_err(Clone::clone)?;
    validation_indices(bundle, fit.fold)
        .iter()
        .map(|&i| {
            let x: Vec<f64> = fit.selected.iter().map(|&j| bundle.features[i][j]).collect();
            cox_predict_risk(model, &x)
        })
        .collect()
}

fn audit_risks(
    bundle: &ControlBundle,
    model_name: &str,
    risks: &[(u32, Result<Vec<f64>>)],
    opts: &AuditOptions,
    metadata: Metadata,
) -> Result<AuditReport> {
    let rows = risks
        .par_iter()
        .map(|(fold, r)| match r {
            Err(e) => error_row(model_name, &bundle.dataset, *fold, e),
            Ok(risks) => {
                let idx = validation_indices(bundle, *fold);
                let preds = FoldPredictions {
                    model_name: model_name.to_string(),
                    kind: PredictionKind::Risk,
                    rows: idx
                        .iter()
                        .zip(risks)
                        .map(|(&i, &x)| PredictionRow {
                            patient_id: bundle.records[i].patient_id.clone(),
                            fold: *fold,
                            payload: Payload::Risk(x),
                        })
                        .collect(),
                };
                let ds = DatasetBundle { dataset: bundle.dataset.clone(), records: bundle.records.clone(), predictions: preds };
                match build_fold_curves(&ds, *fold, opts) {
                    Ok(fc) => evaluate_fold(model_name, &bundle.dataset, *fold, &fc, opts),
                    Err(e) => error_row(model_name, &bundle.dataset, *fold, &e),
                }
            }
        })
        .collect();
    finalize(rows, opts, metadata)
}

fn fold_horizon(records: &[SurvivalRecord], opts: &AuditOptions) -> Result<f64> {
    match opts.horizon {
        Some(h) => Ok(h),
        None => median_event_time(records),
    }
}

fn dcal_fold(bundle: &ControlBundle, fit: &FoldFit, opts: &AuditOptions, copts: &ControlOptions) -> Result<DcalDemo> {
    let model = fit.model.as_ref().map_err(Clone::clone)?;
    let train: Vec<SurvivalRecord> = bundle.records.iter().filter(|r| r.fold != fit.fold).cloned().collect();
    let edges = quartile_edges(&train)?;
    let idx = validation_indices(bundle, fit.fold);
    let records: Vec<SurvivalRecord> = idx.iter().map(|&i| bundle.records[i].clone()).collect();
    let risks = fold_risks(bundle, fit)?;
    let e = edges.edges();
    let at_edges: Vec<[f64; 4]> = records
        .iter()
        .zip(&risks)
        .map(|(r, &risk)| breslow_curve(&r.patient_id, model, risk, &e).map(|c| e.map(|t| c.eval(t))))
        .collect::<Result<_>>()?;
    let ids: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let curves = four_bin_curves(&ids, &at_edges, &edges, copts.dcal_points, Interpolation::Linear)?;
    let h = fold_horizon(&records, opts)?;
    let seed = derive_seed(derive_seed(opts.seed, DCAL_STREAM), u64::from(fit.fold));
    shuffled_dcal_demo(&curves, &records, h, seed, &opts.one_cal, opts.d_cal_bins, opts.fdr)
}

fn control_metadata(opts: &AuditOptions, copts: &ControlOptions) -> Metadata {
    let mut m = Metadata::from_options(opts);
    let extra = [
        ("cox_penalizer", copts.penalizer.to_string()),
        ("cox_ties", "breslow".to_string()),
        ("cox_standardization", "features centred and scaled by sample sd; penalty on standardised coefficients".to_string()),
        ("feature_selection", format!("top {} sample-variance features of the training folds", copts.top_k)),
        ("negative_control_seed", "derive_seed(seed, fold), permutation within the validation fold".to_string()),
        ("dcal_demo_curves", format!("4-bin curves from full-Breslow survival at training quartiles, linear interpolation, {} points", copts.dcal_points)),
        ("dcal_demo_seed", format!("derive_seed(derive_seed(seed, {DCAL_STREAM:#x}), fold)")),
        ("breslow_tolerance", copts.breslow_tolerance.to_string()),
    ];
    for (k, v) in extra {
        m.extra.insert(k.to_string(), v);
    }
    m
}

/// Positive control, negative control, Breslow construction check and D-calibration demonstration.
pub fn run_controls(bundle: &ControlBundle, opts: &AuditOptions, copts: &ControlOptions) -> Result<ControlReport> {
    if bundle.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bundle.features.len() != bundle.records.len() {
        return Err(Error::DimensionMismatch { expected: bundle.records.len(), got: bundle.features.len() });
    }
    let metadata = control_metadata(opts, copts);
    let fits: Vec<FoldFit> = bundle.folds().par_iter().map(|&f| fit_fold(bundle, f, copts)).collect();

    let risks: Vec<(u32, Result<Vec<f64>>)> = fits.iter().map(|f| (f.fold, fold_risks(bundle, f))).collect();
    let positive_audit = audit_risks(bundle, POSITIVE_MODEL, &risks, opts, metadata.clone())?;
    let rejected = positive_audit.rows.iter().filter(|r| r.bh_rejected == Some(true)).count();
    let min_raw_p = positive_audit.rows.iter().filter_map(|r| r.p_raw()).min_by(f64::total_cmp);
    let tested = positive_audit.rows.iter().filter(|r| r.p_raw().is_some()).count();
    let positive_passed = tested > 0 && rejected == 0;
    let note = match min_raw_p {
        None => "no fold produced a 1-calibration test".to_string(),
        Some(p) if rejected == 0 && p < opts.fdr => format!("not rejected after correction; smallest raw p {p} is below {}", opts.fdr),
        Some(p) if rejected == 0 => format!("not rejected; smallest raw p {p}"),
        Some(p) => format!("{rejected} fold(s) rejected after correction; smallest raw p {p}"),
    };
    let positive = PositiveControl {
        audit: positive_audit,
        expectation: "no fold rejected after Benjamini-Hochberg".into(),
        rejected_folds: rejected,
        min_raw_p,
        passed: positive_passed,
        note,
    };

    let permuted: Vec<(u32, Result<Vec<f64>>)> = risks
        .iter()
        .map(|(fold, r)| (*fold, r.clone().map(|v| permute_predictions(&v, derive_seed(opts.seed, u64::from(*fold))))))
        .collect();
    let negative_audit = audit_risks(bundle, NEGATIVE_MODEL, &permuted, opts, metadata.clone())?;
    let neg_rejected = negative_audit.rows.iter().filter(|r| r.bh_rejected == Some(true)).count();
    let neg_p: Vec<f64> = negative_audit.rows.iter().filter_map(|r| r.p_raw()).collect();
    let median_raw_p = median(&neg_p);
    let ibs = positive
        .audit
        .rows
        .iter()
        .zip(&negative_audit.rows)
        .map(|(a, b)| {
            let original = a.ibs.map(|v| v.normalized);
            let permuted = b.ibs.map(|v| v.normalized);
            IbsComparison { fold: a.fold, original, permuted, degraded: original.zip(permuted).map(|(o, p)| p > o) }
        })
        .collect();
    let needed = (copts.negative_min_fraction * neg_p.len() as f64).ceil() as usize;
    let negative = NegativeControl {
        expectation: format!(
            "at least {:.0}% of tested folds rejected after Benjamini-Hochberg and median raw p below {}",
            copts.negative_min_fraction * 100.0,
            copts.negative_median_p
        ),
        rejected_folds: neg_rejected,
        tested_folds: neg_p.len(),
        median_raw_p,
        ibs,
        passed: !neg_p.is_empty() && neg_rejected >= needed && median_raw_p.is_some_and(|p| p < copts.negative_median_p),
        audit: negative_audit,
    };

    let breslow_folds: Vec<BreslowFold> = fits
        .par_iter()
        .map(|fit| {
            let idx = validation_indices(bundle, fit.fold);
            let records: Vec<SurvivalRecord> = idx.iter().map(|&i| bundle.records[i].clone()).collect();
            let rows: Vec<Vec<f64>> =
                idx.iter().map(|&i| fit.selected.iter().map(|&j| bundle.features[i][j]).collect()).collect();
            let horizon = fold_horizon(&records, opts);
            let cmp = fit
                .model
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|m| breslow_validation(m, &records, &rows, *horizon.as_ref().map_err(Clone::clone)?, &opts.one_cal));
            match cmp {
                Ok(c) => BreslowFold {
                    fold: fit.fold,
                    horizon: horizon.ok(),
                    p_km_shift: Some(c.km_shift.p_value),
                    p_full_breslow: Some(c.full_breslow.p_value),
                    delta_p: Some(c.delta_p),
                    error: None,
                },
                Err(e) => BreslowFold {
                    fold: fit.fold,
                    horizon: horizon.ok(),
                    p_km_shift: None,
                    p_full_breslow: None,
                    delta_p: None,
                    error: Some(e.code().to_string()),
                },
            }
        })
        .collect();
    let compared: Vec<f64> = breslow_folds.iter().filter_map(|f| f.delta_p).collect();
    let breslow = BreslowControl {
        expectation: format!("|p_km_shift - p_full_breslow| <= {} on every fold", copts.breslow_tolerance),
        tolerance: copts.breslow_tolerance,
        passed: !compared.is_empty() && compared.iter().all(|&d| d <= copts.breslow_tolerance),
        folds: breslow_folds,
    };

    let dcal_demo = if copts.dcal_demo {
        fits.par_iter()
            .map(|fit| match dcal_fold(bundle, fit, opts, copts) {
                Ok(d) => DcalDemoFold { fold: fit.fold, demo: Some(d), error: None },
                Err(e) => DcalDemoFold { fold: fit.fold, demo: None, error: Some(e.code().to_string()) },
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(ControlReport {
        schema_version: SCHEMA_VERSION.into(),
        metadata,
        dataset: bundle.dataset.clone(),
        positive,
        negative,
        breslow,
        dcal_demo,
    })
}

