//! Cross-fold post-hoc recalibration with Platt scaling or isotonic regression.

mod isotonic;
mod platt;

pub use isotonic::{isotonic_apply, isotonic_fit, isotonic_fit_weighted, pava, IsotonicMap};
pub use platt::{logistic_fit, platt_apply, platt_fit, PlattScaler, PlattWeighting};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::metrics::{c_index, ibs_grid, integrated_brier, one_calibration, CalibrationResult, IntegratedBrier, OneCalOptions};
use crate::survival::{censoring_km, ipcw_at_horizon, SurvivalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecalMethod {
    /// Pass-through; after equals before.
    #[default]
    None,
    Platt,
    Isotonic,
}

impl RecalMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecalMethod::None => "none",
            RecalMethod::Platt => "platt",
            RecalMethod::Isotonic => "isotonic",
        }
    }
}

impl std::str::FromStr for RecalMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RecalMethod::None),
            "platt" => Ok(RecalMethod::Platt),
            "isotonic" => Ok(RecalMethod::Isotonic),
            other => Err(Error::InvalidInput(format!("unknown recalibration method '{other}'"))),
        }
    }
}

/// One fold's validation curves, labels and evaluation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldInput {
    pub fold: u32,
    pub curves: Vec<SurvivalCurve>,
    pub records: Vec<SurvivalRecord>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecalOptions {
    pub one_cal: OneCalOptions,
    pub weighting: PlattWeighting,
    pub ibs_points: usize,
}

impl Default for RecalOptions {
    fn default() -> Self {
        Self { one_cal: OneCalOptions::default(), weighting: PlattWeighting::default(), ibs_points: 100 }
    }
}

/// Metrics of one fold's curves. Each metric fails independently.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub one_cal: Result<CalibrationResult>,
    /// C-index with risk = 1 − S(horizon).
    pub c_index: Result<f64>,
    pub ibs: Result<IntegratedBrier>,
}

/// Fold metrics: 1-calibration and C-index at the horizon, IBS over the fold's observed range.
pub fn fold_metrics(curves: &[SurvivalCurve], records: &[SurvivalRecord], horizon: f64, opts: &RecalOptions) -> FoldMetrics {
    let risks: Vec<f64> = curves.iter().map(|c| 1.0 - c.eval(horizon)).collect();
    let ibs = censoring_km(records).and_then(|g| integrated_brier(curves, records, &g, &ibs_grid(records, opts.ibs_points)?));
    FoldMetrics {
        one_cal: one_calibration(curves, records, horizon, &opts.one_cal),
        c_index: c_index(&risks, records),
        ibs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedMap {
    Identity,
    Platt(PlattScaler),
    Isotonic(IsotonicMap),
}

impl FittedMap {
    pub fn apply(&self, curve: &SurvivalCurve) -> SurvivalCurve {
        match self {
            FittedMap::Identity => curve.clone(),
            FittedMap::Platt(s) => platt_apply(s, curve),
            FittedMap::Isotonic(m) => isotonic_apply(m, curve),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldRecalibration {
    pub fold: u32,
    pub horizon: f64,
    pub before: FoldMetrics,
    /// Fitted map and post-recalibration metrics, or the fit error.
    pub after: Result<(FittedMap, FoldMetrics)>,
    pub recalibrated: Option<Vec<SurvivalCurve>>,
    pub fit_patient_ids: Vec<String>,
    pub eval_patient_ids: Vec<String>,
}

fn fit_map(method: RecalMethod, s: &[f64], records: &[SurvivalRecord], horizon: f64, opts: &RecalOptions) -> Result<FittedMap> {
    match method {
        RecalMethod::None => Ok(FittedMap::Identity),
        RecalMethod::Platt => Ok(FittedMap::Platt(platt_fit(s, records, horizon, opts.weighting)?)),
        RecalMethod::Isotonic => {
            let weights = match opts.weighting {
                PlattWeighting::ExcludeCensored => None,
                PlattWeighting::Ipcw => Some(ipcw_at_horizon(records, &censoring_km(records)?, horizon)?.weights),
            };
            let (mut p, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
            for (i, r) in records.iter().enumerate() {
                let label = if r.time > horizon {
                    0.0
                } else if r.event {
                    1.0
                } else {
                    continue;
                };
                p.push(1.0 - s[i]);
                y.push(label);
                w.push(weights.as_ref().map_or(1.0, |ws| ws[i]));
            }
            if p.len() < 2 {
                return Err(Error::DegenerateLabels);
            }
            Ok(FittedMap::Isotonic(isotonic_fit_weighted(&p, &y, &w)?))
        }
    }
}

/// For each fold k, fit on the validation sets of all other folds at fold k's horizon,
/// apply to fold k's curves and re-evaluate.
pub fn cross_fold_recalibrate(folds: &[FoldInput], method: RecalMethod, opts: &RecalOptions) -> Result<Vec<FoldRecalibration>> {
    if folds.len() < 2 {
        return Err(Error::InvalidInput("cross-fold recalibration needs at least 2 folds".into()));
    }
    for f in folds {
        if f.curves.len() != f.records.len() {
            return Err(Error::DimensionMismatch { expected: f.records.len(), got: f.curves.len() });
        }
    }
    Ok(folds
        .par_iter()
        .enumerate()
        .map(|(k, target)| {
            let h = target.horizon;
            let mut s = Vec::new();
            let mut fit_records = Vec::new();
            for (j, other) in folds.iter().enumerate() {
                if j == k {
                    continue;
                }
                s.extend(other.curves.iter().map(|c| c.eval(h)));
                fit_records.extend(other.records.iter().cloned());
            }
            let before = fold_metrics(&target.curves, &target.records, h, opts);
            let fitted = fit_map(method, &s, &fit_records, h, opts);
            let (after, recalibrated) = match fitted {
                Ok(map) => {
                    let curves: Vec<SurvivalCurve> = target.curves.iter().map(|c| map.apply(c)).collect();
                    let metrics = fold_metrics(&curves, &target.records, h, opts);
                    (Ok((map, metrics)), Some(curves))
                }
                Err(e) => (Err(e), None),
            };
            FoldRecalibration {
                fold: target.fold,
                horizon: h,
                before,
                after,
                recalibrated,
                fit_patient_ids: fit_records.into_iter().map(|r| r.patient_id).collect(),
                eval_patient_ids: target.records.iter().map(|r| r.patient_id.clone()).collect(),
            }
        })
        .collect())
}
