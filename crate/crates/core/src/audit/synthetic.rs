use super::controls::ControlBundle;
use super::ingest::{DatasetBundle, FoldPredictions, Payload, PredictionKind, PredictionRow};
use crate::curves::{quartile_edges, SurvivalCurve};
use crate::error::Result;
use crate::synth::SyntheticCohort;

/// Risk-score bundle whose scores are the cohort's true linear predictors.
pub fn risk_bundle(cohort: &SyntheticCohort, dataset: &str, model: &str) -> DatasetBundle {
    let rows = cohort
        .records
        .iter()
        .zip(&cohort.linear_predictors)
        .map(|(r, &lp)| PredictionRow { patient_id: r.patient_id.clone(), fold: r.fold, payload: Payload::Risk(lp) })
        .collect();
    DatasetBundle {
        dataset: dataset.to_string(),
        records: cohort.records.clone(),
        predictions: FoldPredictions { model_name: model.to_string(), kind: PredictionKind::Risk, rows },
    }
}

/// Explicit-curve bundle; `curves[i]` belongs to `cohort.records[i]`.
pub fn curve_bundle(cohort: &SyntheticCohort, curves: &[SurvivalCurve], dataset: &str, model: &str) -> DatasetBundle {
    let rows = cohort
        .records
        .iter()
        .zip(curves)
        .map(|(r, c)| PredictionRow {
            patient_id: r.patient_id.clone(),
            fold: r.fold,
            payload: Payload::Curve { grid: c.grid().to_vec(), probs: c.probs().to_vec() },
        })
        .collect();
    DatasetBundle {
        dataset: dataset.to_string(),
        records: cohort.records.clone(),
        predictions: FoldPredictions { model_name: model.to_string(), kind: PredictionKind::ExplicitCurve, rows },
    }
}

pub fn control_bundle(cohort: &SyntheticCohort, dataset: &str) -> ControlBundle {
    ControlBundle { dataset: dataset.to_string(), records: cohort.records.clone(), features: cohort.features.clone() }
}

/// Hazard-logit bundle: per-bin true conditional hazards at the cohort's event-time quartiles, on the logit scale.
pub fn logit_bundle(cohort: &SyntheticCohort, dataset: &str, model: &str) -> Result<DatasetBundle> {
    let e = quartile_edges(&cohort.records)?.edges();
    let rows = cohort
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut prev = 1.0;
            let logits = e.map(|t| {
                let s = cohort.true_survival(i, t);
                let h = (1.0 - s / prev).clamp(1e-12, 1.0 - 1e-12);
                prev = s;
                (h / (1.0 - h)).ln()
            });
            PredictionRow { patient_id: r.patient_id.clone(), fold: r.fold, payload: Payload::Logits(logits) }
        })
        .collect();
    Ok(DatasetBundle {
        dataset: dataset.to_string(),
        records: cohort.records.clone(),
        predictions: FoldPredictions { model_name: model.to_string(), kind: PredictionKind::HazardLogits, rows },
    })
}
