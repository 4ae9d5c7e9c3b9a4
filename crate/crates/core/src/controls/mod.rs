//! Pipeline-validation controls: penalised Cox baseline, prediction permutation and the
//! KM-shift versus full-Breslow curve comparison.

mod cox;

pub use cox::{breslow_curve, breslow_hazard, cox_fit, cox_predict_risk, CoxModel, COX_GRAD_TOL, COX_MAX_ITER};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curves::{breslow_shift, median_risk};
use crate::error::{Error, Result};
use crate::metrics::{one_calibration, CalibrationResult, OneCalOptions};
use crate::survival::SurvivalRecord;

/// Name of the generator behind every seeded permutation and simulation.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9)";

/// Indices of the `k` columns with the largest sample variance, ties to the lower index,
/// returned in ascending order.
pub fn select_top_variance_features(rows: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let p = rows.first().map_or(0, Vec::len);
    if k > p {
        return Err(Error::KTooLarge);
    }
    let n = rows.len();
    let var: Vec<f64> = (0..p)
        .map(|j| {
            if n < 2 {
                return 0.0;
            }
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        })
        .collect();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Uniform random permutation (Fisher-Yates over a seeded ChaCha8 stream).
pub fn permute_predictions<T: Clone>(predictions: &[T], seed: u64) -> Vec<T> {
    let mut out = predictions.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    out
}

/// 1-calibration of the same fitted model under both curve constructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowComparison {
    pub km_shift: CalibrationResult,
    pub full_breslow: CalibrationResult,
    /// |p_km_shift − p_full_breslow|
    pub delta_p: f64,
}

/// Builds validation curves as KM-shift (centred on the validation median risk) and as
/// full Breslow, and runs 1-calibration on both.
pub fn breslow_validation(
    model: &CoxModel,
    records: &[SurvivalRecord],
    rows: &[Vec<f64>],
    horizon: f64,
    opts: &OneCalOptions,
) -> Result<BreslowComparison> {
    if rows.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: rows.len() });
    }
    let risks: Vec<f64> = rows.iter().map(|x| cox_predict_risk(model, x)).collect::<Result<_>>()?;
    let center = median_risk(&risks)?;
    let km_grid = step_grid(model.baseline_survival.times());
    let h_grid = step_grid(model.baseline_cumulative_hazard.times());
    let mut shifted = Vec::with_capacity(records.len());
    let mut full = Vec::with_capacity(records.len());
    for (r, &risk) in records.iter().zip(&risks) {
        shifted.push(breslow_shift(&r.patient_id, &model.baseline_survival, risk, center, &km_grid)?.curve);
        full.push(breslow_curve(&r.patient_id, model, risk, &h_grid)?);
    }
    let km_shift = one_calibration(&shifted, records, horizon, opts)?;
    let full_breslow = one_calibration(&full, records, horizon, opts)?;
    let delta_p = (km_shift.p_value - full_breslow.p_value).abs();
    Ok(BreslowComparison { km_shift, full_breslow, delta_p })
}

// Jump times of a baseline, or a single point when it has none.
pub(crate) fn step_grid(times: &[f64]) -> Vec<f64> {
    if times.is_empty() {
        vec![0.0]
    } else {
        times.to_vec()
    }
}
