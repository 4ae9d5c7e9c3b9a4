use std::collections::BTreeMap;

use super::chisq::chisq_sf;
use super::one_cal::{CalibrationResult, GroupSummary};
use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

/// D-calibration: chi-square test of PIT values S_i(T_i) against uniformity.
///
/// Events add unit mass to the bin holding their PIT value. A censored patient with PIT u
/// spreads unit mass uniformly over [0, u].
pub fn d_calibration(curves: &[SurvivalCurve], records: &[SurvivalRecord], n_bins: usize) -> Result<CalibrationResult> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if curves.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: curves.len() });
    }
    if n_bins < 2 {
        return Err(Error::InvalidInput("at least 2 bins are required".into()));
    }
    let width = 1.0 / n_bins as f64;
    let bin_of = |u: f64| ((u * n_bins as f64).floor() as usize).min(n_bins - 1);
    let mut mass = vec![0.0; n_bins];
    let mut size = vec![0usize; n_bins];
    let mut censored_at_zero = 0usize;

    for (c, r) in curves.iter().zip(records) {
        let u = c.eval(r.time).clamp(0.0, 1.0);
        size[bin_of(u)] += 1;
        if r.event {
            mass[bin_of(u)] += 1.0;
        } else if u <= 0.0 {
            censored_at_zero += 1;
            mass[0] += 1.0;
        } else {
            for (b, m) in mass.iter_mut().enumerate() {
                let lo = b as f64 * width;
                if lo >= u {
                    break;
                }
                let hi = if b + 1 == n_bins { 1.0 } else { (b + 1) as f64 * width };
                *m += (hi.min(u) - lo) / u;
            }
        }
    }

    let n = records.len() as f64;
    let expected = n / n_bins as f64;
    let statistic: f64 = mass.iter().map(|m| (m - expected).powi(2) / expected).sum();
    let dof = n_bins - 1;
    let groups = mass
        .iter()
        .zip(&size)
        .map(|(&m, &s)| GroupSummary { mean_predicted: width, observed: m / n, weighted_n: m, size: s })
        .collect();
    Ok(CalibrationResult {
        statistic,
        dof,
        p_value: chisq_sf(statistic, dof),
        groups,
        horizon: None,
        diagnostics: BTreeMap::from([
            ("censored_zero_survival".to_string(), censored_at_zero as f64),
            ("total_mass".to_string(), mass.iter().sum()),
        ]),
    })
}
