use serde::{Deserialize, Serialize};

use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::survival::{StepFunction, SurvivalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierPoint {
    pub score: f64,
    /// Event patients observed after the last grid point of their curve.
    pub horizon_exceeded: usize,
    pub floored_weights: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedBrier {
    /// Trapezoidal integral over the grid.
    pub raw: f64,
    /// `raw` divided by the grid span.
    pub normalized: f64,
    pub span: f64,
    pub horizon_exceeded: usize,
    pub floored_weights: usize,
}

fn horizon_exceeded(curves: &[SurvivalCurve], records: &[SurvivalRecord]) -> usize {
    curves.iter().zip(records).filter(|(c, r)| r.event && r.time > c.last_time()).count()
}

fn check(curves: &[SurvivalCurve], records: &[SurvivalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if curves.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: curves.len() });
    }
    Ok(())
}

// Score at t plus the number of floored censoring-survival evaluations.
fn score_at(curves: &[SurvivalCurve], records: &[SurvivalRecord], censor_fn: &StepFunction, floor: f64, t: f64) -> (f64, usize) {
    let mut floored = 0;
    let mut inv = |g: f64| {
        if g > 0.0 {
            1.0 / g
        } else {
            floored += 1;
            1.0 / floor
        }
    };
    let g_t = censor_fn.eval(t);
    let mut sum = 0.0;
    for (c, r) in curves.iter().zip(records) {
        let s = c.eval(t);
        if r.time <= t {
            if r.event {
                sum += s * s * inv(censor_fn.left_limit(r.time));
            }
        } else {
            sum += (1.0 - s) * (1.0 - s) * inv(g_t);
        }
    }
    (sum / records.len() as f64, floored)
}

/// IPCW Brier score at time `t`. Curves are carried forward past their last grid point.
pub fn brier_score(
    curves: &[SurvivalCurve],
    records: &[SurvivalRecord],
    censor_fn: &StepFunction,
    t: f64,
) -> Result<BrierPoint> {
    check(curves, records)?;
    let floor = censor_fn.min_positive_value().unwrap_or(1.0);
    let (score, floored_weights) = score_at(curves, records, censor_fn, floor, t);
    Ok(BrierPoint { score, horizon_exceeded: horizon_exceeded(curves, records), floored_weights })
}

/// Trapezoidal integral of the Brier score over `grid`, raw and divided by the span.
pub fn integrated_brier(
    curves: &[SurvivalCurve],
    records: &[SurvivalRecord],
    censor_fn: &StepFunction,
    grid: &[f64],
) -> Result<IntegratedBrier> {
    check(curves, records)?;
    if grid.len() < 2 {
        return Err(Error::GridTooSmall);
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("integration grid must be finite and strictly increasing".into()));
    }
    let floor = censor_fn.min_positive_value().unwrap_or(1.0);
    let mut floored_weights = 0;
    let values: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let (s, f) = score_at(curves, records, censor_fn, floor, t);
            floored_weights += f;
            s
        })
        .collect();
    let raw: f64 = grid.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0])).sum();
    let span = grid[grid.len() - 1] - grid[0];
    Ok(IntegratedBrier {
        raw,
        normalized: raw / span,
        span,
        horizon_exceeded: horizon_exceeded(curves, records),
        floored_weights,
    })
}

/// `n_points` evenly spaced times from the earliest to the latest observed time.
pub fn ibs_grid(records: &[SurvivalRecord], n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::GridTooSmall);
    }
    let lo = records.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.time).fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(Error::GridTooSmall);
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| if i + 1 == n_points { hi } else { lo + i as f64 * step }).collect())
}
