use serde::{Deserialize, Serialize};

use crate::curves::{enforce_monotone, SurvivalCurve};
use crate::error::{Error, Result};

/// Nondecreasing piecewise-linear map from predicted event probability to recalibrated probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl IsotonicMap {
    /// Linear interpolation between breakpoints, constant beyond the ends.
    pub fn predict(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        let k = bp.partition_point(|&b| b <= x);
        if k == 0 {
            return self.levels[0];
        }
        if k == bp.len() {
            return self.levels[bp.len() - 1];
        }
        let (x0, x1) = (bp[k - 1], bp[k]);
        let (y0, y1) = (self.levels[k - 1], self.levels[k]);
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    }
}

/// Pool-adjacent-violators on weighted blocks. Returns one fitted value per block.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // stack of (mean, weight, block count)
    let mut stack: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(m, pw, c)) = stack.last() {
            if m <= cur.0 {
                break;
            }
            stack.pop();
            let tw = pw + cur.1;
            cur = ((m * pw + cur.0 * cur.1) / tw, tw, c + cur.2);
        }
        stack.push(cur);
    }
    stack.iter().flat_map(|&(m, _, c)| std::iter::repeat_n(m, c)).collect()
}

/// Least-squares nondecreasing fit of `labels` on `pred`, optionally weighted.
pub fn isotonic_fit_weighted(pred: &[f64], labels: &[f64], weights: &[f64]) -> Result<IsotonicMap> {
    if pred.len() != labels.len() || pred.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: labels.len().min(weights.len()) });
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput("isotonic fit needs at least 2 points".into()));
    }
    if pred.iter().chain(labels).chain(weights).any(|v| !v.is_finite()) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidInput("isotonic inputs must be finite with nonnegative weights".into()));
    }
    let mut order: Vec<usize> = (0..pred.len()).filter(|&i| weights[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::InvalidInput("isotonic fit needs positive total weight".into()));
    }
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    let mut xs = Vec::new();
    let mut means = Vec::new();
    let mut ws = Vec::new();
    for &i in &order {
        if xs.last() == Some(&pred[i]) {
            let k = means.len() - 1;
            means[k] += weights[i] * labels[i];
            ws[k] += weights[i];
        } else {
            xs.push(pred[i]);
            means.push(weights[i] * labels[i]);
            ws.push(weights[i]);
        }
    }
    for (m, w) in means.iter_mut().zip(&ws) {
        *m /= w;
    }
    let levels = pava(&means, &ws);
    Ok(IsotonicMap { breakpoints: xs, levels })
}

/// Unweighted isotonic fit.
pub fn isotonic_fit(pred: &[f64], labels: &[f64]) -> Result<IsotonicMap> {
    isotonic_fit_weighted(pred, labels, &vec![1.0; pred.len()])
}

/// S'(t) = 1 − iso(1 − S(t)) pointwise, then monotone repair.
pub fn isotonic_apply(map: &IsotonicMap, curve: &SurvivalCurve) -> SurvivalCurve {
    enforce_monotone(curve.map_probs(|s| 1.0 - map.predict(1.0 - s).clamp(0.0, 1.0)))
}
