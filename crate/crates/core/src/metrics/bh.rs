use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of the Benjamini-Hochberg step-up procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhDecision {
    pub raw_p: Vec<f64>,
    /// Number of rejected hypotheses (largest k with p_(k) ≤ k·fdr/m, or 0).
    pub adjusted_threshold_rank: usize,
    pub rejected: Vec<bool>,
    /// BH-adjusted p-values, aligned to input order.
    pub adjusted_p: Vec<f64>,
    pub fdr: f64,
}

pub fn benjamini_hochberg(p_values: &[f64], fdr: f64) -> Result<BhDecision> {
    if !(fdr > 0.0 && fdr < 1.0) {
        return Err(Error::InvalidInput(format!("fdr must lie in (0, 1), got {fdr}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let mut k = 0;
    for (idx, &i) in order.iter().enumerate() {
        if p_values[i] <= (idx + 1) as f64 * fdr / m as f64 {
            k = idx + 1;
        }
    }
    let mut rejected = vec![false; m];
    for &i in &order[..k] {
        rejected[i] = true;
    }

    let mut adjusted_p = vec![0.0; m];
    let mut running = 1.0f64;
    for (idx, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * m as f64 / (idx + 1) as f64);
        adjusted_p[i] = running;
    }

    Ok(BhDecision { raw_p: p_values.to_vec(), adjusted_threshold_rank: k, rejected, adjusted_p, fdr })
}
