use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::chisq::chisq_sf;
use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::survival::{censoring_km, ipcw_at_horizon, IpcwWeights, SurvivalRecord};

/// Grouping and degrees-of-freedom settings for the 1-calibration test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCalOptions {
    pub n_groups: usize,
    /// dof = retained groups − dof_offset.
    pub dof_offset: usize,
}

impl Default for OneCalOptions {
    fn default() -> Self {
        Self { n_groups: 10, dof_offset: 1 }
    }
}

/// One row of the observed/expected table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Weighted mean predicted event probability (D-calibration: expected bin fraction).
    pub mean_predicted: f64,
    /// Weighted observed event fraction (D-calibration: observed bin fraction).
    pub observed: f64,
    pub weighted_n: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub groups: Vec<GroupSummary>,
    pub horizon: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub group_index: usize,
    pub mean_predicted_survival: f64,
    pub observed_survival: f64,
    pub weighted_n: f64,
}

struct Group {
    e: f64,
    o: f64,
    n: f64,
    size: usize,
}

impl Group {
    fn p_bar(&self) -> f64 {
        self.e / self.n
    }

    fn degenerate(&self) -> bool {
        let p = self.p_bar();
        p <= 0.0 || p >= 1.0
    }

    fn absorb(&mut self, other: Group) {
        self.e += other.e;
        self.o += other.o;
        self.n += other.n;
        self.size += other.size;
    }
}

// Merge degenerate groups (p̄ ∈ {0,1}) into a neighbour until none remain.
fn merge_degenerate(mut groups: Vec<Group>) -> (Vec<Group>, usize) {
    let mut merges = 0;
    while groups.len() >= 2 {
        let Some(i) = groups.iter().position(Group::degenerate) else { break };
        let into_right = i + 1 < groups.len() && (groups[i].p_bar() <= 0.0 || i == 0);
        let g = groups.remove(i);
        if into_right {
            groups[i].absorb(g);
        } else {
            groups[i - 1].absorb(g);
        }
        merges += 1;
    }
    (groups, merges)
}

/// 1-calibration from per-patient predicted event probabilities at `horizon`.
pub fn one_calibration_probs(
    event_probs: &[f64],
    records: &[SurvivalRecord],
    horizon: f64,
    opts: &OneCalOptions,
) -> Result<CalibrationResult> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if event_probs.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: event_probs.len() });
    }
    if opts.n_groups < 2 {
        return Err(Error::InvalidInput("at least 2 groups are required".into()));
    }
    if event_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput("predicted probabilities must lie in [0, 1]".into()));
    }
    if !records.iter().any(|r| r.event && r.time <= horizon) {
        return Err(Error::InsufficientEvents("no event at or before the horizon".into()));
    }
    let g = censoring_km(records)?;
    let w = ipcw_at_horizon(records, &g, horizon)?;
    let mut idx: Vec<usize> = (0..records.len()).filter(|&i| w.weights[i] > 0.0).collect();
    if idx.len() < 2 * opts.n_groups {
        return Err(Error::InsufficientEvents(format!(
            "{} weighted patients, need at least {}",
            idx.len(),
            2 * opts.n_groups
        )));
    }
    idx.sort_by(|&a, &b| {
        event_probs[a].total_cmp(&event_probs[b]).then_with(|| records[a].patient_id.cmp(&records[b].patient_id))
    });

    let m = idx.len();
    let (base, extra) = (m / opts.n_groups, m % opts.n_groups);
    let mut groups = Vec::with_capacity(opts.n_groups);
    let mut start = 0;
    for gi in 0..opts.n_groups {
        let len = base + usize::from(gi < extra);
        let mut grp = Group { e: 0.0, o: 0.0, n: 0.0, size: len };
        for &i in &idx[start..start + len] {
            let wi = w.weights[i];
            let y = if records[i].event && records[i].time <= horizon { 1.0 } else { 0.0 };
            grp.e += wi * event_probs[i];
            grp.o += wi * y;
            grp.n += wi;
        }
        groups.push(grp);
        start += len;
    }

    let (groups, merges) = merge_degenerate(groups);
    if groups.len() < 2 || groups.iter().any(Group::degenerate) || groups.len() <= opts.dof_offset {
        return Err(Error::DegenerateGrouping);
    }
    let statistic: f64 = groups
        .iter()
        .map(|g| {
            let p = g.p_bar();
            (g.o - g.e).powi(2) / (g.n * p * (1.0 - p))
        })
        .sum();
    let dof = groups.len() - opts.dof_offset;

    Ok(CalibrationResult {
        statistic,
        dof,
        p_value: chisq_sf(statistic, dof),
        groups: groups
            .iter()
            .map(|g| GroupSummary { mean_predicted: g.p_bar(), observed: g.o / g.n, weighted_n: g.n, size: g.size })
            .collect(),
        horizon: Some(horizon),
        diagnostics: ipcw_diagnostics(&w, merges),
    })
}

fn ipcw_diagnostics(w: &IpcwWeights, merges: usize) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("ess".to_string(), w.effective_sample_size),
        ("ess_ratio".to_string(), w.nonzero_ess_ratio),
        ("weight_cv".to_string(), w.coefficient_of_variation),
        ("cohort_ess_ratio".to_string(), w.cohort_ess_ratio),
        ("cohort_weight_cv".to_string(), w.cohort_cv),
        ("dropped".to_string(), w.dropped_count as f64),
        ("floored_weights".to_string(), w.floored_count as f64),
        ("merged_groups".to_string(), merges as f64),
        ("weighted_patients".to_string(), w.nonzero_count() as f64),
    ])
}

/// 1-calibration with p_i = 1 − S_i(horizon).
pub fn one_calibration(
    curves: &[SurvivalCurve],
    records: &[SurvivalRecord],
    horizon: f64,
    opts: &OneCalOptions,
) -> Result<CalibrationResult> {
    if curves.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: curves.len() });
    }
    let probs: Vec<f64> = curves.iter().map(|c| 1.0 - c.eval(horizon)).collect();
    one_calibration_probs(&probs, records, horizon, opts)
}

/// Group-level (predicted survival, observed survival) pairs for plotting.
pub fn calibration_points(
    curves: &[SurvivalCurve],
    records: &[SurvivalRecord],
    horizon: f64,
    opts: &OneCalOptions,
) -> Result<Vec<CalibrationPoint>> {
    Ok(points_from_result(&one_calibration(curves, records, horizon, opts)?))
}

impl CalibrationResult {
    pub fn points(&self) -> Vec<CalibrationPoint> {
        points_from_result(self)
    }
}

fn points_from_result(r: &CalibrationResult) -> Vec<CalibrationPoint> {
    r.groups
        .iter()
        .enumerate()
        .map(|(i, g)| CalibrationPoint {
            group_index: i,
            mean_predicted_survival: 1.0 - g.mean_predicted,
            observed_survival: 1.0 - g.observed,
            weighted_n: g.weighted_n,
        })
        .collect()
}
