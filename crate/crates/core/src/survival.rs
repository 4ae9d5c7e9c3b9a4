//! Survival records, product-limit estimation and censoring weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient's observed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub patient_id: String,
    pub time: f64,
    pub event: bool,
    pub fold: u32,
}

impl SurvivalRecord {
    pub fn new(patient_id: impl Into<String>, time: f64, event: bool, fold: u32) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidInput(format!("time must be finite and nonnegative, got {time}")));
        }
        Ok(Self { patient_id: patient_id.into(), time, event, fold })
    }
}

/// Right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    value_before_first: f64,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>, value_before_first: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidInput("step times must be finite and nonnegative".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("step times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || !value_before_first.is_finite() {
            return Err(Error::InvalidInput("step values must be finite".into()));
        }
        Ok(Self { times, values, value_before_first })
    }

    /// Constant function with no jumps.
    pub fn constant(value: f64) -> Self {
        Self { times: Vec::new(), values: Vec::new(), value_before_first: value }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_before_first(&self) -> f64 {
        self.value_before_first
    }

    /// f(t): value at the largest jump time ≤ t.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            self.value_before_first
        } else {
            self.values[idx - 1]
        }
    }

    /// f(t⁻): value at the largest jump time strictly below t.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            self.value_before_first
        } else {
            self.values[idx - 1]
        }
    }

    /// Smallest strictly positive value taken anywhere, including before the first jump.
    pub fn min_positive_value(&self) -> Option<f64> {
        std::iter::once(self.value_before_first)
            .chain(self.values.iter().copied())
            .filter(|v| *v > 0.0)
            .min_by(|a, b| a.total_cmp(b))
    }
}

// Product-limit over (time, indicator) pairs. Events at a tied time leave the risk
// set before censorings do, because the risk set at t is {T >= t}.
fn product_limit(pairs: &mut [(f64, bool)]) -> StepFunction {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = pairs[i].0;
        let at_risk = (n - i) as f64;
        let mut j = i;
        let mut d = 0usize;
        while j < n && pairs[j].0 == t {
            if pairs[j].1 {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk;
            times.push(t);
            values.push(s);
        }
        i = j;
    }
    StepFunction { times, values, value_before_first: 1.0 }
}

/// Kaplan-Meier estimate of the event-time survival function.
pub fn kaplan_meier(records: &[SurvivalRecord]) -> Result<StepFunction> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pairs: Vec<(f64, bool)> = records.iter().map(|r| (r.time, r.event)).collect();
    Ok(product_limit(&mut pairs))
}

/// Kaplan-Meier estimate of the censoring survival function Ĝ.
pub fn censoring_km(records: &[SurvivalRecord]) -> Result<StepFunction> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pairs: Vec<(f64, bool)> = records.iter().map(|r| (r.time, !r.event)).collect();
    Ok(product_limit(&mut pairs))
}

/// Median with the midpoint convention for even counts. `None` on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Median observed event time, the default evaluation horizon.
pub fn median_event_time(records: &[SurvivalRecord]) -> Result<f64> {
    let times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    median(&times).ok_or_else(|| Error::InsufficientEvents("no events to take a median over".into()))
}

/// Inverse-probability-of-censoring weights at one horizon.
///
/// `effective_sample_size`, `nonzero_ess_ratio` and `coefficient_of_variation` are taken over
/// the nonzero weights. `cohort_ess_ratio` and `cohort_cv` treat dropped patients as zero
/// weights and divide by the full cohort size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcwWeights {
    pub weights: Vec<f64>,
    pub dropped_count: usize,
    pub floored_count: usize,
    pub effective_sample_size: f64,
    pub coefficient_of_variation: f64,
    pub nonzero_ess_ratio: f64,
    pub cohort_ess_ratio: f64,
    pub cohort_cv: f64,
}

impl IpcwWeights {
    pub fn nonzero_count(&self) -> usize {
        self.weights.len() - self.dropped_count
    }
}

fn mean_and_pop_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// IPCW weights: 1/Ĝ(T⁻) for events at or before the horizon, 1/Ĝ(horizon) for patients
/// still under observation past it, 0 for patients censored at or before it.
pub fn ipcw_at_horizon(records: &[SurvivalRecord], censor_fn: &StepFunction, horizon: f64) -> Result<IpcwWeights> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let floor = censor_fn.min_positive_value().unwrap_or(1.0);
    let mut floored_count = 0;
    let mut dropped_count = 0;
    let mut inv = |g: f64| {
        if g > 0.0 {
            1.0 / g
        } else {
            floored_count += 1;
            1.0 / floor
        }
    };
    let g_h = censor_fn.eval(horizon);
    let mut weights = Vec::with_capacity(records.len());
    for r in records {
        let w = if r.time > horizon {
            inv(g_h)
        } else if r.event {
            inv(censor_fn.left_limit(r.time))
        } else {
            dropped_count += 1;
            0.0
        };
        weights.push(w);
    }

    let nonzero = weights.iter().copied().filter(|w| *w > 0.0);
    let sum: f64 = nonzero.clone().sum();
    let sum_sq: f64 = nonzero.clone().map(|w| w * w).sum();
    let n_nonzero = weights.len() - dropped_count;
    let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
    let (m, sd) = mean_and_pop_sd(nonzero);
    let cv = if m > 0.0 { sd / m } else { 0.0 };
    let (cm, csd) = mean_and_pop_sd(weights.iter().copied());
    let cohort_cv = if cm > 0.0 { csd / cm } else { 0.0 };
    let n = weights.len();

    Ok(IpcwWeights {
        dropped_count,
        floored_count,
        effective_sample_size: ess,
        coefficient_of_variation: cv,
        nonzero_ess_ratio: if n_nonzero > 0 { ess / n_nonzero as f64 } else { 0.0 },
        cohort_ess_ratio: if n > 0 { ess / n as f64 } else { 0.0 },
        cohort_cv,
        weights,
    })
}
