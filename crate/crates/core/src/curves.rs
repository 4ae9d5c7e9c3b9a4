//! Per-patient survival curves from risk scores or discrete hazard logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{median, StepFunction, SurvivalRecord};

/// Bound on |risk − median_risk| in the proportional-hazards shift.
pub const EXPONENT_CLAMP: f64 = 30.0;

/// Survival probabilities on a time grid, evaluated as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub patient_id: String,
    grid: Vec<f64>,
    probs: Vec<f64>,
}

impl SurvivalCurve {
    /// Validates the grid and values. Monotonicity is not repaired here, see [`enforce_monotone`].
    pub fn new(patient_id: impl Into<String>, grid: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if grid.len() != probs.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: probs.len() });
        }
        if grid.is_empty() {
            return Err(Error::GridTooSmall);
        }
        if grid.iter().any(|t| !t.is_finite() || *t < 0.0) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("curve grid must be finite, nonnegative and strictly increasing".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("curve probabilities must be finite".into()));
        }
        Ok(Self { patient_id: patient_id.into(), grid, probs })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn last_time(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    /// S(t), 1 before the first grid point.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.grid.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.probs[idx - 1]
        }
    }

    /// Apply `f` to every probability, keeping the grid.
    pub fn map_probs(&self, f: impl Fn(f64) -> f64) -> SurvivalCurve {
        SurvivalCurve {
            patient_id: self.patient_id.clone(),
            grid: self.grid.clone(),
            probs: self.probs.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.probs.iter().all(|p| (0.0..=1.0).contains(p)) && self.probs.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Running minimum left to right, clamped to [0, 1].
pub fn enforce_monotone(curve: SurvivalCurve) -> SurvivalCurve {
    let mut running = f64::INFINITY;
    let probs = curve
        .probs
        .iter()
        .map(|&p| {
            running = running.min(p);
            running.clamp(0.0, 1.0)
        })
        .collect();
    SurvivalCurve { probs, ..curve }
}

/// Four strictly increasing positive bin edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEdges([f64; 4]);

impl BinEdges {
    pub fn new(edges: [f64; 4]) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite() || *e <= 0.0) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateQuartiles);
        }
        Ok(Self(edges))
    }

    pub fn edges(&self) -> [f64; 4] {
        self.0
    }
}

/// How the 4-bin survival values are placed on the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// S_b on [edge_{b−1}, edge_b), S_4 at the last edge.
    #[default]
    Step,
    /// Linear through (0, 1), (edge_1, S_1), …, (edge_4, S_4).
    Linear,
}

impl Interpolation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Interpolation::Step => "step",
            Interpolation::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Interpolation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Interpolation::Step),
            "linear" => Ok(Interpolation::Linear),
            other => Err(Error::InvalidInput(format!("unknown interpolation '{other}'"))),
        }
    }
}

/// Median risk used to center the proportional-hazards shift.
pub fn median_risk(risks: &[f64]) -> Result<f64> {
    median(risks).ok_or(Error::EmptyRisks)
}

/// Curve from a KM-style baseline shifted by exp(risk − median_risk).
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedCurve {
    pub curve: SurvivalCurve,
    /// True when the exponent had to be clamped to ±[`EXPONENT_CLAMP`].
    pub clamped: bool,
}

/// S(t|x) = S0(t)^exp(risk − median_risk), sampled on `grid`.
pub fn breslow_shift(
    patient_id: &str,
    baseline: &StepFunction,
    risk: f64,
    median_risk: f64,
    grid: &[f64],
) -> Result<ShiftedCurve> {
    let raw = risk - median_risk;
    let d = raw.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    let clamped = d != raw || raw.is_nan();
    let d = if raw.is_nan() { 0.0 } else { d };
    let factor = d.exp();
    let probs = grid
        .iter()
        .map(|&t| {
            let s0 = baseline.eval(t);
            if s0 <= 0.0 {
                0.0
            } else if s0 >= 1.0 {
                1.0
            } else {
                (factor * s0.ln()).exp()
            }
        })
        .collect();
    let curve = enforce_monotone(SurvivalCurve::new(patient_id, grid.to_vec(), probs)?);
    Ok(ShiftedCurve { curve, clamped })
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise standard logistic transform.
pub fn hazards_from_logits(logits: [f64; 4]) -> [f64; 4] {
    logits.map(logistic)
}

/// Cumulative bin survivals S_b = Π_{j≤b} (1 − h_j).
pub fn bin_survivals(hazards: [f64; 4]) -> [f64; 4] {
    let mut s = 1.0;
    hazards.map(|h| {
        s *= 1.0 - h;
        s
    })
}

/// Evenly spaced sampling grid on [0, last edge].
pub fn hazard_grid(edges: &BinEdges, n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::GridTooSmall);
    }
    let end = edges.0[3];
    let step = end / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| if i + 1 == n_points { end } else { i as f64 * step }).collect())
}

/// Survival curve from four discrete-time hazards sampled at `n_points` times.
pub fn curve_from_hazards(
    patient_id: &str,
    hazards: [f64; 4],
    edges: &BinEdges,
    n_points: usize,
    interpolation: Interpolation,
) -> Result<SurvivalCurve> {
    if hazards.iter().any(|h| !h.is_finite() || *h < 0.0 || *h > 1.0) {
        return Err(Error::InvalidInput("hazards must lie in [0, 1]".into()));
    }
    let grid = hazard_grid(edges, n_points)?;
    let s = bin_survivals(hazards);
    let e = edges.0;
    let probs = grid
        .iter()
        .map(|&t| match interpolation {
            Interpolation::Step => {
                // bins are [0, e1), [e1, e2), [e2, e3), [e3, e4] with S_4 from e4 on
                let b = e[..3].partition_point(|&x| x <= t);
                if t >= e[3] {
                    s[3]
                } else {
                    s[b]
                }
            }
            Interpolation::Linear => {
                let knots_t = [0.0, e[0], e[1], e[2], e[3]];
                let knots_s = [1.0, s[0], s[1], s[2], s[3]];
                let k = knots_t[1..].partition_point(|&x| x < t).min(3);
                let (t0, t1) = (knots_t[k], knots_t[k + 1]);
                let (s0, s1) = (knots_s[k], knots_s[k + 1]);
                let frac = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                s0 + frac * (s1 - s0)
            }
        })
        .collect();
    Ok(enforce_monotone(SurvivalCurve::new(patient_id, grid, probs)?))
}

/// Linear-interpolation percentile (order-statistic position q·(n−1)) of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles of the uncensored event times of a training fold.
pub fn quartile_edges(training: &[SurvivalRecord]) -> Result<BinEdges> {
    let mut t: Vec<f64> = training.iter().filter(|r| r.event).map(|r| r.time).collect();
    if t.len() < 4 {
        return Err(Error::InsufficientQuartileEvents);
    }
    t.sort_by(|a, b| a.total_cmp(b));
    BinEdges::new([0.25, 0.5, 0.75, 1.0].map(|q| percentile_sorted(&t, q)))
}
