use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curves::{enforce_monotone, SurvivalCurve};
use crate::error::{Error, Result};
use crate::survival::{kaplan_meier, StepFunction, SurvivalRecord};

pub const COX_GRAD_TOL: f64 = 1e-7;
pub const COX_MAX_ITER: usize = 100;

/// L2-penalised Cox proportional-hazards fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    /// Coefficients on the original feature scale.
    pub coefficients: Vec<f64>,
    pub feature_means: Vec<f64>,
    /// Standardisation scales (sample sd, 1 for constant features).
    pub feature_scales: Vec<f64>,
    pub penalizer: f64,
    /// Kaplan-Meier of the training records.
    pub baseline_survival: StepFunction,
    /// Breslow cumulative baseline hazard at centred covariates.
    pub baseline_cumulative_hazard: StepFunction,
    pub iterations: usize,
    /// Penalised objective after each accepted step, starting at β = 0.
    pub objective_trace: Vec<f64>,
}

struct Standardized {
    z: Vec<Vec<f64>>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

fn standardize(rows: &[Vec<f64>], p: usize) -> Standardized {
    let n = rows.len();
    let mut means = vec![0.0; p];
    for r in rows {
        for (m, x) in means.iter_mut().zip(r) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut scales = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            scales[j] += (r[j] - means[j]).powi(2);
        }
    }
    for s in scales.iter_mut() {
        *s = if n > 1 { (*s / (n - 1) as f64).sqrt() } else { 0.0 };
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    let z = rows.iter().map(|r| (0..p).map(|j| (r[j] - means[j]) / scales[j]).collect()).collect();
    Standardized { z, means, scales }
}

// Penalised negative Breslow partial log-likelihood with gradient and Hessian.
fn penalized(z: &[Vec<f64>], records: &[SurvivalRecord], order: &[usize], beta: &DVector<f64>, penalizer: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut nll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        while j < order.len() && records[order[j]].time == t {
            let k = order[j];
            let zk = DVector::from_column_slice(&z[k]);
            let eta = beta.dot(&zk);
            let e = eta.exp();
            s0 += e;
            s1.axpy(e, &zk, 1.0);
            s2.ger(e, &zk, &zk, 1.0);
            j += 1;
        }
        let mean = &s1 / s0;
        for &k in &order[i..j] {
            if records[k].event {
                let zk = DVector::from_column_slice(&z[k]);
                nll -= beta.dot(&zk) - s0.ln();
                grad -= &zk - &mean;
                hess += &s2 / s0 - &mean * mean.transpose();
            }
        }
        i = j;
    }
    nll += 0.5 * penalizer * beta.norm_squared();
    grad.axpy(penalizer, beta, 1.0);
    for d in 0..p {
        hess[(d, d)] += penalizer;
    }
    (nll, grad, hess)
}

const ROUNDOFF_DECREMENT: f64 = 1e-13;

/// Newton-Raphson with step halving on standardised features.
pub fn cox_fit(rows: &[Vec<f64>], records: &[SurvivalRecord], penalizer: f64) -> Result<CoxModel> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: rows.len() });
    }
    if !(penalizer >= 0.0) {
        return Err(Error::InvalidInput("penalizer must be nonnegative".into()));
    }
    let p = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, got: r.len() });
    }
    if !records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    let st = standardize(rows, p);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));

    let mut beta = DVector::zeros(p);
    let (mut f, mut g, mut h) = penalized(&st.z, records, &order, &beta, penalizer);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = g.norm() < COX_GRAD_TOL;
    while !converged && iterations < COX_MAX_ITER {
        let chol = h.clone().cholesky().ok_or(Error::CoxDiverged)?;
        let step = chol.solve(&(-&g));
        // Newton decrement at rounding level: the objective cannot be lowered further in f64
        let decrement = -g.dot(&step);
        if decrement <= ROUNDOFF_DECREMENT * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let mut scale = 1.0;
        loop {
            let cand = &beta + &step * scale;
            let (cf, cg, ch) = penalized(&st.z, records, &order, &cand, penalizer);
            if cf.is_finite() && cf <= f {
                beta = cand;
                f = cf;
                g = cg;
                h = ch;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::CoxDiverged);
            }
        }
        trace.push(f);
        iterations += 1;
        converged = g.norm() < COX_GRAD_TOL;
    }
    if !converged {
        return Err(Error::CoxDiverged);
    }

    let coefficients: Vec<f64> = (0..p).map(|j| beta[j] / st.scales[j]).collect();
    let risks: Vec<f64> = st.z.iter().map(|zi| zi.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()).collect();
    Ok(CoxModel {
        coefficients,
        feature_means: st.means,
        feature_scales: st.scales,
        penalizer,
        baseline_survival: kaplan_meier(records)?,
        baseline_cumulative_hazard: breslow_hazard(records, &risks)?,
        iterations,
        objective_trace: trace,
    })
}

/// H0(t) = Σ_{t_i ≤ t} d_i / Σ_{j: T_j ≥ t_i} exp(risk_j).
pub fn breslow_hazard(records: &[SurvivalRecord], risks: &[f64]) -> Result<StepFunction> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
    let mut jumps = Vec::new();
    let mut denom = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        let mut d = 0usize;
        while j < order.len() && records[order[j]].time == t {
            denom += risks[order[j]].exp();
            d += usize::from(records[order[j]].event);
            j += 1;
        }
        if d > 0 {
            jumps.push((t, d as f64 / denom));
        }
        i = j;
    }
    jumps.reverse();
    let mut cum = 0.0;
    let (times, values): (Vec<f64>, Vec<f64>) = jumps
        .into_iter()
        .map(|(t, dh)| {
            cum += dh;
            (t, cum)
        })
        .unzip();
    StepFunction::new(times, values, 0.0)
}

/// Linear predictor β·(x − means).
pub fn cox_predict_risk(model: &CoxModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.coefficients.len() {
        return Err(Error::DimensionMismatch { expected: model.coefficients.len(), got: features.len() });
    }
    Ok(model.coefficients.iter().zip(features).zip(&model.feature_means).map(|((b, x), m)| b * (x - m)).sum())
}

/// S(t|x) = exp(−H0(t)·exp(risk)) sampled on `grid`.
pub fn breslow_curve(patient_id: &str, model: &CoxModel, risk: f64, grid: &[f64]) -> Result<SurvivalCurve> {
    let factor = risk.exp();
    let probs = grid.iter().map(|&t| (-model.baseline_cumulative_hazard.eval(t) * factor).exp()).collect();
    Ok(enforce_monotone(SurvivalCurve::new(patient_id, grid.to_vec(), probs)?))
}
