use serde::{Deserialize, Serialize};

use crate::curves::{enforce_monotone, SurvivalCurve};
use crate::error::{Error, Result};
use crate::survival::{censoring_km, ipcw_at_horizon, SurvivalRecord};

pub const RIDGE: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
pub const GRAD_TOL: f64 = 1e-8;

/// P(event ≤ horizon | s) = logistic(slope·s + intercept), with s the predicted survival at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler {
    pub slope: f64,
    pub intercept: f64,
    pub horizon: f64,
    pub n_fit: usize,
    pub iterations: usize,
}

/// Treatment of patients censored before the horizon when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlattWeighting {
    /// Drop them; everyone else has weight 1.
    #[default]
    ExcludeCensored,
    /// Drop them and weight the rest by their IPCW weight at the horizon.
    Ipcw,
}

impl PlattWeighting {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlattWeighting::ExcludeCensored => "exclude_censored",
            PlattWeighting::Ipcw => "ipcw",
        }
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^z) without overflow
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

// Weighted mean negative log-likelihood plus ridge.
fn objective(x: &[f64], y: &[f64], w: &[f64], total: f64, a: f64, b: f64) -> f64 {
    let nll: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| {
            let z = a * xi + b;
            wi * (softplus(z) - yi * z)
        })
        .sum();
    nll / total + 0.5 * RIDGE * (a * a + b * b)
}

/// Ridge-stabilised weighted logistic regression of y on x by Newton's method with step halving.
/// Returns (slope, intercept, iterations).
pub fn logistic_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64, usize)> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateLabels);
    }
    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut f = objective(x, y, w, total, a, b);
    for iter in 0..=MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
            let p = logistic(a * xi + b);
            let r = wi * (p - yi);
            let v = wi * p * (1.0 - p);
            ga += r * xi;
            gb += r;
            haa += v * xi * xi;
            hab += v * xi;
            hbb += v;
        }
        ga = ga / total + RIDGE * a;
        gb = gb / total + RIDGE * b;
        haa = haa / total + RIDGE;
        hab /= total;
        hbb = hbb / total + RIDGE;
        if (ga * ga + gb * gb).sqrt() < GRAD_TOL {
            return Ok((a, b, iter));
        }
        if iter == MAX_ITER {
            break;
        }
        let det = haa * hbb - hab * hab;
        if !(det > 0.0) {
            return Err(Error::FitDiverged);
        }
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(haa * gb - hab * ga) / det;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(x, y, w, total, na, nb);
            if nf <= f {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::FitDiverged);
            }
        }
    }
    Err(Error::FitDiverged)
}

/// Fit a Platt scaler on predicted survival at `horizon`.
pub fn platt_fit(
    pred_survival: &[f64],
    records: &[SurvivalRecord],
    horizon: f64,
    weighting: PlattWeighting,
) -> Result<PlattScaler> {
    if pred_survival.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: pred_survival.len() });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weights = match weighting {
        PlattWeighting::ExcludeCensored => None,
        PlattWeighting::Ipcw => Some(ipcw_at_horizon(records, &censoring_km(records)?, horizon)?.weights),
    };
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        let label = if r.time > horizon {
            0.0
        } else if r.event {
            1.0
        } else {
            continue;
        };
        x.push(pred_survival[i]);
        y.push(label);
        w.push(weights.as_ref().map_or(1.0, |ws| ws[i]));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if x.len() < 2 || positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels);
    }
    let (slope, intercept, iterations) = logistic_fit(&x, &y, &w)?;
    Ok(PlattScaler { slope, intercept, horizon, n_fit: x.len(), iterations })
}

impl PlattScaler {
    /// Recalibrated survival probability for a raw survival probability.
    pub fn survival(&self, s: f64) -> f64 {
        1.0 - logistic(self.slope * s + self.intercept)
    }
}

/// S'(t) = 1 − logistic(slope·S(t) + intercept) at every grid point, then monotone repair.
pub fn platt_apply(scaler: &PlattScaler, curve: &SurvivalCurve) -> SurvivalCurve {
    enforce_monotone(curve.map_probs(|s| scaler.survival(s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(i: usize, t: f64, e: bool) -> SurvivalRecord {
        SurvivalRecord::new(format!("p{i}"), t, e, 0).unwrap()
    }

    #[test]
    fn recovers_known_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let records: Vec<_> = s
            .iter()
            .enumerate()
            .map(|(i, &si)| {
                let event = rng.random::<f64>() < logistic(-4.0 * si + 2.0);
                rec(i, if event { 1.0 } else { 3.0 }, true)
            })
            .collect();
        let fit = platt_fit(&s, &records, 2.0, PlattWeighting::ExcludeCensored).unwrap();
        assert!((fit.slope + 4.0).abs() < 0.15, "{fit:?}");
        assert!((fit.intercept - 2.0).abs() < 0.15, "{fit:?}");
        assert_eq!(fit.n_fit, n);
    }

    #[test]
    fn single_class_is_degenerate() {
        let records: Vec<_> = (0..5).map(|i| rec(i, 3.0, true)).collect();
        assert_eq!(
            platt_fit(&[0.5; 5], &records, 2.0, PlattWeighting::ExcludeCensored),
            Err(Error::DegenerateLabels)
        );
    }

    #[test]
    fn separable_pair_stays_finite() {
        let records = vec![rec(0, 1.0, true), rec(1, 3.0, true)];
        let fit = platt_fit(&[0.0, 1.0], &records, 2.0, PlattWeighting::ExcludeCensored).unwrap();
        assert!(fit.slope.is_finite() && fit.intercept.is_finite());
        assert!(fit.slope < 0.0);
        // stationarity of 0.5·[ln(1+e^(−b)) + ln(1+e^(a+b))] + 0.5e-8·(a² + b²)
        let (a, b) = (fit.slope, fit.intercept);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let ga = 0.5 * sig(a + b) + 1e-8 * a;
        let gb = 0.5 * (sig(a + b) - sig(-b)) + 1e-8 * b;
        assert!(ga.hypot(gb) < 1e-8, "{ga} {gb}");
        assert!(a < -10.0);
    }

    #[test]
    fn excludes_early_censored() {
        let mut records: Vec<_> = (0..6).map(|i| rec(i, if i % 2 == 0 { 1.0 } else { 3.0 }, true)).collect();
        records.push(rec(9, 0.5, false));
        let s = [0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.1];
        let fit = platt_fit(&s, &records, 2.0, PlattWeighting::ExcludeCensored).unwrap();
        assert_eq!(fit.n_fit, 6);
        let fit = platt_fit(&s, &records, 2.0, PlattWeighting::Ipcw).unwrap();
        assert_eq!(fit.n_fit, 6);
    }

    #[test]
    fn apply_examples() {
        let scaler = PlattScaler { slope: -4.0, intercept: 2.0, horizon: 1.0, n_fit: 10, iterations: 0 };
        assert_eq!(scaler.survival(0.5), 0.5);
        let c = SurvivalCurve::new("a", vec![1.0, 2.0, 3.0, 4.0], vec![0.9, 0.6, 0.4, 0.1]).unwrap();
        let raw = c.map_probs(|s| scaler.survival(s));
        assert!(raw.probs().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(platt_apply(&scaler, &c), raw);

        let bad = PlattScaler { slope: 3.0, intercept: -1.0, ..scaler };
        let out = platt_apply(&bad, &c);
        assert!(out.is_monotone());
        assert_eq!(enforce_monotone(out.clone()), out);
    }
}
