//! Synthetic survival cohorts with known truth and Monte Carlo harnesses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::metrics::{one_calibration_probs, OneCalOptions};
use crate::survival::{censoring_km, ipcw_at_horizon, median_event_time, SurvivalRecord};

/// Pilot cohort size used to estimate event and censoring fractions.
pub const PILOT_SIZE: usize = 20_000;
/// Attempts per replicate before the harness gives up.
pub const MAX_ATTEMPTS: u64 = 50;
const PILOT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_features: usize,
    pub true_beta: Vec<f64>,
    /// λ0 in the hazard λ0·k·t^(k−1)·exp(β·x).
    pub baseline_rate: f64,
    /// Exponential censoring rate λc.
    pub censor_rate: f64,
    pub admin_cutoff: Option<f64>,
    /// Weibull shape k; 1 gives the exponential model.
    pub weibull_shape: f64,
    pub n_folds: u32,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            n_features: 3,
            true_beta: vec![0.8, -0.5, 0.3],
            baseline_rate: 0.1,
            censor_rate: 0.05,
            admin_cutoff: None,
            weibull_shape: 1.0,
            n_folds: 5,
            grid_points: 50,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidInput("n_patients must be at least 1".into()));
        }
        if self.true_beta.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: self.true_beta.len() });
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.baseline_rate) || !positive(self.censor_rate) || !positive(self.weibull_shape) {
            return Err(Error::InvalidInput("rates and shape must be positive".into()));
        }
        if self.admin_cutoff.is_some_and(|c| !positive(c)) {
            return Err(Error::InvalidInput("admin_cutoff must be positive".into()));
        }
        if self.n_folds == 0 || self.grid_points < 2 {
            return Err(Error::InvalidInput("n_folds ≥ 1 and grid_points ≥ 2 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohort {
    pub records: Vec<SurvivalRecord>,
    pub features: Vec<Vec<f64>>,
    pub linear_predictors: Vec<f64>,
    pub grid: Vec<f64>,
    pub true_curves: Vec<SurvivalCurve>,
    pub baseline_rate: f64,
    pub weibull_shape: f64,
}

impl SyntheticCohort {
    /// Exact S(t | x_i) = exp(−λ0·e^(β·x_i)·t^k).
    pub fn true_survival(&self, i: usize, t: f64) -> f64 {
        (-self.baseline_rate * self.linear_predictors[i].exp() * t.powf(self.weibull_shape)).exp()
    }

    /// True curves sampled on an arbitrary grid.
    pub fn curves_on(&self, grid: &[f64]) -> Result<Vec<SurvivalCurve>> {
        (0..self.records.len())
            .map(|i| {
                let probs = grid.iter().map(|&t| self.true_survival(i, t)).collect();
                SurvivalCurve::new(self.records[i].patient_id.clone(), grid.to_vec(), probs)
            })
            .collect()
    }

    /// Grid made of every distinct observed time plus zero, so curves are exact at observed times.
    pub fn observed_time_grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = std::iter::once(0.0).chain(self.records.iter().map(|r| r.time)).collect();
        g.sort_by(|a, b| a.total_cmp(b));
        g.dedup();
        g
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }
}

/// splitmix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Replicate sub-seed: splitmix64(seed + 0x9E3779B97F4A7C15·(index + 1)).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1))))
}

/// Draws one cohort. Per patient, in order: features, event-time uniform, censoring time.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let censor = Exp::new(config.censor_rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = config.n_patients;
    let mut records = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut lps = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = (0..config.n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lp: f64 = x.iter().zip(&config.true_beta).map(|(a, b)| a * b).sum();
        // 1 − U lies in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        let t = (-u.ln() / (config.baseline_rate * lp.exp())).powf(1.0 / config.weibull_shape);
        let mut c: f64 = censor.sample(&mut rng);
        if let Some(cut) = config.admin_cutoff {
            c = c.min(cut);
        }
        let event = t <= c;
        records.push(SurvivalRecord {
            patient_id: format!("S{i:05}"),
            time: if event { t } else { c },
            event,
            fold: (i as u32) % config.n_folds,
        });
        features.push(x);
        lps.push(lp);
    }
    let t_max = records.iter().map(|r| r.time).fold(0.0, f64::max);
    let g = config.grid_points;
    let grid: Vec<f64> = (0..g).map(|k| t_max * k as f64 / (g - 1) as f64).collect();
    let mut cohort = SyntheticCohort {
        records,
        features,
        linear_predictors: lps,
        grid: Vec::new(),
        true_curves: Vec::new(),
        baseline_rate: config.baseline_rate,
        weibull_shape: config.weibull_shape,
    };
    if t_max > 0.0 {
        cohort.true_curves = cohort.curves_on(&grid)?;
        cohort.grid = grid;
    }
    Ok(cohort)
}

/// S'(t) = S(t)^gamma pointwise.
pub fn inject_miscalibration(curves: &[SurvivalCurve], gamma: f64) -> Result<Vec<SurvivalCurve>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    Ok(curves.iter().map(|c| c.map_probs(|s| s.powf(gamma))).collect())
}

fn pilot(config: &GeneratorConfig) -> Result<SyntheticCohort> {
    generate(&GeneratorConfig {
        n_patients: PILOT_SIZE,
        grid_points: 2,
        seed: derive_seed(config.seed, PILOT_STREAM),
        ..config.clone()
    })
}

/// Event fraction of a deterministic pilot cohort.
pub fn expected_event_fraction(config: &GeneratorConfig) -> Result<f64> {
    let p = pilot(config)?;
    Ok(p.n_events() as f64 / PILOT_SIZE as f64)
}

/// Exponential censoring rate giving `target` censored fraction, by bisection on a pilot cohort
/// with common random numbers.
pub fn solve_censor_rate(config: &GeneratorConfig, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidInput("target censoring fraction must lie in (0, 1)".into()));
    }
    let frac = |rate: f64| -> Result<f64> {
        let c = GeneratorConfig { censor_rate: rate, ..config.clone() };
        Ok(1.0 - expected_event_fraction(&c)?)
    };
    let (mut lo, mut hi) = (1e-6f64, 1e3f64);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if frac(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: u64,
    pub seed: u64,
    pub attempts: u64,
    pub n_patients: usize,
    pub n_events: usize,
    pub censored_fraction: f64,
    pub horizon: f64,
    pub statistic: f64,
    pub p_value: f64,
    /// ESS over the full cohort size, dropped patients counted as zero weights.
    pub ess_ratio: f64,
    pub weight_cv: f64,
    /// ESS over nonzero weights only.
    pub nonzero_ess_ratio: f64,
    pub nonzero_weight_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub replicates: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub n_events_target: usize,
    pub cohort_size: usize,
    pub rejection_rate: f64,
    pub mc_standard_error: f64,
    pub mean_ess_ratio: f64,
    pub mean_weight_cv: f64,
    pub mean_nonzero_ess_ratio: f64,
    pub mean_nonzero_weight_cv: f64,
    pub mean_events: f64,
    pub mean_censored_fraction: f64,
    /// Extra cohorts drawn because of zero events, a > 50% event-count miss or an undefined test.
    pub regenerated: u64,
    pub per_replicate_p: Vec<f64>,
    pub per_replicate: Vec<ReplicateOutcome>,
}

fn run_replicate(
    config: &GeneratorConfig,
    gamma: f64,
    n_events_target: usize,
    cohort_size: usize,
    index: u64,
    opts: &OneCalOptions,
) -> Result<ReplicateOutcome> {
    let base = derive_seed(config.seed, index);
    for attempt in 0..MAX_ATTEMPTS {
        let seed = if attempt == 0 { base } else { derive_seed(base, attempt) };
        let cohort = generate(&GeneratorConfig { n_patients: cohort_size, grid_points: 2, seed, ..config.clone() })?;
        let events = cohort.n_events();
        let miss = (events as f64 - n_events_target as f64).abs() > 0.5 * n_events_target as f64;
        if events == 0 || miss {
            continue;
        }
        let h = median_event_time(&cohort.records)?;
        let probs: Vec<f64> = (0..cohort.records.len()).map(|i| 1.0 - cohort.true_survival(i, h).powf(gamma)).collect();
        let Ok(res) = one_calibration_probs(&probs, &cohort.records, h, opts) else { continue };
        let w = ipcw_at_horizon(&cohort.records, &censoring_km(&cohort.records)?, h)?;
        return Ok(ReplicateOutcome {
            index,
            seed,
            attempts: attempt + 1,
            n_patients: cohort_size,
            n_events: events,
            censored_fraction: 1.0 - events as f64 / cohort_size as f64,
            horizon: h,
            statistic: res.statistic,
            p_value: res.p_value,
            ess_ratio: w.cohort_ess_ratio,
            weight_cv: w.cohort_cv,
            nonzero_ess_ratio: w.nonzero_ess_ratio,
            nonzero_weight_cv: w.coefficient_of_variation,
        });
    }
    Err(Error::InsufficientEvents(format!("replicate {index}: no usable cohort in {MAX_ATTEMPTS} attempts")))
}

/// Monte Carlo of the 1-calibration test with predictions S_true^gamma.
pub fn monte_carlo(
    config: &GeneratorConfig,
    gamma: f64,
    n_events_target: usize,
    replicates: usize,
    alpha: f64,
    opts: &OneCalOptions,
) -> Result<MonteCarloSummary> {
    if replicates == 0 {
        return Err(Error::NoReplicates);
    }
    if n_events_target == 0 {
        return Err(Error::InvalidInput("n_events_target must be positive".into()));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidInput("gamma must be positive".into()));
    }
    config.validate()?;
    let frac = expected_event_fraction(config)?;
    if frac <= 0.0 {
        return Err(Error::NoEvents);
    }
    let cohort_size = (n_events_target as f64 / frac).ceil() as usize;
    let outcomes: Vec<ReplicateOutcome> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, gamma, n_events_target, cohort_size, r, opts))
        .collect::<Result<_>>()?;

    let n = replicates as f64;
    let mean = |f: fn(&ReplicateOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let rejection_rate = outcomes.iter().filter(|o| o.p_value < alpha).count() as f64 / n;
    Ok(MonteCarloSummary {
        replicates,
        alpha,
        gamma,
        n_events_target,
        cohort_size,
        rejection_rate,
        mc_standard_error: (rejection_rate * (1.0 - rejection_rate) / n).sqrt(),
        mean_ess_ratio: mean(|o| o.ess_ratio),
        mean_weight_cv: mean(|o| o.weight_cv),
        mean_nonzero_ess_ratio: mean(|o| o.nonzero_ess_ratio),
        mean_nonzero_weight_cv: mean(|o| o.nonzero_weight_cv),
        mean_events: mean(|o| o.n_events as f64),
        mean_censored_fraction: mean(|o| o.censored_fraction),
        regenerated: outcomes.iter().map(|o| o.attempts - 1).sum(),
        per_replicate_p: outcomes.iter().map(|o| o.p_value).collect(),
        per_replicate: outcomes,
    })
}

/// Rejection rate under the null (predictions are the true curves).
pub fn type_one_error_mc(config: &GeneratorConfig, n_events_target: usize, replicates: usize, alpha: f64) -> Result<MonteCarloSummary> {
    monte_carlo(config, 1.0, n_events_target, replicates, alpha, &OneCalOptions::default())
}

/// Rejection rate with predictions distorted to S^gamma.
pub fn power_mc(config: &GeneratorConfig, gamma: f64, n_events_target: usize, replicates: usize, alpha: f64) -> Result<MonteCarloSummary> {
    monte_carlo(config, gamma, n_events_target, replicates, alpha, &OneCalOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::kaplan_meier;
    use proptest::prelude::*;

    #[test]
    fn deterministic_per_seed() {
        let c = GeneratorConfig::default();
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = generate(&GeneratorConfig { seed: 8, ..c.clone() }).unwrap();
        assert_ne!(generate(&c).unwrap().records, other.records);
    }

    #[test]
    fn null_beta_km_tracks_exponential() {
        let c = GeneratorConfig {
            n_patients: 5000,
            n_features: 1,
            true_beta: vec![0.0],
            censor_rate: 0.02,
            ..GeneratorConfig::default()
        };
        let cohort = generate(&c).unwrap();
        let km = kaplan_meier(&cohort.records).unwrap();
        let sup = km.times().iter().zip(km.values()).map(|(&t, &s)| (s - (-0.1 * t).exp()).abs()).fold(0.0, f64::max);
        assert!(sup < 0.05, "sup distance {sup}");
    }

    #[test]
    fn censoring_fraction_matches_competing_exponentials() {
        let c = GeneratorConfig {
            n_patients: 10_000,
            n_features: 1,
            true_beta: vec![0.0],
            censor_rate: 0.3,
            ..GeneratorConfig::default()
        };
        let cohort = generate(&c).unwrap();
        let frac = 1.0 - cohort.n_events() as f64 / 10_000.0;
        assert!((frac - 0.3 / 0.4).abs() < 0.03, "{frac}");
    }

    #[test]
    fn admin_cutoff_caps_times() {
        let c = GeneratorConfig { admin_cutoff: Some(3.0), ..GeneratorConfig::default() };
        let cohort = generate(&c).unwrap();
        assert!(cohort.records.iter().all(|r| r.time <= 3.0));
    }

    #[test]
    fn true_curves_match_closed_form() {
        let cohort = generate(&GeneratorConfig::default()).unwrap();
        let c = &cohort.true_curves[3];
        assert_eq!(c.grid().len(), 50);
        let t = c.grid()[10];
        let expected = (-0.1 * cohort.linear_predictors[3].exp() * t).exp();
        assert!((c.eval(t) - expected).abs() < 1e-15);
    }

    #[test]
    fn injection_examples() {
        let c = SurvivalCurve::new("a", vec![1.0, 2.0], vec![0.5, 0.25]).unwrap();
        assert_eq!(inject_miscalibration(&[c.clone()], 1.0).unwrap()[0], c);
        assert_eq!(inject_miscalibration(&[c.clone()], 3.0).unwrap()[0].probs()[0], 0.125);
        assert!(inject_miscalibration(&[c], 0.0).is_err());
    }

    #[test]
    fn seed_derivation_is_stable() {
        assert_eq!(derive_seed(7, 0), derive_seed(7, 0));
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        // splitmix64 reference output for state 0x9E3779B97F4A7C15
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn zero_replicates_rejected() {
        assert_eq!(type_one_error_mc(&GeneratorConfig::default(), 100, 0, 0.05), Err(Error::NoReplicates));
    }

    #[test]
    fn solve_censor_rate_hits_target() {
        let c = GeneratorConfig { n_features: 1, true_beta: vec![0.0], ..GeneratorConfig::default() };
        let rate = solve_censor_rate(&c, 0.6).unwrap();
        // competing exponentials: rate/(rate + 0.1) = 0.6
        assert!((rate - 0.15).abs() < 0.01, "{rate}");
    }

    proptest! {
        #[test]
        fn injection_preserves_order(gamma in 0.1f64..5.0, vals in prop::collection::vec(0.0f64..=1.0, 2..10)) {
            let mut v = vals.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            let grid: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            let c1 = SurvivalCurve::new("a", grid.clone(), v.clone()).unwrap();
            let c2 = SurvivalCurve::new("b", grid, v.iter().map(|x| x * 0.9).collect()).unwrap();
            let out = inject_miscalibration(&[c1, c2], gamma).unwrap();
            prop_assert!(out[0].is_monotone() && out[1].is_monotone());
            for (a, b) in out[0].probs().iter().zip(out[1].probs()) {
                prop_assert!(a >= b);
            }
        }
    }
}
