//! Run-level evaluation: pseudo-regret accumulation, probabilistic-forecast
//! calibration (online and on hold-out points), sharpness, reliability
//! diagrams, variance-estimation error, and timing totals.
//!
//! The forecast law is Gaussian with mean = the policy's point estimate and
//! std = its confidence width (floored at 1e-8): the width is the only
//! predictive spread a UCB policy carries, so calibration is measured
//! against it.

use crate::agents::{Agent, AgentError, RoundRecord};
use crate::envs::RoundObservation;

/// Smallest admissible predictive std; keeps the CDF well-defined when a
/// policy reports a degenerate width.
pub const STD_FLOOR: f64 = 1e-8;

/// Gaussian predictive law for one round's reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastCdf {
    pub mean: f64,
    pub std: f64,
}

impl ForecastCdf {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std: std.max(STD_FLOOR) }
    }

    /// P(reward ≤ x) under the forecast.
    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / (self.std * std::f64::consts::SQRT_2);
        0.5 * (1.0 + libm::erf(z))
    }
}

/// Confidence levels the coverage is checked at.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Strictly increasing thresholds in [0, 1].
    pub thresholds: Vec<f64>,
}

impl CalibrationConfig {
    /// Panics unless thresholds are nonempty, strictly increasing, in [0, 1].
    pub fn new(thresholds: Vec<f64>) -> Self {
        assert!(!thresholds.is_empty(), "need at least one threshold");
        for w in thresholds.windows(2) {
            assert!(w[0] < w[1], "thresholds must be strictly increasing");
        }
        assert!(
            thresholds.iter().all(|p| (0.0..=1.0).contains(p)),
            "thresholds must lie in [0, 1]"
        );
        Self { thresholds }
    }

    /// Ten evenly spaced levels 0.1, 0.2, …, 1.0.
    pub fn deciles() -> Self {
        Self::new((1..=10).map(|i| i as f64 / 10.0).collect())
    }
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self::deciles()
    }
}

/// Per-threshold empirical coverage: fraction of PIT values ≤ threshold.
/// Equality counts as covered.
pub fn reliability_bins(pit_values: &[f64], cfg: &CalibrationConfig) -> Vec<(f64, f64)> {
    assert!(!pit_values.is_empty(), "need at least one PIT value");
    let n = pit_values.len() as f64;
    cfg.thresholds
        .iter()
        .map(|&p| {
            let covered = pit_values.iter().filter(|&&v| v <= p).count();
            (p, covered as f64 / n)
        })
        .collect()
}

/// Squared deviation between nominal confidence and empirical coverage,
/// summed over thresholds: Σⱼ (pⱼ − |{t : PIT_t ≤ pⱼ}|/T)².
pub fn calibration_error(pit_values: &[f64], cfg: &CalibrationConfig) -> f64 {
    reliability_bins(pit_values, cfg).iter().map(|&(p, f)| (p - f) * (p - f)).sum()
}

/// Calibration of a frozen policy snapshot on hold-out (context, reward)
/// pairs: forecasts come from the snapshot's current head and features.
pub fn calibration_error_holdout(
    agent: &Agent,
    holdout: &[(Vec<f64>, f64)],
    cfg: &CalibrationConfig,
) -> Result<f64, AgentError> {
    assert!(!holdout.is_empty(), "need at least one hold-out point");
    let mut pits = Vec::with_capacity(holdout.len());
    for (x, r) in holdout {
        let (mean, width) = agent.forecast(x)?;
        pits.push(ForecastCdf::new(mean, width).cdf(*r));
    }
    Ok(calibration_error(&pits, cfg))
}

/// Root mean predictive variance: √((1/T)·Σ std²).
pub fn sharpness(forecasts: &[ForecastCdf]) -> f64 {
    assert!(!forecasts.is_empty(), "need at least one forecast");
    let mean_var =
        forecasts.iter().map(|f| f.std * f.std).sum::<f64>() / forecasts.len() as f64;
    mean_var.sqrt()
}

/// Per-round |variance estimate − true variance|.
pub fn variance_estimation_error(pairs: &[(f64, f64)]) -> Vec<f64> {
    pairs.iter().map(|&(est, truth)| (est - truth).abs()).collect()
}

/// Everything one run accumulates round by round.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    /// Running Σ (max expected − chosen expected); non-decreasing.
    pub cumulative_regret: Vec<f64>,
    /// F_t(r_t) per round under the policy's forecast.
    pub pit_values: Vec<f64>,
    /// The forecasts behind the PIT values (for sharpness).
    pub forecasts: Vec<ForecastCdf>,
    /// (σ̂², true variance) for rounds where the policy produced an estimate.
    pub variance_pairs: Vec<(f64, f64)>,
    pub select_us_total: u64,
    pub train_us_total: u64,
    pub rounds: usize,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_round(&mut self, rec: &RoundRecord, obs: &RoundObservation) {
        assert!(
            rec.arm < obs.expected_rewards.len(),
            "chosen arm outside the observation's arm set"
        );
        let best = obs.expected_rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let regret = best - obs.expected_rewards[rec.arm];
        let prev = self.cumulative_regret.last().copied().unwrap_or(0.0);
        self.cumulative_regret.push(prev + regret);

        let forecast = ForecastCdf::new(rec.mean_est, rec.ucb_width);
        self.pit_values.push(forecast.cdf(rec.reward));
        self.forecasts.push(forecast);

        if let Some(est) = rec.sigma_hat_sq {
            self.variance_pairs.push((est, obs.oracle.true_var));
        }
        self.select_us_total += rec.select_us;
        self.train_us_total += rec.train_us;
        self.rounds += 1;
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn mean_select_us(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.select_us_total as f64 / self.rounds as f64
        }
    }

    pub fn mean_train_us(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.train_us_total as f64 / self.rounds as f64
        }
    }
}
