//! Python bindings: bandit agents, the synthetic environment, config-driven
//! experiment runs, and the calibration metric.
//!
//! Build as a cdylib and import the resulting shared object as `varucb_py`
//! (see `python/smoke_test.py` at the repository root for the copy-and-import
//! dance).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use varucb::agents::{Agent, AgentError, OracleVariance, PolicyKind};
use varucb::envs::{Environment, NoiseModel, RewardSurface, SyntheticConfig, SyntheticEnv};
use varucb::harness::{
    apply_overrides, parse_config, run_experiment, AgentKind, AgentSpec, ScheduleSpec,
    SharedParams,
};
use varucb::metrics::{CalibrationConfig, ForecastCdf};
use varucb::neural::LossKind;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A bandit policy driven one round at a time from Python.
///
/// The caller plays the simulator: it supplies per-arm contexts and per-arm
/// rewards, the agent picks the arm and only ever sees the chosen reward.
#[pyclass(name = "Agent")]
struct PyAgent {
    inner: Agent,
    policy: PolicyKind,
    context_dim: usize,
    num_arms: usize,
}

#[pymethods]
impl PyAgent {
    /// `kind` is one of `lin_ucb`, `neural_greedy`, `neural_lin_ucb`,
    /// `neural_ucb`, `neural_ts`, `var_ucb`; `variance` (var_ucb only) one of
    /// `unit`, `oracle_bound`, `oracle_true`, `estimated`, `predictive`;
    /// `loss` is `mse` or `mle`; `schedule` is `constant` or `theory`.
    /// Unset knobs keep the library defaults.
    #[new]
    #[pyo3(signature = (
        kind, context_dim, num_arms, *,
        seed = 0,
        variance = "unit",
        loss = "mse",
        schedule = "constant",
        reward_range = (0.0, 1.0),
        lambda_ = None,
        alpha = None,
        noise_magnitude = None,
        hidden_width = None,
        feature_width = None,
        depth = None,
        learning_rate = None,
        weight_decay = None,
        batch_size = None,
        train_period = None,
        train_steps = None,
        warmup = None,
        head_norm_bound = 0.1,
        delta = 0.1,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        context_dim: usize,
        num_arms: usize,
        seed: u64,
        variance: &str,
        loss: &str,
        schedule: &str,
        reward_range: (f64, f64),
        lambda_: Option<f64>,
        alpha: Option<f64>,
        noise_magnitude: Option<f64>,
        hidden_width: Option<usize>,
        feature_width: Option<usize>,
        depth: Option<usize>,
        learning_rate: Option<f64>,
        weight_decay: Option<f64>,
        batch_size: Option<usize>,
        train_period: Option<usize>,
        train_steps: Option<usize>,
        warmup: Option<usize>,
        head_norm_bound: f64,
        delta: f64,
    ) -> PyResult<Self> {
        if context_dim == 0 || num_arms == 0 {
            return Err(value_err("context_dim and num_arms must be positive"));
        }
        if reward_range.1 <= reward_range.0 {
            return Err(value_err("reward_range must satisfy a < b"));
        }
        let kind = match kind {
            "lin_ucb" => AgentKind::LinUcb,
            "neural_greedy" => AgentKind::NeuralGreedy,
            "neural_lin_ucb" => AgentKind::NeuralLinUcb,
            "neural_ucb" => AgentKind::NeuralUcb,
            "neural_ts" => AgentKind::NeuralTs,
            "var_ucb" => AgentKind::VarUcb,
            other => return Err(value_err(format!("unknown agent kind {other:?}"))),
        };
        let variance = match variance {
            "unit" => varucb::agents::VarianceSource::Unit,
            "oracle_bound" => varucb::agents::VarianceSource::OracleBound,
            "oracle_true" => varucb::agents::VarianceSource::OracleTrueVar,
            "estimated" => varucb::agents::VarianceSource::EstimatedBound,
            "predictive" => varucb::agents::VarianceSource::PredictiveVariance,
            other => return Err(value_err(format!("unknown variance source {other:?}"))),
        };
        let loss = match loss {
            "mse" => LossKind::Mse,
            "mle" => LossKind::Mle,
            other => return Err(value_err(format!("unknown loss {other:?}"))),
        };
        let schedule = match schedule {
            "constant" => ScheduleSpec::Constant,
            "theory" => ScheduleSpec::Theory { head_norm_bound, delta },
            other => return Err(value_err(format!("unknown schedule {other:?}"))),
        };

        let mut params = SharedParams::default();
        if let Some(v) = lambda_ {
            params.lambda = v;
        }
        if let Some(v) = alpha {
            params.alpha = v;
        }
        if let Some(v) = noise_magnitude {
            params.noise_magnitude = v;
        }
        if let Some(v) = hidden_width {
            params.hidden_width = v;
        }
        if feature_width.is_some() {
            params.feature_width = feature_width;
        }
        if let Some(v) = depth {
            params.depth = v;
        }
        if let Some(v) = learning_rate {
            params.learning_rate = v;
        }
        if let Some(v) = weight_decay {
            params.weight_decay = v;
        }
        if let Some(v) = batch_size {
            params.batch_size = v;
        }
        if let Some(v) = train_period {
            params.train_period = v;
        }
        if let Some(v) = train_steps {
            params.train_steps = v;
        }
        if let Some(v) = warmup {
            params.warmup = v;
        }

        let spec = AgentSpec {
            name: kind.token().to_string(),
            kind,
            variance,
            loss,
            schedule,
            params,
        };
        let cfg = spec.to_agent_config(context_dim, num_arms, reward_range);
        if cfg.lambda <= 0.0 || !cfg.lambda.is_finite() {
            return Err(value_err("lambda must be positive and finite"));
        }
        let policy = cfg.kind;
        Ok(PyAgent { inner: Agent::init_agent(cfg, seed), policy, context_dim, num_arms })
    }

    /// Play one round: pick an arm from `contexts`, observe the matching
    /// entry of `rewards`, update. Returns the round record as a dict.
    #[pyo3(signature = (contexts, rewards, *, oracle=None, reward_range=None))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        contexts: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        oracle: Option<(f64, f64)>,
        reward_range: Option<(f64, f64)>,
    ) -> PyResult<Bound<'py, PyDict>> {
        self.check_contexts(&contexts)?;
        if rewards.len() != self.num_arms {
            return Err(value_err(format!(
                "expected {} per-arm rewards, got {}",
                self.num_arms,
                rewards.len()
            )));
        }
        let oracle = oracle.map(|(bound, true_var)| OracleVariance { bound, true_var });
        let rec = self
            .inner
            .step(&contexts, oracle, reward_range, |arm| rewards[arm])
            .map_err(agent_err)?;
        let d = PyDict::new(py);
        d.set_item("t", rec.t)?;
        d.set_item("arm", rec.arm)?;
        d.set_item("reward", rec.reward)?;
        d.set_item("mean_est", rec.mean_est)?;
        d.set_item("ucb_width", rec.ucb_width)?;
        d.set_item("sigma_hat_sq", rec.sigma_hat_sq)?;
        d.set_item("sigma_bar_sq", rec.sigma_bar_sq)?;
        d.set_item("select_us", rec.select_us)?;
        d.set_item("train_us", rec.train_us)?;
        Ok(d)
    }

    /// Score arms without updating (Thompson sampling still draws from its
    /// RNG). Returns `{"arm", "scores", "mean_est", "width"}`.
    fn select<'py>(
        &mut self,
        py: Python<'py>,
        contexts: Vec<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        self.check_contexts(&contexts)?;
        let sel = match self.policy {
            PolicyKind::Linear | PolicyKind::NeuralLinear => self.inner.select_arm(&contexts),
            PolicyKind::GradientUcb => self.inner.neural_ucb_select(&contexts),
            PolicyKind::GradientTs => self.inner.neural_ts_select(&contexts),
        }
        .map_err(agent_err)?;
        let d = PyDict::new(py);
        d.set_item("arm", sel.arm)?;
        d.set_item("scores", sel.scores)?;
        d.set_item("mean_est", sel.mean_est)?;
        d.set_item("width", sel.width)?;
        Ok(d)
    }

    /// Feature map the ridge head sees for a single context.
    fn features(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.context_dim {
            return Err(value_err(format!(
                "expected context of dim {}, got {}",
                self.context_dim,
                x.len()
            )));
        }
        self.inner.features(&x).map_err(agent_err)
    }

    /// Current ridge-head weights.
    fn theta(&self) -> Vec<f64> {
        self.inner.head().theta.clone()
    }

    /// Exploration coefficient the next selection will use.
    fn current_alpha(&self) -> f64 {
        self.inner.current_alpha()
    }

    fn rounds_seen(&self) -> usize {
        self.inner.rounds_seen()
    }

    #[getter]
    fn num_arms(&self) -> usize {
        self.num_arms
    }

    #[getter]
    fn context_dim(&self) -> usize {
        self.context_dim
    }
}

impl PyAgent {
    fn check_contexts(&self, contexts: &[Vec<f64>]) -> PyResult<()> {
        if contexts.len() != self.num_arms {
            return Err(value_err(format!(
                "expected {} per-arm contexts, got {}",
                self.num_arms,
                contexts.len()
            )));
        }
        for x in contexts {
            if x.len() != self.context_dim {
                return Err(value_err(format!(
                    "expected contexts of dim {}, got {}",
                    self.context_dim,
                    x.len()
                )));
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(value_err("non-finite context entry"));
            }
        }
        Ok(())
    }
}

fn agent_err(e: AgentError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Synthetic bandit environment: hidden-direction reward surfaces with a
/// controllable noise schedule. Rounds are sampled strictly sequentially.
#[pyclass(name = "SyntheticEnv")]
struct PySyntheticEnv {
    inner: SyntheticEnv,
    last_t: Option<usize>,
}

#[pymethods]
impl PySyntheticEnv {
    /// `surface` is `scaled_square`, `square`, or `cosine`; `noise` is
    /// `random_variance`, `fixed_std` (takes `noise_std`), or `linear_std`
    /// (takes `noise_std_start` / `noise_std_end`).
    #[new]
    #[pyo3(signature = (
        context_dim, num_arms, horizon, *,
        surface = "scaled_square",
        noise = "random_variance",
        noise_std = None,
        noise_std_start = None,
        noise_std_end = None,
        reward_range = (0.0, 1.0),
        normalize = false,
        oracle_slack = 1.0,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        context_dim: usize,
        num_arms: usize,
        horizon: usize,
        surface: &str,
        noise: &str,
        noise_std: Option<f64>,
        noise_std_start: Option<f64>,
        noise_std_end: Option<f64>,
        reward_range: (f64, f64),
        normalize: bool,
        oracle_slack: f64,
        seed: u64,
    ) -> PyResult<Self> {
        if context_dim == 0 || num_arms == 0 || horizon == 0 {
            return Err(value_err("context_dim, num_arms, horizon must be positive"));
        }
        if reward_range.1 <= reward_range.0 {
            return Err(value_err("reward_range must satisfy a < b"));
        }
        if oracle_slack < 1.0 || !oracle_slack.is_finite() {
            return Err(value_err("oracle_slack must be >= 1"));
        }
        let surface = match surface {
            "scaled_square" => RewardSurface::ScaledSquare,
            "square" => RewardSurface::Square,
            "cosine" => RewardSurface::Cosine,
            other => return Err(value_err(format!("unknown surface {other:?}"))),
        };
        let noise = match noise {
            "random_variance" => NoiseModel::RandomVariance,
            "fixed_std" => NoiseModel::FixedStd {
                std: noise_std.ok_or_else(|| value_err("fixed_std needs noise_std"))?,
            },
            "linear_std" => NoiseModel::LinearStd {
                start: noise_std_start
                    .ok_or_else(|| value_err("linear_std needs noise_std_start"))?,
                end: noise_std_end.ok_or_else(|| value_err("linear_std needs noise_std_end"))?,
            },
            other => return Err(value_err(format!("unknown noise model {other:?}"))),
        };
        let cfg = SyntheticConfig {
            surface,
            context_dim,
            num_arms,
            horizon,
            noise,
            oracle_slack,
            reward_range,
            normalize,
        };
        Ok(PySyntheticEnv { inner: SyntheticEnv::new(cfg, seed), last_t: None })
    }

    /// Draw round `t` (1-based, strictly sequential). Returns contexts,
    /// expected rewards, the variance oracle, and the reward range.
    fn sample<'py>(&mut self, py: Python<'py>, t: usize) -> PyResult<Bound<'py, PyDict>> {
        let expected = self.last_t.map_or(1, |p| p + 1);
        if t != expected {
            return Err(value_err(format!("rounds are sequential; expected t={expected}")));
        }
        if t > self.inner.horizon() {
            return Err(value_err(format!("round {t} past horizon {}", self.inner.horizon())));
        }
        let obs = self.inner.sample_contexts(t);
        self.last_t = Some(t);
        let d = PyDict::new(py);
        d.set_item("contexts", obs.contexts)?;
        d.set_item("expected_rewards", obs.expected_rewards)?;
        d.set_item("oracle_bound", obs.oracle.bound)?;
        d.set_item("oracle_true_var", obs.oracle.true_var)?;
        d.set_item("reward_range", obs.reward_range)?;
        Ok(d)
    }

    /// Reward of `arm` for the most recently sampled round `t`.
    fn reward(&self, t: usize, arm: usize) -> PyResult<f64> {
        if self.last_t != Some(t) {
            return Err(value_err("reward() takes the t of the last sample() call"));
        }
        if arm >= self.inner.num_arms() {
            return Err(value_err(format!("arm {arm} out of range")));
        }
        Ok(self.inner.reward_value(t, arm))
    }

    /// Fresh (context, reward) pairs from the same process, with the noise
    /// level in force at round `t`; does not disturb the round stream.
    fn holdout(&self, t: usize, n: usize, seed: u64) -> PyResult<Vec<(Vec<f64>, f64)>> {
        if t < 1 || t > self.inner.horizon() {
            return Err(value_err(format!("t must lie in 1..={}", self.inner.horizon())));
        }
        Ok(self.inner.holdout_at(t, n, seed))
    }

    /// The hidden unit direction behind the reward surface.
    fn hidden_theta(&self) -> Vec<f64> {
        self.inner.hidden_theta().to_vec()
    }

    #[getter]
    fn context_dim(&self) -> usize {
        self.inner.context_dim()
    }

    #[getter]
    fn num_arms(&self) -> usize {
        self.inner.num_arms()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
}

/// Parse an experiment config and run the full agent x seed matrix, writing
/// CSV/JSON outputs under the config's `out_dir` (or `out` if given).
/// Returns one summary dict per (agent, seed) cell.
#[pyfunction]
#[pyo3(signature = (text, *, out=None, seeds=None, quick=false))]
fn run_config<'py>(
    py: Python<'py>,
    text: &str,
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    quick: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = parse_config(text).map_err(value_err)?;
    apply_overrides(&mut cfg, seeds.as_deref(), out.as_deref(), quick);
    let summaries = run_experiment(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    summaries
        .into_iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("agent", s.agent)?;
            d.set_item("seed", s.seed)?;
            d.set_item("status", s.status)?;
            d.set_item("rounds", s.rounds)?;
            d.set_item("final_cum_regret", s.final_cum_regret)?;
            d.set_item("calibration_error", s.calibration_error)?;
            d.set_item("sharpness", s.sharpness)?;
            d.set_item("mean_select_ms", s.mean_select_ms)?;
            d.set_item("mean_train_ms", s.mean_train_ms)?;
            d.set_item("mean_variance_error", s.mean_variance_error)?;
            d.set_item("cum_regret", s.cum_regret)?;
            Ok(d)
        })
        .collect()
}

/// Squared-error probability calibration of PIT values against the given
/// coverage thresholds (deciles when omitted).
#[pyfunction]
#[pyo3(signature = (pits, *, thresholds=None))]
fn calibration_error(pits: Vec<f64>, thresholds: Option<Vec<f64>>) -> PyResult<f64> {
    if pits.is_empty() {
        return Err(value_err("need at least one PIT value"));
    }
    if !pits.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
        return Err(value_err("PIT values must lie in [0, 1]"));
    }
    let cfg = match thresholds {
        None => CalibrationConfig::default(),
        Some(ts) => {
            let ok = !ts.is_empty()
                && ts.iter().all(|t| t.is_finite() && (0.0..=1.0).contains(t))
                && ts.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(value_err("thresholds must be strictly increasing, in [0, 1]"));
            }
            CalibrationConfig { thresholds: ts }
        }
    };
    Ok(varucb::metrics::calibration_error(&pits, &cfg))
}

/// Gaussian forecast CDF value P(R <= r) for a forecast N(mu, sigma^2).
#[pyfunction]
fn forecast_cdf(mu: f64, sigma: f64, r: f64) -> PyResult<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(value_err("sigma must be positive and finite"));
    }
    Ok(ForecastCdf::new(mu, sigma).cdf(r))
}

#[pymodule]
fn varucb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAgent>()?;
    m.add_class::<PySyntheticEnv>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(calibration_error, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_cdf, m)?)?;
    Ok(())
}
