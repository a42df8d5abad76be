//! Bandit policies built around a shared ridge head.
//!
//! The head keeps the inverse design matrix A^-1 and moment vector b of a
//! weighted ridge regression over feature vectors:
//!
//!   A_t = lambda I + sum_i phi_i phi_i^T / sigma_bar_i^2,
//!   b_t = sum_i r_i phi_i / sigma_bar_i^2,
//!   theta_t = A_t^-1 b_t.
//!
//! Each observation is weighted by an inverse variance proxy sigma_bar^2,
//! floored at R^2 / d by [`clamp_sigma`]. Where the proxy comes from is the
//! [`VarianceSource`]: a constant (plain UCB updates), an oracle feed from
//! the environment, the range-based estimate (b - mean)(mean - a), or the
//! head's own predictive variance. Scores are mean plus width,
//! theta^T phi + alpha_t ||phi||_{A^-1}, with ties broken toward the lowest
//! arm index.
//!
//! Features come from a [`FeatureNet`] (retrained every `train_period`
//! rounds once past `train_warmup`) or from the raw context when
//! `PolicyKind::Linear` runs without a network. Two baselines skip the head
//! design entirely and explore in weight space with gradient features and a
//! diagonalized design: [`PolicyKind::GradientUcb`] adds a bonus,
//! [`PolicyKind::GradientTs`] samples scores.

use crate::linalg::{dot, mahalanobis_norm, quadratic_form, sherman_morrison_update, Matrix};
use crate::neural::{FeatureNet, NeuralError, ReplayBuffer, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("non-finite score for arm {arm} at round {round}")]
    NonFiniteScore { round: usize, arm: usize },
    #[error("variance source needs an oracle feed but round {round} supplied none")]
    MissingOracleFeed { round: usize },
    #[error("non-finite reward at round {round}")]
    NonFiniteReward { round: usize },
}

/// Where the per-round variance proxy comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceSource {
    /// sigma_bar^2 = 1 every round; the weighted recursion collapses to the
    /// plain unweighted one.
    Unit,
    /// Environment-supplied upper bound on the conditional noise variance.
    OracleBound,
    /// Environment-supplied exact conditional noise variance.
    OracleTrueVar,
    /// (b - mean)(mean - a) from the reward range in force; can go negative
    /// when the mean estimate leaves [a, b], the floor handles it.
    EstimatedBound,
    /// phi^T A^-1 phi of the chosen arm, before the update.
    PredictiveVariance,
}

/// Exploration coefficient alpha_t.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplorationSchedule {
    Constant { alpha: f64 },
    /// Deviation-bound form: for round t and previous-round sigma_bar,
    ///
    ///   8 sqrt(d ln(1 + t d ln(H K) / (sigma_bar^2 d lambda)) ln(4 t^2 / delta))
    ///   + (4 R / sigma_bar) ln(4 t^2 / delta) + sqrt(lambda) M
    ///
    /// where d is the feature dim, H the train period, K the arm count and
    /// M a bound on the head norm.
    Theory {
        noise_magnitude: f64,
        head_norm_bound: f64,
        delta: f64,
        train_period: usize,
        num_arms: usize,
        lambda: f64,
        feature_dim: usize,
    },
}

/// Evaluates the schedule at round `t` (1-based). `sigma_bar` is the
/// previous round's clamped deviation; the constant schedule ignores it.
pub fn alpha_at(schedule: &ExplorationSchedule, t: usize, sigma_bar: f64) -> f64 {
    assert!(t >= 1, "rounds are 1-based");
    match schedule {
        ExplorationSchedule::Constant { alpha } => *alpha,
        ExplorationSchedule::Theory {
            noise_magnitude,
            head_norm_bound,
            delta,
            train_period,
            num_arms,
            lambda,
            feature_dim,
        } => {
            assert!(sigma_bar > 0.0, "sigma_bar must be positive");
            let d = *feature_dim as f64;
            let tt = t as f64;
            let hk = (*train_period as f64) * (*num_arms as f64);
            let log_conf = (4.0 * tt * tt / delta).ln();
            let inner = 1.0 + tt * d * hk.ln() / (sigma_bar * sigma_bar * d * lambda);
            8.0 * (d * inner.ln() * log_conf).sqrt()
                + 4.0 * noise_magnitude / sigma_bar * log_conf
                + lambda.sqrt() * head_norm_bound
        }
    }
}

/// Range-based variance estimate (b - mean)(mean - a). Deliberately not
/// clamped here: a mean outside [a, b] yields a negative value that the
/// caller floors via [`clamp_sigma`]. Never exceeds (b - a)^2 / 4.
pub fn estimate_sigma_sq(mean_est: f64, a: f64, b: f64) -> f64 {
    assert!(a.is_finite() && b.is_finite() && b > a, "need a finite range with b > a");
    assert!(mean_est.is_finite());
    (b - mean_est) * (mean_est - a)
}

/// Floors a variance estimate at R^2 / d, the level below which a single
/// observation would dominate the design update.
pub fn clamp_sigma(sigma_sq: f64, noise_magnitude: f64, feature_dim: usize) -> f64 {
    assert!(noise_magnitude > 0.0 && noise_magnitude.is_finite());
    assert!(feature_dim > 0);
    sigma_sq.max(noise_magnitude * noise_magnitude / feature_dim as f64)
}

/// Head initialization: i.i.d. N(0, 1/d) entries.
fn init_theta(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).unwrap();
    (0..d).map(|_| normal.sample(rng)).collect()
}

/// Which selection/update rule the agent runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Ridge head directly on raw contexts; no network.
    Linear,
    /// Ridge head on learned features.
    NeuralLinear,
    /// UCB in weight space: score f(x) + alpha sqrt(g^T Z^-1 g / m) with
    /// g = grad_w f(x), Z diagonal.
    GradientUcb,
    /// Thompson sampling in weight space: score ~ N(f(x), alpha^2 g^T Z^-1 g / m).
    GradientTs,
}

impl PolicyKind {
    pub fn uses_network(self) -> bool {
        !matches!(self, PolicyKind::Linear)
    }

    pub fn uses_head_design(self) -> bool {
        matches!(self, PolicyKind::Linear | PolicyKind::NeuralLinear)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub kind: PolicyKind,
    pub context_dim: usize,
    pub num_arms: usize,
    /// Width of every hidden layer.
    pub hidden_width: usize,
    /// Number of weight matrices; 2 means one hidden layer.
    pub num_layers: usize,
    /// Feature dimension the head sees. Must equal `context_dim` for
    /// `PolicyKind::Linear`.
    pub feature_dim: usize,
    /// Ridge regularizer.
    pub lambda: f64,
    pub exploration: ExplorationSchedule,
    pub variance: VarianceSource,
    /// Default reward range [a, b]; a round observation may override it.
    pub reward_range: (f64, f64),
    /// Working noise magnitude R. Sets the variance floor R^2 / d.
    pub noise_magnitude: f64,
    pub train: TrainConfig,
    /// Train every this many rounds...
    pub train_period: usize,
    /// ...but only from this round on.
    pub train_warmup: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: PolicyKind::NeuralLinear,
            context_dim: 20,
            num_arms: 4,
            hidden_width: 100,
            num_layers: 2,
            feature_dim: 20,
            lambda: 1.0,
            exploration: ExplorationSchedule::Constant { alpha: 0.02 },
            variance: VarianceSource::Unit,
            reward_range: (0.0, 1.0),
            noise_magnitude: 1.0,
            train: TrainConfig::default(),
            train_period: 100,
            train_warmup: 2000,
        }
    }
}

/// Ridge head state. `theta` is always `a_inv * b`; [`Agent::update_linear`]
/// maintains that identity after every observation.
#[derive(Debug, Clone)]
pub struct LinearHead {
    pub theta: Vec<f64>,
    pub a_inv: Matrix,
    pub b: Vec<f64>,
    pub lambda: f64,
}

/// Oracle feed attached to a round by the environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVariance {
    /// Upper bound on the conditional noise variance (true variance times
    /// any configured slack).
    pub bound: f64,
    /// Exact conditional noise variance.
    pub true_var: f64,
}

/// What a selection rule decided, plus everything the update step needs.
#[derive(Debug, Clone)]
pub struct Selection {
    pub arm: usize,
    pub scores: Vec<f64>,
    /// theta^T phi of the chosen arm (f(x) for the gradient baselines).
    pub mean_est: f64,
    /// Exploration width of the chosen arm.
    pub width: f64,
    /// Features of the chosen arm (head policies only).
    phi: Vec<f64>,
    /// Gradient features of the chosen arm (gradient baselines only).
    grad: Vec<f64>,
}

/// Per-round log row.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub arm: usize,
    pub reward: f64,
    pub mean_est: f64,
    pub ucb_width: f64,
    /// Raw variance estimate before the floor; None when the policy has no
    /// estimate (unit source, gradient baselines).
    pub sigma_hat_sq: Option<f64>,
    /// Floored variance actually used in the update; None for the gradient
    /// baselines.
    pub sigma_bar_sq: Option<f64>,
    pub select_us: u64,
    pub train_us: u64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    net: Option<FeatureNet>,
    head: LinearHead,
    buffer: ReplayBuffer,
    /// Diagonal of the gradient design (gradient baselines only).
    z_diag: Option<Vec<f64>>,
    rng: ChaCha8Rng,
    /// sigma_bar of the previous round, feeding the theory schedule; starts
    /// at 1 so the round-1 coefficient is well-defined.
    prev_sigma_bar: f64,
    /// Rounds processed so far.
    t: usize,
    last_train_loss: Option<f64>,
}

impl Agent {
    /// Fresh agent. theta_0 has i.i.d. N(0, 1/d) entries, A_0^-1 =
    /// (1/lambda) I, b_0 = 0; network weights come from
    /// [`FeatureNet::init_weights`] with the same seed. Everything downstream
    /// is deterministic given (config, seed).
    pub fn init_agent(cfg: AgentConfig, seed: u64) -> Self {
        assert!(cfg.lambda > 0.0 && cfg.lambda.is_finite());
        assert!(cfg.num_arms > 0 && cfg.context_dim > 0 && cfg.feature_dim > 0);
        assert!(cfg.reward_range.1 > cfg.reward_range.0);
        assert!(cfg.train_period > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let net = if cfg.kind.uses_network() {
            assert!(cfg.num_layers >= 1);
            assert!(cfg.hidden_width > 0 || cfg.num_layers == 1);
            let mut dims = vec![cfg.context_dim];
            for _ in 0..cfg.num_layers - 1 {
                dims.push(cfg.hidden_width);
            }
            dims.push(cfg.feature_dim);
            Some(FeatureNet::init_weights(&dims, seed))
        } else {
            assert_eq!(
                cfg.feature_dim, cfg.context_dim,
                "a head without a network sees raw contexts"
            );
            None
        };

        let d = cfg.feature_dim;
        let theta = init_theta(d, &mut rng);
        let head = LinearHead {
            theta,
            a_inv: Matrix::scaled_identity(d, 1.0 / cfg.lambda),
            b: vec![0.0; d],
            lambda: cfg.lambda,
        };

        let z_diag = match cfg.kind {
            PolicyKind::GradientUcb | PolicyKind::GradientTs => {
                let p = net.as_ref().unwrap().num_params();
                Some(vec![cfg.lambda; p])
            }
            _ => None,
        };

        Agent {
            cfg,
            net,
            head,
            buffer: ReplayBuffer::new(),
            z_diag,
            rng,
            prev_sigma_bar: 1.0,
            t: 0,
            last_train_loss: None,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    /// Mutable head access for diagnostics and scripted tests.
    pub fn head_mut(&mut self) -> &mut LinearHead {
        &mut self.head
    }

    pub fn net(&self) -> Option<&FeatureNet> {
        self.net.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn rounds_seen(&self) -> usize {
        self.t
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.last_train_loss
    }

    /// Feature map: network features, or the context itself without one.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        match &self.net {
            Some(net) => Ok(net.forward_features(x)?),
            None => Ok(x.to_vec()),
        }
    }

    /// The exploration coefficient the agent would apply at its next round.
    pub fn current_alpha(&self) -> f64 {
        alpha_at(&self.cfg.exploration, self.t + 1, self.prev_sigma_bar)
    }

    /// Head-policy selection: per-arm score theta^T phi_k + alpha_t
    /// ||phi_k||_{A^-1}, argmax with ties to the lowest index.
    pub fn select_arm(&self, contexts: &[Vec<f64>]) -> Result<Selection, AgentError> {
        assert!(self.cfg.kind.uses_head_design(), "gradient baselines select differently");
        let round = self.t + 1;
        let alpha = alpha_at(&self.cfg.exploration, round, self.prev_sigma_bar);

        let mut best: Option<(usize, f64)> = None;
        let mut scores = Vec::with_capacity(contexts.len());
        let mut chosen: Option<(Vec<f64>, f64, f64)> = None; // phi, mean, width
        for (k, x) in contexts.iter().enumerate() {
            let phi = self.features(x)?;
            let mean = dot(&self.head.theta, &phi);
            let width = alpha * mahalanobis_norm(&phi, &self.head.a_inv);
            let score = mean + width;
            if !score.is_finite() {
                return Err(AgentError::NonFiniteScore { round, arm: k });
            }
            scores.push(score);
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((k, score));
                chosen = Some((phi, mean, width));
            }
        }
        let (arm, _) = best.expect("at least one arm");
        let (phi, mean_est, width) = chosen.unwrap();
        Ok(Selection { arm, scores, mean_est, width, phi, grad: Vec::new() })
    }

    /// Gradient-feature scores shared by the weight-space baselines:
    /// (f(x_k), width_k) with width_k = sqrt(g_k^T Z^-1 g_k / m).
    fn gradient_scores(
        &self,
        contexts: &[Vec<f64>],
    ) -> Result<Vec<(f64, f64, Vec<f64>)>, AgentError> {
        let net = self.net.as_ref().expect("gradient baselines carry a network");
        let z = self.z_diag.as_ref().unwrap();
        let m = net.penult_width() as f64;
        let mut out = Vec::with_capacity(contexts.len());
        for x in contexts {
            let phi = net.forward_features(x)?;
            let f = dot(&self.head.theta, &phi);
            let g = net.grad_wrt_weights(&self.head.theta, x)?;
            let mut quad = 0.0;
            for (gi, zi) in g.iter().zip(z) {
                quad += gi * gi / zi;
            }
            out.push((f, (quad / m).sqrt(), g));
        }
        Ok(out)
    }

    /// Weight-space UCB: f(x_k) + alpha_t sqrt(g_k^T Z^-1 g_k / m).
    pub fn neural_ucb_select(&self, contexts: &[Vec<f64>]) -> Result<Selection, AgentError> {
        let round = self.t + 1;
        let alpha = alpha_at(&self.cfg.exploration, round, self.prev_sigma_bar);
        let mut scores = Vec::with_capacity(contexts.len());
        let mut best: Option<(usize, f64)> = None;
        let mut per_arm = self.gradient_scores(contexts)?;
        for (k, (f, w, _)) in per_arm.iter().enumerate() {
            let score = f + alpha * w;
            if !score.is_finite() {
                return Err(AgentError::NonFiniteScore { round, arm: k });
            }
            scores.push(score);
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        let (arm, _) = best.expect("at least one arm");
        let (mean_est, w, grad) = per_arm.swap_remove(arm);
        Ok(Selection { arm, scores, mean_est, width: alpha * w, phi: Vec::new(), grad })
    }

    /// Weight-space Thompson sampling: score_k ~ N(f(x_k), alpha_t^2 g_k^T
    /// Z^-1 g_k / m). Draws consume the agent's own rng, so runs stay
    /// deterministic given the seed.
    pub fn neural_ts_select(&mut self, contexts: &[Vec<f64>]) -> Result<Selection, AgentError> {
        let round = self.t + 1;
        let alpha = alpha_at(&self.cfg.exploration, round, self.prev_sigma_bar);
        let per_arm = self.gradient_scores(contexts)?;
        let mut scores = Vec::with_capacity(contexts.len());
        let mut best: Option<(usize, f64)> = None;
        for (k, (f, w, _)) in per_arm.iter().enumerate() {
            let std = (alpha * w).max(0.0);
            let score = if std > 0.0 {
                f + std * self.rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                *f
            };
            if !score.is_finite() {
                return Err(AgentError::NonFiniteScore { round, arm: k });
            }
            scores.push(score);
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        let (arm, _) = best.expect("at least one arm");
        let mut per_arm = per_arm;
        let (mean_est, w, grad) = per_arm.swap_remove(arm);
        Ok(Selection { arm, scores, mean_est, width: alpha * w, phi: Vec::new(), grad })
    }

    /// Rank-one head update with inverse-variance weight 1 / sigma_bar_sq.
    /// Maintains theta = A^-1 b exactly.
    pub fn update_linear(&mut self, phi: &[f64], reward: f64, sigma_bar_sq: f64) {
        assert!(sigma_bar_sq > 0.0 && sigma_bar_sq.is_finite());
        assert!(reward.is_finite());
        let c = 1.0 / sigma_bar_sq;
        self.head.a_inv = sherman_morrison_update(&self.head.a_inv, phi, c);
        for (bi, pi) in self.head.b.iter_mut().zip(phi) {
            *bi += pi * reward * c;
        }
        self.head.theta = self.head.a_inv.mat_vec(&self.head.b);
    }

    /// Resolves the variance proxy for the round: raw estimate (None when
    /// the source has no meaningful estimate) and the floored value used in
    /// the update.
    fn resolve_variance(
        &self,
        sel: &Selection,
        oracle: Option<OracleVariance>,
        reward_range: Option<(f64, f64)>,
    ) -> Result<(Option<f64>, f64), AgentError> {
        let round = self.t + 1;
        let (hat, raw_is_estimate) = match self.cfg.variance {
            VarianceSource::Unit => (1.0, false),
            VarianceSource::OracleBound => {
                let feed = oracle.ok_or(AgentError::MissingOracleFeed { round })?;
                (feed.bound, true)
            }
            VarianceSource::OracleTrueVar => {
                let feed = oracle.ok_or(AgentError::MissingOracleFeed { round })?;
                (feed.true_var, true)
            }
            VarianceSource::EstimatedBound => {
                let (a, b) = reward_range.unwrap_or(self.cfg.reward_range);
                (estimate_sigma_sq(sel.mean_est, a, b), true)
            }
            VarianceSource::PredictiveVariance => {
                (quadratic_form(&sel.phi, &self.head.a_inv), true)
            }
        };
        let bar = clamp_sigma(hat, self.cfg.noise_magnitude, self.cfg.feature_dim);
        Ok((raw_is_estimate.then_some(hat), bar))
    }

    /// Plays one round: select, observe the chosen arm's reward, update the
    /// design, and retrain the network on schedule. `reward_of` is invoked
    /// exactly once, with the chosen arm. `reward_range` overrides the
    /// configured [a, b] for this round (dataset phase switches).
    ///
    /// Selection time covers the feature/score/argmax work only; training
    /// time covers the SGD session when one runs this round.
    pub fn step(
        &mut self,
        contexts: &[Vec<f64>],
        oracle: Option<OracleVariance>,
        reward_range: Option<(f64, f64)>,
        reward_of: impl FnOnce(usize) -> f64,
    ) -> Result<RoundRecord, AgentError> {
        assert_eq!(contexts.len(), self.cfg.num_arms, "arm count mismatch");
        for x in contexts {
            assert!(x.iter().all(|v| v.is_finite()), "non-finite context");
        }
        let round = self.t + 1;

        let select_start = Instant::now();
        let sel = match self.cfg.kind {
            PolicyKind::Linear | PolicyKind::NeuralLinear => self.select_arm(contexts)?,
            PolicyKind::GradientUcb => self.neural_ucb_select(contexts)?,
            PolicyKind::GradientTs => self.neural_ts_select(contexts)?,
        };
        let select_us = select_start.elapsed().as_micros() as u64;

        let reward = reward_of(sel.arm);
        if !reward.is_finite() {
            return Err(AgentError::NonFiniteReward { round });
        }

        let (sigma_hat_sq, sigma_bar_sq) = if self.cfg.kind.uses_head_design() {
            let (hat, bar) = self.resolve_variance(&sel, oracle, reward_range)?;
            self.update_linear(&sel.phi, reward, bar);
            self.prev_sigma_bar = bar.sqrt();
            (hat, Some(bar))
        } else {
            // Gradient baselines grow the diagonal design instead.
            let m = self.net.as_ref().unwrap().penult_width() as f64;
            let z = self.z_diag.as_mut().unwrap();
            for (zi, gi) in z.iter_mut().zip(&sel.grad) {
                *zi += gi * gi / m;
            }
            (None, None)
        };

        let mut train_us = 0;
        if self.cfg.kind.uses_network() {
            self.buffer.push(contexts[sel.arm].clone(), reward);
            if round >= self.cfg.train_warmup && round % self.cfg.train_period == 0 {
                let train_start = Instant::now();
                let net = self.net.as_mut().unwrap();
                let report = net.train(
                    &self.head.theta,
                    &self.head.a_inv,
                    &self.buffer,
                    &self.cfg.train,
                    &mut self.rng,
                )?;
                train_us = train_start.elapsed().as_micros() as u64;
                self.last_train_loss = Some(report.final_loss);
            }
        }

        self.t = round;
        Ok(RoundRecord {
            t: round,
            arm: sel.arm,
            reward,
            mean_est: sel.mean_est,
            ucb_width: sel.width,
            sigma_hat_sq,
            sigma_bar_sq,
            select_us,
            train_us,
        })
    }

    /// Gaussian forecast for the reward at context `x`: mean theta^T phi,
    /// std the exploration width the agent would use at its next round.
    /// Gradient baselines use their bonus width instead.
    pub fn forecast(&self, x: &[f64]) -> Result<(f64, f64), AgentError> {
        match self.cfg.kind {
            PolicyKind::Linear | PolicyKind::NeuralLinear => {
                let phi = self.features(x)?;
                let mean = dot(&self.head.theta, &phi);
                let width = self.current_alpha() * mahalanobis_norm(&phi, &self.head.a_inv);
                Ok((mean, width))
            }
            PolicyKind::GradientUcb | PolicyKind::GradientTs => {
                let scored = self.gradient_scores(std::slice::from_ref(&x.to_vec()))?;
                let (f, w, _) = &scored[0];
                Ok((*f, self.current_alpha() * w))
            }
        }
    }
}
