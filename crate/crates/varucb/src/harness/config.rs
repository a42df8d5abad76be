//! Experiment config files: flat `key = value` lines, one `[env]` section,
//! one `[agent]` section per policy. `#` starts a full-line comment.
//! Unknown keys are rejected with their line number so typos never silently
//! fall back to defaults.
//!
//! ```text
//! seeds = 0, 1, 2, 3, 4
//! out_dir = runs/demo
//! hidden_width = 50
//!
//! [env]
//! kind = synthetic
//! surface = scaled_square
//! horizon = 2000
//!
//! [agent]
//! kind = var_ucb
//! variance = estimated
//! ```

use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::agents::{AgentConfig, ExplorationSchedule, PolicyKind, VarianceSource};
use crate::envs::{DatasetConfig, LabelColumn, NoiseModel, RewardSurface, SyntheticConfig};
use crate::neural::{LossKind, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`")]
    BadSyntax { line: usize },
    #[error("line {line}: unknown section [{name}]; expected [env] or [agent]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key {key:?} in {section}")]
    UnknownKey { line: usize, key: String, section: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot parse {value:?} as {want} for key {key:?}")]
    BadValue { line: usize, key: String, value: String, want: &'static str },
    #[error("line {line}: second [env] section")]
    DuplicateEnv { line: usize },
    #[error("missing required key {key:?} in {section}")]
    MissingKey { key: &'static str, section: String },
    #[error("config needs an [env] section")]
    MissingEnv,
    #[error("config needs at least one [agent] section")]
    MissingAgent,
    #[error("{0}")]
    Invalid(String),
}

/// Registered policy names a config's `kind =` can choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    /// Ridge UCB on raw contexts, no network.
    LinUcb,
    /// Neural features, greedy head (exploration coefficient pinned to 0).
    NeuralGreedy,
    /// Neural features, unweighted ridge UCB.
    NeuralLinUcb,
    /// UCB over the full weight-gradient design (diagonal approximation).
    NeuralUcb,
    /// Thompson sampling over the same gradient design.
    NeuralTs,
    /// Variance-weighted ridge UCB on neural features.
    VarUcb,
}

impl AgentKind {
    pub fn token(self) -> &'static str {
        match self {
            AgentKind::LinUcb => "lin_ucb",
            AgentKind::NeuralGreedy => "neural_greedy",
            AgentKind::NeuralLinUcb => "neural_lin_ucb",
            AgentKind::NeuralUcb => "neural_ucb",
            AgentKind::NeuralTs => "neural_ts",
            AgentKind::VarUcb => "var_ucb",
        }
    }
}

/// Exploration schedule choice; the constant value lives in [`SharedParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Constant,
    /// Deviation-bound schedule; remaining inputs (lambda, train period,
    /// arm count, feature dim, noise magnitude) are wired in at build time.
    Theory { head_norm_bound: f64, delta: f64 },
}

/// Knobs shared by every agent unless a section overrides them.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedParams {
    pub lambda: f64,
    /// Constant exploration coefficient.
    pub alpha: f64,
    /// Retrain the network every this many rounds...
    pub train_period: usize,
    /// ...running this many SGD steps...
    pub train_steps: usize,
    /// ...but only from this round on.
    pub warmup: usize,
    pub hidden_width: usize,
    /// Feature width the head sees; defaults to `hidden_width`.
    pub feature_width: Option<usize>,
    /// Number of weight matrices (2 = one hidden layer).
    pub depth: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Working noise magnitude R; sets the variance floor R^2/d.
    pub noise_magnitude: f64,
}

impl Default for SharedParams {
    fn default() -> Self {
        SharedParams {
            lambda: 1.0,
            alpha: 0.02,
            train_period: 100,
            train_steps: 1000,
            warmup: 2000,
            hidden_width: 100,
            feature_width: None,
            depth: 2,
            learning_rate: 0.01,
            weight_decay: 1e-3,
            batch_size: 64,
            noise_magnitude: 1.0,
        }
    }
}

/// One `[agent]` section, with shared params already merged.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    /// Output label; must be unique across the matrix.
    pub name: String,
    pub kind: AgentKind,
    /// Variance proxy; meaningful for `var_ucb` only (others run unit).
    pub variance: VarianceSource,
    pub loss: LossKind,
    pub schedule: ScheduleSpec,
    pub params: SharedParams,
}

impl AgentSpec {
    /// Resolves the spec against the environment's dimensions.
    pub fn to_agent_config(
        &self,
        context_dim: usize,
        num_arms: usize,
        reward_range: (f64, f64),
    ) -> AgentConfig {
        let p = &self.params;
        let kind = match self.kind {
            AgentKind::LinUcb => PolicyKind::Linear,
            AgentKind::NeuralGreedy | AgentKind::NeuralLinUcb | AgentKind::VarUcb => {
                PolicyKind::NeuralLinear
            }
            AgentKind::NeuralUcb => PolicyKind::GradientUcb,
            AgentKind::NeuralTs => PolicyKind::GradientTs,
        };
        let feature_dim = match kind {
            PolicyKind::Linear => context_dim,
            _ => p.feature_width.unwrap_or(p.hidden_width),
        };
        let exploration = match (&self.kind, &self.schedule) {
            (AgentKind::NeuralGreedy, _) => ExplorationSchedule::Constant { alpha: 0.0 },
            (_, ScheduleSpec::Constant) => ExplorationSchedule::Constant { alpha: p.alpha },
            (_, ScheduleSpec::Theory { head_norm_bound, delta }) => {
                ExplorationSchedule::Theory {
                    noise_magnitude: p.noise_magnitude,
                    head_norm_bound: *head_norm_bound,
                    delta: *delta,
                    train_period: p.train_period,
                    num_arms,
                    lambda: p.lambda,
                    feature_dim,
                }
            }
        };
        let variance = match self.kind {
            AgentKind::VarUcb => self.variance,
            _ => VarianceSource::Unit,
        };
        AgentConfig {
            kind,
            context_dim,
            num_arms,
            hidden_width: p.hidden_width,
            num_layers: p.depth,
            feature_dim,
            lambda: p.lambda,
            exploration,
            variance,
            reward_range,
            noise_magnitude: p.noise_magnitude,
            train: TrainConfig {
                steps: p.train_steps,
                learning_rate: p.learning_rate,
                weight_decay: p.weight_decay,
                batch_size: p.batch_size,
                loss: self.loss,
            },
            train_period: p.train_period,
            train_warmup: p.warmup,
        }
    }
}

/// The `[env]` section.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf, label: LabelColumn, cfg: DatasetConfig },
    Idx { images: PathBuf, labels: PathBuf, cfg: DatasetConfig },
}

impl EnvSpec {
    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Synthetic(c) => c.horizon,
            EnvSpec::Csv { cfg, .. } | EnvSpec::Idx { cfg, .. } => cfg.horizon,
        }
    }

    pub fn set_horizon(&mut self, t: usize) {
        match self {
            EnvSpec::Synthetic(c) => c.horizon = t,
            EnvSpec::Csv { cfg, .. } | EnvSpec::Idx { cfg, .. } => cfg.horizon = t,
        }
    }

    /// Reward range agents fall back on before the first observation.
    pub fn base_reward_range(&self) -> (f64, f64) {
        match self {
            EnvSpec::Synthetic(c) => c.reward_range,
            EnvSpec::Csv { .. } | EnvSpec::Idx { .. } => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Rounds at which a hold-out calibration snapshot is taken.
    pub checkpoints: Vec<usize>,
    /// Hold-out points per checkpoint.
    pub holdout_size: usize,
    pub defaults: SharedParams,
    pub env: EnvSpec,
    pub agents: Vec<AgentSpec>,
}

/// Applies CLI-level overrides after parsing.
pub fn apply_overrides(
    cfg: &mut ExperimentConfig,
    seeds: Option<&[u64]>,
    out: Option<&Path>,
    quick: bool,
) {
    if let Some(s) = seeds {
        cfg.seeds = s.to_vec();
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    if quick {
        cfg.env.set_horizon((cfg.env.horizon() / 2).max(1));
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

type Pair = (usize, String, String); // line, key, value

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        want: "number",
    })
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        want: "nonnegative integer",
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            want: "true or false",
        }),
    }
}

fn parse_u64_list(line: usize, key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                want: "comma-separated nonnegative integers",
            })
        })
        .collect()
}

fn parse_usize_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    parse_u64_list(line, key, value).map(|v| v.into_iter().map(|x| x as usize).collect())
}

/// Splits the text into (globals, env section, agent sections), keeping line
/// numbers, and rejects malformed lines, unknown sections, and duplicate
/// keys within a section.
fn split_sections(
    text: &str,
) -> Result<(Vec<Pair>, Option<(usize, Vec<Pair>)>, Vec<Vec<Pair>>), ConfigError> {
    enum Where {
        Globals,
        Env,
        Agent,
    }
    let mut at = Where::Globals;
    let mut globals: Vec<Pair> = Vec::new();
    let mut env: Option<(usize, Vec<Pair>)> = None;
    let mut agents: Vec<Vec<Pair>> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            match name.trim() {
                "env" => {
                    if env.is_some() {
                        return Err(ConfigError::DuplicateEnv { line: line_no });
                    }
                    env = Some((line_no, Vec::new()));
                    at = Where::Env;
                }
                "agent" => {
                    agents.push(Vec::new());
                    at = Where::Agent;
                }
                other => {
                    return Err(ConfigError::UnknownSection {
                        line: line_no,
                        name: other.to_string(),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::BadSyntax { line: line_no })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::BadSyntax { line: line_no });
        }
        let bucket = match at {
            Where::Globals => &mut globals,
            Where::Env => &mut env.as_mut().expect("entered [env]").1,
            Where::Agent => agents.last_mut().expect("entered [agent]"),
        };
        if bucket.iter().any(|(_, k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { line: line_no, key });
        }
        bucket.push((line_no, key, value));
    }
    Ok((globals, env, agents))
}

/// Folds one `key = value` into a [`SharedParams`]; returns false when the
/// key is not a shared knob (so the caller can try section-specific keys).
fn apply_shared_key(
    p: &mut SharedParams,
    line: usize,
    key: &str,
    value: &str,
) -> Result<bool, ConfigError> {
    match key {
        "lambda" => p.lambda = parse_f64(line, key, value)?,
        "alpha" => p.alpha = parse_f64(line, key, value)?,
        "train_period" => p.train_period = parse_usize(line, key, value)?,
        "train_steps" => p.train_steps = parse_usize(line, key, value)?,
        "warmup" => p.warmup = parse_usize(line, key, value)?,
        "hidden_width" => p.hidden_width = parse_usize(line, key, value)?,
        "feature_width" => p.feature_width = Some(parse_usize(line, key, value)?),
        "depth" => p.depth = parse_usize(line, key, value)?,
        "learning_rate" => p.learning_rate = parse_f64(line, key, value)?,
        "weight_decay" => p.weight_decay = parse_f64(line, key, value)?,
        "batch_size" => p.batch_size = parse_usize(line, key, value)?,
        "noise_magnitude" => p.noise_magnitude = parse_f64(line, key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn interpret_env(pairs: &[Pair]) -> Result<EnvSpec, ConfigError> {
    let find = |k: &str| pairs.iter().find(|(_, key, _)| key == k);
    let (kind_line, _, kind) = find("kind").ok_or(ConfigError::MissingKey {
        key: "kind",
        section: "[env]".to_string(),
    })?;

    match kind.as_str() {
        "synthetic" => {
            let mut cfg = SyntheticConfig::default();
            let mut noise_kind: Option<(usize, String)> = None;
            let mut noise_std = None;
            let mut noise_start = None;
            let mut noise_end = None;
            for (line, key, value) in pairs {
                let (line, key, value) = (*line, key.as_str(), value.as_str());
                match key {
                    "kind" => {}
                    "surface" => {
                        cfg.surface = match value {
                            "scaled_square" => RewardSurface::ScaledSquare,
                            "square" => RewardSurface::Square,
                            "cosine" => RewardSurface::Cosine,
                            _ => {
                                return Err(ConfigError::BadValue {
                                    line,
                                    key: key.to_string(),
                                    value: value.to_string(),
                                    want: "scaled_square, square, or cosine",
                                })
                            }
                        }
                    }
                    "context_dim" => cfg.context_dim = parse_usize(line, key, value)?,
                    "num_arms" => cfg.num_arms = parse_usize(line, key, value)?,
                    "horizon" => cfg.horizon = parse_usize(line, key, value)?,
                    "noise" => noise_kind = Some((line, value.to_string())),
                    "noise_std" => noise_std = Some(parse_f64(line, key, value)?),
                    "noise_std_start" => noise_start = Some(parse_f64(line, key, value)?),
                    "noise_std_end" => noise_end = Some(parse_f64(line, key, value)?),
                    "oracle_slack" => cfg.oracle_slack = parse_f64(line, key, value)?,
                    "reward_min" => cfg.reward_range.0 = parse_f64(line, key, value)?,
                    "reward_max" => cfg.reward_range.1 = parse_f64(line, key, value)?,
                    "normalize" => cfg.normalize = parse_bool(line, key, value)?,
                    _ => {
                        return Err(ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                            section: "[env] kind = synthetic".to_string(),
                        })
                    }
                }
            }
            cfg.noise = match noise_kind.as_ref().map(|(l, v)| (*l, v.as_str())) {
                None | Some((_, "random_variance")) => {
                    if noise_std.is_some() || noise_start.is_some() || noise_end.is_some() {
                        return Err(ConfigError::Invalid(
                            "noise_std/noise_std_start/noise_std_end only apply to \
                             noise = fixed_std or linear_std"
                                .to_string(),
                        ));
                    }
                    NoiseModel::RandomVariance
                }
                Some((_, "fixed_std")) => {
                    if noise_start.is_some() || noise_end.is_some() {
                        return Err(ConfigError::Invalid(
                            "noise_std_start/noise_std_end only apply to noise = linear_std"
                                .to_string(),
                        ));
                    }
                    NoiseModel::FixedStd {
                        std: noise_std.ok_or(ConfigError::MissingKey {
                            key: "noise_std",
                            section: "[env] noise = fixed_std".to_string(),
                        })?,
                    }
                }
                Some((_, "linear_std")) => {
                    if noise_std.is_some() {
                        return Err(ConfigError::Invalid(
                            "noise_std only applies to noise = fixed_std".to_string(),
                        ));
                    }
                    NoiseModel::LinearStd {
                        start: noise_start.ok_or(ConfigError::MissingKey {
                            key: "noise_std_start",
                            section: "[env] noise = linear_std".to_string(),
                        })?,
                        end: noise_end.ok_or(ConfigError::MissingKey {
                            key: "noise_std_end",
                            section: "[env] noise = linear_std".to_string(),
                        })?,
                    }
                }
                Some((line, other)) => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: "noise".to_string(),
                        value: other.to_string(),
                        want: "random_variance, fixed_std, or linear_std",
                    })
                }
            };
            if cfg.horizon == 0 {
                return Err(ConfigError::Invalid("horizon must be at least 1".to_string()));
            }
            if cfg.reward_range.0 >= cfg.reward_range.1 {
                return Err(ConfigError::Invalid(format!(
                    "reward range [{}, {}] is empty",
                    cfg.reward_range.0, cfg.reward_range.1
                )));
            }
            Ok(EnvSpec::Synthetic(cfg))
        }
        "csv" | "idx" => {
            let mut cfg = DatasetConfig { horizon: 0, dynamic_rewards: false, normalize: false };
            let mut path = None;
            let mut label = None;
            let mut images = None;
            let mut labels = None;
            for (line, key, value) in pairs {
                let (line, key, value) = (*line, key.as_str(), value.as_str());
                match (kind.as_str(), key) {
                    (_, "kind") => {}
                    (_, "horizon") => cfg.horizon = parse_usize(line, key, value)?,
                    (_, "dynamic_rewards") => cfg.dynamic_rewards = parse_bool(line, key, value)?,
                    (_, "normalize") => cfg.normalize = parse_bool(line, key, value)?,
                    ("csv", "path") => path = Some(PathBuf::from(value)),
                    ("csv", "label_column") => {
                        // Integers mean a 0-based index; anything else is a
                        // header name.
                        label = Some(match value.parse::<usize>() {
                            Ok(i) => LabelColumn::Index(i),
                            Err(_) => LabelColumn::Name(value.to_string()),
                        });
                    }
                    ("idx", "images_path") => images = Some(PathBuf::from(value)),
                    ("idx", "labels_path") => labels = Some(PathBuf::from(value)),
                    _ => {
                        return Err(ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                            section: format!("[env] kind = {kind}"),
                        })
                    }
                }
            }
            if cfg.horizon == 0 {
                return Err(ConfigError::MissingKey {
                    key: "horizon",
                    section: format!("[env] kind = {kind}"),
                });
            }
            if kind == "csv" {
                Ok(EnvSpec::Csv {
                    path: path.ok_or(ConfigError::MissingKey {
                        key: "path",
                        section: "[env] kind = csv".to_string(),
                    })?,
                    label: label.ok_or(ConfigError::MissingKey {
                        key: "label_column",
                        section: "[env] kind = csv".to_string(),
                    })?,
                    cfg,
                })
            } else {
                Ok(EnvSpec::Idx {
                    images: images.ok_or(ConfigError::MissingKey {
                        key: "images_path",
                        section: "[env] kind = idx".to_string(),
                    })?,
                    labels: labels.ok_or(ConfigError::MissingKey {
                        key: "labels_path",
                        section: "[env] kind = idx".to_string(),
                    })?,
                    cfg,
                })
            }
        }
        other => Err(ConfigError::BadValue {
            line: *kind_line,
            key: "kind".to_string(),
            value: other.to_string(),
            want: "synthetic, csv, or idx",
        }),
    }
}

fn interpret_agent(pairs: &[Pair], defaults: &SharedParams) -> Result<AgentSpec, ConfigError> {
    let find = |k: &str| pairs.iter().find(|(_, key, _)| key == k);
    let (kind_line, _, kind_val) = find("kind").ok_or(ConfigError::MissingKey {
        key: "kind",
        section: "[agent]".to_string(),
    })?;
    let kind = match kind_val.as_str() {
        "lin_ucb" => AgentKind::LinUcb,
        "neural_greedy" => AgentKind::NeuralGreedy,
        "neural_lin_ucb" => AgentKind::NeuralLinUcb,
        "neural_ucb" => AgentKind::NeuralUcb,
        "neural_ts" => AgentKind::NeuralTs,
        "var_ucb" => AgentKind::VarUcb,
        other => {
            return Err(ConfigError::BadValue {
                line: *kind_line,
                key: "kind".to_string(),
                value: other.to_string(),
                want: "lin_ucb, neural_greedy, neural_lin_ucb, neural_ucb, neural_ts, or var_ucb",
            })
        }
    };

    let mut params = defaults.clone();
    let mut name = None;
    let mut variance = match kind {
        AgentKind::VarUcb => VarianceSource::EstimatedBound,
        _ => VarianceSource::Unit,
    };
    let mut loss = LossKind::Mse;
    let mut schedule_kind: Option<(usize, String)> = None;
    let mut head_norm_bound = 0.1;
    let mut delta = 0.1;

    for (line, key, value) in pairs {
        let (line, key, value) = (*line, key.as_str(), value.as_str());
        if apply_shared_key(&mut params, line, key, value)? {
            continue;
        }
        match key {
            "kind" => {}
            "name" => name = Some(value.to_string()),
            "variance" => {
                if kind != AgentKind::VarUcb {
                    return Err(ConfigError::Invalid(format!(
                        "line {line}: variance only applies to kind = var_ucb"
                    )));
                }
                variance = match value {
                    "unit" => VarianceSource::Unit,
                    "oracle_bound" => VarianceSource::OracleBound,
                    "oracle_true" => VarianceSource::OracleTrueVar,
                    "estimated" => VarianceSource::EstimatedBound,
                    "predictive" => VarianceSource::PredictiveVariance,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            value: value.to_string(),
                            want: "unit, oracle_bound, oracle_true, estimated, or predictive",
                        })
                    }
                };
            }
            "loss" => {
                loss = match value {
                    "mse" => LossKind::Mse,
                    "mle" => LossKind::Mle,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            value: value.to_string(),
                            want: "mse or mle",
                        })
                    }
                };
            }
            "alpha_schedule" => schedule_kind = Some((line, value.to_string())),
            "head_norm_bound" => head_norm_bound = parse_f64(line, key, value)?,
            "delta" => delta = parse_f64(line, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                    section: "[agent]".to_string(),
                })
            }
        }
    }

    let schedule = match schedule_kind.as_ref().map(|(l, v)| (*l, v.as_str())) {
        None | Some((_, "constant")) => ScheduleSpec::Constant,
        Some((_, "theory")) => ScheduleSpec::Theory { head_norm_bound, delta },
        Some((line, other)) => {
            return Err(ConfigError::BadValue {
                line,
                key: "alpha_schedule".to_string(),
                value: other.to_string(),
                want: "constant or theory",
            })
        }
    };

    Ok(AgentSpec {
        name: name.unwrap_or_else(|| kind.token().to_string()),
        kind,
        variance,
        loss,
        schedule,
        params,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let (global_pairs, env_pairs, agent_sections) = split_sections(text)?;

    let mut defaults = SharedParams::default();
    let mut seeds: Vec<u64> = vec![0, 1, 2, 3, 4];
    let mut out_dir = PathBuf::from("runs");
    let mut checkpoints: Vec<usize> = Vec::new();
    let mut holdout_size = 200usize;

    for (line, key, value) in &global_pairs {
        let (line, key, value) = (*line, key.as_str(), value.as_str());
        if apply_shared_key(&mut defaults, line, key, value)? {
            continue;
        }
        match key {
            "seeds" => seeds = parse_u64_list(line, key, value)?,
            "out_dir" => out_dir = PathBuf::from(value),
            "checkpoints" => checkpoints = parse_usize_list(line, key, value)?,
            "holdout_size" => holdout_size = parse_usize(line, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                    section: "the top level".to_string(),
                })
            }
        }
    }
    if seeds.is_empty() {
        return Err(ConfigError::Invalid("seeds must not be empty".to_string()));
    }
    {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(ConfigError::Invalid("seeds must be distinct".to_string()));
        }
    }

    let env = interpret_env(&env_pairs.ok_or(ConfigError::MissingEnv)?.1)?;

    if agent_sections.is_empty() {
        return Err(ConfigError::MissingAgent);
    }
    let agents: Vec<AgentSpec> = agent_sections
        .iter()
        .map(|pairs| interpret_agent(pairs, &defaults))
        .collect::<Result<_, _>>()?;
    for (i, a) in agents.iter().enumerate() {
        if agents[..i].iter().any(|b| b.name == a.name) {
            return Err(ConfigError::Invalid(format!(
                "two agents are both named {:?}; set name = ... to disambiguate",
                a.name
            )));
        }
        if a.name.is_empty()
            || !a.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(ConfigError::Invalid(format!(
                "agent name {:?} must be nonempty [A-Za-z0-9_-] (it names output files)",
                a.name
            )));
        }
    }

    Ok(ExperimentConfig { seeds, out_dir, checkpoints, holdout_size, defaults, env, agents })
}

// ---------------------------------------------------------------------------
// Serialization (round-trip form: every knob written explicitly)
// ---------------------------------------------------------------------------

fn push_shared(out: &mut String, p: &SharedParams) {
    use std::fmt::Write;
    writeln!(out, "lambda = {}", p.lambda).unwrap();
    writeln!(out, "alpha = {}", p.alpha).unwrap();
    writeln!(out, "train_period = {}", p.train_period).unwrap();
    writeln!(out, "train_steps = {}", p.train_steps).unwrap();
    writeln!(out, "warmup = {}", p.warmup).unwrap();
    writeln!(out, "hidden_width = {}", p.hidden_width).unwrap();
    if let Some(w) = p.feature_width {
        writeln!(out, "feature_width = {w}").unwrap();
    }
    writeln!(out, "depth = {}", p.depth).unwrap();
    writeln!(out, "learning_rate = {}", p.learning_rate).unwrap();
    writeln!(out, "weight_decay = {}", p.weight_decay).unwrap();
    writeln!(out, "batch_size = {}", p.batch_size).unwrap();
    writeln!(out, "noise_magnitude = {}", p.noise_magnitude).unwrap();
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Writes a config the parser reads back to an equal [`ExperimentConfig`].
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "seeds = {}", join(&cfg.seeds)).unwrap();
    writeln!(out, "out_dir = {}", cfg.out_dir.display()).unwrap();
    if !cfg.checkpoints.is_empty() {
        writeln!(out, "checkpoints = {}", join(&cfg.checkpoints)).unwrap();
    }
    writeln!(out, "holdout_size = {}", cfg.holdout_size).unwrap();
    push_shared(&mut out, &cfg.defaults);

    out.push_str("\n[env]\n");
    match &cfg.env {
        EnvSpec::Synthetic(c) => {
            out.push_str("kind = synthetic\n");
            let surface = match c.surface {
                RewardSurface::ScaledSquare => "scaled_square",
                RewardSurface::Square => "square",
                RewardSurface::Cosine => "cosine",
            };
            writeln!(out, "surface = {surface}").unwrap();
            writeln!(out, "context_dim = {}", c.context_dim).unwrap();
            writeln!(out, "num_arms = {}", c.num_arms).unwrap();
            writeln!(out, "horizon = {}", c.horizon).unwrap();
            match c.noise {
                NoiseModel::RandomVariance => out.push_str("noise = random_variance\n"),
                NoiseModel::FixedStd { std } => {
                    writeln!(out, "noise = fixed_std\nnoise_std = {std}").unwrap()
                }
                NoiseModel::LinearStd { start, end } => writeln!(
                    out,
                    "noise = linear_std\nnoise_std_start = {start}\nnoise_std_end = {end}"
                )
                .unwrap(),
            }
            writeln!(out, "oracle_slack = {}", c.oracle_slack).unwrap();
            writeln!(out, "reward_min = {}", c.reward_range.0).unwrap();
            writeln!(out, "reward_max = {}", c.reward_range.1).unwrap();
            writeln!(out, "normalize = {}", c.normalize).unwrap();
        }
        EnvSpec::Csv { path, label, cfg: c } => {
            out.push_str("kind = csv\n");
            writeln!(out, "path = {}", path.display()).unwrap();
            match label {
                LabelColumn::Index(i) => writeln!(out, "label_column = {i}").unwrap(),
                LabelColumn::Name(n) => writeln!(out, "label_column = {n}").unwrap(),
            }
            writeln!(out, "horizon = {}", c.horizon).unwrap();
            writeln!(out, "dynamic_rewards = {}", c.dynamic_rewards).unwrap();
            writeln!(out, "normalize = {}", c.normalize).unwrap();
        }
        EnvSpec::Idx { images, labels, cfg: c } => {
            out.push_str("kind = idx\n");
            writeln!(out, "images_path = {}", images.display()).unwrap();
            writeln!(out, "labels_path = {}", labels.display()).unwrap();
            writeln!(out, "horizon = {}", c.horizon).unwrap();
            writeln!(out, "dynamic_rewards = {}", c.dynamic_rewards).unwrap();
            writeln!(out, "normalize = {}", c.normalize).unwrap();
        }
    }

    for a in &cfg.agents {
        out.push_str("\n[agent]\n");
        writeln!(out, "kind = {}", a.kind.token()).unwrap();
        writeln!(out, "name = {}", a.name).unwrap();
        if a.kind == AgentKind::VarUcb {
            let v = match a.variance {
                VarianceSource::Unit => "unit",
                VarianceSource::OracleBound => "oracle_bound",
                VarianceSource::OracleTrueVar => "oracle_true",
                VarianceSource::EstimatedBound => "estimated",
                VarianceSource::PredictiveVariance => "predictive",
            };
            writeln!(out, "variance = {v}").unwrap();
        }
        let loss = match a.loss {
            LossKind::Mse => "mse",
            LossKind::Mle => "mle",
        };
        writeln!(out, "loss = {loss}").unwrap();
        match &a.schedule {
            ScheduleSpec::Constant => out.push_str("alpha_schedule = constant\n"),
            ScheduleSpec::Theory { head_norm_bound, delta } => writeln!(
                out,
                "alpha_schedule = theory\nhead_norm_bound = {head_norm_bound}\ndelta = {delta}"
            )
            .unwrap(),
        }
        push_shared(&mut out, &a.params);
    }
    out
}
