//! Executes the (agent x seed) matrix: fresh environment and agent per
//! cell, per-round CSV log, per-cell JSON summary. A cell failure is
//! recorded in its summary and the rest of the matrix keeps running.
//!
//! Determinism contract: everything except the two timing columns is a pure
//! function of (config, seed). All agents at the same seed face the same
//! environment stream, so cross-agent comparisons are paired.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{AgentSpec, EnvSpec, ExperimentConfig};
use crate::agents::{Agent, AgentError, RoundRecord};
use crate::envs::{
    load_csv_dataset, load_idx_dataset, DatasetEnv, Environment, RawDataset, SyntheticEnv,
};
use crate::metrics::{
    calibration_error, calibration_error_holdout, reliability_bins, sharpness,
    variance_estimation_error, CalibrationConfig, MetricsAccumulator,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("loading dataset: {0}")]
    Dataset(#[from] crate::envs::DatasetError),
    #[error("writing summary: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything a finished cell reports; serialized one JSON file per cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub seed: u64,
    /// "ok", or a description of what aborted the cell.
    pub status: String,
    pub rounds: usize,
    pub final_cum_regret: f64,
    pub calibration_error: f64,
    pub sharpness: f64,
    pub mean_select_ms: f64,
    pub mean_train_ms: f64,
    /// Mean |sigma_hat^2 - true variance|; absent when the policy reports
    /// no variance estimate.
    pub mean_variance_error: Option<f64>,
    pub holdout_calibration: Vec<CheckpointCalibration>,
    pub reliability: Vec<ReliabilityPoint>,
    pub cum_regret: Vec<f64>,
}

impl RunSummary {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(agent: &str, seed: u64, why: String) -> Self {
        RunSummary {
            agent: agent.to_string(),
            seed,
            status: why,
            rounds: 0,
            final_cum_regret: 0.0,
            calibration_error: 0.0,
            sharpness: 0.0,
            mean_select_ms: 0.0,
            mean_train_ms: 0.0,
            mean_variance_error: None,
            holdout_calibration: Vec::new(),
            reliability: Vec::new(),
            cum_regret: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CheckpointCalibration {
    pub round: usize,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    pub threshold: f64,
    pub frequency: f64,
}

#[derive(Debug, Error)]
enum CellError {
    #[error("round {t}: {source}")]
    Agent { t: usize, source: AgentError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Environment blueprint; datasets are loaded once and shared across cells.
enum EnvFactory {
    Synthetic(crate::envs::SyntheticConfig),
    Dataset(RawDataset, crate::envs::DatasetConfig),
}

impl EnvFactory {
    fn from_spec(spec: &EnvSpec) -> Result<Self, HarnessError> {
        Ok(match spec {
            EnvSpec::Synthetic(c) => EnvFactory::Synthetic(c.clone()),
            EnvSpec::Csv { path, label, cfg } => {
                EnvFactory::Dataset(load_csv_dataset(path, label)?, cfg.clone())
            }
            EnvSpec::Idx { images, labels, cfg } => {
                EnvFactory::Dataset(load_idx_dataset(images, labels)?, cfg.clone())
            }
        })
    }

    fn build(&self, env_seed: u64) -> Box<dyn Environment> {
        match self {
            EnvFactory::Synthetic(c) => Box::new(SyntheticEnv::new(c.clone(), env_seed)),
            EnvFactory::Dataset(data, c) => {
                Box::new(DatasetEnv::new(data.clone(), c.clone(), env_seed))
            }
        }
    }
}

/// One environment stream per seed, shared by every agent: the stream must
/// not depend on which agent is running. Public so tests and tools can
/// rebuild the exact stream a run saw.
pub fn env_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Hold-out draws must not collide with the env or agent streams.
fn holdout_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x100_0000_01b3).wrapping_add(t as u64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(rec: &RoundRecord, regret: f64, cum_regret: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        rec.t,
        rec.arm,
        rec.reward,
        regret,
        cum_regret,
        rec.mean_est,
        rec.ucb_width,
        fmt_opt(rec.sigma_hat_sq),
        fmt_opt(rec.sigma_bar_sq),
        rec.select_us,
        rec.train_us
    )
}

pub const CSV_HEADER: &str =
    "t,arm,reward,regret,cum_regret,mean_est,ucb_width,sigma_hat_sq,sigma_bar_sq,select_us,train_us";

fn run_cell(
    factory: &EnvFactory,
    spec: &AgentSpec,
    cfg: &ExperimentConfig,
    seed: u64,
    csv_path: &Path,
) -> Result<RunSummary, CellError> {
    let mut env = factory.build(env_seed(seed));
    let horizon = env.horizon();
    let agent_cfg =
        spec.to_agent_config(env.context_dim(), env.num_arms(), cfg.env.base_reward_range());
    let mut agent = Agent::init_agent(agent_cfg, seed);
    let mut acc = MetricsAccumulator::new();
    let cal_cfg = CalibrationConfig::default();
    let mut holdout_calibration = Vec::new();

    let mut csv = std::io::BufWriter::new(fs::File::create(csv_path)?);
    writeln!(csv, "{CSV_HEADER}")?;

    for t in 1..=horizon {
        let obs = env.sample_contexts(t);
        let rec = agent
            .step(&obs.contexts, Some(obs.oracle), Some(obs.reward_range), |arm| {
                env.reward_value(t, arm)
            })
            .map_err(|source| CellError::Agent { t, source })?;

        let prev = acc.final_regret();
        acc.record_round(&rec, &obs);
        let cum = acc.final_regret();
        csv.write_all(csv_row(&rec, cum - prev, cum).as_bytes())?;

        if cfg.checkpoints.contains(&t) {
            let holdout = env.holdout_at(t, cfg.holdout_size.max(1), holdout_seed(seed, t));
            let error = calibration_error_holdout(&agent, &holdout, &cal_cfg)
                .map_err(|source| CellError::Agent { t, source })?;
            holdout_calibration.push(CheckpointCalibration { round: t, error });
        }
    }
    csv.flush()?;

    let mean_variance_error = if acc.variance_pairs.is_empty() {
        None
    } else {
        let errs = variance_estimation_error(&acc.variance_pairs);
        Some(errs.iter().sum::<f64>() / errs.len() as f64)
    };
    Ok(RunSummary {
        agent: spec.name.clone(),
        seed,
        status: "ok".to_string(),
        rounds: acc.rounds,
        final_cum_regret: acc.final_regret(),
        calibration_error: calibration_error(&acc.pit_values, &cal_cfg),
        sharpness: sharpness(&acc.forecasts),
        mean_select_ms: acc.mean_select_us() / 1000.0,
        mean_train_ms: acc.mean_train_us() / 1000.0,
        mean_variance_error,
        holdout_calibration,
        reliability: reliability_bins(&acc.pit_values, &cal_cfg)
            .into_iter()
            .map(|(threshold, frequency)| ReliabilityPoint { threshold, frequency })
            .collect(),
        cum_regret: acc.cumulative_regret,
    })
}

/// File stem for one cell's outputs.
fn cell_stem(agent: &str, seed: u64) -> String {
    format!("{agent}_{seed}")
}

/// Runs the full matrix. Returns every cell's summary (failed cells carry
/// their error in `status`); I/O trouble with the output directory itself
/// aborts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>, HarnessError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let factory = EnvFactory::from_spec(&cfg.env)?;
    let mut summaries = Vec::with_capacity(cfg.agents.len() * cfg.seeds.len());
    for spec in &cfg.agents {
        for &seed in &cfg.seeds {
            let stem = cell_stem(&spec.name, seed);
            let csv_path = cfg.out_dir.join(format!("run_{stem}.csv"));
            let summary = match run_cell(&factory, spec, cfg, seed, &csv_path) {
                Ok(s) => s,
                Err(e) => RunSummary::failed(&spec.name, seed, format!("failed: {e}")),
            };
            let json_path = cfg.out_dir.join(format!("summary_{stem}.json"));
            fs::write(&json_path, serde_json::to_vec_pretty(&summary)?)?;
            summaries.push(summary);
        }
    }
    Ok(summaries)
}

/// Reads every `summary_*.json` under `dir`, sorted by file name.
pub fn read_summaries(dir: &Path) -> Result<Vec<RunSummary>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("summary_"))
        })
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(serde_json::from_slice(&fs::read(&p)?)?);
    }
    Ok(out)
}

/// Per-agent latency aggregate from a timing-only pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub agent: String,
    /// Mean per-round arm-selection time, microseconds, across all seeds.
    pub mean_select_us: f64,
    /// Mean per-round training time, microseconds (0 when never trained).
    pub mean_train_us: f64,
    pub rounds: usize,
    pub seeds: usize,
}

/// Timing-only mode: same matrix, no CSV/JSON side effects per round, one
/// aggregate row per agent. Errors abort (a bench with failed cells has no
/// meaningful timings).
pub fn bench_experiment(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>, HarnessError> {
    let factory = EnvFactory::from_spec(&cfg.env)?;
    let mut rows = Vec::with_capacity(cfg.agents.len());
    for spec in &cfg.agents {
        let mut select_total = 0u64;
        let mut train_total = 0u64;
        let mut rounds = 0usize;
        for &seed in &cfg.seeds {
            let mut env = factory.build(env_seed(seed));
            let horizon = env.horizon();
            let agent_cfg = spec.to_agent_config(
                env.context_dim(),
                env.num_arms(),
                cfg.env.base_reward_range(),
            );
            let mut agent = Agent::init_agent(agent_cfg, seed);
            for t in 1..=horizon {
                let obs = env.sample_contexts(t);
                let rec = agent
                    .step(&obs.contexts, Some(obs.oracle), Some(obs.reward_range), |arm| {
                        env.reward_value(t, arm)
                    })
                    .map_err(|e| {
                        HarnessError::Io(std::io::Error::other(format!(
                            "bench cell {} seed {seed} round {t}: {e}",
                            spec.name
                        )))
                    })?;
                select_total += rec.select_us;
                train_total += rec.train_us;
                rounds += 1;
            }
        }
        rows.push(BenchRow {
            agent: spec.name.clone(),
            mean_select_us: select_total as f64 / rounds.max(1) as f64,
            mean_train_us: train_total as f64 / rounds.max(1) as f64,
            rounds,
            seeds: cfg.seeds.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{NoiseModel, RewardSurface, SyntheticConfig};
    use crate::harness::config::parse_config;

    fn tiny_config(out: &Path) -> ExperimentConfig {
        let text = format!(
            "\
seeds = 1, 2
out_dir = {}
warmup = 4
train_steps = 5
hidden_width = 8
batch_size = 4
checkpoints = 5, 10
holdout_size = 8

[env]
kind = synthetic
context_dim = 4
num_arms = 3
horizon = 10

[agent]
kind = var_ucb
name = ours

[agent]
kind = lin_ucb
",
            out.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn matrix_writes_expected_files_with_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let summaries = run_experiment(&cfg).unwrap();
        assert_eq!(summaries.len(), 4);
        assert!(summaries.iter().all(|s| s.is_ok()));
        for s in &summaries {
            assert_eq!(s.rounds, 10);
            assert_eq!(s.cum_regret.len(), 10);
            assert_eq!(s.holdout_calibration.len(), 2);
            assert_eq!(s.holdout_calibration[0].round, 5);
            // Non-decreasing cumulative regret.
            for w in s.cum_regret.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
        for agent in ["ours", "lin_ucb"] {
            for seed in [1, 2] {
                let csv =
                    fs::read_to_string(dir.path().join(format!("run_{agent}_{seed}.csv"))).unwrap();
                let lines: Vec<&str> = csv.lines().collect();
                assert_eq!(lines.len(), 11); // header + 10 rounds
                assert_eq!(lines[0], CSV_HEADER);
                assert!(dir.path().join(format!("summary_{agent}_{seed}.json")).exists());
            }
        }
        // lin_ucb has no variance estimate: sigma columns empty.
        let csv = fs::read_to_string(dir.path().join("run_lin_ucb_1.csv")).unwrap();
        let first = csv.lines().nth(1).unwrap();
        let cells: Vec<&str> = first.split(',').collect();
        assert_eq!(cells.len(), 11);
        assert_eq!(cells[7], "");
        // ours logs both sigma columns.
        let csv = fs::read_to_string(dir.path().join("run_ours_1.csv")).unwrap();
        let cells: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert!(!cells[7].is_empty() && !cells[8].is_empty());
    }

    /// Byte-identical CSVs across repeat runs, timing columns excluded.
    #[test]
    fn repeat_runs_are_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut c1 = tiny_config(d1.path());
        let mut c2 = tiny_config(d2.path());
        c1.out_dir = d1.path().to_path_buf();
        c2.out_dir = d2.path().to_path_buf();
        let s1 = run_experiment(&c1).unwrap();
        let s2 = run_experiment(&c2).unwrap();

        let strip = |csv: &str| -> String {
            csv.lines()
                .map(|l| l.split(',').take(9).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join("\n")
        };
        for agent in ["ours", "lin_ucb"] {
            for seed in [1, 2] {
                let a = fs::read_to_string(d1.path().join(format!("run_{agent}_{seed}.csv")))
                    .unwrap();
                let b = fs::read_to_string(d2.path().join(format!("run_{agent}_{seed}.csv")))
                    .unwrap();
                assert_eq!(strip(&a), strip(&b));
            }
        }
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.final_cum_regret, b.final_cum_regret);
            assert_eq!(a.calibration_error, b.calibration_error);
            assert_eq!(a.cum_regret, b.cum_regret);
            assert_eq!(
                a.holdout_calibration.iter().map(|c| c.error).collect::<Vec<_>>(),
                b.holdout_calibration.iter().map(|c| c.error).collect::<Vec<_>>()
            );
        }
    }

    /// All agents at one seed face the same context stream; distinct seeds
    /// give distinct streams and distinct initial heads.
    #[test]
    fn seed_discipline() {
        let f = EnvFactory::Synthetic(SyntheticConfig {
            surface: RewardSurface::ScaledSquare,
            context_dim: 4,
            num_arms: 2,
            horizon: 3,
            noise: NoiseModel::RandomVariance,
            oracle_slack: 1.0,
            reward_range: (0.0, 1.0),
            normalize: false,
        });
        let mut e1 = f.build(env_seed(7));
        let mut e2 = f.build(env_seed(7));
        let mut e3 = f.build(env_seed(8));
        let a = e1.sample_contexts(1);
        let b = e2.sample_contexts(1);
        let c = e3.sample_contexts(1);
        assert_eq!(a.contexts, b.contexts);
        assert_ne!(a.contexts, c.contexts);
    }

    #[test]
    fn summaries_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let written = run_experiment(&cfg).unwrap();
        let read = read_summaries(dir.path()).unwrap();
        assert_eq!(read.len(), written.len());
        // Same cells, keyed by (agent, seed).
        let mut keys: Vec<(String, u64)> =
            read.iter().map(|s| (s.agent.clone(), s.seed)).collect();
        keys.sort();
        let mut want: Vec<(String, u64)> =
            written.iter().map(|s| (s.agent.clone(), s.seed)).collect();
        want.sort();
        assert_eq!(keys, want);
    }

    /// A missing dataset file fails the whole experiment (nothing to run),
    /// while an in-cell failure is isolated per cell. The cheapest in-cell
    /// failure to provoke: an unwritable CSV path.
    #[test]
    fn failure_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.env = EnvSpec::Csv {
            path: dir.path().join("nope.csv"),
            label: crate::envs::LabelColumn::Index(0),
            cfg: crate::envs::DatasetConfig {
                horizon: 5,
                dynamic_rewards: false,
                normalize: false,
            },
        };
        assert!(matches!(run_experiment(&cfg).unwrap_err(), HarnessError::Dataset(_)));
    }

    #[test]
    fn bench_counts_every_round() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let rows = bench_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.rounds, 20); // 10 rounds x 2 seeds
            assert_eq!(row.seeds, 2);
            assert!(row.mean_select_us >= 0.0);
        }
    }
}
