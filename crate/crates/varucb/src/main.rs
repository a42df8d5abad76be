//! Batch CLI: `run` executes a config's (agent x seed) matrix, `plot`
//! re-draws SVGs from saved summaries, `bench` reports per-round latency.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use varucb::harness::{
    apply_overrides, bench_experiment, emit_plots, parse_config, read_summaries, run_experiment,
    ExperimentConfig, RunSummary,
};

#[derive(Parser)]
#[command(name = "varucb", version, about = "Contextual-bandit experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment matrix from a config file: per-round CSV logs,
    /// per-cell JSON summaries, and SVG plots land in the output directory.
    Run {
        config: PathBuf,
        /// Override the config's seed list (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Halve the horizon for a smoke run.
        #[arg(long)]
        quick: bool,
    },
    /// Re-draw SVG plots from a directory of summary_*.json files.
    Plot {
        summary_dir: PathBuf,
        /// Write plots somewhere other than the summary directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Timing-only pass: mean per-round selection/training time per agent.
    Bench {
        config: PathBuf,
        /// Override the config's seed list (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Where to write bench.json (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Halve the horizon for a smoke run.
        #[arg(long)]
        quick: bool,
    },
}

type CliError = Box<dyn std::error::Error>;

fn load_config(
    path: &PathBuf,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    quick: bool,
) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    apply_overrides(&mut cfg, seeds.as_deref(), out.as_deref(), quick);
    Ok(cfg)
}

fn print_summary_table(summaries: &[RunSummary]) {
    println!(
        "{:<18} {:>6} {:>12} {:>12} {:>10} {:>12} {:>12}  status",
        "agent", "seed", "cum_regret", "calibration", "sharpness", "select_ms", "train_ms"
    );
    for s in summaries {
        if s.is_ok() {
            println!(
                "{:<18} {:>6} {:>12.3} {:>12.4} {:>10.4} {:>12.4} {:>12.4}  ok",
                s.agent,
                s.seed,
                s.final_cum_regret,
                s.calibration_error,
                s.sharpness,
                s.mean_select_ms,
                s.mean_train_ms
            );
        } else {
            println!("{:<18} {:>6} {:>12} {:>12} {:>10} {:>12} {:>12}  {}",
                s.agent, s.seed, "-", "-", "-", "-", "-", s.status);
        }
    }
}

fn cmd_run(cfg: ExperimentConfig) -> Result<(), CliError> {
    let summaries = run_experiment(&cfg)?;
    print_summary_table(&summaries);
    match emit_plots(&summaries, &cfg.out_dir) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => eprintln!("plots skipped: {e}"),
    }
    println!("outputs in {}", cfg.out_dir.display());
    let failed = summaries.iter().filter(|s| !s.is_ok()).count();
    if failed > 0 {
        return Err(format!("{failed} of {} cells failed", summaries.len()).into());
    }
    Ok(())
}

fn cmd_plot(summary_dir: PathBuf, out: Option<PathBuf>) -> Result<(), CliError> {
    let summaries = read_summaries(&summary_dir)?;
    let out = out.unwrap_or_else(|| summary_dir.clone());
    let paths = emit_plots(&summaries, &out)?;
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_bench(cfg: ExperimentConfig) -> Result<(), CliError> {
    let rows = bench_experiment(&cfg)?;
    println!(
        "{:<18} {:>16} {:>16} {:>8} {:>6}",
        "agent", "select_us/round", "train_us/round", "rounds", "seeds"
    );
    for r in &rows {
        println!(
            "{:<18} {:>16.2} {:>16.2} {:>8} {:>6}",
            r.agent, r.mean_select_us, r.mean_train_us, r.rounds, r.seeds
        );
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("bench.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&rows).map_err(|e| e.to_string())?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, seeds, out, quick } => {
            load_config(&config, seeds, out, quick).and_then(cmd_run)
        }
        Cmd::Plot { summary_dir, out } => cmd_plot(summary_dir, out),
        Cmd::Bench { config, seeds, out, quick } => {
            load_config(&config, seeds, out, quick).and_then(cmd_bench)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
