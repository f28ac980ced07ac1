use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxbid::estimators::{QuantileConfig, QuantileLevel};
use ctxbid::harness::{self, ExperimentConfig, HarnessError, PAPER_NOISES};
use ctxbid::policy::Mode;

#[derive(Parser)]
#[command(name = "ctxbid", version, about = "Budget-paced bidding in contextual first-price auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per mode (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated modes: contextual, context_blind.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Maximum number of episodes run in parallel.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trajectories, summary and plot.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run the experiment at several horizons and tabulate regret.
    Sweep {
        config: PathBuf,
        /// Comma-separated horizons, ascending.
        #[arg(long = "T", value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Estimate the competitor slope from a samples CSV.
    Estimate {
        csv: PathBuf,
        /// Quantile level, or `auto`.
        #[arg(long, default_value = "auto")]
        p: String,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Also write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Contextual vs context-blind under each of the paper's noise laws.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
}

fn load(path: &Path, flags: &RunFlags) -> Result<ExperimentConfig, HarnessError> {
    let mut config = harness::parse_config(path)?;
    if let Some(s) = flags.seed {
        config.seed = s;
    }
    if let Some(r) = flags.reps {
        config.reps = r;
    }
    if let Some(o) = &flags.out {
        config.out = o.clone();
    }
    if !flags.mode.is_empty() {
        config.modes = flags.mode.clone();
    }
    config.validate()?;
    Ok(config)
}

fn check(failures: usize) -> Result<(), HarnessError> {
    if failures > 0 {
        return Err(HarnessError::Invariant(format!("{failures} episode(s) aborted; see diagnostics.json")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { config, flags } => {
            let config = load(&config, &flags)?;
            let art = harness::run_experiment(&config, flags.jobs)?;
            for (mode, s) in &art.summary.per_mode {
                println!(
                    "{mode:>13}: final avg reward {:.5} (sd {:.5}), regret {:.2} (sd {:.2}), T - tau {:.1}",
                    s.final_avg_reward_mean, s.final_avg_reward_std, s.regret_mean, s.regret_std, s.t_minus_tau_mean
                );
            }
            let b = &art.summary.benchmark;
            println!("    benchmark: {:.3} (lambda* {:.4}, mc se {:.3})", b.benchmark_reward, b.lambda_star, b.mc_stderr);
            println!("wrote {}", art.summary_path.display());
            check(art.failures.len())
        }
        Command::Sweep { config, horizons, flags } => {
            let config = load(&config, &flags)?;
            let (rows, runs) = harness::sweep_t(&config, &horizons, flags.jobs)?;
            println!("{:>7} {:>13} {:>10} {:>9} {:>12} {:>7}", "T", "mode", "regret", "sd", "reg/sqrtTlnT", "ratio");
            for r in &rows {
                let ratio = r.ratio_to_previous.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:>7} {:>13} {:>10.3} {:>9.3} {:>12.5} {:>7}",
                    r.horizon,
                    r.mode.name(),
                    r.regret_mean,
                    r.regret_std,
                    r.regret_normalized,
                    ratio
                );
            }
            check(runs.iter().map(|a| a.failures.len()).sum())
        }
        Command::Estimate { csv, p, lo, hi, step, json } => {
            let mut q = QuantileConfig::default();
            q.level = if p.eq_ignore_ascii_case("auto") {
                QuantileLevel::Auto
            } else {
                QuantileLevel::Fixed(p.parse().map_err(|_| HarnessError::Validation(format!("bad quantile level `{p}`")))?)
            };
            q.candidate_lo = lo.unwrap_or(q.candidate_lo);
            q.candidate_hi = hi.unwrap_or(q.candidate_hi);
            q.grid_step = step.or(q.grid_step);
            q.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
            let report = harness::estimate_cmd(&csv, &q)?;
            let text = serde_json::to_string_pretty(&report).expect("serializable");
            println!("{text}");
            if let Some(path) = json {
                std::fs::write(&path, text + "\n").map_err(|e| HarnessError::Io { path, source: e })?;
            }
            Ok(())
        }
        Command::Compare { config, flags } => {
            let config = load(&config, &flags)?;
            let (rows, runs) = harness::compare(&config, &PAPER_NOISES, flags.jobs)?;
            for r in &rows {
                println!(
                    "{:<22} contextual {:.5} ± {:.5} | blind {:.5} ± {:.5} | gap {:+.5} (se {:.5}) {}",
                    r.noise.to_string(),
                    r.contextual_mean,
                    r.contextual_std,
                    r.blind_mean,
                    r.blind_std,
                    r.gap,
                    r.pooled_se,
                    if r.ordering_holds { "ok" } else { "NOT ORDERED" }
                );
            }
            check(runs.iter().map(|a| a.failures.len()).sum())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
