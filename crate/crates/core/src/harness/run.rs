use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::output::{
    downsample, read_trajectory_csv, render_svg, trajectory_file_name, write_trajectory_csv, TrajectoryRecord,
};
use super::{HarnessError, Result};
use crate::oracle::{benchmark_reward, solve_dual};
use crate::policy::{run_episode, Diagnostics, EpisodeConfig, Mode};
use crate::sim::{derive_seed, NoiseModel};

/// Noise variants of the paper's Figure-1 experiment.
pub const PAPER_NOISES: [NoiseModel; 3] = [
    NoiseModel::Normal { mean: 0.0, stddev: 0.1 },
    NoiseModel::LogNormal { log_mean: -0.4, log_stddev: 0.1 },
    NoiseModel::Uniform { lo: -0.1, hi: 0.1 },
];

const SUMMARY_FILE: &str = "summary.json";
const DIAGNOSTICS_FILE: &str = "diagnostics.json";
const PLOT_FILE: &str = "avg_reward.svg";

fn mode_index(mode: Mode) -> u64 {
    match mode {
        Mode::Contextual => 0,
        Mode::ContextBlind => 1,
    }
}

/// Seed of repetition `rep` in `mode`; independent of the rep count and of
/// which other modes run.
pub fn mode_seed(master: u64, rep: usize, mode: Mode) -> u64 {
    derive_seed(master, &[rep as u64, mode_index(mode)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub lambda_star: f64,
    pub benchmark_reward: f64,
    pub mc_stderr: f64,
    pub expected_spend: f64,
    pub unconstrained_cost_per_round: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub reps: usize,
    pub mean_avg_reward_curve: Vec<(usize, f64)>,
    pub final_avg_reward_mean: f64,
    pub final_avg_reward_std: f64,
    pub regret_mean: f64,
    pub regret_std: f64,
    #[serde(rename = "T_minus_tau_mean")]
    pub t_minus_tau_mean: f64,
    #[serde(rename = "T_minus_tau_max")]
    pub t_minus_tau_max: usize,
    pub max_total_payment: f64,
    /// Rounds whose multiplier left `[0, v_bar / rho - 1]`.
    pub dual_cap_violations: usize,
    /// Mean over reps of `max_j |alpha_hat_j - alpha_j|`, on the curve's rounds.
    pub alpha_error_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_echo: serde_json::Value,
    pub per_mode: BTreeMap<String, ModeSummary>,
    pub benchmark: BenchmarkSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeFailure {
    pub mode: Mode,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub mode: Mode,
    pub rep: usize,
    pub total_payment: f64,
    pub tau: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub trajectory_files: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub plot_path: PathBuf,
    pub summary: Summary,
    pub episodes: Vec<EpisodeStats>,
    pub failures: Vec<EpisodeFailure>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn tau_of(rows: &[TrajectoryRecord]) -> usize {
    rows.iter().rposition(|r| r.bid.is_some()).map_or(0, |i| rows[i].t)
}

fn summarize_mode(config: &ExperimentConfig, benchmark: &BenchmarkSummary, reps: &[Vec<TrajectoryRecord>]) -> ModeSummary {
    let horizon = config.horizon;
    let lambda_max = config.market.v_bar / config.rho - 1.0;
    let n = reps.len() as f64;
    let mut curve_sum = vec![0.0; horizon];
    let mut alpha_err_sum = vec![0.0; horizon];
    let mut finals = Vec::new();
    let mut regrets = Vec::new();
    let mut gaps = Vec::new();
    let mut max_payment = 0.0f64;
    let mut cap_violations = 0;
    for rows in reps {
        let mut acc = 0.0;
        for (i, r) in rows.iter().enumerate() {
            acc += r.reward;
            curve_sum[i] += acc / (i + 1) as f64;
            let err = r.alpha_hat.iter().zip(&config.market.alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            alpha_err_sum[i] += err;
            if !(r.lambda >= 0.0 && r.lambda <= lambda_max) {
                cap_violations += 1;
            }
        }
        let total: f64 = rows.iter().map(|r| r.reward).sum();
        finals.push(total / horizon as f64);
        regrets.push(benchmark.benchmark_reward - total);
        gaps.push(horizon - tau_of(rows));
        max_payment = max_payment.max(rows.iter().map(|r| r.payment).sum());
    }
    let curve: Vec<f64> = curve_sum.iter().map(|s| s / n).collect();
    let alpha_err: Vec<f64> = alpha_err_sum.iter().map(|s| s / n).collect();
    let (final_mean, final_std) = mean_std(&finals);
    let (regret_mean, regret_std) = mean_std(&regrets);
    let gap_f: Vec<f64> = gaps.iter().map(|&g| g as f64).collect();
    ModeSummary {
        reps: reps.len(),
        mean_avg_reward_curve: downsample(&curve),
        final_avg_reward_mean: final_mean,
        final_avg_reward_std: final_std,
        regret_mean,
        regret_std,
        t_minus_tau_mean: mean_std(&gap_f).0,
        t_minus_tau_max: gaps.iter().copied().max().unwrap_or(0),
        max_total_payment: max_payment,
        dual_cap_violations: cap_violations,
        alpha_error_trace: downsample(&alpha_err),
    }
}

/// Summary statistics as a pure function of the persisted rows.
pub fn summarize(
    config: &ExperimentConfig,
    benchmark: &BenchmarkSummary,
    per_mode: &BTreeMap<Mode, Vec<Vec<TrajectoryRecord>>>,
) -> Summary {
    Summary {
        config_echo: serde_json::to_value(config).expect("config serializes"),
        per_mode: per_mode
            .iter()
            .filter(|(_, reps)| !reps.is_empty())
            .map(|(mode, reps)| (mode.name().to_string(), summarize_mode(config, benchmark, reps)))
            .collect(),
        benchmark: benchmark.clone(),
    }
}

fn compute_benchmark(config: &ExperimentConfig) -> BenchmarkSummary {
    let dual = solve_dual(
        &config.market,
        config.rho,
        config.oracle.tolerance,
        config.oracle.dual_mc_n,
        derive_seed(config.seed, &[u64::MAX, 0]),
    );
    let bench = benchmark_reward(&config.market, &dual, config.horizon, config.oracle.mc_n, derive_seed(config.seed, &[u64::MAX, 1]));
    if bench.spend > config.budget + 3.0 * bench.spend_stderr {
        log::warn!("benchmark spends {:.3} against a budget of {:.3}", bench.spend, config.budget);
    }
    BenchmarkSummary {
        lambda_star: dual.lambda_star,
        benchmark_reward: bench.reward,
        mc_stderr: bench.reward_stderr,
        expected_spend: bench.spend,
        unconstrained_cost_per_round: dual.unconstrained_cost,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn plot_title(config: &ExperimentConfig) -> String {
    match &config.label {
        Some(l) => l.clone(),
        None => format!("{}, T = {}, B = {}", config.market.noise, config.horizon, config.budget),
    }
}

fn write_plot(path: &Path, config: &ExperimentConfig, summary: &Summary) -> Result<()> {
    let series: Vec<(String, Vec<(usize, f64)>)> =
        summary.per_mode.iter().map(|(name, m)| (name.clone(), m.mean_avg_reward_curve.clone())).collect();
    std::fs::write(path, render_svg(&plot_title(config), &series)).map_err(|e| HarnessError::io(path, e))
}

enum EpisodeResult {
    Done { rows: Vec<TrajectoryRecord>, stats: EpisodeStats, path: PathBuf },
    Failed(EpisodeFailure),
}

fn run_one(config: &ExperimentConfig, mode: Mode, rep: usize, out: &Path) -> Result<EpisodeResult> {
    let episode = EpisodeConfig { horizon: config.horizon, budget: config.budget, policy: config.policy.clone() };
    let fail = |error: String| Ok(EpisodeResult::Failed(EpisodeFailure { mode, rep, error }));
    let trajectory = match run_episode(&config.market, &episode, mode_seed(config.seed, rep, mode), mode) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    let rows = TrajectoryRecord::from_trajectory(rep, &trajectory);
    let path = out.join(trajectory_file_name(mode, rep));
    write_trajectory_csv(&path, &rows)?;
    let d = &trajectory.diagnostics;
    let total_payment = trajectory.total_payment();
    let mut broken = Vec::new();
    if total_payment > config.budget {
        broken.push(format!("payments {total_payment} exceed budget {}", config.budget));
    }
    if d.dual_cap_violations > 0 {
        broken.push(format!("{} dual-cap violations", d.dual_cap_violations));
    }
    if d.nesting_violations > 0 || d.empty_set_violations > 0 {
        broken.push("active-set nesting violated".to_string());
    }
    if tau_of(&rows) != trajectory.tau {
        broken.push(format!("stopping time {} disagrees with the log", trajectory.tau));
    }
    if !broken.is_empty() {
        return fail(broken.join("; "));
    }
    let stats = EpisodeStats { mode, rep, total_payment, tau: trajectory.tau, diagnostics: trajectory.diagnostics };
    Ok(EpisodeResult::Done { rows, stats, path })
}

/// Runs `reps x modes` episodes, at most `jobs` at a time, and persists
/// trajectories, the summary, diagnostics and the plot under `config.out`.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<RunArtifacts> {
    config.validate()?;
    let out = config.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let assumptions = config.market.warn_on_assumptions();
    log::debug!("assumptions: {assumptions:?}");
    let benchmark = compute_benchmark(config);

    let tasks: Vec<(Mode, usize)> =
        config.modes.iter().flat_map(|&m| (0..config.reps).map(move |r| (m, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Validation(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<EpisodeResult>> =
        pool.install(|| tasks.par_iter().map(|&(mode, rep)| run_one(config, mode, rep, &out)).collect());

    let mut per_mode: BTreeMap<Mode, Vec<Vec<TrajectoryRecord>>> = BTreeMap::new();
    let mut files = Vec::new();
    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result? {
            EpisodeResult::Done { rows, stats, path } => {
                per_mode.entry(stats.mode).or_default().push(rows);
                files.push(path);
                episodes.push(stats);
            }
            EpisodeResult::Failed(f) => {
                log::error!("{} rep {}: {}", f.mode.name(), f.rep, f.error);
                failures.push(f);
            }
        }
    }
    let summary = summarize(config, &benchmark, &per_mode);
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    write_json(&out.join(DIAGNOSTICS_FILE), &serde_json::json!({ "episodes": episodes, "failures": failures }))?;
    let plot_path = out.join(PLOT_FILE);
    write_plot(&plot_path, config, &summary)?;
    Ok(RunArtifacts { out_dir: out, trajectory_files: files, summary_path, plot_path, summary, episodes, failures })
}

/// Rebuilds the summary of a finished run from its trajectory files, the
/// echoed configuration and the recorded benchmark.
pub fn recompute_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let bad = |e: serde_json::Error| HarnessError::Data { path: path.clone(), row: e.line(), message: e.to_string() };
    let stored: Summary = serde_json::from_str(&text).map_err(bad)?;
    let config: ExperimentConfig = serde_json::from_value(stored.config_echo.clone()).map_err(bad)?;
    let mut per_mode: BTreeMap<Mode, Vec<Vec<TrajectoryRecord>>> = BTreeMap::new();
    for &mode in &config.modes {
        for rep in 0..config.reps {
            let file = dir.join(trajectory_file_name(mode, rep));
            if file.exists() {
                per_mode.entry(mode).or_default().push(read_trajectory_csv(&file)?);
            }
        }
    }
    Ok(summarize(&config, &stored.benchmark, &per_mode))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub mode: Mode,
    pub reps: usize,
    pub benchmark_reward: f64,
    pub benchmark_stderr: f64,
    pub regret_mean: f64,
    pub regret_std: f64,
    /// `regret_mean / (sqrt(T) ln T)`
    pub regret_normalized: f64,
    /// `regret_mean(T) / regret_mean(previous T)`
    pub ratio_to_previous: Option<f64>,
    /// Largest `(T - tau) / sqrt(T ln T)` over reps.
    pub stopping_gap_normalized: f64,
    /// Mean regret is below `-3` benchmark standard errors.
    pub below_benchmark: bool,
}

pub fn sweep_t(config: &ExperimentConfig, horizons: &[usize], jobs: Option<usize>) -> Result<(Vec<ScalingRow>, Vec<RunArtifacts>)> {
    if horizons.len() < 2 {
        return Err(HarnessError::Validation("a sweep needs at least two horizons".into()));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Validation("sweep horizons must be strictly ascending".into()));
    }
    let base = config.out.clone();
    let mut rows: Vec<ScalingRow> = Vec::new();
    let mut runs = Vec::new();
    for &t in horizons {
        let mut c = config.with_horizon(t);
        c.out = base.join(format!("T{t}"));
        let art = run_experiment(&c, jobs)?;
        let tf = t as f64;
        for (name, m) in &art.summary.per_mode {
            let mode: Mode = name.parse().expect("mode names round-trip");
            let previous = rows.iter().rev().find(|r| r.mode == mode).map(|r| r.regret_mean);
            let b = &art.summary.benchmark;
            rows.push(ScalingRow {
                horizon: t,
                mode,
                reps: m.reps,
                benchmark_reward: b.benchmark_reward,
                benchmark_stderr: b.mc_stderr,
                regret_mean: m.regret_mean,
                regret_std: m.regret_std,
                regret_normalized: m.regret_mean / (tf.sqrt() * tf.ln()),
                ratio_to_previous: previous.map(|p| m.regret_mean / p),
                stopping_gap_normalized: m.t_minus_tau_max as f64 / (tf * tf.ln()).sqrt(),
                below_benchmark: m.regret_mean < -3.0 * b.mc_stderr,
            });
        }
        runs.push(art);
    }
    std::fs::create_dir_all(&base).map_err(|e| HarnessError::io(&base, e))?;
    let path = base.join("sweep.csv");
    let io = |e: csv::Error| HarnessError::io(&path, e.into());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path).map_err(io)?;
    w.write_record([
        "T",
        "mode",
        "reps",
        "benchmark_reward",
        "benchmark_stderr",
        "regret_mean",
        "regret_std",
        "regret_normalized",
        "ratio_to_previous",
        "stopping_gap_normalized",
        "below_benchmark",
    ])
    .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.horizon.to_string(),
            r.mode.name().to_string(),
            r.reps.to_string(),
            r.benchmark_reward.to_string(),
            r.benchmark_stderr.to_string(),
            r.regret_mean.to_string(),
            r.regret_std.to_string(),
            r.regret_normalized.to_string(),
            r.ratio_to_previous.map(|x| x.to_string()).unwrap_or_default(),
            r.stopping_gap_normalized.to_string(),
            (r.below_benchmark as u8).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok((rows, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub noise: NoiseModel,
    pub reps: usize,
    pub contextual_mean: f64,
    pub contextual_std: f64,
    pub blind_mean: f64,
    pub blind_std: f64,
    pub gap: f64,
    /// `sqrt(s_c^2 / n_c + s_b^2 / n_b)`
    pub pooled_se: f64,
    /// Contextual mean is strictly higher and the gap exceeds `pooled_se`.
    pub ordering_holds: bool,
}

fn noise_slug(noise: &NoiseModel) -> &'static str {
    match noise {
        NoiseModel::Normal { .. } => "normal",
        NoiseModel::LogNormal { .. } => "lognormal",
        NoiseModel::Uniform { .. } => "uniform",
    }
}

/// Runs both modes under each noise law and tabulates final average rewards.
pub fn compare(config: &ExperimentConfig, noises: &[NoiseModel], jobs: Option<usize>) -> Result<(Vec<CompareRow>, Vec<RunArtifacts>)> {
    let base = config.out.clone();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (i, noise) in noises.iter().enumerate() {
        let mut c = config.clone();
        c.market.noise = noise.clone();
        c.modes = vec![Mode::Contextual, Mode::ContextBlind];
        c.out = base.join(format!("{}_{}", i, noise_slug(noise)));
        c.label = Some(format!("{noise}, T = {}, B = {}", c.horizon, c.budget));
        let art = run_experiment(&c, jobs)?;
        let get = |m: Mode| art.summary.per_mode.get(m.name());
        let row = match (get(Mode::Contextual), get(Mode::ContextBlind)) {
            (Some(a), Some(b)) => {
                let gap = a.final_avg_reward_mean - b.final_avg_reward_mean;
                let pooled_se = (a.final_avg_reward_std.powi(2) / a.reps as f64
                    + b.final_avg_reward_std.powi(2) / b.reps as f64)
                    .sqrt();
                CompareRow {
                    noise: noise.clone(),
                    reps: a.reps.min(b.reps),
                    contextual_mean: a.final_avg_reward_mean,
                    contextual_std: a.final_avg_reward_std,
                    blind_mean: b.final_avg_reward_mean,
                    blind_std: b.final_avg_reward_std,
                    gap,
                    pooled_se,
                    ordering_holds: gap > 0.0 && gap > pooled_se,
                }
            }
            _ => return Err(HarnessError::Invariant(format!("{noise}: every repetition of a mode failed"))),
        };
        rows.push(row);
        runs.push(art);
    }
    std::fs::create_dir_all(&base).map_err(|e| HarnessError::io(&base, e))?;
    write_json(&base.join("compare.json"), &rows)?;
    Ok((rows, runs))
}
