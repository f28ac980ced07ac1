//! Benchmarks with full knowledge of the market: per-impression optimal
//! bids, the Lagrangian dual bound, the stationary benchmark policy and
//! regret against it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::Trajectory;
use crate::sim::{MarketModel, NoiseModel};

/// Bid resolution of the inner maximization, as a fraction of `v_bar`.
pub const BID_RESOLUTION: f64 = 1e-4;
const COARSE_CELLS: usize = 100;

fn lagrangian(v: f64, lambda: f64, b: f64, loc: f64, noise: &NoiseModel) -> f64 {
    (v - (1.0 + lambda) * b) * noise.cdf(b - loc)
}

/// Maximizer of `(v - (1 + lambda) b) G(b - loc)` over the bid grid
/// `{j * v_bar * 1e-4}`, ties to the smallest bid.
///
/// Bids above `v / (1 + lambda)` have a nonpositive objective and are never
/// needed. The search scans about a hundred coarse cells of that range and
/// then every grid bid in the two cells around the coarse winner, which is
/// exact for quasi-concave objectives (log-concave `G`, uniform `G`).
pub fn optimal_bid_at(v: f64, loc: f64, lambda: f64, noise: &NoiseModel, v_bar: f64) -> (f64, f64) {
    let step = v_bar * BID_RESOLUTION;
    let top = (1.0 / BID_RESOLUTION).round() as usize;
    let reach = (v.max(0.0) / (1.0 + lambda)).min(v_bar);
    let j_hi = ((reach / step).floor() as usize).min(top);
    let eval = |j: usize| lagrangian(v, lambda, j as f64 * step, loc, noise);
    let stride = (j_hi / COARSE_CELLS).max(1);
    let mut best = (0usize, eval(0));
    let mut j = stride;
    while j <= j_hi {
        let f = eval(j);
        if f > best.1 {
            best = (j, f);
        }
        j += stride;
    }
    if !j_hi.is_multiple_of(stride) {
        let f = eval(j_hi);
        if f > best.1 {
            best = (j_hi, f);
        }
    }
    let lo = best.0.saturating_sub(stride);
    let hi = (best.0 + stride).min(j_hi);
    let mut fine = (lo, eval(lo));
    for j in lo + 1..=hi {
        let f = eval(j);
        if f > fine.1 {
            fine = (j, f);
        }
    }
    if best.1 > fine.1 {
        fine = best;
    }
    (fine.0 as f64 * step, fine.1)
}

/// Optimal bid for value `v` at context `x` under multiplier `lambda`.
pub fn optimal_bid(v: f64, x: &[f64], lambda: f64, market: &MarketModel) -> (f64, f64) {
    optimal_bid_at(v, market.location(x), lambda, &market.noise, market.v_bar)
}

/// One Monte-Carlo impression: the value and the competitor location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpressionSample {
    pub v: f64,
    pub loc: f64,
}

pub fn draw_impressions<R: Rng + ?Sized>(market: &MarketModel, n: usize, rng: &mut R) -> Vec<ImpressionSample> {
    (0..n)
        .map(|_| {
            let x = market.sample_context(rng);
            ImpressionSample { v: market.value(&x), loc: market.location(&x) }
        })
        .collect()
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0) / n).sqrt())
}

fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 64 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Monte-Carlo value of the dual function at `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Per-round dual function `E[max_b (v - (1+lambda) b) G(b - <alpha, x>)] + lambda rho`
/// over a fixed sample.
pub fn dual_value_on(samples: &[ImpressionSample], lambda: f64, rho: f64, market: &MarketModel) -> DualEstimate {
    let inner: Vec<f64> = samples
        .iter()
        .map(|s| optimal_bid_at(s.v, s.loc, lambda, &market.noise, market.v_bar).1)
        .collect();
    let (mean, stderr) = mean_and_stderr(&inner);
    DualEstimate { value: mean + lambda * rho, stderr }
}

pub fn dual_value<R: Rng + ?Sized>(lambda: f64, market: &MarketModel, rho: f64, mc_n: usize, rng: &mut R) -> DualEstimate {
    let samples = draw_impressions(market, mc_n.max(1), rng);
    dual_value_on(&samples, lambda, rho, market)
}

/// Expected per-round reward and spend of the stationary policy
/// `b*(v, x; lambda)` over a fixed sample, with standard errors.
pub fn stationary_performance(samples: &[ImpressionSample], lambda: f64, market: &MarketModel) -> ((f64, f64), (f64, f64)) {
    let (rewards, costs): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .map(|s| {
            let (b, _) = optimal_bid_at(s.v, s.loc, lambda, &market.noise, market.v_bar);
            let g = market.noise.cdf(b - s.loc);
            ((s.v - b) * g, b * g)
        })
        .unzip();
    (mean_and_stderr(&rewards), mean_and_stderr(&costs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_star: f64,
    /// Per-round dual value at `lambda_star`; multiply by `T` for the bound.
    pub dual_value: f64,
    pub mc_samples: usize,
    pub mc_stderr: f64,
    /// Expected per-round spend of the unconstrained (`lambda = 0`) policy.
    pub unconstrained_cost: f64,
}

/// Minimizes the dual over `[0, v_bar / rho - 1]` by golden-section search
/// on common random numbers. Returns `lambda* = 0` when the unconstrained
/// policy already spends at most `rho` per round.
pub fn solve_dual(market: &MarketModel, rho: f64, tolerance: f64, mc_n: usize, seed: u64) -> DualSolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = draw_impressions(market, mc_n.max(1), &mut rng);
    let (_, (cost0, _)) = stationary_performance(&samples, 0.0, market);
    let finish = |lambda: f64| {
        let d = dual_value_on(&samples, lambda, rho, market);
        DualSolution { lambda_star: lambda, dual_value: d.value, mc_samples: samples.len(), mc_stderr: d.stderr, unconstrained_cost: cost0 }
    };
    if cost0 <= rho {
        return finish(0.0);
    }
    let f = |l: f64| dual_value_on(&samples, l, rho, market).value;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, market.v_bar / rho - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tolerance {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    finish(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub lambda_star: f64,
    /// `T` times the expected per-round reward of the stationary policy.
    pub reward: f64,
    pub reward_stderr: f64,
    /// `T` times its expected per-round spend.
    pub spend: f64,
    pub spend_stderr: f64,
}

pub fn benchmark_reward(market: &MarketModel, dual: &DualSolution, horizon: usize, mc_n: usize, seed: u64) -> Benchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = draw_impressions(market, mc_n.max(1), &mut rng);
    let ((r, rs), (c, cs)) = stationary_performance(&samples, dual.lambda_star, market);
    let t = horizon as f64;
    Benchmark { lambda_star: dual.lambda_star, reward: t * r, reward_stderr: t * rs, spend: t * c, spend_stderr: t * cs }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub benchmark_reward: f64,
    pub realized_reward: f64,
    pub regret: f64,
    pub regret_per_sqrt_t: f64,
}

pub fn regret(trajectory: &Trajectory, benchmark_reward: f64) -> RegretReport {
    let realized = trajectory.total_reward();
    let regret = benchmark_reward - realized;
    RegretReport {
        benchmark_reward,
        realized_reward: realized,
        regret,
        regret_per_sqrt_t: regret / (trajectory.horizon as f64).sqrt(),
    }
}
