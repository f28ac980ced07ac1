//! Learning from censored auction logs: the least-squares warm start, the
//! quantile-invariance slope estimator and the win-rate based reward and
//! cost estimators the policy plans with.
//!
//! The slope estimator splits samples at the context median and searches a
//! grid of candidate slopes for the one whose residual `p`-quantiles agree
//! across both halves. Censored samples (won rounds) enter only as `-inf`
//! residuals, so their hidden payload can never influence the estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("design is degenerate: contexts have zero variance")]
    DegenerateDesign,
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("median split is degenerate: all contexts equal")]
    DegenerateSplit,
    #[error("sample quantile falls on a censored observation")]
    AllCensored,
    #[error("censoring too heavy: {fraction:.3} of a group is censored")]
    CensoringTooHeavy { fraction: f64 },
    #[error("no history round supports bid {bid}")]
    NoSupport { bid: f64 },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("coordinate {coord}: {source}")]
    Coordinate {
        coord: usize,
        #[source]
        source: Box<EstimatorError>,
    },
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// One logged auction as seen by the bidder. `d_obs` is present exactly when
/// the round was lost.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredSample {
    pub x: Vec<f64>,
    pub d_obs: Option<f64>,
    pub own_bid: f64,
}

impl CensoredSample {
    pub fn censored(&self) -> bool {
        self.d_obs.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileLevel {
    Fixed(f64),
    /// Pick `p` just above the heavier group's censored fraction.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantileConfig {
    pub level: QuantileLevel,
    pub candidate_lo: f64,
    pub candidate_hi: f64,
    /// `None` selects `min(0.01, 1/sqrt(n))`.
    pub grid_step: Option<f64>,
    pub min_group: usize,
    pub auto_buffer: f64,
    pub auto_floor: f64,
    pub auto_ceiling: f64,
    pub max_censored: f64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig {
            level: QuantileLevel::Auto,
            candidate_lo: -1.0,
            candidate_hi: 2.0,
            grid_step: None,
            min_group: 2,
            auto_buffer: 0.05,
            auto_floor: 0.50,
            auto_ceiling: 0.98,
            max_censored: 0.93,
        }
    }
}

impl QuantileConfig {
    pub fn centered(center: f64, half_width: f64) -> Self {
        QuantileConfig { candidate_lo: center - half_width, candidate_hi: center + half_width, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.candidate_lo < self.candidate_hi) {
            return Err(EstimatorError::InvalidConfig("candidate_lo must be < candidate_hi".into()));
        }
        if let QuantileLevel::Fixed(p) = self.level {
            if !(p > 0.0 && p < 1.0) {
                return Err(EstimatorError::InvalidConfig(format!("quantile level {p} outside (0, 1)")));
            }
        }
        if let Some(step) = self.grid_step {
            if !(step > 0.0) {
                return Err(EstimatorError::InvalidConfig("grid_step must be > 0".into()));
            }
        }
        if self.min_group < 2 {
            return Err(EstimatorError::InvalidConfig("min_group must be >= 2".into()));
        }
        Ok(())
    }

    pub fn step_for(&self, n: usize) -> f64 {
        self.grid_step.unwrap_or_else(|| 0.01f64.min(1.0 / (n.max(1) as f64).sqrt()))
    }

    /// The candidate grid `lo, lo + step, ..., hi`.
    pub fn candidates(&self, n: usize) -> Vec<f64> {
        let step = self.step_for(n);
        let span = self.candidate_hi - self.candidate_lo;
        let count = (span / step + 1e-9).floor() as usize;
        let mut grid: Vec<f64> = (0..=count).map(|k| self.candidate_lo + k as f64 * step).collect();
        if let Some(&last) = grid.last() {
            if self.candidate_hi - last > 1e-9 * step {
                grid.push(self.candidate_hi);
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub value: Vec<f64>,
    pub n_used: usize,
    pub p_used: Vec<f64>,
    pub objective_at_min: Vec<f64>,
}

/// Least-squares slope of `d` on `x` in centered form.
pub fn ols_alpha(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(EstimatorError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let md = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx) * (s.0 - mx)).sum();
    let sxd: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - md)).sum();
    if !(sxx > f64::EPSILON * n * mx.abs().max(1.0)) {
        return Err(EstimatorError::DegenerateDesign);
    }
    Ok(sxd / sxx)
}

/// Index sets of a median split: `lower = {i : x_i <= median}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedianSplit {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

/// Splits at the lower median of `xs`; ties with the median go low.
pub fn split_by_median(xs: &[f64], min_group: usize) -> Result<MedianSplit> {
    let needed = 2 * min_group.max(1);
    if xs.len() < needed {
        return Err(EstimatorError::TooFewSamples { needed, got: xs.len() });
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(EstimatorError::DegenerateSplit);
    }
    let median = sorted[(sorted.len() - 1) / 2];
    let (lower, upper): (Vec<usize>, Vec<usize>) = (0..xs.len()).partition(|&i| xs[i] <= median);
    if upper.is_empty() {
        return Err(EstimatorError::DegenerateSplit);
    }
    if lower.len() < min_group || upper.len() < min_group {
        return Err(EstimatorError::TooFewSamples { needed: min_group, got: lower.len().min(upper.len()) });
    }
    Ok(MedianSplit { lower, upper })
}

/// `d_obs - alpha * x[coord]` for observed samples, `-inf` for censored ones.
pub fn residuals(samples: &[CensoredSample], alpha: f64, coord: usize) -> Vec<f64> {
    samples
        .iter()
        .map(|s| match s.d_obs {
            Some(d) => d - alpha * s.x[coord],
            None => f64::NEG_INFINITY,
        })
        .collect()
}

/// Rank `k` (1-based) of the `p`-quantile `inf{y : F_n(y) >= p}` among `n` values.
fn quantile_rank(n: usize, p: f64) -> usize {
    let mut k = ((p * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / n as f64 >= p {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < p {
        k += 1;
    }
    k
}

/// Empirical `p`-quantile with `-inf` entries counted in the mass.
pub fn sample_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(EstimatorError::TooFewSamples { needed: 1, got: 0 });
    }
    let k = quantile_rank(values.len(), p);
    let mut buf = values.to_vec();
    let (_, q, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    if *q == f64::NEG_INFINITY {
        return Err(EstimatorError::AllCensored);
    }
    Ok(*q)
}

fn censored_fraction(samples: &[CensoredSample], idx: &[usize]) -> f64 {
    idx.iter().filter(|&&i| samples[i].censored()).count() as f64 / idx.len() as f64
}

/// Chooses `p` above the censored mass of both groups.
pub fn choose_quantile_level(samples: &[CensoredSample], split: &MedianSplit, config: &QuantileConfig) -> Result<f64> {
    if split.lower.is_empty() || split.upper.is_empty() {
        return Err(EstimatorError::DegenerateSplit);
    }
    let heavier = censored_fraction(samples, &split.lower).max(censored_fraction(samples, &split.upper));
    if heavier > config.max_censored {
        return Err(EstimatorError::CensoringTooHeavy { fraction: heavier });
    }
    Ok((heavier + config.auto_buffer).clamp(config.auto_floor, config.auto_ceiling))
}

/// `Q(alpha) = |q_1(alpha) - q_2(alpha)|` over the two median groups.
pub fn quantile_objective(
    samples: &[CensoredSample],
    split: &MedianSplit,
    alpha: f64,
    p: f64,
    coord: usize,
) -> Result<f64> {
    let group_quantile = |idx: &[usize]| {
        let r: Vec<f64> = idx
            .iter()
            .map(|&i| match samples[i].d_obs {
                Some(d) => d - alpha * samples[i].x[coord],
                None => f64::NEG_INFINITY,
            })
            .collect();
        sample_quantile(&r, p)
    };
    Ok((group_quantile(&split.lower)? - group_quantile(&split.upper)?).abs())
}

/// Observed part of one group; the quantile of the full group is the
/// `(k - censored)`-th smallest observed residual.
struct Group {
    x: Vec<f64>,
    d: Vec<f64>,
    rank: usize,
}

impl Group {
    fn new(samples: &[CensoredSample], idx: &[usize], coord: usize, p: f64) -> Result<Self> {
        let k = quantile_rank(idx.len(), p);
        let (x, d): (Vec<f64>, Vec<f64>) =
            idx.iter().filter_map(|&i| samples[i].d_obs.map(|d| (samples[i].x[coord], d))).unzip();
        let censored = idx.len() - x.len();
        if k <= censored {
            return Err(EstimatorError::AllCensored);
        }
        Ok(Group { x, d, rank: k - censored })
    }

    fn quantile(&self, alpha: f64, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.extend(self.x.iter().zip(&self.d).map(|(x, d)| d - alpha * x));
        *buf.select_nth_unstable_by(self.rank - 1, f64::total_cmp).1
    }
}

/// Scalar estimator on coordinate `coord`; returns `(alpha_hat, p, Q(alpha_hat))`.
pub fn estimate_coordinate(samples: &[CensoredSample], coord: usize, config: &QuantileConfig) -> Result<(f64, f64, f64)> {
    config.validate()?;
    let xs: Vec<f64> = samples.iter().map(|s| s.x[coord]).collect();
    let split = split_by_median(&xs, config.min_group)?;
    let p = match config.level {
        QuantileLevel::Fixed(p) => p,
        QuantileLevel::Auto => choose_quantile_level(samples, &split, config)?,
    };
    for idx in [&split.lower, &split.upper] {
        let observed = idx.iter().filter(|&&i| !samples[i].censored()).count();
        if observed < config.min_group {
            return Err(EstimatorError::CensoringTooHeavy { fraction: 1.0 - observed as f64 / idx.len() as f64 });
        }
    }
    let g1 = Group::new(samples, &split.lower, coord, p)?;
    let g2 = Group::new(samples, &split.upper, coord, p)?;
    let mut buf = Vec::with_capacity(g1.x.len().max(g2.x.len()));
    let mut best = (f64::NAN, f64::INFINITY);
    for alpha in config.candidates(samples.len()) {
        let q = (g1.quantile(alpha, &mut buf) - g2.quantile(alpha, &mut buf)).abs();
        // strict comparison keeps the smallest alpha on ties
        if q < best.1 {
            best = (alpha, q);
        }
    }
    Ok((best.0, p, best.1))
}

/// Quantile-invariance estimate of a scalar slope.
pub fn estimate_alpha(samples: &[CensoredSample], config: &QuantileConfig) -> Result<AlphaEstimate> {
    let (value, p, q) = estimate_coordinate(samples, 0, config)?;
    Ok(AlphaEstimate { value: vec![value], n_used: samples.len(), p_used: vec![p], objective_at_min: vec![q] })
}

/// Component-wise estimate: coordinate `j` runs the scalar pipeline on
/// `(x_ij, d_obs_i)` with `configs[j]`.
pub fn estimate_alpha_multidim(samples: &[CensoredSample], configs: &[QuantileConfig]) -> Result<AlphaEstimate> {
    let dim = samples.first().map(|s| s.x.len()).unwrap_or(configs.len());
    if configs.len() != dim {
        return Err(EstimatorError::InvalidConfig(format!("{} configs for {dim} coordinates", configs.len())));
    }
    let mut est = AlphaEstimate { value: Vec::new(), n_used: samples.len(), p_used: Vec::new(), objective_at_min: Vec::new() };
    for (coord, config) in configs.iter().enumerate() {
        let (a, p, q) = estimate_coordinate(samples, coord, config)
            .map_err(|e| EstimatorError::Coordinate { coord, source: Box::new(e) })?;
        est.value.push(a);
        est.p_used.push(p);
        est.objective_at_min.push(q);
    }
    Ok(est)
}

/// One round of a bidding phase as logged by the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BidRecord {
    pub x: Vec<f64>,
    pub bid: f64,
    /// Present exactly when the round was lost.
    pub d_obs: Option<f64>,
}

fn shift(alpha_hat: &[f64], xs: &[f64], xt: &[f64]) -> f64 {
    alpha_hat.iter().zip(xs.iter().zip(xt)).map(|(a, (s, t))| a * (s - t)).sum()
}

/// `n^k = #{s : b^k >= b_s}`.
pub fn count_support(history: &[BidRecord], bid: f64) -> usize {
    history.iter().filter(|r| bid >= r.bid).count()
}

/// Context-corrected empirical probability that `bid` beats the competitor
/// at context `x_t`.
///
/// Every past round is moved to `x_t` by subtracting `alpha_hat . (x_s - x_t)`.
/// A round is usable when its shifted own bid is at most `bid`: then a loss
/// reveals the shifted competitor bid, and a win certifies it lies below
/// `bid`. The rate is taken over usable rounds.
pub fn win_rate_estimate(history: &[BidRecord], alpha_hat: &[f64], bid: f64, x_t: &[f64]) -> Result<f64> {
    let mut usable = 0usize;
    let mut wins = 0usize;
    for r in history {
        let s = shift(alpha_hat, &r.x, x_t);
        if bid >= r.bid - s {
            usable += 1;
            match r.d_obs {
                Some(d) if bid < d - s => {}
                _ => wins += 1,
            }
        }
    }
    if usable == 0 {
        return Err(EstimatorError::NoSupport { bid });
    }
    Ok(wins as f64 / usable as f64)
}

/// Estimated expected surplus `(v^m - b^k) * P(win)` at context `x_t`.
pub fn estimate_reward(history: &[BidRecord], alpha_hat: &[f64], value: f64, bid: f64, x_t: &[f64]) -> Result<f64> {
    Ok((value - bid) * win_rate_estimate(history, alpha_hat, bid, x_t)?)
}

/// Estimated expected spend `b^k * P(win)` at context `x_t`.
pub fn estimate_cost(history: &[BidRecord], alpha_hat: &[f64], bid: f64, x_t: &[f64]) -> Result<f64> {
    Ok(bid * win_rate_estimate(history, alpha_hat, bid, x_t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn observed(x: f64, d: f64) -> CensoredSample {
        CensoredSample { x: vec![x], d_obs: Some(d), own_bid: 0.0 }
    }

    #[test]
    fn ols_examples() {
        assert!((ols_alpha(&[(1.0, 0.8), (2.0, 1.6), (3.0, 2.4)]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(ols_alpha(&[(0.0, 0.5), (1.0, 0.5)]).unwrap(), 0.0);
        assert_eq!(ols_alpha(&[(0.3, 0.5), (0.3, 0.9)]), Err(EstimatorError::DegenerateDesign));
        assert!(matches!(ols_alpha(&[(0.3, 0.5)]), Err(EstimatorError::TooFewSamples { .. })));
    }

    #[test]
    fn ols_monte_carlo() {
        let noise = Normal::new(0.0, 0.08).unwrap();
        let hits = (0..100u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s: Vec<(f64, f64)> = (0..1000)
                    .map(|_| {
                        let x: f64 = rng.random();
                        (x, 0.8 * x + noise.sample(&mut rng))
                    })
                    .collect();
                (ols_alpha(&s).unwrap() - 0.8).abs() < 0.02
            })
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn median_split_examples() {
        let s = split_by_median(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(s.lower, vec![0, 1]);
        assert_eq!(s.upper, vec![2, 3]);
        let s = split_by_median(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(s.lower, vec![0, 1]);
        assert_eq!(s.upper, vec![2]);
        assert_eq!(split_by_median(&[0.5; 6], 2), Err(EstimatorError::DegenerateSplit));
        assert!(matches!(split_by_median(&[1.0, 2.0, 3.0], 2), Err(EstimatorError::TooFewSamples { .. })));
    }

    #[test]
    fn residual_examples() {
        let r = residuals(&[observed(1.0, 1.0)], 0.8, 0);
        assert!((r[0] - 0.2).abs() < 1e-12);
        let c = CensoredSample { x: vec![1.0], d_obs: None, own_bid: 0.5 };
        assert_eq!(residuals(&[c], 0.3, 0)[0], f64::NEG_INFINITY);
        let s = vec![observed(0.2, 0.4), observed(0.9, 1.1)];
        assert_eq!(residuals(&s, 0.0, 0), vec![0.4, 1.1]);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(sample_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        assert_eq!(sample_quantile(&[f64::NEG_INFINITY, 1.0, 2.0, 3.0], 0.75).unwrap(), 2.0);
        assert_eq!(sample_quantile(&[f64::NEG_INFINITY, f64::NEG_INFINITY, 1.0], 0.5), Err(EstimatorError::AllCensored));
        assert_eq!(sample_quantile(&[5.0], 0.99).unwrap(), 5.0);
    }

    #[test]
    fn quantile_level_examples() {
        let mk = |n: usize, censored: usize, offset: f64| -> Vec<CensoredSample> {
            (0..n)
                .map(|i| CensoredSample {
                    x: vec![offset + i as f64],
                    d_obs: if i < censored { None } else { Some(1.0) },
                    own_bid: 0.0,
                })
                .collect()
        };
        let cfg = QuantileConfig::default();
        let check = |a: usize, b: usize| {
            let mut s = mk(100, a, 0.0);
            s.extend(mk(100, b, 1000.0));
            let split = MedianSplit { lower: (0..100).collect(), upper: (100..200).collect() };
            choose_quantile_level(&s, &split, &cfg)
        };
        assert_eq!(check(30, 40).unwrap(), 0.5);
        assert!((check(70, 80).unwrap() - 0.85).abs() < 1e-12);
        assert!(matches!(check(95, 10), Err(EstimatorError::CensoringTooHeavy { .. })));
    }

    #[test]
    fn objective_examples() {
        // noiseless, uncensored: Q vanishes at the true slope
        let s: Vec<CensoredSample> = (0..20).map(|i| observed(i as f64 / 19.0, 0.8 * i as f64 / 19.0 + 0.1)).collect();
        let xs: Vec<f64> = s.iter().map(|c| c.x[0]).collect();
        let split = split_by_median(&xs, 2).unwrap();
        assert!(quantile_objective(&s, &split, 0.8, 0.5, 0).unwrap() < 1e-12);

        let s: Vec<CensoredSample> =
            (0..10).map(|i| if i < 5 { observed(0.0, 0.0) } else { observed(1.0, 0.8) }).collect();
        let split = split_by_median(&s.iter().map(|c| c.x[0]).collect::<Vec<_>>(), 2).unwrap();
        assert!((quantile_objective(&s, &split, 0.5, 0.5, 0).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn objective_concentrates_at_truth() {
        let noise = Normal::new(0.0, 0.08).unwrap();
        let hits = (0..40u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let s: Vec<CensoredSample> = (0..5000)
                    .map(|_| {
                        let x: f64 = rng.random();
                        observed(x, 0.8 * x + noise.sample(&mut rng))
                    })
                    .collect();
                let split = split_by_median(&s.iter().map(|c| c.x[0]).collect::<Vec<_>>(), 2).unwrap();
                quantile_objective(&s, &split, 0.8, 0.9, 0).unwrap() < 0.02
            })
            .count();
        assert!(hits >= 38, "{hits}/40");
    }

    #[test]
    fn noiseless_estimate_hits_grid() {
        let s: Vec<CensoredSample> = (0..400).map(|i| {
            let x = (i as f64 + 0.5) / 400.0;
            observed(x, 0.8 * x)
        }).collect();
        let cfg = QuantileConfig { grid_step: Some(0.001), ..QuantileConfig::centered(0.5, 1.0) };
        let est = estimate_alpha(&s, &cfg).unwrap();
        assert!((est.value[0] - 0.8).abs() <= 0.001 + 1e-12, "{:?}", est);
    }

    #[test]
    fn candidate_grid_includes_endpoints() {
        let cfg = QuantileConfig { grid_step: Some(0.3), ..QuantileConfig::centered(0.0, 0.5) };
        let g = cfg.candidates(10);
        assert_eq!(g.first().copied(), Some(-0.5));
        assert_eq!(g.last().copied(), Some(0.5));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn estimator_errors_surface() {
        let s: Vec<CensoredSample> = (0..50)
            .map(|i| CensoredSample { x: vec![i as f64 / 50.0], d_obs: None, own_bid: 0.5 })
            .collect();
        assert!(matches!(estimate_alpha(&s, &QuantileConfig::default()), Err(EstimatorError::CensoringTooHeavy { .. })));
        let flat: Vec<CensoredSample> = (0..50).map(|_| observed(0.3, 0.5)).collect();
        assert_eq!(estimate_alpha(&flat, &QuantileConfig::default()), Err(EstimatorError::DegenerateSplit));
    }

    fn lost(x: f64, bid: f64, d: f64) -> BidRecord {
        BidRecord { x: vec![x], bid, d_obs: Some(d) }
    }

    #[test]
    fn reward_and_cost_examples() {
        let h = vec![lost(0.4, 0.0, 0.3)];
        assert!((estimate_reward(&h, &[0.8], 0.9, 0.5, &[0.4]).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(estimate_reward(&h, &[0.8], 0.9, 0.2, &[0.4]).unwrap(), 0.0);
        assert!((estimate_cost(&h, &[0.8], 0.5, &[0.4]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(estimate_cost(&h, &[0.8], 0.2, &[0.4]).unwrap(), 0.0);
        let high = vec![BidRecord { x: vec![0.4], bid: 0.6, d_obs: None }];
        assert!(matches!(estimate_reward(&high, &[0.8], 0.9, 0.5, &[0.4]), Err(EstimatorError::NoSupport { .. })));
    }

    #[test]
    fn count_support_examples() {
        let h: Vec<BidRecord> = [0.0, 0.3, 0.6].iter().map(|&b| lost(0.1, b, 0.9)).collect();
        assert_eq!(count_support(&h, 0.5), 2);
        let zeros: Vec<BidRecord> = (0..3).map(|_| lost(0.1, 0.0, 0.9)).collect();
        assert_eq!(count_support(&zeros, 0.0), 3);
        assert_eq!(count_support(&[], 0.4), 0);
    }

    #[test]
    fn reward_estimate_matches_closed_form() {
        // G = U(0, 1), alpha * x_t = 0: r(v, b) = (v - b) * b and c(b) = b * b
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h: Vec<BidRecord> = (0..2000)
            .map(|_| {
                let x: f64 = rng.random();
                let z: f64 = rng.random();
                lost(x, 0.0, 0.8 * x + z)
            })
            .collect();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        for &v in &grid {
            for &b in &grid {
                let r = estimate_reward(&h, &[0.8], v, b, &[0.0]).unwrap();
                assert!((r - (v - b) * b).abs() <= 0.03, "v={v} b={b}: {r}");
                let c = estimate_cost(&h, &[0.8], b, &[0.0]).unwrap();
                assert!((c - b * b).abs() <= 0.03);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn reward_and_cost_are_bounded(
            rows in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, proptest::option::of(0.0f64..1.5)), 1..40),
            alpha in -1.0f64..1.5, v in 0.0f64..1.0, b in 0.0f64..1.0, xt in 0.0f64..1.0,
        ) {
            let h: Vec<BidRecord> = rows.iter().map(|&(x, bid, d)| BidRecord {
                x: vec![x], bid, d_obs: d.map(|d| d.max(bid + 1e-9)),
            }).collect();
            if let Ok(r) = estimate_reward(&h, &[alpha], v, b, &[xt]) {
                proptest::prop_assert!(r.abs() <= 1.0);
                let c = estimate_cost(&h, &[alpha], b, &[xt]).unwrap();
                proptest::prop_assert!((0.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn quantile_matches_sorted_definition(
            vals in proptest::collection::vec(proptest::option::of(-5.0f64..5.0), 1..60), p in 0.01f64..0.99,
        ) {
            let v: Vec<f64> = vals.iter().map(|o| o.unwrap_or(f64::NEG_INFINITY)).collect();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            let oracle = sorted.iter().enumerate().find(|(i, _)| (*i + 1) as f64 / n >= p).map(|(_, y)| *y).unwrap();
            match sample_quantile(&v, p) {
                Ok(q) => proptest::prop_assert_eq!(q, oracle),
                Err(EstimatorError::AllCensored) => proptest::prop_assert_eq!(oracle, f64::NEG_INFINITY),
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
        }
    }
}
