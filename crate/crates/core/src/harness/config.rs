use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::policy::{Mode, PolicyConfig};
use crate::sim::{ContextLaw, MarketModel, NoiseModel, ValueMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Slope {
    Scalar(f64),
    Vector(Vec<f64>),
}

fn default_context() -> ContextLaw {
    ContextLaw::Uniform { lo: 0.0, hi: 1.0 }
}

fn default_value_map() -> ValueMap {
    ValueMap::SqrtConcave { a: 0.4, b: 0.1, cap: 1.0 }
}

fn default_one() -> f64 {
    1.0
}

fn default_reps() -> usize {
    1
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Contextual, Mode::ContextBlind]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// On-disk document. Kept separate from the validated config so that
/// `budget`/`rho` exclusivity can be checked after parsing.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "T")]
    horizon: usize,
    budget: Option<f64>,
    rho: Option<f64>,
    alpha: Slope,
    noise: NoiseModel,
    #[serde(default = "default_context")]
    context: ContextLaw,
    #[serde(default = "default_value_map")]
    value_map: ValueMap,
    #[serde(default = "default_one")]
    v_bar: f64,
    x_bar: Option<f64>,
    #[serde(default = "default_reps")]
    reps: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_modes")]
    modes: Vec<Mode>,
    #[serde(default)]
    policy: PolicyConfig,
    #[serde(default)]
    oracle: OracleConfig,
    #[serde(default = "default_out")]
    out: PathBuf,
    label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Monte-Carlo draws for the benchmark reward.
    pub mc_n: usize,
    /// Monte-Carlo draws inside the dual solver.
    pub dual_mc_n: usize,
    /// Golden-section tolerance on lambda.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { mc_n: 200_000, dual_mc_n: 20_000, tolerance: 1e-3 }
    }
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub budget: f64,
    pub rho: f64,
    pub market: MarketModel,
    pub reps: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub policy: PolicyConfig,
    pub oracle: OracleConfig,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Validation(m));
        if self.horizon < 16 {
            return fail(format!("T must be >= 16, got {}", self.horizon));
        }
        if self.reps == 0 {
            return fail("reps must be >= 1".into());
        }
        if self.modes.is_empty() {
            return fail("modes must list at least one of contextual, context_blind".into());
        }
        self.market.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
        if !(self.rho > 0.0 && self.rho < self.market.v_bar) {
            return fail(format!("rho = {} must lie in (0, v_bar = {})", self.rho, self.market.v_bar));
        }
        if !(self.policy.delta > 0.0 && self.policy.delta < 1.0) {
            return fail("policy.delta must lie in (0, 1)".into());
        }
        if !(self.policy.width_scale > 0.0) {
            return fail("policy.width_scale must be > 0".into());
        }
        if matches!(self.policy.eta, Some(e) if !(e > 0.0)) {
            return fail("policy.eta must be > 0".into());
        }
        if matches!(self.policy.grid_points, Some(n) if n < 2) {
            return fail("policy.grid_points must be >= 2".into());
        }
        self.policy.quantile.validate().map_err(|e| HarnessError::Validation(format!("policy.quantile: {e}")))?;
        if self.oracle.mc_n == 0 || self.oracle.dual_mc_n == 0 {
            return fail("oracle sample sizes must be >= 1".into());
        }
        if !(self.oracle.tolerance > 0.0) {
            return fail("oracle.tolerance must be > 0".into());
        }
        Ok(())
    }

    /// Same experiment at another horizon, keeping `rho` fixed.
    pub fn with_horizon(&self, horizon: usize) -> ExperimentConfig {
        ExperimentConfig { horizon, budget: self.rho * horizon as f64, ..self.clone() }
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.split("field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    if text.trim().is_empty() {
        return Err(HarnessError::Parse { line: 0, column: 0, key: None, message: "empty configuration".into() });
    }
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        HarnessError::Parse { line: e.line(), column: e.column(), key: unknown_key(&message), message }
    })?;
    let (budget, rho) = match (raw.budget, raw.rho) {
        (Some(b), None) => (b, b / raw.horizon.max(1) as f64),
        (None, Some(r)) => (r * raw.horizon as f64, r),
        (Some(_), Some(_)) => return Err(HarnessError::Validation("give exactly one of budget and rho, not both".into())),
        (None, None) => return Err(HarnessError::Validation("one of budget and rho is required".into())),
    };
    let alpha = match raw.alpha {
        Slope::Scalar(a) => vec![a],
        Slope::Vector(v) => v,
    };
    let x_bar = raw.x_bar.unwrap_or_else(|| raw.context.support().1);
    let mut modes = Vec::new();
    for m in raw.modes {
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    let config = ExperimentConfig {
        label: raw.label,
        horizon: raw.horizon,
        budget,
        rho,
        market: MarketModel {
            alpha,
            context: raw.context,
            noise: raw.noise,
            value_map: raw.value_map,
            v_bar: raw.v_bar,
            x_bar,
        },
        reps: raw.reps,
        seed: raw.seed,
        modes,
        policy: raw.policy,
        oracle: raw.oracle,
        out: raw.out,
    };
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config_str(&text)
}
