use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bench::Aggregator;
use crate::error::{AdkoError, Result};
use crate::graph::GraphKind;
use crate::lm::LmErrorModel;
use crate::reasoning::ReasoningParams;
use crate::token::{BaselineMode, PrivacyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Adko,
    AdkoLm,
    AdkoFifo,
    NaiveSharing,
    Independent,
    Centralized,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Adko => "ADKO",
            Method::AdkoLm => "ADKO_LM",
            Method::AdkoFifo => "ADKO_FIFO",
            Method::NaiveSharing => "NAIVE_SHARING",
            Method::Independent => "INDEPENDENT",
            Method::Centralized => "CENTRALIZED",
        }
    }

    pub fn shares_tokens(&self) -> bool {
        matches!(self, Method::Adko | Method::AdkoLm | Method::AdkoFifo | Method::NaiveSharing)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restriction {
    pub column: String,
    /// Level per agent; all levels in table order when absent.
    #[serde(default)]
    pub assign: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    SyntheticGp {
        dim: usize,
        steps: usize,
        lengthscale: f64,
        #[serde(default = "one")]
        signal_variance: f64,
        correlation: f64,
        #[serde(default)]
        noise_std: f64,
    },
    Table {
        path: PathBuf,
        objective_column: String,
        #[serde(default)]
        restriction: Option<Restriction>,
        #[serde(default)]
        noise_std: f64,
    },
    /// Shared function with the fixed baseline at the optimum value.
    BoundaryOptimum {
        dim: usize,
        steps: usize,
        lengthscale: f64,
        #[serde(default = "one")]
        signal_variance: f64,
        #[serde(default)]
        noise_std: f64,
    },
    /// Correlated functions with the model bias tilted away from the optimum.
    BiasedPrior {
        dim: usize,
        steps: usize,
        lengthscale: f64,
        #[serde(default = "one")]
        signal_variance: f64,
        #[serde(default)]
        noise_std: f64,
        bias_amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// Median pairwise warm-up distance when absent.
    #[serde(default)]
    pub lengthscale: Option<f64>,
    #[serde(default = "one")]
    pub signal_variance: f64,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    /// Fit on per-agent standardized observations.
    #[serde(default)]
    pub standardize: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            lengthscale: None,
            signal_variance: 1.0,
            noise_variance: default_noise_variance(),
            standardize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Median pairwise warm-up distance when absent.
    #[serde(default)]
    pub sim_bandwidth: Option<f64>,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        ReasoningConfig { beta: default_beta(), lambda: 1.0, gamma: default_gamma(), sim_bandwidth: None }
    }
}

impl ReasoningConfig {
    pub fn params(&self, fallback_bandwidth: f64) -> ReasoningParams {
        ReasoningParams {
            beta: self.beta,
            lambda: self.lambda,
            gamma: self.gamma,
            sim_bandwidth: self.sim_bandwidth.unwrap_or(fallback_bandwidth),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_baseline_mode")]
    pub mode: BaselineMode,
    /// Fixed baseline value `τ`.
    #[serde(default)]
    pub value: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { mode: BaselineMode::Fixed, value: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub n_agents: usize,
    pub rounds: usize,
    pub warmup_rounds: usize,
    pub seed: u64,
    /// Seed for the objective draw; the run seed when absent.
    #[serde(default)]
    pub objective_seed: Option<u64>,
    #[serde(default = "default_graph")]
    pub graph: GraphKind,
    pub objective: ObjectiveSpec,
    #[serde(default = "default_aggregator")]
    pub aggregator: Aggregator,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_recency")]
    pub recency_weight: f64,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub lm: LmErrorModel,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Whole unevaluated feasible grid when null.
    #[serde(default = "default_pool")]
    pub pool_size: Option<usize>,
    #[serde(default = "one_usize")]
    pub perturb_radius: usize,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub reasoning: ReasoningConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Forward the strongest foreign token instead of one's own when it
    /// outranks it.
    #[serde(default)]
    pub relay: bool,
    #[serde(default = "default_top_k")]
    pub hit_top_k: usize,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_noise_variance() -> f64 {
    1e-4
}
fn default_beta() -> f64 {
    2.0
}
fn default_gamma() -> f64 {
    1.5
}
fn default_baseline_mode() -> BaselineMode {
    BaselineMode::Fixed
}
fn default_graph() -> GraphKind {
    GraphKind::Ring
}
fn default_aggregator() -> Aggregator {
    Aggregator::Mean
}
fn default_budget() -> usize {
    16
}
fn default_recency() -> f64 {
    0.1
}
fn default_m() -> usize {
    10
}
fn default_pool() -> Option<usize> {
    Some(20)
}
fn default_top_k() -> usize {
    3
}

fn cfg(msg: impl Into<String>) -> AdkoError {
    AdkoError::Config(msg.into())
}

impl RunConfig {
    /// Defaults everywhere except the required fields.
    pub fn new(
        method: Method,
        n_agents: usize,
        rounds: usize,
        warmup_rounds: usize,
        seed: u64,
        objective: ObjectiveSpec,
    ) -> Self {
        RunConfig {
            method,
            n_agents,
            rounds,
            warmup_rounds,
            seed,
            objective_seed: None,
            graph: default_graph(),
            objective,
            aggregator: default_aggregator(),
            budget: default_budget(),
            recency_weight: default_recency(),
            privacy: PrivacyConfig::default(),
            lm: LmErrorModel::default(),
            m: default_m(),
            pool_size: default_pool(),
            perturb_radius: 1,
            gp: GpConfig::default(),
            reasoning: ReasoningConfig::default(),
            baseline: BaselineConfig::default(),
            relay: false,
            hit_top_k: default_top_k(),
        }
    }

    pub fn objective_seed(&self) -> u64 {
        self.objective_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(cfg("n_agents: must be >= 1"));
        }
        if self.warmup_rounds == 0 {
            return Err(cfg("warmup_rounds: must be >= 1"));
        }
        if self.rounds < self.warmup_rounds {
            return Err(cfg(format!("rounds: {} is below warmup_rounds {}", self.rounds, self.warmup_rounds)));
        }
        if self.budget == 0 {
            return Err(cfg("budget: must be >= 1"));
        }
        if !(self.recency_weight.is_finite() && self.recency_weight > 0.0) {
            return Err(cfg("recency_weight: must be finite and > 0"));
        }
        if self.m == 0 {
            return Err(cfg("m: must be >= 1"));
        }
        if self.pool_size == Some(0) {
            return Err(cfg("pool_size: must be >= 1 or null"));
        }
        if self.hit_top_k == 0 {
            return Err(cfg("hit_top_k: must be >= 1"));
        }
        let prefixed = |p: &str, e: AdkoError| cfg(format!("{p}: {e}"));
        self.privacy.validate().map_err(|e| prefixed("privacy", e))?;
        self.lm.validate().map_err(|e| prefixed("lm", e))?;
        self.aggregator.validate(self.n_agents).map_err(|e| prefixed("aggregator", e))?;
        let g = &self.gp;
        if let Some(l) = g.lengthscale {
            if !(l.is_finite() && l > 0.0) {
                return Err(cfg("gp.lengthscale: must be finite and > 0"));
            }
        }
        if !(g.signal_variance.is_finite() && g.signal_variance > 0.0) {
            return Err(cfg("gp.signal_variance: must be finite and > 0"));
        }
        if !(g.noise_variance.is_finite() && g.noise_variance > 0.0) {
            return Err(cfg("gp.noise_variance: must be finite and > 0"));
        }
        self.reasoning.params(1.0).validate().map_err(|e| prefixed("reasoning", e))?;
        if let Some(s) = self.reasoning.sim_bandwidth {
            if !(s.is_finite() && s > 0.0) {
                return Err(cfg("reasoning.sim_bandwidth: must be finite and > 0"));
            }
        }
        if !self.baseline.value.is_finite() {
            return Err(cfg("baseline.value: must be finite"));
        }
        match &self.objective {
            ObjectiveSpec::SyntheticGp { dim, steps, lengthscale, signal_variance, correlation, noise_std } => {
                check_grid(*dim, *steps, *lengthscale, *signal_variance, *noise_std)?;
                if !(0.0..=1.0).contains(correlation) {
                    return Err(cfg("objective.correlation: must lie in [0, 1]"));
                }
            }
            ObjectiveSpec::BoundaryOptimum { dim, steps, lengthscale, signal_variance, noise_std } => {
                check_grid(*dim, *steps, *lengthscale, *signal_variance, *noise_std)?;
            }
            ObjectiveSpec::BiasedPrior { dim, steps, lengthscale, signal_variance, noise_std, bias_amplitude } => {
                check_grid(*dim, *steps, *lengthscale, *signal_variance, *noise_std)?;
                if !(bias_amplitude.is_finite() && *bias_amplitude >= 0.0) {
                    return Err(cfg("objective.bias_amplitude: must be finite and >= 0"));
                }
            }
            ObjectiveSpec::Table { noise_std, restriction, .. } => {
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    return Err(cfg("objective.noise_std: must be finite and >= 0"));
                }
                if let Some(Restriction { assign: Some(a), .. }) = restriction {
                    if a.len() != self.n_agents {
                        return Err(cfg(format!(
                            "objective.restriction.assign: {} levels for {} agents",
                            a.len(),
                            self.n_agents
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_grid(dim: usize, steps: usize, lengthscale: f64, signal_variance: f64, noise_std: f64) -> Result<()> {
    if dim == 0 {
        return Err(cfg("objective.dim: must be >= 1"));
    }
    if steps < 2 {
        return Err(cfg("objective.steps: must be >= 2"));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(cfg("objective.lengthscale: must be finite and > 0"));
    }
    if !(signal_variance.is_finite() && signal_variance > 0.0) {
        return Err(cfg("objective.signal_variance: must be finite and > 0"));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(cfg("objective.noise_std: must be finite and >= 0"));
    }
    Ok(())
}
