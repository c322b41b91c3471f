//! Language-model module: the synthetic error model and the external
//! process adapter.
//!
//! The synthetic model realizes a scoring error `ε_bias(θ) + ξ`, where the
//! bias is a fixed smooth field bounded by `bias_amplitude` and
//! `ξ ~ N(0, σ₀² / (1 + α_σ Σ c_k η̂_k))` shrinks as fidelity-weighted
//! evidence accumulates in memory.

mod adapter;
mod synthetic;

pub use adapter::{AdapterReply, ExternalLm, ADAPTER_TIMEOUT, INSIGHT_MAX_BYTES};
pub use synthetic::{insight_template, synthetic_propose};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AdkoError, Result};
use crate::gp::Dataset;
use crate::reasoning::{LmAdjust, ReasoningParams};
use crate::rng::{substream, tag};
use crate::space::{DesignPoint, DesignSpace};
use crate::token::{Signal, TokenMemory};

const FOURIER_FEATURES: usize = 8;
const FOURIER_LENGTHSCALE: f64 = 0.3;
const HALF_SPACE_SHARPNESS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasShape {
    /// Random Fourier-feature field fixed by the seed.
    Fourier,
    /// `tanh` ramp along one axis, positive on the upper half when `upper`.
    HalfSpace { axis: usize, upper: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmErrorModel {
    pub sigma0: f64,
    pub alpha_sigma: f64,
    pub bias_amplitude: f64,
    #[serde(default)]
    pub bias_field_seed: u64,
    /// Reported only; the amplitude already folds in `B_R · d_TV`.
    #[serde(default)]
    pub d_tv: f64,
    #[serde(default = "default_shape")]
    pub bias_shape: BiasShape,
}

fn default_shape() -> BiasShape {
    BiasShape::Fourier
}

impl Default for LmErrorModel {
    fn default() -> Self {
        LmErrorModel {
            sigma0: 0.3,
            alpha_sigma: 1.0,
            bias_amplitude: 0.0,
            bias_field_seed: 0,
            d_tv: 0.0,
            bias_shape: BiasShape::Fourier,
        }
    }
}

impl LmErrorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(AdkoError::invalid("lm.sigma0", "must be finite and > 0"));
        }
        if !(self.alpha_sigma.is_finite() && self.alpha_sigma > 0.0) {
            return Err(AdkoError::invalid("lm.alpha_sigma", "must be finite and > 0"));
        }
        if !(self.bias_amplitude.is_finite() && self.bias_amplitude >= 0.0) {
            return Err(AdkoError::invalid("lm.bias_amplitude", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.d_tv) {
            return Err(AdkoError::invalid("lm.d_tv", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `σ_R² = σ₀² / (1 + α_σ Σ c_k η̂_k)`.
pub fn lm_noise_variance(memory: &TokenMemory, model: &LmErrorModel) -> f64 {
    model.sigma0 * model.sigma0 / (1.0 + model.alpha_sigma * memory.evidence())
}

/// Deterministic smooth bias field with `sup |ε| ≤ amplitude`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasField {
    amplitude: f64,
    shape: BiasShape,
    freqs: Vec<Vec<f64>>,
    phases: Vec<f64>,
    coeffs: Vec<f64>,
}

impl BiasField {
    pub fn new(model: &LmErrorModel, dim: usize) -> Self {
        let mut rng = substream(model.bias_field_seed, &[tag::BIAS_FIELD, dim as u64]);
        let normal = Normal::new(0.0, 1.0 / FOURIER_LENGTHSCALE).expect("positive std");
        let freqs = (0..FOURIER_FEATURES).map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect()).collect();
        let phases = (0..FOURIER_FEATURES).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let raw: Vec<f64> = (0..FOURIER_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Dividing by Σ|a_j| makes the sup-norm bound hold everywhere.
        let l1: f64 = raw.iter().map(|a: &f64| a.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        let coeffs = raw.iter().map(|a| a / l1).collect();
        BiasField { amplitude: model.bias_amplitude, shape: model.bias_shape.clone(), freqs, phases, coeffs }
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let unit = match &self.shape {
            BiasShape::Fourier => self
                .freqs
                .iter()
                .zip(&self.phases)
                .zip(&self.coeffs)
                .map(|((w, b), a)| {
                    let dot: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
                    a * (dot + b).cos()
                })
                .sum::<f64>(),
            BiasShape::HalfSpace { axis, upper } => {
                let v = x.get(*axis).copied().unwrap_or(0.5);
                let s = (HALF_SPACE_SHARPNESS * (v - 0.5)).tanh();
                if *upper {
                    s
                } else {
                    -s
                }
            }
        };
        self.amplitude * unit.clamp(-1.0, 1.0)
    }
}

/// Bias plus a fresh noise draw at `theta`.
pub fn synthetic_adjust<R: Rng + ?Sized>(
    theta: &[f64],
    memory: &TokenMemory,
    model: &LmErrorModel,
    field: &BiasField,
    rng: &mut R,
) -> LmAdjust {
    let sd = lm_noise_variance(memory, model).sqrt();
    let noise = Normal::new(0.0, sd).expect("positive std").sample(rng);
    LmAdjust { bias: field.eval(theta), noise }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LmProposal {
    pub candidates: Vec<DesignPoint>,
    pub rationales: Option<Vec<String>>,
}

/// What the model may see when proposing for one agent.
pub struct ProposeContext<'a> {
    pub space: &'a DesignSpace,
    /// Feasible, not yet evaluated points for this agent, ascending.
    pub available: &'a [DesignPoint],
    pub history: &'a Dataset,
    pub memory: &'a TokenMemory,
    pub weights: &'a [f64],
    pub reasoning: &'a ReasoningParams,
    pub field: &'a BiasField,
    pub m: usize,
    pub agent: usize,
    pub round: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmEvent {
    pub agent: usize,
    pub round: usize,
    pub kind: LmEventKind,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmEventKind {
    ProposeFallback,
    EncodeFallback,
    Snapped,
    Dropped,
}

/// Synthetic model, optionally fronted by an external adapter process.
pub struct LmBackend {
    pub model: LmErrorModel,
    external: Option<ExternalLm>,
    events: Vec<LmEvent>,
}

impl LmBackend {
    pub fn synthetic(model: LmErrorModel) -> Self {
        LmBackend { model, external: None, events: Vec::new() }
    }

    pub fn with_external(model: LmErrorModel, external: ExternalLm) -> Self {
        LmBackend { model, external: Some(external), events: Vec::new() }
    }

    pub fn events(&self) -> &[LmEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<LmEvent> {
        std::mem::take(&mut self.events)
    }

    /// Returns the proposal and whether the synthetic fallback was used
    /// because the external adapter failed.
    pub fn propose<R: Rng + ?Sized>(&mut self, ctx: &ProposeContext<'_>, rng: &mut R) -> Result<(LmProposal, bool)> {
        if ctx.m == 0 {
            return Err(AdkoError::invalid("m", "must be >= 1"));
        }
        if let Some(ext) = self.external.as_mut() {
            match ext.propose(ctx) {
                Ok(reply) => {
                    self.events.extend(reply.events);
                    if !reply.value.candidates.is_empty() {
                        return Ok((reply.value, false));
                    }
                    self.events.push(LmEvent {
                        agent: ctx.agent,
                        round: ctx.round,
                        kind: LmEventKind::ProposeFallback,
                        detail: "adapter returned no usable candidates".into(),
                    });
                }
                Err(e) => self.events.push(LmEvent {
                    agent: ctx.agent,
                    round: ctx.round,
                    kind: LmEventKind::ProposeFallback,
                    detail: e.to_string(),
                }),
            }
            return Ok((synthetic_propose(ctx, rng)?, true));
        }
        Ok((synthetic_propose(ctx, rng)?, false))
    }

    pub fn encode_insight(
        &mut self,
        space: &DesignSpace,
        theta: DesignPoint,
        signal: Signal,
        advantage: f64,
        agent: usize,
        round: usize,
    ) -> (String, bool) {
        if let Some(ext) = self.external.as_mut() {
            return match ext.encode(space, theta, signal, advantage, agent, round) {
                Ok(text) => (text, false),
                Err(e) => {
                    self.events.push(LmEvent {
                        agent,
                        round,
                        kind: LmEventKind::EncodeFallback,
                        detail: e.to_string(),
                    });
                    (String::new(), true)
                }
            };
        }
        (insight_template(signal, advantage).to_string(), false)
    }
}
