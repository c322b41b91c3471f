//! The four-term reasoning score: private GP-UCB plus token-driven
//! success attraction and failure avoidance.

use serde::{Deserialize, Serialize};

use crate::error::{AdkoError, Result};
use crate::gp::{GpSurrogate, Posterior};
use crate::token::{Signal, TokenMemory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningParams {
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sim_bandwidth: f64,
}

impl Default for ReasoningParams {
    fn default() -> Self {
        ReasoningParams { beta: 2.0, lambda: 1.0, gamma: 1.5, sim_bandwidth: 0.5 }
    }
}

impl ReasoningParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AdkoError::invalid(name, "must be finite and >= 0"));
            }
        }
        if !(self.sim_bandwidth.is_finite() && self.sim_bandwidth > 0.0) {
            return Err(AdkoError::invalid("sim_bandwidth", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub mean_term: f64,
    pub explore_term: f64,
    pub attract_term: f64,
    pub avoid_term: f64,
    /// Additive language-model bias plus noise; zero without a model.
    pub lm_term: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmAdjust {
    pub bias: f64,
    pub noise: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SocialTerms {
    pub attract: f64,
    pub avoid: f64,
}

/// `exp(−‖a − b‖² / σ_s²)`.
pub fn similarity(a: &[f64], b: &[f64], bandwidth: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(AdkoError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(AdkoError::invalid("sim_bandwidth", "must be > 0"));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((-d2 / (bandwidth * bandwidth)).exp())
}

/// Success attraction `G` and failure avoidance `Λ` at `theta`.
///
/// Each token is weighted by `weights[via]`, the mixing weight of the
/// neighbor that delivered it (the agent itself for its own tokens). With
/// `degraded` every contribution is also scaled by the token's fidelity.
pub fn social_terms(
    theta: &[f64],
    memory: &TokenMemory,
    weights: &[f64],
    params: &ReasoningParams,
    degraded: bool,
) -> Result<SocialTerms> {
    let mut out = SocialTerms::default();
    for h in memory.held() {
        let t = &h.token;
        let w = *weights.get(h.via).ok_or(AdkoError::DimensionMismatch { expected: weights.len(), got: h.via + 1 })?;
        let mut contrib = w * t.advantage * similarity(theta, &t.embedding, params.sim_bandwidth)?;
        if degraded {
            contrib *= t.fidelity;
        }
        match t.signal {
            Signal::Success => out.attract += contrib,
            Signal::Fail => out.avoid += contrib,
        }
    }
    Ok(out)
}

pub fn combine(post: Posterior, social: SocialTerms, params: &ReasoningParams, lm: Option<LmAdjust>) -> ScoreBreakdown {
    let mean_term = post.mean;
    let explore_term = params.beta * post.stddev;
    let attract_term = params.lambda * social.attract;
    let avoid_term = params.gamma * social.avoid;
    let lm_term = lm.map_or(0.0, |a| a.bias + a.noise);
    let total = mean_term + explore_term + attract_term - avoid_term + lm_term;
    ScoreBreakdown { mean_term, explore_term, attract_term, avoid_term, lm_term, total }
}

#[allow(clippy::too_many_arguments)]
pub fn reasoning_score(
    theta: &[f64],
    gp: &GpSurrogate,
    memory: &TokenMemory,
    weights: &[f64],
    params: &ReasoningParams,
    degraded: bool,
    lm: Option<LmAdjust>,
) -> Result<ScoreBreakdown> {
    let post = gp.predict(theta)?;
    let social = social_terms(theta, memory, weights, params, degraded)?;
    Ok(combine(post, social, params, lm))
}

/// Index of the highest score; ties go to the lowest index and NaN never wins.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(AdkoError::EmptyCandidates);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let cur = scores[best];
        if *s > cur || (cur.is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_candidate<T: Copy>(candidates: &[T], mut score: impl FnMut(&T) -> Result<f64>) -> Result<T> {
    let scores = candidates.iter().map(&mut score).collect::<Result<Vec<_>>>()?;
    Ok(candidates[argmax(&scores)?])
}
