use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{AdkoError, Result};
use crate::gp::{median_pairwise_distance, Dataset, GpSurrogate, KernelParams};
use crate::reasoning::ReasoningParams;
use crate::space::{DesignPoint, DesignSpace};
use crate::token::{BaselineState, TokenMemory};

/// Used when the warm-up design is too small for the median heuristic.
pub(crate) const FALLBACK_DISTANCE: f64 = 0.5;

/// Private state of one agent. The dataset never leaves this struct.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: usize,
    /// Feasible points in ascending order.
    pub feasible: Vec<DesignPoint>,
    evaluated: Vec<bool>,
    pub dataset: Dataset,
    pub memory: TokenMemory,
    pub baseline: BaselineState,
    pub kernel: KernelParams,
    pub reasoning: ReasoningParams,
    pub best_so_far: Option<(DesignPoint, f64)>,
    pub gp: Option<GpSurrogate>,
}

impl AgentState {
    pub fn new(
        id: usize,
        feasible: Vec<DesignPoint>,
        grid_size: usize,
        budget: usize,
        baseline: BaselineState,
    ) -> Self {
        AgentState {
            id,
            feasible,
            evaluated: vec![false; grid_size],
            dataset: Dataset::new(),
            memory: TokenMemory::new(budget),
            baseline,
            kernel: KernelParams { lengthscale: vec![1.0], signal_variance: 1.0, noise_variance: 1.0 },
            reasoning: ReasoningParams::default(),
            best_so_far: None,
            gp: None,
        }
    }

    pub fn observe(&mut self, p: DesignPoint, y: f64) {
        self.dataset.push(p, y);
        self.evaluated[p.0] = true;
        if self.best_so_far.is_none_or(|(_, b)| y > b) {
            self.best_so_far = Some((p, y));
        }
    }

    pub fn is_evaluated(&self, p: DesignPoint) -> bool {
        self.evaluated[p.0]
    }

    /// Feasible points not yet evaluated, ascending.
    pub fn available(&self) -> Vec<DesignPoint> {
        self.feasible.iter().copied().filter(|p| !self.evaluated[p.0]).collect()
    }

    pub fn refit(&mut self, space: &DesignSpace, standardize: bool) -> Result<()> {
        self.gp = Some(fit_surrogate(space, &self.dataset, &self.kernel, standardize)?);
        Ok(())
    }
}

/// `(y − mean) / sd` over the dataset, with `sd` replaced by 1 when
/// degenerate.
pub(crate) fn standardized(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return values.iter().map(|_| 0.0).collect();
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    values.iter().map(|y| (y - m) / sd).collect()
}

pub(crate) fn fit_surrogate(
    space: &DesignSpace,
    ds: &Dataset,
    kernel: &KernelParams,
    standardize: bool,
) -> Result<GpSurrogate> {
    let ys = if standardize { standardized(ds.values()) } else { ds.values().to_vec() };
    GpSurrogate::fit(ds.embedded(space), &ys, kernel)
}

pub(crate) fn median_heuristic(space: &DesignSpace, pts: &[DesignPoint]) -> f64 {
    let xs: Vec<Vec<f64>> = pts.iter().map(|p| space.embed(*p)).collect();
    median_pairwise_distance(&xs).unwrap_or(FALLBACK_DISTANCE)
}

/// `count` distinct uniform draws from `feasible` (all of it if smaller).
pub fn warmup_points<R: Rng + ?Sized>(feasible: &[DesignPoint], count: usize, rng: &mut R) -> Vec<DesignPoint> {
    let mut v = feasible.to_vec();
    let k = count.min(v.len());
    let (picked, _) = v.partial_shuffle(rng, k);
    picked.to_vec()
}

/// Candidate list for one round.
///
/// With `pool_size = None` the pool is every available point in ascending
/// order. Otherwise it is the model proposals, then grid neighbors of the
/// incumbent within `radius`, then uniform fill up to `pool_size`; each
/// filtered to `available` and deduplicated.
pub fn candidate_pool<R: Rng + ?Sized>(
    space: &DesignSpace,
    available: &[DesignPoint],
    best: Option<DesignPoint>,
    proposals: Option<&[DesignPoint]>,
    pool_size: Option<usize>,
    radius: usize,
    rng: &mut R,
) -> Result<Vec<DesignPoint>> {
    if available.is_empty() {
        return Err(AdkoError::EmptyCandidates);
    }
    let Some(size) = pool_size else {
        return Ok(available.to_vec());
    };
    if size == 0 {
        return Err(AdkoError::invalid("pool_size", "must be >= 1"));
    }
    let is_avail = |p: &DesignPoint| available.binary_search(p).is_ok();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |p: DesignPoint, out: &mut Vec<DesignPoint>| {
        if is_avail(&p) && seen.insert(p) {
            out.push(p);
        }
    };
    for &p in proposals.unwrap_or(&[]) {
        push(p, &mut out);
    }
    if let Some(b) = best {
        for p in space.neighbors(b, radius) {
            push(p, &mut out);
        }
    }
    if out.len() < size {
        let rest: Vec<DesignPoint> = available.iter().copied().filter(|p| !out.contains(p)).collect();
        let need = (size - out.len()).min(rest.len());
        out.extend(rest.choose_multiple(rng, need).copied());
    }
    Ok(out)
}
