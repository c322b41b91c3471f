//! Exact Gaussian-process regression with a Matérn-5/2 kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AdkoError, Result};
use crate::space::{DesignPoint, DesignSpace};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscale: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let p = KernelParams { lengthscale: vec![lengthscale; dim], signal_variance, noise_variance };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.lengthscale.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscale.is_empty() {
            return Err(AdkoError::invalid("lengthscale", "empty"));
        }
        if self.lengthscale.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(AdkoError::invalid("lengthscale", "must be finite and > 0"));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(AdkoError::invalid("signal_variance", "must be finite and > 0"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(AdkoError::invalid("noise_variance", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Lengthscale-scaled Euclidean distance.
fn scaled_distance(x1: &[f64], x2: &[f64], lengthscale: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(AdkoError::DimensionMismatch { expected: x1.len(), got: x2.len() });
    }
    if x1.len() != lengthscale.len() {
        return Err(AdkoError::DimensionMismatch { expected: lengthscale.len(), got: x1.len() });
    }
    let r2: f64 = x1.iter().zip(x2).zip(lengthscale).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    Ok(r2.sqrt())
}

/// Matérn-5/2 profile as a function of scaled distance, unit variance.
pub fn matern52_profile(r: f64) -> f64 {
    let s5r = 5f64.sqrt() * r;
    (1.0 + s5r + 5.0 * r * r / 3.0) * (-s5r).exp()
}

pub fn matern52(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    let r = scaled_distance(x1, x2, &params.lengthscale)?;
    Ok(params.signal_variance * matern52_profile(r))
}

pub fn gram(xs: &[Vec<f64>], params: &KernelParams) -> Result<DMatrix<f64>> {
    let n = xs.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(&xs[i], &xs[j], params)?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Private dataset of an agent. Append-only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<DesignPoint>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: DesignPoint, y: f64) {
        self.points.push(p);
        self.values.push(y);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn embedded(&self, space: &DesignSpace) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| space.embed(*p)).collect()
    }

    pub fn best(&self) -> Option<(DesignPoint, f64)> {
        let mut best: Option<(DesignPoint, f64)> = None;
        for (p, y) in self.points.iter().zip(&self.values) {
            if best.is_none_or(|(_, b)| *y > b) {
                best = Some((*p, *y));
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub stddev: f64,
}

/// A fitted GP: Cholesky factor of `G + (σ² + jitter) I` and the weight
/// vector `α = (G + σ²I)⁻¹ y`.
#[derive(Clone, Debug)]
pub struct GpSurrogate {
    params: KernelParams,
    xs: Vec<Vec<f64>>,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpSurrogate {
    pub fn fit(xs: Vec<Vec<f64>>, ys: &[f64], params: &KernelParams) -> Result<Self> {
        params.validate()?;
        if xs.len() != ys.len() {
            return Err(AdkoError::DimensionMismatch { expected: xs.len(), got: ys.len() });
        }
        let n = xs.len();
        if n == 0 {
            return Ok(GpSurrogate {
                params: params.clone(),
                xs,
                chol_l: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let g = gram(&xs, params)?;
        let (chol_l, jitter) = factor_with_jitter(g, params.noise_variance, params.signal_variance)?;
        let y = DVector::from_column_slice(ys);
        let z = chol_l.solve_lower_triangular(&y).ok_or(AdkoError::IllConditioned { n, max_jitter: JITTER_MAX })?;
        let alpha = chol_l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or(AdkoError::IllConditioned { n, max_jitter: JITTER_MAX })?;
        Ok(GpSurrogate { params: params.clone(), xs, chol_l, alpha, jitter })
    }

    pub fn from_dataset(space: &DesignSpace, ds: &Dataset, params: &KernelParams) -> Result<Self> {
        Self::fit(ds.embedded(space), ds.values(), params)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn predict(&self, query: &[f64]) -> Result<Posterior> {
        Ok(self.predict_whitened(query)?.0)
    }

    /// Posterior plus `v = L⁻¹ k(X, query)`, so that the posterior
    /// covariance of two queries is `k(a, b) − v_a · v_b`.
    pub fn predict_whitened(&self, query: &[f64]) -> Result<(Posterior, DVector<f64>)> {
        let prior = self.params.signal_variance;
        if self.xs.is_empty() {
            if query.len() != self.params.dim() {
                return Err(AdkoError::DimensionMismatch { expected: self.params.dim(), got: query.len() });
            }
            return Ok((Posterior { mean: 0.0, stddev: prior.sqrt() }, DVector::zeros(0)));
        }
        let n = self.xs.len();
        let mut kq = DVector::zeros(n);
        for (i, x) in self.xs.iter().enumerate() {
            kq[i] = matern52(x, query, &self.params)?;
        }
        let mean = kq.dot(&self.alpha);
        let v =
            self.chol_l.solve_lower_triangular(&kq).ok_or(AdkoError::IllConditioned { n, max_jitter: JITTER_MAX })?;
        let var = (prior - v.dot(&v)).max(0.0);
        Ok((Posterior { mean, stddev: var.sqrt() }, v))
    }
}

pub(crate) fn factor_with_jitter(g: DMatrix<f64>, noise: f64, signal: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = g.nrows();
    let mut jitter = JITTER_START * signal;
    loop {
        let mut k = g.clone();
        for i in 0..n {
            k[(i, i)] += noise + jitter;
        }
        if let Some(c) = k.cholesky() {
            return Ok((c.unpack(), jitter));
        }
        if jitter >= JITTER_MAX * signal {
            return Err(AdkoError::IllConditioned { n, max_jitter: jitter });
        }
        jitter = (jitter * 10.0).min(JITTER_MAX * signal);
    }
}

pub fn posterior(space: &DesignSpace, ds: &Dataset, params: &KernelParams, query: DesignPoint) -> Result<Posterior> {
    GpSurrogate::from_dataset(space, ds, params)?.predict(&space.embed(query))
}

/// Realized information gain `½ log det(I + σ⁻² G)` of the observed inputs, in nats.
pub fn info_gain(xs: &[Vec<f64>], params: &KernelParams) -> Result<f64> {
    params.validate()?;
    let n = xs.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut m = gram(xs, params)? / params.noise_variance;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let c = m.cholesky().ok_or(AdkoError::IllConditioned { n, max_jitter: 0.0 })?;
    let l = c.l_dirty();
    Ok((0..n).map(|i| l[(i, i)].ln()).sum())
}

pub fn dataset_info_gain(space: &DesignSpace, ds: &Dataset, params: &KernelParams) -> Result<f64> {
    info_gain(&ds.embedded(space), params)
}

/// Median of all pairwise Euclidean distances; `None` if fewer than two
/// points or the median is zero.
pub fn median_pairwise_distance(xs: &[Vec<f64>]) -> Option<f64> {
    let mut d = Vec::new();
    for i in 0..xs.len() {
        for j in 0..i {
            let s: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    (med > 0.0).then_some(med)
}
