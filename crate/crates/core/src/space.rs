//! Discretized mixed search spaces.
//!
//! Every dimension is a finite grid. Continuous ranges are discretized into
//! `steps` equally spaced values; categorical dimensions keep their level
//! labels. Both embed into `[0, 1]` as equally spaced grid points, so the
//! kernel and the token embedding share one code path.

use serde::{Deserialize, Serialize};

use crate::error::{AdkoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dimension {
    Continuous { name: String, lo: f64, hi: f64, steps: usize },
    Categorical { name: String, levels: Vec<String> },
}

impl Dimension {
    pub fn len(&self) -> usize {
        match self {
            Dimension::Continuous { steps, .. } => *steps,
            Dimension::Categorical { levels, .. } => levels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &str {
        match self {
            Dimension::Continuous { name, .. } | Dimension::Categorical { name, .. } => name,
        }
    }

    /// Position of level `i` in `[0, 1]`.
    pub fn embed_level(&self, i: usize) -> f64 {
        let k = self.len();
        if k <= 1 {
            0.0
        } else {
            i as f64 / (k - 1) as f64
        }
    }
}

/// Flat index into a [`DesignSpace`] grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpace {
    dims: Vec<Dimension>,
    strides: Vec<usize>,
    size: usize,
}

impl DesignSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(AdkoError::invalid("space", "no dimensions"));
        }
        for d in &dims {
            if d.is_empty() {
                return Err(AdkoError::invalid("space", format!("dimension `{}` is empty", d.name())));
            }
            if let Dimension::Continuous { lo, hi, .. } = d {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(AdkoError::invalid("space", format!("dimension `{}` has an invalid range", d.name())));
                }
            }
        }
        // Row-major: the last dimension varies fastest.
        let mut strides = vec![1; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1].len();
        }
        let size = dims.iter().map(Dimension::len).product();
        Ok(DesignSpace { dims, strides, size })
    }

    /// Unit hypercube `[0,1]^d` discretized with `steps` points per axis.
    pub fn unit_grid(dim: usize, steps: usize) -> Result<Self> {
        let dims = (0..dim).map(|i| Dimension::Continuous { name: format!("x{i}"), lo: 0.0, hi: 1.0, steps }).collect();
        Self::new(dims)
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn points(&self) -> impl Iterator<Item = DesignPoint> {
        (0..self.size).map(DesignPoint)
    }

    pub fn coords(&self, p: DesignPoint) -> Vec<usize> {
        let mut rem = p.0;
        self.strides
            .iter()
            .map(|s| {
                let c = rem / s;
                rem %= s;
                c
            })
            .collect()
    }

    pub fn from_coords(&self, coords: &[usize]) -> Result<DesignPoint> {
        if coords.len() != self.ndim() {
            return Err(AdkoError::DimensionMismatch { expected: self.ndim(), got: coords.len() });
        }
        let mut idx = 0;
        for ((c, s), d) in coords.iter().zip(&self.strides).zip(&self.dims) {
            if *c >= d.len() {
                return Err(AdkoError::invalid("coords", format!("level {c} out of range for `{}`", d.name())));
            }
            idx += c * s;
        }
        Ok(DesignPoint(idx))
    }

    /// Normalized coordinates in `[0, 1]^d`.
    pub fn embed(&self, p: DesignPoint) -> Vec<f64> {
        self.coords(p).into_iter().zip(&self.dims).map(|(c, d)| d.embed_level(c)).collect()
    }

    /// Snap an arbitrary embedded vector to the nearest grid point.
    pub fn snap(&self, x: &[f64]) -> Result<DesignPoint> {
        if x.len() != self.ndim() {
            return Err(AdkoError::DimensionMismatch { expected: self.ndim(), got: x.len() });
        }
        let coords: Vec<usize> = x
            .iter()
            .zip(&self.dims)
            .map(|(v, d)| {
                let k = d.len();
                if k <= 1 || !v.is_finite() {
                    0
                } else {
                    (v.clamp(0.0, 1.0) * (k - 1) as f64).round() as usize
                }
            })
            .collect();
        self.from_coords(&coords)
    }

    /// Grid points whose coordinates differ from `p` by at most `radius`
    /// in every dimension, excluding `p` itself. Sorted by index.
    pub fn neighbors(&self, p: DesignPoint, radius: usize) -> Vec<DesignPoint> {
        let center = self.coords(p);
        let mut out = Vec::new();
        let mut cur = vec![0usize; self.ndim()];
        let lo: Vec<usize> = center.iter().map(|c| c.saturating_sub(radius)).collect();
        let hi: Vec<usize> = center.iter().zip(&self.dims).map(|(c, d)| (c + radius).min(d.len() - 1)).collect();
        cur.copy_from_slice(&lo);
        loop {
            if cur != center {
                // Coordinates are in range by construction.
                let idx: usize = cur.iter().zip(&self.strides).map(|(c, s)| c * s).sum();
                out.push(DesignPoint(idx));
            }
            let mut k = self.ndim();
            loop {
                if k == 0 {
                    out.sort_unstable();
                    return out;
                }
                k -= 1;
                if cur[k] < hi[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = lo[k];
            }
        }
    }

    /// Axis-aligned neighbors at distance exactly one step.
    pub fn axis_neighbors(&self, p: DesignPoint) -> Vec<DesignPoint> {
        let c = self.coords(p);
        let mut out = Vec::new();
        for (k, d) in self.dims.iter().enumerate() {
            if c[k] > 0 {
                out.push(DesignPoint(p.0 - self.strides[k]));
            }
            if c[k] + 1 < d.len() {
                out.push(DesignPoint(p.0 + self.strides[k]));
            }
        }
        out.sort_unstable();
        out
    }

    /// Human-readable value of each coordinate.
    pub fn describe(&self, p: DesignPoint) -> Vec<String> {
        self.coords(p)
            .into_iter()
            .zip(&self.dims)
            .map(|(c, d)| match d {
                Dimension::Continuous { lo, hi, steps, .. } => {
                    let v = if *steps <= 1 { *lo } else { lo + (hi - lo) * c as f64 / (*steps - 1) as f64 };
                    format!("{v}")
                }
                Dimension::Categorical { levels, .. } => levels[c].clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_round_trip() {
        let s = DesignSpace::new(vec![
            Dimension::Continuous { name: "a".into(), lo: 0.0, hi: 1.0, steps: 3 },
            Dimension::Categorical { name: "b".into(), levels: vec!["x".into(), "y".into()] },
        ])
        .unwrap();
        assert_eq!(s.size(), 6);
        for p in s.points() {
            assert_eq!(s.from_coords(&s.coords(p)).unwrap(), p);
            assert_eq!(s.snap(&s.embed(p)).unwrap(), p);
        }
        assert_eq!(s.embed(DesignPoint(5)), vec![1.0, 1.0]);
        assert_eq!(s.describe(DesignPoint(3)), vec!["0.5".to_string(), "y".to_string()]);
    }

    #[test]
    fn interior_axis_neighbors() {
        let s = DesignSpace::unit_grid(2, 5).unwrap();
        let p = s.from_coords(&[2, 2]).unwrap();
        let n = s.axis_neighbors(p);
        let want: Vec<_> = [[1, 2], [3, 2], [2, 1], [2, 3]].iter().map(|c| s.from_coords(c).unwrap()).collect();
        assert_eq!(n.len(), 4);
        for w in want {
            assert!(n.contains(&w));
        }
        assert_eq!(s.neighbors(p, 1).len(), 8);
        let corner = s.from_coords(&[0, 0]).unwrap();
        assert_eq!(s.neighbors(corner, 1).len(), 3);
    }
}
