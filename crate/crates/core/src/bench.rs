//! Objective families: correlated GP samples on a grid, categorical tables
//! with per-agent restrictions, and adversarial lower-bound instances.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AdkoError, Result};
use crate::gp::{factor_with_jitter, gram, KernelParams};
use crate::lm::{BiasShape, LmErrorModel};
use crate::rng::{substream, tag};
use crate::space::{DesignPoint, DesignSpace, Dimension};

/// Largest grid sampled with a dense Cholesky factor.
pub const DENSE_GRID_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveKind {
    SyntheticGp,
    Table,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveFamily {
    pub kind: ObjectiveKind,
    pub space: DesignSpace,
    pub noise_std: f64,
    pub correlation: Option<f64>,
    /// Noiseless values per agent and grid index; NaN marks a missing cell.
    values: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    restricted: bool,
    pub missing_cells: usize,
}

impl ObjectiveFamily {
    pub fn new(space: DesignSpace, values: Vec<Vec<f64>>, noise_std: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(AdkoError::invalid("n_agents", "must be >= 1"));
        }
        for v in &values {
            if v.len() != space.size() {
                return Err(AdkoError::DimensionMismatch { expected: space.size(), got: v.len() });
            }
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(AdkoError::invalid("noise_std", "must be finite and >= 0"));
        }
        let masks = values.iter().map(|v| v.iter().map(|x| x.is_finite()).collect()).collect();
        let missing_cells = values[0].iter().filter(|x| !x.is_finite()).count();
        let fam = ObjectiveFamily {
            kind: ObjectiveKind::SyntheticGp,
            space,
            noise_std,
            correlation: None,
            values,
            masks,
            restricted: false,
            missing_cells,
        };
        fam.check_masks()?;
        Ok(fam)
    }

    fn check_masks(&self) -> Result<()> {
        for (i, m) in self.masks.iter().enumerate() {
            if !m.iter().any(|b| *b) {
                return Err(AdkoError::Table(format!("restriction mask of agent {i} is empty")));
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.values.len()
    }

    /// True when agents see different feasible subsets.
    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    pub fn value(&self, agent: usize, p: DesignPoint) -> f64 {
        self.values[agent][p.0]
    }

    pub fn values(&self, agent: usize) -> &[f64] {
        &self.values[agent]
    }

    pub fn mask(&self, agent: usize) -> &[bool] {
        &self.masks[agent]
    }

    pub fn feasible(&self, agent: usize, p: DesignPoint) -> bool {
        self.masks.get(agent).and_then(|m| m.get(p.0)).copied().unwrap_or(false)
    }

    pub fn feasible_points(&self, agent: usize) -> Vec<DesignPoint> {
        self.masks[agent].iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| DesignPoint(i)).collect()
    }

    /// Best feasible point for one agent; ties go to the lowest index.
    pub fn restricted_optimum(&self, agent: usize) -> (DesignPoint, f64) {
        let mut best = (DesignPoint(usize::MAX), f64::NEG_INFINITY);
        for p in self.feasible_points(agent) {
            let v = self.value(agent, p);
            if v > best.1 {
                best = (p, v);
            }
        }
        best
    }

    /// The `k` best feasible points of one agent, ties by lowest index.
    pub fn top_k(&self, agent: usize, k: usize) -> Vec<DesignPoint> {
        let mut pts = self.feasible_points(agent);
        pts.sort_by(|a, b| self.value(agent, *b).total_cmp(&self.value(agent, *a)).then(a.cmp(b)));
        pts.truncate(k);
        pts
    }

    /// Same values for `n` agents with no restriction.
    pub fn replicate(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(AdkoError::invalid("n_agents", "must be >= 1"));
        }
        let mut out = self.clone();
        out.values = vec![self.values[0].clone(); n];
        out.masks = vec![self.values[0].iter().map(|x| x.is_finite()).collect(); n];
        out.restricted = false;
        Ok(out)
    }

    /// Restrict each agent to the listed level of `column`.
    pub fn restrict(&self, column: &str, assign: &[String]) -> Result<Self> {
        let k = self
            .space
            .dims()
            .iter()
            .position(|d| d.name() == column)
            .ok_or_else(|| AdkoError::Table(format!("restriction column `{column}` not found")))?;
        let Dimension::Categorical { levels, .. } = &self.space.dims()[k] else {
            return Err(AdkoError::Table(format!("restriction column `{column}` is not categorical")));
        };
        if assign.is_empty() {
            return Err(AdkoError::invalid("assign", "must name at least one level"));
        }
        let base = self.values[0].clone();
        let mut masks = Vec::with_capacity(assign.len());
        for level in assign {
            let li = levels
                .iter()
                .position(|l| l == level)
                .ok_or_else(|| AdkoError::Table(format!("level `{level}` not present in column `{column}`")))?;
            masks.push(self.space.points().map(|p| base[p.0].is_finite() && self.space.coords(p)[k] == li).collect());
        }
        let mut out = self.clone();
        out.values = vec![base; assign.len()];
        out.masks = masks;
        out.restricted = true;
        out.check_masks()?;
        Ok(out)
    }

    /// Levels of a categorical column in grid order.
    pub fn levels(&self, column: &str) -> Option<&[String]> {
        self.space.dims().iter().find_map(|d| match d {
            Dimension::Categorical { name, levels } if name == column => Some(levels.as_slice()),
            _ => None,
        })
    }
}

/// `f_i = √ρ f_shared + √(1−ρ) f_priv,i`, each an exact GP draw on the grid.
pub fn sample_synthetic(
    space: &DesignSpace,
    params: &KernelParams,
    correlation: f64,
    n_agents: usize,
    noise_std: f64,
    seed: u64,
) -> Result<ObjectiveFamily> {
    if !(0.0..=1.0).contains(&correlation) {
        return Err(AdkoError::OutOfUnitRange { name: "correlation", value: correlation });
    }
    if n_agents == 0 {
        return Err(AdkoError::invalid("n_agents", "must be >= 1"));
    }
    let size = space.size();
    if size > DENSE_GRID_CAP {
        return Err(AdkoError::GridTooLarge { size, cap: DENSE_GRID_CAP });
    }
    params.validate()?;
    if params.dim() != space.ndim() {
        return Err(AdkoError::DimensionMismatch { expected: space.ndim(), got: params.dim() });
    }
    let xs: Vec<Vec<f64>> = space.points().map(|p| space.embed(p)).collect();
    let (l, _) = factor_with_jitter(gram(&xs, params)?, 0.0, params.signal_variance)?;
    let draw = |stream: u64| -> Vec<f64> {
        let mut rng = substream(seed, &[tag::OBJECTIVE, stream]);
        let z = DVector::from_iterator(size, (0..size).map(|_| StandardNormal.sample(&mut rng)));
        (&l * z).iter().copied().collect()
    };
    let shared = if correlation > 0.0 { draw(0) } else { vec![0.0; size] };
    let (ws, wp) = (correlation.sqrt(), (1.0 - correlation).sqrt());
    let values = (0..n_agents)
        .map(|i| {
            if correlation >= 1.0 {
                return shared.clone();
            }
            let private = draw(1 + i as u64);
            shared.iter().zip(&private).map(|(s, p)| ws * s + wp * p).collect()
        })
        .collect();
    let mut fam = ObjectiveFamily::new(space.clone(), values, noise_std)?;
    fam.correlation = Some(correlation);
    Ok(fam)
}

/// Noisy observation `f_i(θ) + ε`.
pub fn evaluate<R: Rng + ?Sized>(
    family: &ObjectiveFamily,
    agent: usize,
    theta: DesignPoint,
    rng: &mut R,
) -> Result<f64> {
    if agent >= family.n_agents() {
        return Err(AdkoError::invalid("agent", format!("{agent} out of range")));
    }
    if !family.feasible(agent, theta) {
        return Err(AdkoError::Infeasible { agent, index: theta.0 });
    }
    let f = family.value(agent, theta);
    if family.noise_std == 0.0 {
        return Ok(f);
    }
    let eps = Normal::new(0.0, family.noise_std).expect("finite std").sample(rng);
    Ok(f + eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Min,
    Weighted(Vec<f64>),
}

impl Aggregator {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if let Aggregator::Weighted(w) = self {
            if w.len() != n_agents {
                return Err(AdkoError::DimensionMismatch { expected: n_agents, got: w.len() });
            }
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(AdkoError::invalid("weights", "must be positive"));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(AdkoError::invalid("weights", "must sum to 1"));
            }
        }
        Ok(())
    }

    fn apply(&self, vals: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregator::Mean => {
                let (s, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                s / n as f64
            }
            Aggregator::Min => {
                vals.fold(f64::INFINITY, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.min(v) })
            }
            Aggregator::Weighted(w) => vals.zip(w).map(|(v, w)| v * w).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalObjective {
    pub aggregator: Aggregator,
    pub optimum_value: f64,
    pub optimum_point: DesignPoint,
    /// Noiseless `F` on the whole grid; NaN where any agent has no value.
    pub values: Vec<f64>,
}

pub fn global_value(family: &ObjectiveFamily, aggregator: &Aggregator, theta: DesignPoint) -> f64 {
    aggregator.apply((0..family.n_agents()).map(|i| family.value(i, theta)))
}

/// Exhaustive grid argmax of `F`; ties go to the lowest index.
pub fn global_optimum(family: &ObjectiveFamily, aggregator: &Aggregator) -> Result<GlobalObjective> {
    aggregator.validate(family.n_agents())?;
    let values: Vec<f64> = family.space.points().map(|p| global_value(family, aggregator, p)).collect();
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    let b = best.ok_or_else(|| AdkoError::Table("objective has no finite value".into()))?;
    Ok(GlobalObjective {
        aggregator: aggregator.clone(),
        optimum_value: values[b],
        optimum_point: DesignPoint(b),
        values,
    })
}

/// Read a comma-delimited table: every column except `objective_column` is
/// categorical, with levels in order of first appearance. With a
/// `restriction_column`, one agent is created per level of that column.
pub fn load_table(path: &Path, objective_column: &str, restriction_column: Option<&str>) -> Result<ObjectiveFamily> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let obj = headers
        .iter()
        .position(|h| h == objective_column)
        .ok_or_else(|| AdkoError::Table(format!("missing objective column `{objective_column}`")))?;
    if let Some(rc) = restriction_column {
        if !headers.iter().any(|h| h == rc) {
            return Err(AdkoError::Table(format!("missing restriction column `{rc}`")));
        }
        if rc == objective_column {
            return Err(AdkoError::Table("restriction column cannot be the objective".into()));
        }
    }
    let cat_cols: Vec<usize> = (0..headers.len()).filter(|i| *i != obj).collect();
    if cat_cols.is_empty() {
        return Err(AdkoError::Table("table has no condition columns".into()));
    }
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); cat_cols.len()];
    let mut index: Vec<HashMap<String, usize>> = vec![HashMap::new(); cat_cols.len()];
    let mut rows: Vec<(Vec<usize>, f64)> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        let raw = rec.get(obj).unwrap_or("").trim();
        let y: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| AdkoError::Table(format!("line {line}: non-numeric objective `{raw}`")))?;
        let mut coords = Vec::with_capacity(cat_cols.len());
        for (k, &c) in cat_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim().to_string();
            let next = levels[k].len();
            let id = *index[k].entry(cell.clone()).or_insert_with(|| {
                levels[k].push(cell);
                next
            });
            coords.push(id);
        }
        rows.push((coords, y));
    }
    if rows.is_empty() {
        return Err(AdkoError::Table("table has no rows".into()));
    }
    let dims = cat_cols
        .iter()
        .zip(levels)
        .map(|(&c, levels)| Dimension::Categorical { name: headers[c].clone(), levels })
        .collect();
    let space = DesignSpace::new(dims)?;
    if space.size() > DENSE_GRID_CAP * 10 {
        return Err(AdkoError::GridTooLarge { size: space.size(), cap: DENSE_GRID_CAP * 10 });
    }
    let mut values = vec![f64::NAN; space.size()];
    for (coords, y) in rows {
        let p = space.from_coords(&coords)?;
        if values[p.0].is_finite() {
            return Err(AdkoError::Table(format!("duplicate condition row {:?}", space.describe(p))));
        }
        values[p.0] = y;
    }
    let mut fam = ObjectiveFamily::new(space, vec![values], 0.0)?;
    fam.kind = ObjectiveKind::Table;
    match restriction_column {
        Some(rc) => {
            let lv = fam.levels(rc).expect("categorical column").to_vec();
            fam.restrict(rc, &lv)
        }
        None => Ok(fam),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LowerBoundKind {
    BoundaryOptimum,
    BiasedPrior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundInstance {
    pub family: ObjectiveFamily,
    pub global: GlobalObjective,
    /// Fixed baseline value every agent must use.
    pub baseline: Option<f64>,
    pub lm: Option<LmErrorModel>,
}

/// Adversarial instances. `BoundaryOptimum` uses one shared function with
/// the fixed baseline equal to `f(θ*)`. `BiasedPrior` tilts the synthetic
/// model's bias towards the half of the first axis that excludes `θ*`.
pub fn lower_bound_instance(
    kind: LowerBoundKind,
    space: &DesignSpace,
    params: &KernelParams,
    n_agents: usize,
    noise_std: f64,
    bias_amplitude: f64,
    seed: u64,
) -> Result<LowerBoundInstance> {
    let correlation = match kind {
        LowerBoundKind::BoundaryOptimum => 1.0,
        LowerBoundKind::BiasedPrior => 0.7,
    };
    let family = sample_synthetic(space, params, correlation, n_agents, noise_std, seed)?;
    let global = global_optimum(&family, &Aggregator::Mean)?;
    Ok(match kind {
        LowerBoundKind::BoundaryOptimum => {
            LowerBoundInstance { baseline: Some(global.optimum_value), family, global, lm: None }
        }
        LowerBoundKind::BiasedPrior => {
            let x0 = space.embed(global.optimum_point)[0];
            let lm = LmErrorModel {
                bias_amplitude,
                bias_field_seed: seed,
                bias_shape: BiasShape::HalfSpace { axis: 0, upper: x0 < 0.5 },
                ..Default::default()
            };
            LowerBoundInstance { family, global, baseline: None, lm: Some(lm) }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn fixture(name: &str) -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    fn small() -> (DesignSpace, KernelParams) {
        let s = DesignSpace::unit_grid(2, 8).unwrap();
        let p = KernelParams::isotropic(2, 0.3, 1.0, 1e-6).unwrap();
        (s, p)
    }

    #[test]
    fn full_correlation_shares_one_function() {
        let (s, p) = small();
        let f = sample_synthetic(&s, &p, 1.0, 3, 0.0, 5).unwrap();
        assert_eq!(f.values(0), f.values(1));
        assert_eq!(f.values(0), f.values(2));
    }

    #[test]
    fn zero_correlation_decorrelates_agents() {
        let (s, p) = small();
        let fams: Vec<ObjectiveFamily> =
            (0..50).map(|seed| sample_synthetic(&s, &p, 0.0, 2, 0.0, seed).unwrap()).collect();
        let mut total = 0.0;
        for q in 0..s.size() {
            let a: Vec<f64> = fams.iter().map(|f| f.value(0, DesignPoint(q))).collect();
            let b: Vec<f64> = fams.iter().map(|f| f.value(1, DesignPoint(q))).collect();
            total += pearson(&a, &b);
        }
        let corr = total / s.size() as f64;
        assert!(corr.abs() < 0.1, "{corr}");
    }

    #[test]
    fn marginal_variance_matches_prior() {
        let (s, p) = small();
        for rho in [0.0, 0.5, 1.0] {
            let vals: Vec<f64> = (0..2000)
                .map(|seed| sample_synthetic(&s, &p, rho, 1, 0.0, seed).unwrap().value(0, DesignPoint(27)))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            assert!((v - 1.0).abs() < 0.1, "rho {rho}: var {v}");
        }
    }

    #[test]
    fn cross_agent_covariance_is_rho_times_prior() {
        let (s, p) = small();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for seed in 0..2000 {
            let f = sample_synthetic(&s, &p, 0.7, 2, 0.0, seed).unwrap();
            a.push(f.value(0, DesignPoint(9)));
            b.push(f.value(1, DesignPoint(9)));
        }
        assert!((pearson(&a, &b) - 0.7).abs() < 0.05);
    }

    #[test]
    fn per_agent_maxima_are_exchangeable() {
        let (s, p) = small();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for seed in 0..200 {
            let f = sample_synthetic(&s, &p, 0.3, 2, 0.0, seed).unwrap();
            a.push(f.restricted_optimum(0).1);
            b.push(f.restricted_optimum(1).1);
        }
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        let t = m / (sd / (d.len() as f64).sqrt());
        assert!(t.abs() < 1.96, "t = {t}");
    }

    #[test]
    fn oversized_grid_is_refused() {
        let s = DesignSpace::unit_grid(3, 24).unwrap();
        let p = KernelParams::isotropic(3, 0.3, 1.0, 1e-6).unwrap();
        assert!(matches!(sample_synthetic(&s, &p, 0.5, 2, 0.0, 1), Err(AdkoError::GridTooLarge { size: 13824, .. })));
    }

    #[test]
    fn evaluation_noise() {
        let (s, p) = small();
        let exact = sample_synthetic(&s, &p, 0.5, 2, 0.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(evaluate(&exact, 1, DesignPoint(4), &mut rng).unwrap(), exact.value(1, DesignPoint(4)));

        let noisy = sample_synthetic(&s, &p, 0.5, 2, 0.1, 3).unwrap();
        let ys: Vec<f64> = (0..10_000).map(|_| evaluate(&noisy, 0, DesignPoint(4), &mut rng).unwrap()).collect();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
        assert!((v / 0.01 - 1.0).abs() < 0.1, "{v}");
        assert!(evaluate(&noisy, 5, DesignPoint(0), &mut rng).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let s = DesignSpace::unit_grid(1, 3).unwrap();
        let single = ObjectiveFamily::new(s.clone(), vec![vec![0.2, 0.9, 0.4]], 0.0).unwrap();
        let g = global_optimum(&single, &Aggregator::Mean).unwrap();
        assert_eq!((g.optimum_point, g.optimum_value), (DesignPoint(1), 0.9));

        let anti = ObjectiveFamily::new(s.clone(), vec![vec![1.0, -2.0, 3.0], vec![-1.0, 2.0, -3.0]], 0.0).unwrap();
        let g = global_optimum(&anti, &Aggregator::Mean).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0, 0.0]);
        assert_eq!(g.optimum_point, DesignPoint(0));

        let two = ObjectiveFamily::new(s, vec![vec![1.0, 3.0, 2.0], vec![2.0, 0.0, 2.0]], 0.0).unwrap();
        let g = global_optimum(&two, &Aggregator::Min).unwrap();
        assert_eq!(g.values, vec![1.0, 0.0, 2.0]);
        assert_eq!(g.optimum_point, DesignPoint(2));

        let w = Aggregator::Weighted(vec![0.25, 0.75]);
        assert_eq!(global_value(&two, &w, DesignPoint(1)), 0.75);
        assert!(Aggregator::Weighted(vec![0.5, 0.6]).validate(2).is_err());
        assert!(Aggregator::Weighted(vec![1.0]).validate(2).is_err());
    }

    #[test]
    fn optimum_matches_second_enumeration() {
        let (s, p) = small();
        for seed in 0..10 {
            let f = sample_synthetic(&s, &p, 0.4, 3, 0.0, seed).unwrap();
            let g = global_optimum(&f, &Aggregator::Mean).unwrap();
            let brute = (0..s.size())
                .map(|i| (0..3).map(|a| f.value(a, DesignPoint(i))).sum::<f64>() / 3.0)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            assert_eq!(g.optimum_point.0, brute.0);
            assert!((g.optimum_value - brute.1).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_fixture_loads_with_known_optimum() {
        let f = load_table(&fixture("tiny_table.csv"), "yield", None).unwrap();
        assert_eq!(f.kind, ObjectiveKind::Table);
        assert_eq!(f.space.ndim(), 2);
        assert_eq!(f.space.dims()[0].len(), 2);
        assert_eq!(f.space.dims()[1].len(), 3);
        assert_eq!(f.missing_cells, 0);
        let g = global_optimum(&f, &Aggregator::Mean).unwrap();
        assert_eq!(f.space.describe(g.optimum_point), vec!["L2".to_string(), "dmf".to_string()]);
        assert_eq!(g.optimum_value, 81.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(evaluate(&f, 0, g.optimum_point, &mut rng).unwrap(), 81.0);
    }

    #[test]
    fn solvent_restriction_partitions_the_table() {
        let f = load_table(&fixture("synthetic_coupling.csv"), "yield", Some("solvent")).unwrap();
        assert_eq!(f.n_agents(), 4);
        assert!(f.is_restricted());
        assert_eq!(f.missing_cells, 0);
        let mut covered = vec![0usize; f.space.size()];
        for a in 0..4 {
            for p in f.feasible_points(a) {
                covered[p.0] += 1;
            }
        }
        assert!(covered.iter().all(|c| *c == 1));
        let iid = load_table(&fixture("synthetic_coupling.csv"), "yield", None).unwrap().replicate(4).unwrap();
        assert_eq!(iid.feasible_points(3).len(), iid.space.size());
    }

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn table_errors() {
        let dup = write_tmp("a,b,y\nx,p,1\nx,p,2\n");
        assert!(matches!(load_table(dup.path(), "y", None), Err(AdkoError::Table(m)) if m.contains("duplicate")));
        let bad = write_tmp("a,y\nx,abc\n");
        assert!(matches!(load_table(bad.path(), "y", None), Err(AdkoError::Table(m)) if m.contains("non-numeric")));
        let ok = write_tmp("a,y\nx,1\n");
        assert!(matches!(load_table(ok.path(), "yield", None), Err(AdkoError::Table(m)) if m.contains("missing")));
        assert!(load_table(ok.path(), "y", Some("nope")).is_err());
        let sparse = write_tmp("a,b,y\nx,p,1\nz,q,2\n");
        assert_eq!(load_table(sparse.path(), "y", None).unwrap().missing_cells, 2);
    }

    #[test]
    fn boundary_instance_puts_baseline_at_optimum() {
        let (s, p) = small();
        let lb = lower_bound_instance(LowerBoundKind::BoundaryOptimum, &s, &p, 3, 0.01, 0.0, 2).unwrap();
        assert_eq!(lb.baseline, Some(lb.global.optimum_value));
        assert_eq!(lb.family.values(0), lb.family.values(2));
    }

    #[test]
    fn biased_prior_points_away_from_optimum() {
        let (s, p) = small();
        for seed in 0..5 {
            let lb = lower_bound_instance(LowerBoundKind::BiasedPrior, &s, &p, 2, 0.0, 0.5, seed).unwrap();
            let lm = lb.lm.unwrap();
            let field = crate::lm::BiasField::new(&lm, 2);
            let x = s.embed(lb.global.optimum_point);
            assert!(field.eval(&x) <= 0.0 || (x[0] - 0.5).abs() < 1e-12);
            let zero = lower_bound_instance(LowerBoundKind::BiasedPrior, &s, &p, 2, 0.0, 0.0, seed).unwrap();
            assert_eq!(zero.family, lb.family);
            assert_eq!(crate::lm::BiasField::new(&zero.lm.unwrap(), 2).eval(&x), 0.0);
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
