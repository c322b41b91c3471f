//! Named invariant suites behind `adko verify`, plus the scenario builders
//! shared with the acceptance tests.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gp::{matern52_profile, GpSurrogate, KernelParams, Posterior};
use crate::graph::{build_graph, spectral_gap_check, CommGraph, GraphKind};
use crate::lm::{lm_noise_variance, BiasField, LmErrorModel};
use crate::metrics::{bootstrap_diff_ci, mean, write_records_csv};
use crate::reasoning::{combine, social_terms, ReasoningParams};
use crate::runtime::{run, run_in, Method, ObjectiveSpec, Restriction, RunConfig, World};
use crate::token::{
    fidelity_estimate, fifo_prune, merge_and_prune, true_fidelity_mc, HeldToken, KnowledgeToken, Signal, TokenMemory,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Substitutable pieces, so a corrupted implementation can be fed through
/// the suite as a negative control.
#[derive(Clone, Copy, Debug)]
pub struct Hooks {
    pub kernel_profile: fn(f64) -> f64,
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks { kernel_profile: matern52_profile }
    }
}

pub fn run_checks(level: Level, hooks: &Hooks) -> Vec<Check> {
    let mut out = vec![
        kernel_reference(hooks),
        gp_oracle(if level == Level::Full { 100 } else { 20 }),
        gp_empty_prior(),
        fidelity_endpoints(),
        memory_budget(),
        pruning_dominance(),
        spectral_values(),
        mixing_stochastic(),
        score_identity_and_gap(if level == Level::Full { 1000 } else { 200 }),
        lm_bounds(),
        run_accounting(),
        run_determinism(),
    ];
    if level == Level::Full {
        out.push(mc_fidelity());
        out.push(collaboration_ordering());
    }
    out
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> Check {
    check(name, false, format!("error: {e}"))
}

/// Matérn-5/2 at unit lengthscale, from the Bessel-function form.
const MATERN_REFERENCE: [(f64, f64); 4] =
    [(0.1, 0.9917592361711776), (0.5, 0.8286491424181256), (1.0, 0.5239941088318205), (2.0, 0.13866021913850432)];

fn kernel_reference(hooks: &Hooks) -> Check {
    let worst = MATERN_REFERENCE
        .iter()
        .map(|(r, k)| ((hooks.kernel_profile)(*r) - k).abs())
        .chain(std::iter::once(((hooks.kernel_profile)(0.0) - 1.0).abs()))
        .fold(0.0, f64::max);
    check("gp.kernel_reference_values", worst < 1e-12, format!("max abs error {worst:.3e}"))
}

/// Dense-inverse posterior, written without the Cholesky path.
pub fn dense_posterior(xs: &[Vec<f64>], ys: &[f64], params: &KernelParams, jitter: f64, q: &[f64]) -> Posterior {
    let k = |a: &[f64], b: &[f64]| {
        let r = a.iter().zip(b).zip(&params.lengthscale).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>().sqrt();
        let s = 5f64.sqrt() * r;
        params.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
    };
    let n = xs.len();
    let mut kmat = DMatrix::from_fn(n, n, |i, j| k(&xs[i], &xs[j]));
    for i in 0..n {
        kmat[(i, i)] += params.noise_variance + jitter;
    }
    let inv = kmat.try_inverse().expect("noisy Gram matrix is invertible");
    let kq = DVector::from_fn(n, |i, _| k(&xs[i], q));
    let y = DVector::from_column_slice(ys);
    let mean = (kq.transpose() * &inv * y)[0];
    let var = params.signal_variance - (kq.transpose() * &inv * &kq)[0];
    Posterior { mean, stddev: var.max(0.0).sqrt() }
}

pub struct GpInstance {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub params: KernelParams,
    pub queries: Vec<Vec<f64>>,
}

/// Random GP instance with `n ≤ 50`, `d ≤ 5`.
pub fn random_gp_instance<R: Rng>(rng: &mut R) -> GpInstance {
    let d = rng.random_range(1..=5);
    let n = rng.random_range(1..=50);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let params = KernelParams {
        lengthscale: (0..d).map(|_| rng.random_range(0.1..1.0)).collect(),
        signal_variance: rng.random_range(0.5..2.0),
        noise_variance: rng.random_range(1e-3..1e-1),
    };
    let queries = (0..5).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    GpInstance { xs, ys, params, queries }
}

/// Worst posterior disagreement with the dense oracle over `instances`.
pub fn gp_oracle_error(instances: usize, seed: u64) -> crate::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let GpInstance { xs, ys, params, queries: qs } = random_gp_instance(&mut rng);
        let gp = GpSurrogate::fit(xs.clone(), &ys, &params)?;
        for q in &qs {
            let a = gp.predict(q)?;
            let b = dense_posterior(&xs, &ys, &params, gp.jitter(), q);
            worst = worst.max((a.mean - b.mean).abs()).max((a.stddev - b.stddev).abs());
        }
    }
    Ok(worst)
}

fn gp_oracle(instances: usize) -> Check {
    match gp_oracle_error(instances, 11) {
        Ok(w) => {
            check("gp.posterior_matches_dense_inverse", w < 1e-8, format!("{instances} instances, sup error {w:.3e}"))
        }
        Err(e) => failed("gp.posterior_matches_dense_inverse", e),
    }
}

fn gp_empty_prior() -> Check {
    let p = KernelParams { lengthscale: vec![0.3, 0.3], signal_variance: 1.7, noise_variance: 1e-3 };
    match GpSurrogate::fit(vec![], &[], &p).and_then(|g| g.predict(&[0.2, 0.9])) {
        Ok(post) => check(
            "gp.empty_dataset_is_prior",
            post.mean == 0.0 && (post.stddev.powi(2) - 1.7).abs() < 1e-12,
            format!("mean {}, var {}", post.mean, post.stddev.powi(2)),
        ),
        Err(e) => failed("gp.empty_dataset_is_prior", e),
    }
}

fn fidelity_endpoints() -> Check {
    let vals = [0.0, 0.5, 1.0].map(|c| fidelity_estimate(c).unwrap_or(f64::NAN));
    let ok = vals[0] == 0.0 && (vals[1] - 0.094361).abs() < 1e-6 && (vals[2] - 1.0).abs() < 1e-15;
    check("token.fidelity_estimator_values", ok, format!("{vals:?}"))
}

fn token(agent: usize, round: usize, advantage: f64) -> KnowledgeToken {
    KnowledgeToken {
        signal: Signal::Success,
        advantage,
        fidelity: fidelity_estimate(advantage).expect("advantage in [0,1]"),
        embedding: vec![0.5],
        insight: None,
        agent,
        round,
    }
}

/// Stream ordered high-advantage first, then low.
pub fn adversarial_stream(len: usize) -> Vec<KnowledgeToken> {
    (0..len)
        .map(|t| {
            let c = if t < len / 2 { 0.9 + 0.1 * (t % 3) as f64 / 3.0 } else { 0.05 + 0.1 * (t % 3) as f64 / 3.0 };
            token(t % 4, t + 1, c)
        })
        .collect()
}

pub fn random_stream(len: usize, seed: u64) -> Vec<KnowledgeToken> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|t| token(t % 4, t + 1, rng.random())).collect()
}

/// Mean fidelity left in memory after one token arrives per round.
pub fn retained_fidelity(
    stream: &[KnowledgeToken],
    budget: usize,
    fifo: bool,
    recency_weight: f64,
) -> crate::Result<f64> {
    let mut mem = TokenMemory::new(budget);
    for t in stream {
        let incoming = vec![HeldToken::direct(t.clone())];
        mem = if fifo {
            let mut m = mem;
            for h in incoming {
                m.insert(h);
            }
            fifo_prune(m)
        } else {
            merge_and_prune(mem, incoming, t.round, recency_weight)?
        };
    }
    Ok(mem.mean_fidelity())
}

fn memory_budget() -> Check {
    let mut worst = 0usize;
    for b in [1, 4, 8] {
        let mut mem = TokenMemory::new(b);
        for t in random_stream(40, b as u64) {
            let round = t.round;
            match merge_and_prune(mem, vec![HeldToken::direct(t)], round, 0.1) {
                Ok(m) => mem = m,
                Err(e) => return failed("token.memory_within_budget", e),
            }
            worst = worst.max(mem.len().saturating_sub(b));
        }
    }
    check("token.memory_within_budget", worst == 0, format!("max overshoot {worst}"))
}

fn pruning_dominance() -> Check {
    let s = adversarial_stream(32);
    match (retained_fidelity(&s, 8, false, 0.1), retained_fidelity(&s, 8, true, 0.1)) {
        (Ok(a), Ok(f)) => {
            check("token.pruning_beats_fifo", a - f >= 0.2, format!("fidelity-aware {a:.4}, fifo {f:.4}"))
        }
        (Err(e), _) | (_, Err(e)) => failed("token.pruning_beats_fifo", e),
    }
}

fn spectral_values() -> Check {
    let cases: [(&str, crate::Result<CommGraph>, f64); 3] = [
        ("K4", build_graph(&GraphKind::Complete, 4, 0), 4.0),
        ("P2", CommGraph::from_edges(2, [(0, 1)]), 2.0),
        ("ring5", build_graph(&GraphKind::Ring, 5, 0), 2.0 - 2.0 * (2.0 * std::f64::consts::PI / 5.0).cos()),
    ];
    let mut worst = 0.0f64;
    for (name, g, want) in cases {
        let r = g.and_then(|g| spectral_gap_check(&g));
        match r {
            Ok(c) => worst = worst.max((c.lambda2 - want).abs()).max(c.residual),
            Err(e) => return failed("graph.spectral_values", format!("{name}: {e}")),
        }
    }
    check("graph.spectral_values", worst < 1e-8, format!("max error {worst:.3e}"))
}

fn mixing_stochastic() -> Check {
    let mut worst = 0.0f64;
    let mut local = true;
    for kind in [GraphKind::Ring, GraphKind::Complete, GraphKind::Path, GraphKind::RandomGeometric { radius: 0.6 }] {
        let g = match build_graph(&kind, 6, 3) {
            Ok(g) => g,
            Err(e) => return failed("graph.mixing_doubly_stochastic", e),
        };
        let m = g.mixing();
        for i in 0..6 {
            worst = worst.max((m.row(i).sum() - 1.0).abs()).max((m.column(i).sum() - 1.0).abs());
            for j in 0..6 {
                if m[(i, j)] > 0.0 && i != j && !g.neighbors(i).contains(&j) {
                    local = false;
                }
            }
        }
    }
    check(
        "graph.mixing_doubly_stochastic",
        worst < 1e-12 && local,
        format!("max row/col error {worst:.3e}, local {local}"),
    )
}

/// A random memory of up to `max_len` tokens over `dim`-dimensional embeddings.
pub fn random_memory<R: Rng>(rng: &mut R, dim: usize, max_len: usize) -> (TokenMemory, Vec<f64>) {
    let n = rng.random_range(0..=max_len);
    let mut mem = TokenMemory::new(max_len.max(1));
    for k in 0..n {
        let c: f64 = rng.random();
        let mut t = token(k % 4, k + 1, c);
        t.signal = if rng.random_bool(0.5) { Signal::Success } else { Signal::Fail };
        t.embedding = (0..dim).map(|_| rng.random()).collect();
        mem.insert(HeldToken { via: k % 4, token: t });
    }
    let weights = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
    (mem, weights)
}

/// Violations of `G ≥ G̃`, `Λ ≥ Λ̃` and the score identity over `trials`.
pub fn compression_gap_violations(trials: usize, seed: u64) -> crate::Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap = 0;
    let mut identity = 0;
    for _ in 0..trials {
        let dim = rng.random_range(1..=4);
        let (mem, weights) = random_memory(&mut rng, dim, 12);
        let theta: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let params = ReasoningParams { beta: 2.0, lambda: 1.0, gamma: 1.5, sim_bandwidth: rng.random_range(0.05..1.0) };
        let full = social_terms(&theta, &mem, &weights, &params, false)?;
        let deg = social_terms(&theta, &mem, &weights, &params, true)?;
        if full.attract - deg.attract < 0.0 || full.avoid - deg.avoid < 0.0 {
            gap += 1;
        }
        let post = Posterior { mean: rng.random_range(-1.0..1.0), stddev: rng.random() };
        let s = combine(post, full, &params, None);
        if s.total != s.mean_term + s.explore_term + s.attract_term - s.avoid_term {
            identity += 1;
        }
    }
    Ok((gap, identity))
}

fn score_identity_and_gap(trials: usize) -> Check {
    match compression_gap_violations(trials, 5) {
        Ok((g, i)) => check(
            "reasoning.compression_gap_nonnegative",
            g == 0 && i == 0,
            format!("{trials} configurations, {g} gap violations, {i} identity violations"),
        ),
        Err(e) => failed("reasoning.compression_gap_nonnegative", e),
    }
}

fn lm_bounds() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let model = LmErrorModel { bias_amplitude: 0.4, bias_field_seed: seed, ..LmErrorModel::default() };
        let field = BiasField::new(&model, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..500 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            worst = worst.max(field.eval(&x).abs() - 0.4);
        }
    }
    let model = LmErrorModel::default();
    let mut mem = TokenMemory::new(4);
    mem.insert(HeldToken::direct(token(1, 1, 0.8)));
    let want = model.sigma0.powi(2) / (1.0 + model.alpha_sigma * 0.8 * fidelity_estimate(0.8).unwrap_or(f64::NAN));
    let formula = (lm_noise_variance(&mem, &model) - want).abs();
    check(
        "lm.bias_bounded_and_noise_formula",
        worst <= 1e-12 && formula < 1e-15,
        format!("bias overshoot {worst:.3e}, noise formula error {formula:.3e}"),
    )
}

fn small_config(method: Method, seed: u64) -> RunConfig {
    let spec = ObjectiveSpec::SyntheticGp {
        dim: 2,
        steps: 8,
        lengthscale: 0.3,
        signal_variance: 1.0,
        correlation: 0.7,
        noise_std: 0.05,
    };
    let mut c = RunConfig::new(method, 3, 8, 2, seed, spec);
    c.budget = 4;
    c
}

fn run_accounting() -> Check {
    let methods = [
        Method::Adko,
        Method::AdkoLm,
        Method::AdkoFifo,
        Method::NaiveSharing,
        Method::Independent,
        Method::Centralized,
    ];
    for m in methods {
        let cfg = small_config(m, 4);
        let log = match run(&cfg) {
            Ok(l) => l,
            Err(e) => return failed("runtime.round_accounting", format!("{m}: {e}")),
        };
        let rows_ok = log.records.len() == cfg.n_agents * cfg.rounds;
        let budget_ok = log.records.iter().all(|r| r.memory_size <= cfg.budget && r.tokens_sent <= 1);
        let regret_ok = (log.recompute_cumulative_regret() - log.cumulative_regret).abs() < 1e-9
            && log.records.iter().all(|r| r.simple_regret >= 0.0);
        if !(rows_ok && budget_ok && regret_ok) {
            return check(
                "runtime.round_accounting",
                false,
                format!("{m}: rows {rows_ok}, budget {budget_ok}, regret {regret_ok}"),
            );
        }
    }
    check("runtime.round_accounting", true, "all methods")
}

/// Records of a run serialized as CSV bytes.
pub fn csv_bytes(cfg: &RunConfig) -> crate::Result<Vec<u8>> {
    let log = run(cfg)?;
    let mut buf = Vec::new();
    write_records_csv(&log.records, &mut buf)?;
    Ok(buf)
}

fn run_determinism() -> Check {
    let cfg = small_config(Method::AdkoLm, 9);
    match (csv_bytes(&cfg), csv_bytes(&cfg)) {
        (Ok(a), Ok(b)) => check("runtime.deterministic_csv", a == b, format!("{} bytes", a.len())),
        (Err(e), _) | (_, Err(e)) => failed("runtime.deterministic_csv", e),
    }
}

fn mc_fidelity() -> Check {
    let post = Posterior { mean: 0.0, stddev: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let at = |b: f64, rng: &mut ChaCha8Rng| true_fidelity_mc(post, b, 200_000, rng);
    let r = (|| -> crate::Result<(Vec<f64>, f64)> {
        let sweep = [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|b| at(*b, &mut rng).map(|e| e.value))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok((sweep, at(5.0, &mut rng)?.value))
    })();
    match r {
        Ok((sweep, far)) => {
            let min_at_mean = sweep.iter().cloned().fold(f64::INFINITY, f64::min) >= sweep[2] - 0.01;
            check("token.mc_fidelity_diagnostic", min_at_mean && far > 0.95, format!("sweep {sweep:.3?}, far {far:.3}"))
        }
        Err(e) => failed("token.mc_fidelity_diagnostic", e),
    }
}

/// Paired final regrets of `methods` on one shared world per seed.
pub fn paired_regrets(base: impl Fn(u64) -> RunConfig, methods: &[Method], seeds: u64) -> crate::Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); methods.len()];
    for seed in 0..seeds {
        let cfg = base(seed);
        let world = World::build(&cfg)?;
        for (k, m) in methods.iter().enumerate() {
            let mut c = cfg.clone();
            c.method = *m;
            out[k].push(run_in(&c, &world, None)?.cumulative_regret);
        }
    }
    Ok(out)
}

fn collaboration_ordering() -> Check {
    let methods = [Method::Centralized, Method::Adko, Method::Independent];
    let r = paired_regrets(|s| scenarios::collaboration(Method::Adko, s), &methods, 20).and_then(|v| {
        let a = bootstrap_diff_ci(&v[1], &v[0], 1000)?;
        let b = bootstrap_diff_ci(&v[2], &v[1], 1000)?;
        Ok((v, a, b))
    });
    match r {
        Ok((v, a, b)) => {
            let (c, d, i) = (mean(&v[0]), mean(&v[1]), mean(&v[2]));
            let ok = d - c > a.half_width() && i - d > b.half_width();
            check(
                "runtime.collaboration_ordering",
                ok,
                format!(
                    "CENTRALIZED {c:.2}, ADKO {d:.2}, INDEPENDENT {i:.2}; half-widths {:.2}, {:.2}",
                    a.half_width(),
                    b.half_width()
                ),
            )
        }
        Err(e) => failed("runtime.collaboration_ordering", e),
    }
}

/// Experiment configurations used by the full suite and the acceptance tests.
pub mod scenarios {
    use super::*;

    fn tuned(mut c: RunConfig) -> RunConfig {
        c.pool_size = None;
        c.gp.lengthscale = Some(0.2);
        c.gp.noise_variance = 0.0025;
        c.reasoning.sim_bandwidth = Some(0.15);
        c.graph = GraphKind::Complete;
        c
    }

    /// Four agents on a 24×24 grid with ρ = 0.7, T = 60.
    pub fn collaboration(method: Method, seed: u64) -> RunConfig {
        let spec = ObjectiveSpec::SyntheticGp {
            dim: 2,
            steps: 24,
            lengthscale: 0.2,
            signal_variance: 1.0,
            correlation: 0.7,
            noise_std: 0.05,
        };
        tuned(RunConfig::new(method, 4, 60, 3, seed, spec))
    }

    pub fn biased_prior(amplitude: f64, seed: u64) -> RunConfig {
        let spec = ObjectiveSpec::BiasedPrior {
            dim: 2,
            steps: 24,
            lengthscale: 0.2,
            signal_variance: 1.0,
            noise_std: 0.05,
            bias_amplitude: amplitude,
        };
        let mut c = tuned(RunConfig::new(Method::AdkoLm, 4, 60, 3, seed, spec));
        c.pool_size = Some(20);
        c
    }

    pub fn boundary_optimum(method: Method, seed: u64) -> RunConfig {
        let spec = ObjectiveSpec::BoundaryOptimum {
            dim: 2,
            steps: 24,
            lengthscale: 0.2,
            signal_variance: 1.0,
            noise_std: 0.05,
        };
        tuned(RunConfig::new(method, 4, 60, 3, seed, spec))
    }

    pub fn coupling_table_path() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic_coupling.csv")
    }

    /// One solvent per agent on the shipped categorical table.
    pub fn coupling_table(method: Method, seed: u64) -> RunConfig {
        let spec = ObjectiveSpec::Table {
            path: coupling_table_path(),
            objective_column: "yield".into(),
            restriction: Some(Restriction { column: "solvent".into(), assign: None }),
            noise_std: 0.0,
        };
        let mut c = RunConfig::new(method, 4, 60, 3, seed, spec);
        c.graph = GraphKind::Complete;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corrupted(r: f64) -> f64 {
        let s = 2.3 * r;
        (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
    }

    #[test]
    fn fast_suite_passes() {
        let checks = run_checks(Level::Fast, &Hooks::default());
        let bad: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn corrupted_kernel_is_named() {
        let checks = run_checks(Level::Fast, &Hooks { kernel_profile: corrupted });
        let bad: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(bad, vec!["gp.kernel_reference_values"]);
    }

    #[test]
    fn retention_on_adversarial_stream() {
        let s = adversarial_stream(32);
        let fifo = retained_fidelity(&s, 8, true, 0.1).unwrap();
        let aware = retained_fidelity(&s, 8, false, 0.1).unwrap();
        assert!(aware > fifo);
    }
}
