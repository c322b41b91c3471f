//! The synchronous multi-agent loop and the comparison baselines.
//!
//! Each post-warm-up round runs, per agent: aggregate and prune, propose,
//! score, select, evaluate, encode, broadcast, refit. Tokens broadcast in
//! round `t` are delivered at the barrier and merged at the start of `t + 1`.

mod agent;
mod centralized;
mod config;

pub use agent::{candidate_pool, warmup_points, AgentState};
pub use config::{BaselineConfig, GpConfig, Method, ObjectiveSpec, ReasoningConfig, Restriction, RunConfig};

use std::collections::BTreeSet;

use crate::bench::{
    evaluate, global_optimum, load_table, lower_bound_instance, sample_synthetic, GlobalObjective, LowerBoundKind,
    ObjectiveFamily,
};
use crate::error::{AdkoError, Result};
use crate::gp::KernelParams;
use crate::graph::{build_graph, deliver, CommGraph};
use crate::lm::{lm_noise_variance, synthetic_adjust, BiasField, ExternalLm, LmBackend, LmErrorModel, ProposeContext};
use crate::metrics::{cumulative_regret, first_hits, simple_regret, RoundRecord, RunLog};
use crate::reasoning::{argmax, reasoning_score, ReasoningParams, ScoreBreakdown};
use crate::rng::{substream, tag};
use crate::space::{DesignPoint, DesignSpace};
use crate::token::{
    encode_token, fifo_prune, merge_and_prune, prune_score, BaselineMode, BaselineState, HeldToken, KnowledgeToken,
    TokenMemory,
};

use agent::median_heuristic;

/// Objective, optimum and topology shared by every method run on one seed.
#[derive(Clone, Debug)]
pub struct World {
    pub family: ObjectiveFamily,
    pub global: GlobalObjective,
    pub graph: CommGraph,
    /// Fixed baseline imposed by the instance, overriding the config.
    pub baseline_value: Option<f64>,
    pub lm: LmErrorModel,
}

impl World {
    pub fn build(cfg: &RunConfig) -> Result<World> {
        let oseed = cfg.objective_seed();
        let grid = |dim: usize, steps: usize, ls: f64, sv: f64| -> Result<(DesignSpace, KernelParams)> {
            Ok((DesignSpace::unit_grid(dim, steps)?, KernelParams::isotropic(dim, ls, sv, 1e-6)?))
        };
        let mut lm = cfg.lm.clone();
        let mut baseline_value = None;
        let family = match &cfg.objective {
            ObjectiveSpec::SyntheticGp { dim, steps, lengthscale, signal_variance, correlation, noise_std } => {
                let (s, p) = grid(*dim, *steps, *lengthscale, *signal_variance)?;
                sample_synthetic(&s, &p, *correlation, cfg.n_agents, *noise_std, oseed)?
            }
            ObjectiveSpec::Table { path, objective_column, restriction, noise_std } => {
                let base = load_table(path, objective_column, None)?;
                let mut fam = match restriction {
                    Some(r) => {
                        let levels = match &r.assign {
                            Some(a) => a.clone(),
                            None => base
                                .levels(&r.column)
                                .ok_or_else(|| {
                                    AdkoError::Config(format!("restriction column `{}` not found", r.column))
                                })?
                                .to_vec(),
                        };
                        if levels.len() != cfg.n_agents {
                            return Err(AdkoError::Config(format!(
                                "objective.restriction: {} levels for {} agents",
                                levels.len(),
                                cfg.n_agents
                            )));
                        }
                        base.restrict(&r.column, &levels)?
                    }
                    None => base.replicate(cfg.n_agents)?,
                };
                fam.noise_std = *noise_std;
                fam
            }
            ObjectiveSpec::BoundaryOptimum { dim, steps, lengthscale, signal_variance, noise_std } => {
                let (s, p) = grid(*dim, *steps, *lengthscale, *signal_variance)?;
                let lb = lower_bound_instance(
                    LowerBoundKind::BoundaryOptimum,
                    &s,
                    &p,
                    cfg.n_agents,
                    *noise_std,
                    0.0,
                    oseed,
                )?;
                baseline_value = lb.baseline;
                lb.family
            }
            ObjectiveSpec::BiasedPrior { dim, steps, lengthscale, signal_variance, noise_std, bias_amplitude } => {
                let (s, p) = grid(*dim, *steps, *lengthscale, *signal_variance)?;
                let lb = lower_bound_instance(
                    LowerBoundKind::BiasedPrior,
                    &s,
                    &p,
                    cfg.n_agents,
                    *noise_std,
                    *bias_amplitude,
                    oseed,
                )?;
                let inst = lb.lm.expect("biased instance carries a model");
                lm.bias_amplitude = inst.bias_amplitude;
                lm.bias_shape = inst.bias_shape;
                lm.bias_field_seed = inst.bias_field_seed;
                lb.family
            }
        };
        let global = global_optimum(&family, &cfg.aggregator)?;
        let graph = build_graph(&cfg.graph, cfg.n_agents, cfg.seed)?;
        Ok(World { family, global, graph, baseline_value, lm })
    }

    pub fn space(&self) -> &DesignSpace {
        &self.family.space
    }

    /// Global regret, or the agent's own restricted regret when agents see
    /// different feasible subsets.
    pub fn regret(&self, agent: usize, p: DesignPoint) -> f64 {
        if self.family.is_restricted() {
            let (_, best) = self.family.restricted_optimum(agent);
            (best - self.family.value(agent, p)).max(0.0)
        } else {
            simple_regret(&self.global, p)
        }
    }

    /// The agent's `k` best feasible points under the regret objective.
    pub fn top_k(&self, agent: usize, k: usize) -> Vec<DesignPoint> {
        if self.family.is_restricted() {
            return self.family.top_k(agent, k);
        }
        let mut pts = self.family.feasible_points(agent);
        let v = &self.global.values;
        pts.sort_by(|a, b| v[b.0].total_cmp(&v[a.0]).then(a.cmp(b)));
        pts.truncate(k);
        pts
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunLog> {
    run_with_lm(cfg, None)
}

/// As [`run`], routing model calls through an external adapter when given.
pub fn run_with_lm(cfg: &RunConfig, external: Option<ExternalLm>) -> Result<RunLog> {
    cfg.validate()?;
    let world = World::build(cfg)?;
    run_in(cfg, &world, external)
}

/// Run on a prepared world; the world must come from a config with the
/// same objective, agent count and topology.
pub fn run_in(cfg: &RunConfig, world: &World, external: Option<ExternalLm>) -> Result<RunLog> {
    cfg.validate()?;
    if world.family.n_agents() != cfg.n_agents || world.graph.n() != cfg.n_agents {
        return Err(AdkoError::Config("world does not match n_agents".into()));
    }
    match cfg.method {
        Method::Centralized => centralized::run(cfg, world),
        _ => run_decentralized(cfg, world, external),
    }
}

fn initial_baseline(cfg: &RunConfig, world: &World) -> BaselineState {
    match (world.baseline_value, cfg.baseline.mode) {
        (Some(v), _) => BaselineState::fixed(v),
        (None, BaselineMode::Fixed) => BaselineState::fixed(cfg.baseline.value),
        (None, BaselineMode::RunningMedian) => BaselineState::running_median(),
    }
}

pub(crate) fn new_agents(cfg: &RunConfig, world: &World) -> Vec<AgentState> {
    (0..cfg.n_agents)
        .map(|i| {
            AgentState::new(
                i,
                world.family.feasible_points(i),
                world.space().size(),
                cfg.budget,
                initial_baseline(cfg, world),
            )
        })
        .collect()
}

pub(crate) struct Recorder<'a> {
    pub cfg: &'a RunConfig,
    pub world: &'a World,
    pub records: Vec<RoundRecord>,
}

impl Recorder<'_> {
    pub(crate) fn base(&self, agent: usize, round: usize, theta: DesignPoint, y: f64) -> RoundRecord {
        RoundRecord {
            run_id: format!("{}_{}", self.cfg.method, self.cfg.seed),
            method: self.cfg.method,
            seed: self.cfg.seed,
            agent,
            round,
            theta: theta.0,
            y,
            simple_regret: self.world.regret(agent, theta),
            tokens_sent: 0,
            bytes_sent: 0,
            memory_size: 0,
            memory_mean_fidelity: f64::NAN,
            signal: None,
            advantage: f64::NAN,
            mean_term: f64::NAN,
            explore_term: f64::NAN,
            attract_term: f64::NAN,
            avoid_term: f64::NAN,
            lm_noise_var: f64::NAN,
            lm_fallback: false,
        }
    }
}

/// Uniform warm-up evaluations; returns each agent's warm-up design.
pub(crate) fn warm_up(
    cfg: &RunConfig,
    world: &World,
    agents: &mut [AgentState],
    rec: &mut Recorder<'_>,
) -> Result<Vec<Vec<DesignPoint>>> {
    let designs: Vec<Vec<DesignPoint>> = agents
        .iter()
        .map(|a| warmup_points(&a.feasible, cfg.warmup_rounds, &mut substream(cfg.seed, &[tag::WARMUP, a.id as u64])))
        .collect();
    for r in 1..=cfg.warmup_rounds {
        for a in agents.iter_mut() {
            let Some(&p) = designs[a.id].get(r - 1) else { continue };
            let y =
                evaluate(&world.family, a.id, p, &mut eval_rng(cfg, a.id, r)).map_err(|e| e.at(a.id, r, "evaluate"))?;
            a.observe(p, y);
            rec.records.push(rec.base(a.id, r, p, y));
        }
    }
    Ok(designs)
}

pub(crate) fn eval_rng(cfg: &RunConfig, agent: usize, round: usize) -> crate::rng::StreamRng {
    substream(cfg.seed, &[tag::EVAL_NOISE, agent as u64, round as u64])
}

pub(crate) fn pool_rng(cfg: &RunConfig, agent: usize, round: usize) -> crate::rng::StreamRng {
    substream(cfg.seed, &[tag::POOL, agent as u64, round as u64])
}

pub(crate) fn kernel_for(cfg: &RunConfig, space: &DesignSpace, design: &[DesignPoint]) -> Result<(KernelParams, f64)> {
    let median = median_heuristic(space, design);
    let ls = cfg.gp.lengthscale.unwrap_or(median);
    let k = KernelParams::isotropic(space.ndim(), ls, cfg.gp.signal_variance, cfg.gp.noise_variance)?;
    Ok((k, median))
}

pub(crate) fn finish(cfg: &RunConfig, world: &World, records: Vec<RoundRecord>, completed: bool) -> RunLog {
    let tops: Vec<Vec<DesignPoint>> = (0..cfg.n_agents).map(|i| world.top_k(i, cfg.hit_top_k)).collect();
    RunLog {
        config: cfg.clone(),
        cumulative_regret: cumulative_regret(&records),
        hit_rounds: first_hits(&records, &tops),
        records,
        completed,
        messages: Vec::new(),
        lm_events: Vec::new(),
        degrees: (0..cfg.n_agents).map(|i| world.graph.degree(i)).collect(),
        fiedler: world.graph.fiedler(),
    }
}

fn merge(memory: &mut TokenMemory, incoming: Vec<HeldToken>, now: usize, cfg: &RunConfig) -> Result<()> {
    let taken = std::mem::replace(memory, TokenMemory::new(memory.budget()));
    *memory = if cfg.method == Method::AdkoFifo {
        let mut m = taken;
        for h in incoming {
            m.insert(h);
        }
        fifo_prune(m)
    } else {
        merge_and_prune(taken, incoming, now, cfg.recency_weight)?
    };
    Ok(())
}

fn run_decentralized(cfg: &RunConfig, world: &World, external: Option<ExternalLm>) -> Result<RunLog> {
    let n = cfg.n_agents;
    let space = world.space();
    let method = cfg.method;
    let shares = method.shares_tokens();
    let degraded = method != Method::NaiveSharing;
    let mut agents = new_agents(cfg, world);
    let mut rec = Recorder { cfg, world, records: Vec::new() };
    let designs = warm_up(cfg, world, &mut agents, &mut rec)?;

    for a in agents.iter_mut() {
        let (kernel, median) = kernel_for(cfg, space, &designs[a.id])?;
        a.kernel = kernel;
        a.reasoning = cfg.reasoning.params(median);
        if method == Method::NaiveSharing {
            a.reasoning.gamma = 0.0;
        }
        a.reasoning.validate()?;
        let w = a.dataset.values().to_vec();
        a.baseline.initialize(&w);
        a.refit(space, cfg.gp.standardize).map_err(|e| e.at(a.id, cfg.warmup_rounds, "refit"))?;
    }

    let weights: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| world.graph.mixing()[(i, j)]).collect()).collect();
    let mut lm = (method == Method::AdkoLm).then(|| match external {
        Some(e) => LmBackend::with_external(world.lm.clone(), e),
        None => LmBackend::synthetic(world.lm.clone()),
    });
    let field = BiasField::new(&world.lm, space.ndim());
    let mut inbox: Vec<Vec<HeldToken>> = vec![Vec::new(); n];
    let mut relayed: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n];
    let mut messages = Vec::new();
    let mut completed = true;

    for t in cfg.warmup_rounds + 1..=cfg.rounds {
        if agents.iter().any(|a| a.available().is_empty()) {
            completed = false;
            break;
        }
        let mut outbox: Vec<Vec<KnowledgeToken>> = vec![Vec::new(); n];
        for a in agents.iter_mut() {
            let i = a.id;
            let at = |step: &'static str| move |e: AdkoError| e.at(i, t, step);

            // Aggregate and prune.
            if shares {
                merge(&mut a.memory, std::mem::take(&mut inbox[i]), t, cfg).map_err(at("aggregate"))?;
            }

            // Propose.
            let available = a.available();
            let mut fallback = false;
            let proposals = match lm.as_mut() {
                Some(backend) => {
                    let ctx = ProposeContext {
                        space,
                        available: &available,
                        history: &a.dataset,
                        memory: &a.memory,
                        weights: &weights[i],
                        reasoning: &a.reasoning,
                        field: &field,
                        m: cfg.m,
                        agent: i,
                        round: t,
                    };
                    let mut r = substream(cfg.seed, &[tag::LM_PROPOSE, i as u64, t as u64]);
                    let (p, fb) = backend.propose(&ctx, &mut r).map_err(at("propose"))?;
                    fallback = fb;
                    Some(p.candidates)
                }
                None => None,
            };
            let pool = candidate_pool(
                space,
                &available,
                a.best_so_far.map(|b| b.0),
                proposals.as_deref(),
                cfg.pool_size,
                cfg.perturb_radius,
                &mut pool_rng(cfg, i, t),
            )
            .map_err(at("propose"))?;

            // Score and select.
            let gp = a.gp.as_ref().expect("fitted after warm-up");
            let lm_var = lm.as_ref().map(|b| lm_noise_variance(&a.memory, &b.model));
            let mut noise_rng = substream(cfg.seed, &[tag::LM_NOISE, i as u64, t as u64]);
            let mut scores: Vec<ScoreBreakdown> = Vec::with_capacity(pool.len());
            for &p in &pool {
                let x = space.embed(p);
                let adj = lm.as_ref().map(|b| synthetic_adjust(&x, &a.memory, &b.model, &field, &mut noise_rng));
                scores.push(
                    reasoning_score(&x, gp, &a.memory, &weights[i], &a.reasoning, degraded, adj)
                        .map_err(at("score"))?,
                );
            }
            let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
            let k = argmax(&totals).map_err(at("select"))?;
            let (theta, breakdown) = (pool[k], scores[k]);

            // Evaluate.
            let y = evaluate(&world.family, i, theta, &mut eval_rng(cfg, i, t)).map_err(at("evaluate"))?;

            // Encode.
            let (signal, advantage) = a.baseline.clone().assess(y).map_err(at("encode"))?;
            let mut token = None;
            if shares {
                let insight = match lm.as_mut() {
                    Some(b) => {
                        let (text, fb) = b.encode_insight(space, theta, signal, advantage, i, t);
                        fallback |= fb;
                        Some(text)
                    }
                    None => None,
                };
                let mut prng = substream(cfg.seed, &[tag::PRIVACY, i as u64, t as u64]);
                let tok = encode_token(&space.embed(theta), y, &mut a.baseline, &cfg.privacy, insight, i, t, &mut prng)
                    .map_err(at("encode"))?;
                merge(&mut a.memory, vec![HeldToken::direct(tok.clone())], t, cfg).map_err(at("encode"))?;
                token = Some(tok);
            } else {
                a.baseline.assess(y).map_err(at("encode"))?;
            }
            a.baseline.record(y);
            a.observe(theta, y);

            // Broadcast.
            let mut r = rec.base(i, t, theta, y);
            if let Some(own) = token {
                let send = if cfg.relay { relay_choice(own, &a.memory, i, t, cfg, &mut relayed[i]) } else { own };
                let wire = send.to_wire();
                r.tokens_sent = 1;
                r.bytes_sent = wire.len();
                messages.push(wire);
                outbox[i].push(send);
            }

            // Refit.
            a.refit(space, cfg.gp.standardize).map_err(at("refit"))?;

            r.memory_size = a.memory.len();
            r.memory_mean_fidelity = if shares { a.memory.mean_fidelity() } else { f64::NAN };
            r.signal = Some(signal);
            r.advantage = advantage;
            r.mean_term = breakdown.mean_term;
            r.explore_term = breakdown.explore_term;
            r.attract_term = breakdown.attract_term;
            r.avoid_term = breakdown.avoid_term;
            r.lm_noise_var = lm_var.unwrap_or(f64::NAN);
            r.lm_fallback = fallback;
            rec.records.push(r);
        }
        if shares {
            inbox = deliver(&world.graph, &outbox, t)?;
        }
    }

    let mut log = finish(cfg, world, rec.records, completed);
    log.messages = messages;
    if let Some(mut b) = lm {
        log.lm_events = b.take_events();
    }
    Ok(log)
}

/// Own token, unless a foreign token not yet forwarded outranks it.
fn relay_choice(
    own: KnowledgeToken,
    memory: &TokenMemory,
    me: usize,
    now: usize,
    cfg: &RunConfig,
    relayed: &mut BTreeSet<(usize, usize)>,
) -> KnowledgeToken {
    let own_score = prune_score(&own, now, cfg.recency_weight);
    let best = memory
        .tokens()
        .filter(|t| t.agent != me && !relayed.contains(&t.id()))
        .map(|t| (prune_score(t, now, cfg.recency_weight), t))
        .filter(|(s, _)| *s > own_score)
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.id().cmp(&a.1.id())));
    match best {
        Some((_, t)) => {
            relayed.insert(t.id());
            t.clone()
        }
        None => own,
    }
}

/// Reasoning parameters with social terms switched off.
pub fn gp_ucb_params(beta: f64, bandwidth: f64) -> ReasoningParams {
    ReasoningParams { beta, lambda: 0.0, gamma: 0.0, sim_bandwidth: bandwidth }
}

#[cfg(test)]
mod pipeline_tests;
