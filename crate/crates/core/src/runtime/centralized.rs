//! Pooled-data ceiling: one GP over every agent's raw observations.
//!
//! Agents select in id order within a round. Each selection is conditioned
//! on the earlier ones through a kriging-believer update, which leaves the
//! posterior mean unchanged and shrinks the variance by rank-one terms.

use std::collections::BTreeMap;

use super::agent::fit_surrogate;
use super::{eval_rng, finish, kernel_for, new_agents, pool_rng, warm_up, ObjectiveSpec, Recorder, RunConfig, World};
use crate::bench::evaluate;
use crate::error::{AdkoError, Result};
use crate::gp::{matern52, Dataset, Posterior};
use crate::metrics::RunLog;
use crate::reasoning::{argmax, combine, SocialTerms};
use crate::runtime::candidate_pool;
use crate::space::DesignPoint;

/// Variance of `f_i − F` for exchangeable correlated draws under the mean
/// aggregate; the pooled model treats it as observation noise.
fn heterogeneity_variance(cfg: &RunConfig, world: &World) -> f64 {
    let n = cfg.n_agents as f64;
    match (world.family.correlation, &cfg.objective) {
        (
            Some(rho),
            ObjectiveSpec::SyntheticGp { signal_variance, .. } | ObjectiveSpec::BiasedPrior { signal_variance, .. },
        ) => {
            let scale = if cfg.gp.standardize { 1.0 } else { *signal_variance };
            (1.0 - rho) * (1.0 - 1.0 / n) * scale
        }
        _ => 0.0,
    }
}

pub(super) fn run(cfg: &RunConfig, world: &World) -> Result<RunLog> {
    let space = world.space();
    let mut agents = new_agents(cfg, world);
    let mut rec = Recorder { cfg, world, records: Vec::new() };
    let designs = warm_up(cfg, world, &mut agents, &mut rec)?;
    let all_warm: Vec<DesignPoint> = designs.iter().flatten().copied().collect();
    let (mut kernel, median) = kernel_for(cfg, space, &all_warm)?;
    kernel.noise_variance += heterogeneity_variance(cfg, world);
    let mut params = cfg.reasoning.params(median);
    params.lambda = 0.0;
    params.gamma = 0.0;

    let mut pooled = Dataset::new();
    for r in &rec.records {
        pooled.push(DesignPoint(r.theta), r.y);
    }
    let mut gp =
        fit_surrogate(space, &pooled, &kernel, cfg.gp.standardize).map_err(|e| e.at(0, cfg.warmup_rounds, "refit"))?;
    let mut completed = true;

    for t in cfg.warmup_rounds + 1..=cfg.rounds {
        if agents.iter().any(|a| a.available().is_empty()) {
            completed = false;
            break;
        }
        let mut pools = Vec::with_capacity(agents.len());
        for a in &agents {
            let pool = candidate_pool(
                space,
                &a.available(),
                a.best_so_far.map(|b| b.0),
                None,
                cfg.pool_size,
                cfg.perturb_radius,
                &mut pool_rng(cfg, a.id, t),
            )
            .map_err(|e| e.at(a.id, t, "propose"))?;
            pools.push(pool);
        }

        // Posterior and whitened cross-covariances on the union of pools.
        let mut index: BTreeMap<DesignPoint, usize> = BTreeMap::new();
        for p in pools.iter().flatten() {
            let next = index.len();
            index.entry(*p).or_insert(next);
        }
        let mut pts = vec![DesignPoint(0); index.len()];
        for (p, k) in &index {
            pts[*k] = *p;
        }
        let xs: Vec<Vec<f64>> = pts.iter().map(|p| space.embed(*p)).collect();
        let mut post = Vec::with_capacity(pts.len());
        let mut whitened = Vec::with_capacity(pts.len());
        for x in &xs {
            let (p, v) = gp.predict_whitened(x).map_err(|e| e.at(0, t, "score"))?;
            post.push(p);
            whitened.push(v);
        }
        let prior = kernel.signal_variance;
        let base_var: Vec<f64> = whitened.iter().map(|v| (prior - v.dot(v)).max(0.0)).collect();
        let mut updates: Vec<Vec<f64>> = Vec::new();

        let mut choices = Vec::with_capacity(agents.len());
        for (a, pool) in agents.iter().zip(&pools) {
            let at = |e: AdkoError| e.at(a.id, t, "select");
            let scores: Vec<_> = pool
                .iter()
                .map(|p| {
                    let q = index[p];
                    let stddev = if updates.is_empty() {
                        post[q].stddev
                    } else {
                        (base_var[q] - updates.iter().map(|u| u[q] * u[q]).sum::<f64>()).max(0.0).sqrt()
                    };
                    combine(Posterior { mean: post[q].mean, stddev }, SocialTerms::default(), &params, None)
                })
                .collect();
            let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
            let k = argmax(&totals).map_err(at)?;
            let theta = pool[k];
            choices.push((theta, scores[k]));

            // Condition on a believed observation at `theta`.
            let c = index[&theta];
            let mut cov = Vec::with_capacity(pts.len());
            for q in 0..pts.len() {
                let mut v = matern52(&xs[q], &xs[c], &kernel).map_err(at)? - whitened[q].dot(&whitened[c]);
                for u in &updates {
                    v -= u[q] * u[c];
                }
                cov.push(v);
            }
            let denom = (cov[c].max(0.0) + kernel.noise_variance).sqrt();
            updates.push(cov.iter().map(|v| v / denom).collect());
        }

        for (a, (theta, breakdown)) in agents.iter_mut().zip(choices) {
            let y = evaluate(&world.family, a.id, theta, &mut eval_rng(cfg, a.id, t))
                .map_err(|e| e.at(a.id, t, "evaluate"))?;
            a.observe(theta, y);
            pooled.push(theta, y);
            let mut r = rec.base(a.id, t, theta, y);
            r.mean_term = breakdown.mean_term;
            r.explore_term = breakdown.explore_term;
            r.attract_term = 0.0;
            r.avoid_term = 0.0;
            rec.records.push(r);
        }
        gp = fit_surrogate(space, &pooled, &kernel, cfg.gp.standardize).map_err(|e| e.at(0, t, "refit"))?;
    }
    Ok(finish(cfg, world, rec.records, completed))
}
