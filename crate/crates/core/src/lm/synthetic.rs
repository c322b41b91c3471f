use rand::seq::SliceRandom;
use rand::Rng;

use super::{LmProposal, ProposeContext};
use crate::error::{AdkoError, Result};
use crate::reasoning::{argmax, social_terms};
use crate::space::DesignPoint;
use crate::token::Signal;

const PERTURB_RADIUS: usize = 2;

/// Half the candidates are perturbations of the argmax of a bias-tilted
/// social surrogate, the rest are uniform over the available points.
pub fn synthetic_propose<R: Rng + ?Sized>(ctx: &ProposeContext<'_>, rng: &mut R) -> Result<LmProposal> {
    if ctx.available.is_empty() {
        return Err(AdkoError::EmptyCandidates);
    }
    let m = ctx.m.min(ctx.available.len());
    let mut surrogate = Vec::with_capacity(ctx.available.len());
    for &p in ctx.available {
        let x = ctx.space.embed(p);
        let s = social_terms(&x, ctx.memory, ctx.weights, ctx.reasoning, true)?;
        surrogate.push(ctx.reasoning.lambda * s.attract - ctx.reasoning.gamma * s.avoid + ctx.field.eval(&x));
    }
    let center = ctx.available[argmax(&surrogate)?];

    let mut chosen: Vec<DesignPoint> = Vec::with_capacity(m);
    let n_perturb = m / 2;
    if n_perturb > 0 {
        let mut local: Vec<DesignPoint> = std::iter::once(center)
            .chain(ctx.space.neighbors(center, PERTURB_RADIUS))
            .filter(|p| ctx.available.binary_search(p).is_ok())
            .collect();
        // The center itself always leads.
        local[1..].shuffle(rng);
        chosen.extend(local.into_iter().take(n_perturb));
    }
    let mut rest: Vec<DesignPoint> = ctx.available.iter().copied().filter(|p| !chosen.contains(p)).collect();
    let need = m - chosen.len();
    let (picked, _) = rest.partial_shuffle(rng, need);
    chosen.extend_from_slice(picked);
    Ok(LmProposal { candidates: chosen, rationales: None })
}

/// Short sentence keyed on signal and advantage bucket.
pub fn insight_template(signal: Signal, advantage: f64) -> &'static str {
    match (signal, advantage) {
        (_, c) if c < 0.3 => "near-baseline, uninformative",
        (Signal::Success, c) if c >= 0.9 => "strong success far above baseline",
        (Signal::Success, _) => "moderate success above baseline",
        (Signal::Fail, c) if c >= 0.9 => "strong failure far below baseline",
        (Signal::Fail, _) => "moderate failure below baseline",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Dataset;
    use crate::lm::{BiasField, LmErrorModel};
    use crate::reasoning::ReasoningParams;
    use crate::space::DesignSpace;
    use crate::token::TokenMemory;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx<'a>(
        space: &'a DesignSpace,
        available: &'a [DesignPoint],
        history: &'a Dataset,
        memory: &'a TokenMemory,
        reasoning: &'a ReasoningParams,
        field: &'a BiasField,
        m: usize,
    ) -> ProposeContext<'a> {
        ProposeContext { space, available, history, memory, weights: &[1.0], reasoning, field, m, agent: 0, round: 1 }
    }

    #[test]
    fn proposals_are_distinct_and_available() {
        let space = DesignSpace::unit_grid(2, 10).unwrap();
        let available: Vec<DesignPoint> = space.points().filter(|p| p.0 % 3 != 0).collect();
        let (h, mem, r) = (Dataset::new(), TokenMemory::new(4), ReasoningParams::default());
        let field = BiasField::new(&LmErrorModel { bias_amplitude: 0.3, ..Default::default() }, 2);
        for m in [1, 2, 5, 20, 500] {
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
            let out = synthetic_propose(&ctx(&space, &available, &h, &mem, &r, &field, m), &mut rng).unwrap();
            assert_eq!(out.candidates.len(), m.min(available.len()));
            let mut seen = out.candidates.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), out.candidates.len());
            assert!(out.candidates.iter().all(|p| available.binary_search(p).is_ok()));
        }
    }

    #[test]
    fn single_candidate_is_stable_for_a_seed() {
        let space = DesignSpace::unit_grid(1, 30).unwrap();
        let available: Vec<DesignPoint> = space.points().collect();
        let (h, mem, r) = (Dataset::new(), TokenMemory::new(4), ReasoningParams::default());
        let field = BiasField::new(&LmErrorModel::default(), 1);
        let c = ctx(&space, &available, &h, &mem, &r, &field, 1);
        let a = synthetic_propose(&c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = synthetic_propose(&c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.candidates.len(), 1);
    }

    #[test]
    fn template_buckets() {
        assert_eq!(insight_template(Signal::Success, 0.95), "strong success far above baseline");
        assert_eq!(insight_template(Signal::Success, 1.0), "strong success far above baseline");
        assert_eq!(insight_template(Signal::Fail, 0.1), "near-baseline, uninformative");
        assert_eq!(insight_template(Signal::Success, 0.0), "near-baseline, uninformative");
        assert_eq!(insight_template(Signal::Fail, 0.5), "moderate failure below baseline");
    }
}
