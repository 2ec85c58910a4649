//! Observation pairs for weak supervision: two configurations that differ in
//! exactly one factor.
//!
//! The first configuration comes from the correlated distribution. A changed
//! factor `k` and its new value are then drawn from a per-regime proposal
//! `q_k`, conditioned on the new value differing from the old one. This is
//! the same distribution as "propose, and retry when nothing changed", but is
//! sampled directly so it cannot loop.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conditional, CorrelationSpec, FactorConfig, FactorError, FactorSpace, PairSampler, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// A changed correlated factor follows its conditional given the other
    /// correlated factor, so pairs never break the correlation.
    Observational,
    /// A changed correlated factor is resampled uniformly (a hidden
    /// confounder is intervened on).
    InterventionalI1,
    /// The pair is causal, `pair.0 → pair.1`: the cause may be set uniformly,
    /// the effect only follows its conditional.
    InterventionalI2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakPair {
    pub first: FactorConfig,
    pub second: FactorConfig,
    pub changed: usize,
}

fn proposal(space: &FactorSpace, corr: &CorrelationSpec, regime: Regime, factor: usize, current: &FactorConfig) -> Vec<f64> {
    let uniform = || vec![1.0 / space.cardinality(factor) as f64; space.cardinality(factor)];
    let Some(partner) = corr.partner(factor) else {
        return uniform();
    };
    let follow_conditional = match regime {
        Regime::Observational => true,
        Regime::InterventionalI1 => false,
        Regime::InterventionalI2 => factor == corr.pair.1,
    };
    if follow_conditional {
        conditional(space, corr, factor, current.0[partner])
    } else {
        uniform()
    }
}

/// Samples a pair with `sampler` drawing the first member; see the module
/// docs for the change mechanism.
pub fn sample_weak_pair_with<R: Rng + ?Sized>(
    space: &FactorSpace,
    corr: &CorrelationSpec,
    sampler: &PairSampler,
    regime: Regime,
    rng: &mut R,
) -> Result<WeakPair> {
    let first = sampler.sample(space, corr, rng);
    let proposals: Vec<Vec<f64>> = (0..space.len()).map(|k| proposal(space, corr, regime, k, &first)).collect();
    // Probability that factor k's proposal actually moves it.
    let move_mass: Vec<f64> = proposals.iter().enumerate().map(|(k, q)| 1.0 - q[first.0[k]]).collect();
    let changed = WeightedIndex::new(&move_mass)
        .map_err(|_| FactorError::Degenerate(format!("no factor can change from {:?}", first.0)))?
        .sample(rng);
    let mut q = proposals[changed].clone();
    q[first.0[changed]] = 0.0;
    let value = WeightedIndex::new(&q).map_err(|e| FactorError::Degenerate(e.to_string()))?.sample(rng);
    let mut second = first.clone();
    second.0[changed] = value;
    Ok(WeakPair { first, second, changed })
}

pub fn sample_weak_pair<R: Rng + ?Sized>(
    space: &FactorSpace,
    corr: &CorrelationSpec,
    regime: Regime,
    rng: &mut R,
) -> Result<WeakPair> {
    let sampler = PairSampler::for_spec(space, corr)?;
    sample_weak_pair_with(space, corr, &sampler, regime, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::Sigma;
    use crate::rng::{Purpose, SeedStream};

    #[test]
    fn exactly_one_coordinate_changes() {
        let space = FactorSpace::default_world();
        let corr = CorrelationSpec::new((0, 1), Sigma::Finite(0.2));
        let sampler = PairSampler::for_spec(&space, &corr).unwrap();
        for regime in [Regime::Observational, Regime::InterventionalI1, Regime::InterventionalI2] {
            let mut rng = SeedStream::new(3).stream(Purpose::Sampling, 0);
            for _ in 0..10_000 {
                let p = sample_weak_pair_with(&space, &corr, &sampler, regime, &mut rng).unwrap();
                let diffs: Vec<usize> = (0..5).filter(|&i| p.first.0[i] != p.second.0[i]).collect();
                assert_eq!(diffs, vec![p.changed]);
                space.check(&p.second).unwrap();
            }
        }
    }

    #[test]
    fn i2_effect_never_jumps_against_the_band() {
        // With a tight band the effect can only move to a neighbouring value.
        let space = FactorSpace::default_world();
        let corr = CorrelationSpec::new((0, 1), Sigma::Finite(0.05));
        let sampler = PairSampler::for_spec(&space, &corr).unwrap();
        let mut rng = SeedStream::new(5).stream(Purpose::Sampling, 0);
        let mut cause_jumps = 0;
        for _ in 0..20_000 {
            let p = sample_weak_pair_with(&space, &corr, &sampler, Regime::InterventionalI2, &mut rng).unwrap();
            let d = p.first.0[p.changed].abs_diff(p.second.0[p.changed]);
            if p.changed == 1 {
                assert!(d <= 1, "effect moved by {d}");
            } else if p.changed == 0 && d > 1 {
                cause_jumps += 1;
            }
        }
        assert!(cause_jumps > 100);
    }

    #[test]
    fn degenerate_space_is_an_error() {
        // Only the correlated pair exists and the band is so tight that no
        // move has positive probability from the diagonal.
        let space = FactorSpace::from_pairs(&[("a", 2), ("b", 2)]).unwrap();
        let corr = CorrelationSpec::new((0, 1), Sigma::Finite(1e-3));
        let mut rng = SeedStream::new(1).stream(Purpose::Sampling, 0);
        assert!(matches!(
            sample_weak_pair(&space, &corr, Regime::Observational, &mut rng),
            Err(FactorError::Degenerate(_))
        ));
    }
}
