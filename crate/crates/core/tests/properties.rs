//! Randomized invariants of the estimators and the calibration solver.
//!
//! Run alone with `cargo test --test properties`.

mod common;

use common::{
    affine_invariance, antisymmetry, equation_residuals, network, permutation_invariance, self_weights_uniform,
    subset_aggregation, triple_identity, Net,
};
use proptest::prelude::*;

fn net_strategy() -> impl Strategy<Value = Net> {
    (any::<u64>(), 2usize..=4, 1usize..=3, any::<bool>()).prop_map(|(seed, k, p, spline)| network(seed, k, p, spline))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn swapping_comparators_negates_the_estimate(net in net_strategy()) {
        antisymmetry(&net).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn subset_means_are_size_weighted_averages(net in net_strategy()) {
        subset_aggregation(&net).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn calibration_weights_are_affine_invariant(
        seed in any::<u64>(),
        p in 1usize..=3,
        scale in prop::collection::vec(0.2f64..5.0, 3),
        mix in -0.8f64..0.8,
        shift in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        affine_invariance(seed, p, &scale, mix, &shift).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn self_weights_are_uniform(net in net_strategy()) {
        self_weights_uniform(&net).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn bias_reduced_equals_calibrated_and_augmented(seed in any::<u64>(), k in 2usize..=4, p in 1usize..=3) {
        triple_identity(&network(seed, k, p, false)).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn estimating_equations_are_solved(net in net_strategy()) {
        equation_residuals(&net).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn record_order_does_not_matter(net in net_strategy(), seed in any::<u64>()) {
        permutation_invariance(&net, seed).map_err(TestCaseError::fail)?;
    }
}
