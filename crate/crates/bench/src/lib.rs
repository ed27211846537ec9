//! Fixtures shared by the benchmarks.

use bsad_core::harness::{build_counterexample_mdp, build_random_mdp};
use bsad_core::{TabularEpisodicMdp, TrajectoryReward};

/// Two first-step copies, equal weights.
pub fn counterexample() -> (TabularEpisodicMdp, TrajectoryReward) {
    build_counterexample_mdp(10.0, 0.1, 2, &[0.5, 0.5]).expect("valid parameters")
}

/// The largest shape of the random battery.
pub fn random_333() -> (TabularEpisodicMdp, TrajectoryReward) {
    build_random_mdp(3, 3, 3, 9, 0.2).expect("generator accepts seed 9")
}
