//! Instances, baselines and the experiment runner.

mod baselines;
mod envs;
mod experiment;

pub use baselines::{
    bsad_trace, peps_fixed_horizon, q_learning_bonus, q_learning_ucb, AlgorithmTrace, QLearningConfig, TracePoint,
};
pub use envs::{build_counterexample_mdp, build_discounted_chain, build_random_mdp};
pub use experiment::{
    aggregate_dir, batch_sweep_config, bootstrap_ci, cell_file_name, run_experiment, AggregateRow, AlgorithmSpec,
    CellStatus, CellTiming, EnvironmentSpec, ExperimentConfig, ExperimentSummary, BOOTSTRAP_RESAMPLES,
    PARALLELISM_ENV,
};
