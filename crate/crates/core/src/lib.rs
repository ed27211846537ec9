pub mod bsad;
pub mod dueling;
pub mod error;
pub mod exploration;
pub mod harness;
pub mod mdp;
pub mod oracle;

pub use error::{Error, Result};
pub use mdp::{DeterministicPolicy, TabularEpisodicMdp, Trajectory, TrajectoryReward};
