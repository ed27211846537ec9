use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("policy has no action at step {step}, state {state}")]
    UnsetPolicy { step: usize, state: usize },

    #[error("instance too large: {0}")]
    TooLarge(String),

    /// No single deterministic policy is optimal at every (step, state).
    #[error("no uniformly optimal policy: step {step}, state {state} ({detail})")]
    AssumptionViolated {
        step: usize,
        state: usize,
        detail: String,
    },

    #[error("reward undefined for trajectory {0}")]
    UndefinedReward(String),

    #[error("unsupported instance: {0}")]
    Unsupported(String),

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidMdp(_) => "invalid_mdp",
            Error::UnsetPolicy { .. } => "unset_policy",
            Error::TooLarge(_) => "too_large",
            Error::AssumptionViolated { .. } => "assumption_violated",
            Error::UndefinedReward(_) => "undefined_reward",
            Error::Unsupported(_) => "unsupported",
            Error::Generation(_) => "generation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
