use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("integration blow-up in {system} at step {step}")]
    IntegrationBlowup { system: String, step: usize },

    #[error("tape was recorded with different network parameters")]
    StaleTape,

    #[error("non-finite gradient at parameter {index} (value {value})")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("non-finite value during {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}: validation loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("linear program exceeded {0} pivots")]
    LpIterationLimit(usize),

    #[error("point lies outside the hull")]
    OutsideHull,

    #[error("rejection sampling stalled after {0} tries")]
    SamplingStall(usize),

    #[error("start state not contained in any backward slice within {horizon} s")]
    NoFeasibleEstimate { horizon: f64 },

    #[error("invalid cost {0}")]
    InvalidCost(f64),
}
