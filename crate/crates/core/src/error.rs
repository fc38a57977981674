use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state index {index} (chain has {states} states)")]
    InvalidState { index: usize, states: usize },

    #[error("invalid component index {index} ({components} components)")]
    InvalidComponent { index: usize, components: usize },

    #[error("negative age {0}")]
    NegativeAge(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("cumulative hazard of state {state} stays below target {target} up to age {age_budget}")]
    UnboundedHazard {
        state: usize,
        target: f64,
        age_budget: f64,
    },

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("no component can ever transition from this state")]
    NoTransitions,

    #[error("portfolio {u:?} is outside the admissible set")]
    Inadmissible { u: Vec<f64> },

    #[error("hamiltonian minimization failed after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("singular {size}x{size} system at step {step}")]
    SingularSystem { size: usize, step: usize },

    #[error("picard iteration stalled after {sweeps} sweeps (contraction factor {factor:.4}, change {change:e})")]
    ContractionStall {
        sweeps: usize,
        factor: f64,
        change: f64,
    },

    #[error("picard iteration hit the sweep limit {sweeps} (change {change:e})")]
    SweepLimit { sweeps: usize, change: f64 },

    #[error("point ({t}, {y:?}) is too close to the boundary for a step of {eps}")]
    NearBoundary { t: f64, y: Vec<f64>, eps: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
