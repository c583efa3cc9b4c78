use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("grid with {got} points under-resolves the basis (need at least {need})")]
    UnderResolvedGrid { need: usize, got: usize },

    #[error("Picard iteration failed to contract on subinterval starting at node {node} after {iters} iterations (last update {last_update:e})")]
    PicardDiverged {
        node: usize,
        iters: usize,
        last_update: f64,
    },

    #[error("solution reached the cutoff radius {radius} even after enlarging it")]
    CutoffActive { radius: f64 },

    #[error("state norm {norm:e} exceeded the blow-up guard {guard:e} at node {node}")]
    BlowUp { node: usize, norm: f64, guard: f64 },

    #[error("all epsilon values produced zero hits")]
    InsufficientSamples,

    #[error("all samples censored at eps = {eps}")]
    AllCensored { eps: f64 },

    #[error("budget rejected: {0}")]
    Budget(String),
}

impl Error {
    /// True for failures of a numerical routine (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PicardDiverged { .. }
                | Error::CutoffActive { .. }
                | Error::BlowUp { .. }
                | Error::InsufficientSamples
                | Error::AllCensored { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
