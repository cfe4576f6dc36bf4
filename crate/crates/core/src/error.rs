use thiserror::Error;

/// Errors produced by the pricing engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("invalid stencil: probability {value} for endpoint {endpoint} outside [0, 1]")]
    InvalidStencil { endpoint: &'static str, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node index out of range: step {k}, level {j}")]
    IndexOutOfRange { k: usize, j: i64 },

    #[error("surface is not a G-supermartingale: violation {violation:.3e} at step {k}, level {j}")]
    NotSupermartingale { k: usize, j: i64, violation: f64 },

    #[error("no convergence at time step {step} after {iteration} iterations (residual {residual:.3e})")]
    NoConvergence {
        step: usize,
        iteration: usize,
        residual: f64,
    },

    #[error("enumeration too large: {required} scenarios exceeds budget {budget}")]
    TooLarge { required: u128, budget: u128 },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::TooLarge { .. } | Error::NotSupermartingale { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
