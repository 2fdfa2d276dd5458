use thiserror::Error;

/// Errors raised by the model, expansion and oracle layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("infeasible total: n = {n} but the cells can hold at most {capacity}")]
    InfeasibleTotal { n: u64, capacity: u64 },

    #[error("non-positive or invalid shape parameter {value} for cell {cell}")]
    NonpositiveShape { cell: usize, value: f64 },

    #[error("moment order {order} exceeds the supported maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("degenerate statistic: residual variance {sigma2:e} is zero at scale {scale:e}")]
    DegenerateStatistic { sigma2: f64, scale: f64 },

    #[error("kernel table for cell {cell} has {len} entries but the support needs {needed}")]
    SupportTooShort { cell: usize, len: usize, needed: usize },

    #[error("missing joint moments of order {order}")]
    MissingMoments { order: usize },

    #[error("unsupported expansion order s = {s} (supported: 3, 4, 5)")]
    UnsupportedOrder { s: usize },

    #[error("value {z} is not on the lattice {offset} + {span}k")]
    OffLattice { z: f64, offset: f64, span: f64 },

    #[error("dynamic-programming state budget exceeded: {reached} > {budget}")]
    StateBudgetExceeded { reached: usize, budget: usize },

    #[error("kernel values are not on a common lattice: {0}")]
    NonRepresentableValues(String),

    #[error("quadrature did not converge: relative change {change:e} after {panels} panels")]
    QuadratureNotConverged { change: f64, panels: usize },

    #[error("closed form disagrees with the generic engine: {0}")]
    MismatchBeyondTolerance(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Short variant name, used by the CLI on standard error.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InfeasibleTotal { .. } => "InfeasibleTotal",
            Error::NonpositiveShape { .. } => "NonpositiveShape",
            Error::OrderTooHigh { .. } => "OrderTooHigh",
            Error::DegenerateStatistic { .. } => "DegenerateStatistic",
            Error::SupportTooShort { .. } => "SupportTooShort",
            Error::MissingMoments { .. } => "MissingMoments",
            Error::UnsupportedOrder { .. } => "UnsupportedOrder",
            Error::OffLattice { .. } => "OffLattice",
            Error::StateBudgetExceeded { .. } => "StateBudgetExceeded",
            Error::NonRepresentableValues(_) => "NonRepresentableValues",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            Error::MismatchBeyondTolerance(_) => "MismatchBeyondTolerance",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
