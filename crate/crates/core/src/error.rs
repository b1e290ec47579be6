use thiserror::Error;

pub type Result<T> = std::result::Result<T, QfpError>;

#[derive(Debug, Error)]
pub enum QfpError {
    #[error("resource cap exceeded: {0}")]
    Resource(String),
    #[error("state {0:?} is not a member of the parent basis")]
    UnknownState(Vec<usize>),
    #[error("restriction would produce an empty basis")]
    EmptyBasis,
    #[error("sideband tail mass {tail:.3e} at order {order} exceeds tolerance {tolerance:.1e}")]
    TailMass { order: usize, tail: f64, tolerance: f64 },
    #[error("window mismatch: {0}")]
    WindowMismatch(String),
    #[error("truncation defect {defect:.3e} exceeds tolerance {tolerance:.1e}")]
    Truncation { defect: f64, tolerance: f64 },
    #[error("bin {0} is not covered by the mode matrix window")]
    BinCoverage(i64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unknown gate label `{0}`")]
    UnknownLabel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("phase graph is disconnected: {0}")]
    Connectivity(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("matrix is not positive semidefinite (minimum eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("non-finite log density: {0}")]
    NonFinite(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("small-parameter regime violated: {0}")]
    Regime(String),
}
