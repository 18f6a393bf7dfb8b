use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("column `{0}` has zero variance")]
    ZeroVarianceColumn(String),

    #[error("marginal is not a probability vector: {0}")]
    InvalidMarginal(String),

    #[error("IPFP did not converge: marginal error {final_error:.3e} after {iterations} iterations")]
    NotConverged { final_error: f64, iterations: usize },

    #[error("numerical overflow in {0}")]
    NumericalOverflow(String),

    #[error("conditional centering did not converge: residual {residual:.3e} after {iterations} sweeps")]
    CenteringNotConverged { residual: f64, iterations: usize },

    #[error("support point not found on the coupling grid")]
    SupportPointNotFound,

    #[error("non-positive variance {value} at index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("Fisher information is singular (smallest eigenvalue {min_eigenvalue:.3e}); attributes may be collinear")]
    SingularFisher { min_eigenvalue: f64 },

    #[error("corner block {block} of the singular vectors is singular (smallest singular value {min_singular:.3e}) for rank {rank}")]
    SingularCornerBlock {
        block: &'static str,
        rank: usize,
        min_singular: f64,
    },

    #[error("bin {0} is empty")]
    EmptyBin(usize),

    #[error("bin {0} contains only singles, matched mass is zero")]
    AllSingleBin(usize),

    #[error("bin {0} has no singles")]
    ZeroSingles(usize),

    #[error("no acquaintance drawn after {retries} truncation retries")]
    NoAcquaintance { retries: usize },

    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
