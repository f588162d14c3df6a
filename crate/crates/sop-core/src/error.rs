use thiserror::Error;

/// Errors raised by model construction and fitting.
#[derive(Error, Debug)]
pub enum SopError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {x} outside the basis domain [{min}, {max}]")]
    OutOfDomain { x: f64, min: f64, max: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("assembled precision of block {block} is numerically singular ({detail})")]
    SingularPrecision { block: usize, detail: String },

    #[error("coefficient system factorization failed: {context}")]
    SingularSystem { context: String },

    #[error("mean at observation {index} is on the boundary of the valid range (mu = {mu})")]
    DegenerateMean { index: usize, mu: f64 },

    #[error(
        "variance component ({block}, {atom}) is degenerate: effective degrees of freedom \
         {ed:.3e} vanished; {condition}"
    )]
    DegenerateComponent {
        block: usize,
        atom: usize,
        ed: f64,
        condition: String,
    },

    #[error(
        "model is overparameterized: dispersion denominator n - rank(X) - total ED = {denom:.3} <= 0"
    )]
    OverparameterizedModel { denom: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, SopError>;
