use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The tree would need more memory than the configured depth cap allows.
    #[error("tree depth {depth} exceeds cap {cap}: a depth-n tree stores 2^n leaf vectors (2^{depth} = {leaves} requested)")]
    Resource { depth: usize, cap: usize, leaves: u128 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step {step} out of range 0..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("weight construction failed: {0}")]
    Construction(String),

    #[error("singular time factor at t = {t} (T = {horizon})")]
    Singularity { t: f64, horizon: f64 },

    #[error("trajectory does not solve the stated equation: residual {residual:e} > {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("observation operator is rank deficient (smallest eigenvalue {0:e})")]
    RankDeficient(f64),

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{task}: {source}")]
    Task {
        task: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot write output: {0}")]
    Output(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
