use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A value falls outside the domain of an operation (log of 0, zero variance, ...).
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration value or infeasible request.
    #[error("configuration error: {0}")]
    Config(String),
    /// All pairwise distances in a batch are equal, so min-max normalization is undefined.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    /// A channel required by an alignment is missing.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// A metric is undefined for the given labels (e.g. AUROC with a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// A gradient contained NaN or infinity.
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    /// A parameter in a loaded store does not match the network configuration.
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
