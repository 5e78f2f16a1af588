use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel {kernel:?} does not fit padded input {input:?}")]
    KernelTooLarge { kernel: Vec<usize>, input: Vec<usize> },
    #[error("invalid range: low {low} must be below high {high}")]
    InvalidRange { low: f32, high: f32 },
    #[error("unknown function kind `{0}`")]
    UnknownFunction(String),
    #[error("cycle detected at function #{0}")]
    CycleDetected(u64),
    #[error("input variable `{0}` has no data")]
    UninitializedInput(String),
    #[error("forward has not been run for `{0}`")]
    ForwardNotRun(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("batch statistics need more than one element per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("parameter `{name}` exists with shape {existing:?}, requested {requested:?}")]
    ShapeConflict {
        name: String,
        existing: Vec<usize>,
        requested: Vec<usize>,
    },
    #[error("parameter name must not be empty")]
    EmptyParameterName,
    #[error("solver was set up with an empty parameter set")]
    EmptyParameterSet,
    #[error("parameter `{0}` does not require gradients")]
    FrozenParameter(String),
    #[error("solver is not set up")]
    NotSetup,
    #[error("invalid worker count {0}")]
    InvalidWorkerCount(usize),
    #[error("all_reduce buffers differ across ranks: {0}")]
    ShapeMismatchAcrossRanks(String),
    #[error("collective timed out after {0:?}")]
    CollectiveTimeout(std::time::Duration),
    #[error("collective aborted by a failing rank")]
    CollectiveAborted,
    #[error("replicas diverged: parameter hashes {0:x?}")]
    DivergedReplicas(Vec<u64>),
    #[error("model validation failed: {0}")]
    ValidationFailed(String),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported nnp version `{0}`")]
    UnsupportedVersion(String),
    #[error("parse error in {member} at line {line}: {message}")]
    ParseError {
        member: String,
        line: usize,
        message: String,
    },
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("model cannot be normalized: {0}")]
    Unnormalizable(String),
    #[error("training diverged: loss was not finite for {0} consecutive epochs")]
    Diverged(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn parse(member: &str, line: usize, message: impl Into<String>) -> Self {
        Error::ParseError {
            member: member.to_string(),
            line,
            message: message.into(),
        }
    }
}
