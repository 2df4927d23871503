use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmglError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid edge weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("kernel factorization failed (matrix is singular)")]
    SingularKernel,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("singular filter system: {0}")]
    SingularFilter(String),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("internal consistency error: {0}")]
    Inconsistent(String),

    #[error("label {label} out of range for {clusters} clusters")]
    LabelOutOfRange { label: usize, clusters: usize },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}: malformed file: {message}")]
    Schema { path: String, message: String },
}

impl KmglError {
    /// Process exit code: 2 configuration, 3 numerical or degenerate, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            KmglError::Config(_) => 2,
            KmglError::Io { .. } | KmglError::Schema { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, KmglError>;
