use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix dimension {0} is not supported (expected 2 or 4)")]
    InvalidDimension(usize),

    #[error("matrix is not Hermitian (max |m_ij - conj(m_ji)| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("trace is {trace}, expected 1")]
    TraceNotOne { trace: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositive { eigenvalue: f64 },

    #[error("eigensolver did not converge (off-diagonal norm {0:e})")]
    EigenNoConvergence(f64),

    #[error("invalid measurement direction theta={theta}, phi={phi}")]
    InvalidDirection { theta: f64, phi: f64 },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("parameter constraint violated: {0}")]
    ConstraintViolated(String),

    #[error("outside the valid domain: {0}")]
    DomainError(String),

    #[error("feature dimension overflows for n={n}, L={degree}")]
    Overflow { n: usize, degree: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("rejection sampling gave up after {attempts} attempts")]
    RejectionBudgetExhausted { attempts: usize },

    #[error("unsupported file format version {found:?}")]
    FormatVersionUnsupported { found: String },

    #[error("checksum mismatch or truncated file")]
    CorruptChecksum,

    #[error("model expects {expected} but input is {found}")]
    FamilyMismatch { expected: String, found: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
