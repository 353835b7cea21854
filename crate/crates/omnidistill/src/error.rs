use omnidistill_core::{DataError, DistillError, EvalError, GraphError, ModelError, SelectionError};
use thiserror::Error;

use crate::formats::FormatError;

/// Command failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, missing or malformed inputs.
    #[error("{0}")]
    Input(String),
    /// Data that leaves a stage nothing to work with, such as an empty class.
    #[error("{0}")]
    Degenerate(String),
    /// Non-finite values or a diverging loss.
    #[error("{0}")]
    Divergence(String),
    /// `verify` found artifacts that disagree.
    #[error("{0}")]
    Mismatch(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Mismatch(_) => 1,
            Error::Input(_) => 2,
            Error::Degenerate(_) => 3,
            Error::Divergence(_) => 4,
        }
    }

    fn prefixed(self, prefix: &str) -> Self {
        match self {
            Error::Input(m) => Error::Input(format!("{prefix}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{prefix}: {m}")),
            Error::Divergence(m) => Error::Divergence(format!("{prefix}: {m}")),
            Error::Mismatch(m) => Error::Mismatch(format!("{prefix}: {m}")),
        }
    }
}

impl From<FormatError> for Error {
    fn from(e: FormatError) -> Self {
        Error::Input(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Input(e.to_string())
    }
}

impl From<GraphError> for Error {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NonFinite { .. } => Error::Divergence(e.to_string()),
            e => Error::Input(e.to_string()),
        }
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Graph(g) => g.into(),
            ModelError::EmptyDataset => Error::Degenerate(e.to_string()),
            e => Error::Input(e.to_string()),
        }
    }
}

impl From<DataError> for Error {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Empty => Error::Degenerate(e.to_string()),
            e => Error::Input(e.to_string()),
        }
    }
}

impl From<SelectionError> for Error {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Model(m) => m.into(),
            SelectionError::EmptyClass(_) | SelectionError::ZeroVector => Error::Degenerate(e.to_string()),
            e => Error::Input(e.to_string()),
        }
    }
}

impl From<DistillError> for Error {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Model(m) => m.into(),
            DistillError::Graph(g) => g.into(),
            DistillError::MissingClass(_) => Error::Degenerate(e.to_string()),
            DistillError::NonFiniteMetaGradient { .. } | DistillError::Diverged { .. } => {
                Error::Divergence(e.to_string())
            }
            e => Error::Input(e.to_string()),
        }
    }
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Data(d) => d.into(),
            EvalError::Condition { condition, source } => {
                Error::from(source).prefixed(&format!("{condition} condition"))
            }
            EvalError::ProbeTooSmall { .. } => Error::Degenerate(e.to_string()),
            e => Error::Input(e.to_string()),
        }
    }
}
