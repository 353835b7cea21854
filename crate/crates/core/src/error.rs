use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("buffer holds {actual} elements but shape needs {expected}")]
    Length { expected: usize, actual: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Incompatible {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("binding for `{name}` has shape {actual:?}, declared {declared:?}")]
    BindingShape {
        name: String,
        declared: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("gradient target must be a scalar, got shape {0:?}")]
    NonScalarTarget(Vec<usize>),
    #[error("label value {value} is not a class index below {classes}")]
    InvalidLabel { value: f64, classes: usize },
    #[error("unknown node {0}")]
    UnknownNode(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("input has {actual} values per sample, architecture expects {expected}")]
    InputShape { expected: usize, actual: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter list does not match the architecture")]
    ParamMismatch,
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("class {0} has no anchor samples")]
    EmptyClass(usize),
    #[error("cosine distance of a zero vector")]
    ZeroVector,
    #[error("feature dimension {features} does not match centroid dimension {centers}")]
    Dimension { features: usize, centers: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistillError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("class {0} has no auxiliary samples")]
    MissingClass(usize),
    #[error("non-finite meta-gradient at iteration {iteration}")]
    NonFiniteMetaGradient { iteration: u64 },
    #[error("outer loss diverged at iteration {iteration}: {loss} exceeds 10x the initial {initial}")]
    Diverged {
        iteration: u64,
        loss: f64,
        initial: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid split ratio {0}:{1}")]
    Ratio(usize, usize),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model predicts {model} classes, dataset has {dataset}")]
    ClassCount { model: usize, dataset: usize },
    #[error("probe needs at least {needed} test images, split left {got}")]
    ProbeTooSmall { needed: usize, got: usize },
    #[error("snapshots disagree on labels or image shape")]
    SnapshotMismatch,
    #[error("{condition} condition failed: {source}")]
    Condition {
        condition: &'static str,
        source: ModelError,
    },
    #[error("{0}")]
    Invalid(String),
}
