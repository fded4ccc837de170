use thiserror::Error;

use crate::flow::FlowMapReport;

/// Errors produced by the flow-graph / clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node coordinates ({row}, {col}) out of range for {rows}x{cols} grid")]
    NodeOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("grid shape mismatch: expected {expected} nodes, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("matrix dimension mismatch: {lhs} vs {rhs}")]
    DimensionMismatch { lhs: usize, rhs: usize },

    #[error("flow maps failed validation: {0}")]
    InvalidFlowMaps(FlowMapReport),

    #[error("column {column} sums to zero during inflation{}", iteration.map(|t| format!(" (iteration {t})")).unwrap_or_default())]
    ZeroColumn {
        column: usize,
        iteration: Option<usize>,
    },

    #[error("tape holds no iteration records")]
    EmptyTape,

    #[error("flow label covers {label} nodes but matrix has {matrix}")]
    LabelMismatch { label: usize, matrix: usize },

    #[error("box contains no lattice node (too small for grid resolution)")]
    EmptyBox,

    #[error("empty node set")]
    EmptyNodeSet,

    #[error("node {node} claimed by two boxes (#{first} and #{second}); overlapping boxes are not representable")]
    OverlappingBoxes {
        node: usize,
        first: usize,
        second: usize,
    },

    #[error("node {node} has no admissible route to attractor {attractor} using self/bottom/right/left flows")]
    Unroutable { node: usize, attractor: usize },

    #[error("could not place {requested} non-overlapping boxes after {attempts} attempts")]
    ScenePlacement { requested: usize, attempts: usize },

    #[error("feature dimension mismatch: model expects {expected}, features have {got}")]
    FeatureDimMismatch { expected: usize, got: usize },

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{path}: bad magic bytes (expected {expected:?})")]
    BadMagic { path: String, expected: &'static str },

    #[error("{path}: truncated or malformed container: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
