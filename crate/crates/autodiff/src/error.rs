use thiserror::Error;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("tensor shape {shape:?} does not hold {len} values")]
    InvalidTensor { shape: Vec<usize>, len: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("cycle detected at node {node}")]
    Cycle { node: usize },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),

    #[error("backprop root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("node {0} has not been evaluated")]
    NotEvaluated(usize),

    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
}
