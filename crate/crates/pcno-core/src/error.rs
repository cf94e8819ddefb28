//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward target must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("cell {cell} is degenerate (measure {measure:.3e})")]
    DegenerateCell { cell: usize, measure: f64 },

    #[error("node {node} belongs to no cell")]
    NodeWithoutCell { node: usize },

    #[error("node {node} is isolated: the gradient operator is undefined there")]
    IsolatedNode { node: usize },

    #[error("node {node} has {got} neighbors but the rank-{need} least-squares stencil needs at least {need}")]
    TooFewNeighbors { node: usize, got: usize, need: usize },

    #[error("cell {cell} references node {node}, out of range or masked (n = {n_nodes})")]
    BadCellIndex {
        cell: usize,
        node: usize,
        n_nodes: usize,
    },

    #[error("subdomain {subdomain} has zero measure")]
    ZeroSubdomainMeasure { subdomain: usize },

    #[error("subdomain {subdomain} has no unmasked nodes")]
    EmptySubdomain { subdomain: usize },

    #[error("length scale underflow: L[{dim}] = {value:.3e}")]
    LengthScaleUnderflow { dim: usize, value: f64 },

    #[error("non-positive quadrature data at node {node}: rho = {rho:.3e}, dOmega = {d_omega:.3e}")]
    BadQuadrature { node: usize, rho: f64, d_omega: f64 },

    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("reference field has zero norm over unmasked nodes (sample {sample})")]
    ZeroReference { sample: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("sample {sample}: inconsistent channel dimensions: {reason}")]
    InconsistentSample { sample: usize, reason: String },

    #[error("record {index} ({file}): checksum mismatch")]
    ChecksumMismatch { index: usize, file: String },

    #[error("unsupported format version {found}, this reader supports {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("training diverged at epoch {epoch}: loss {loss:.3e} > 1e3 x initial {initial:.3e}")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        /// Epoch records up to the abort.
        history: Box<crate::train::RunHistory>,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("mesh: {0}")]
    Mesh(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
