use alloc::string::String;

use crate::NodeId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("self-loop in input: edge #{edge} ({node}, {node})")]
    SelfLoop { edge: usize, node: NodeId },
    #[error("edge #{edge} ({a}, {b}) references a node outside 0..{node_count}")]
    EdgeOutOfRange { edge: usize, a: NodeId, b: NodeId, node_count: usize },
    #[error("asymmetric edge list: edge #{edge} ({a}, {b}) has no reverse while other edges are listed in both directions")]
    AsymmetricEdge { edge: usize, a: NodeId, b: NodeId },
    #[error("duplicate edge #{edge} ({a}, {b})")]
    DuplicateEdge { edge: usize, a: NodeId, b: NodeId },
    #[error("node {node}: label {label} is not in the label space")]
    UnknownLabel { node: NodeId, label: String },
    #[error("node {node}: {reason}")]
    InvalidNode { node: NodeId, reason: String },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: String, got: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("cache does not match the parameters or inputs it is applied to ({0})")]
    StaleCache(&'static str),
    #[error("ratio {ratio} labels {labeled} node(s) but {classes} classes need at least one each")]
    RatioTooSmall { ratio: f64, labeled: usize, classes: usize },
    #[error("node {0} has no ground-truth label")]
    MissingLabel(NodeId),
    #[error("sequence of length {len} exceeds decoder context {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("positive log-probability {0}")]
    PositiveLogProb(f64),
    #[error("decoder is not frozen")]
    NotFrozen,
    #[error("frozen decoder changed: digest {before} became {after}")]
    DecoderMutated { before: String, after: String },
    #[error("node {0} is not in the unlabeled set")]
    NotUnlabeled(NodeId),
    #[error("pipeline invariant violated at round {round}: {what}\n{dump}")]
    InvariantViolation { round: usize, what: String, dump: String },
}
