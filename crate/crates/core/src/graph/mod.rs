//! Text-attributed graph data model, adjacency normalization, node splits and
//! a stochastic-block-model generator with bag-of-words text.

mod normalize;
mod split;
mod synthetic;

pub use normalize::{normalize_adjacency, GraphContext, Normalization};
pub use split::{split_nodes, DataSplit};
pub use synthetic::{make_synthetic_graph, SyntheticConfig};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::{ClassId, Error, NodeId, Result};

/// Undirected graph whose nodes carry numeric features, raw text and an
/// optional class label. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    label_space: Vec<String>,
    texts: Vec<String>,
    features: Matrix,
    labels: Vec<Option<ClassId>>,
    /// Unordered pairs stored as `(lo, hi)`, sorted.
    edges: Vec<(NodeId, NodeId)>,
    neighbors: Vec<Vec<NodeId>>,
}

impl TextAttributedGraph {
    /// Validates and builds a graph.
    ///
    /// `edges` may list each undirected edge once (either orientation) or in
    /// both orientations; mixing the two conventions is rejected as an
    /// asymmetric edge list.
    pub fn new(
        label_space: Vec<String>,
        texts: Vec<String>,
        features: Matrix,
        labels: Vec<Option<ClassId>>,
        edges: &[(NodeId, NodeId)],
    ) -> Result<Self> {
        let n = texts.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                n
            )));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidGraph("feature dimension is zero".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!("{} labels for {} nodes", labels.len(), n)));
        }
        for node in 0..n {
            if !features.row(node).iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidNode { node, reason: "non-finite feature".into() });
            }
            if let Some(c) = labels[node] {
                if c >= label_space.len() {
                    return Err(Error::UnknownLabel { node, label: format!("#{c}") });
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (idx, &(a, b)) in edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::EdgeOutOfRange { edge: idx, a, b, node_count: n });
            }
            if a == b {
                return Err(Error::SelfLoop { edge: idx, node: a });
            }
            if !seen.insert((a, b)) {
                return Err(Error::DuplicateEdge { edge: idx, a, b });
            }
        }
        let bidirectional = edges.iter().any(|&(a, b)| seen.contains(&(b, a)));
        let mut unordered = BTreeSet::new();
        for (idx, &(a, b)) in edges.iter().enumerate() {
            if bidirectional && !seen.contains(&(b, a)) {
                return Err(Error::AsymmetricEdge { edge: idx, a, b });
            }
            let key = (a.min(b), a.max(b));
            if !unordered.insert(key) && !bidirectional {
                return Err(Error::DuplicateEdge { edge: idx, a, b });
            }
        }
        let edges: Vec<_> = unordered.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self { label_space, texts, features, labels, edges, neighbors })
    }

    pub fn node_count(&self) -> usize {
        self.texts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn class_count(&self) -> usize {
        self.label_space.len()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, node: NodeId) -> &str {
        &self.texts[node]
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<ClassId>] {
        &self.labels
    }

    pub fn label(&self, node: NodeId) -> Option<ClassId> {
        self.labels[node]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Dense binary adjacency `A` (no self-loops).
    pub fn adjacency_dense(&self) -> Matrix {
        let n = self.node_count();
        let mut a = Matrix::zeros(n, n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Nodes grouped by ground-truth class; unlabeled nodes are skipped.
    pub fn nodes_by_class(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (node, label) in self.labels.iter().enumerate() {
            if let Some(c) = label {
                out[*c].push(node);
            }
        }
        out
    }

    /// Ground-truth class, or an error naming the node.
    pub fn require_label(&self, node: NodeId) -> Result<ClassId> {
        self.labels[node].ok_or(Error::MissingLabel(node))
    }
}
