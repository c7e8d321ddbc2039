use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TextAttributedGraph;
use crate::linalg::{sqrt, Matrix, SparseMatrix};

/// How self-loop adjacency `A + I` is scaled before message passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `A + I` as is.
    SelfLoopOnly,
    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    #[default]
    SymmetricNormalized,
}

impl Normalization {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "self-loop-only" | "self-loop" => Some(Self::SelfLoopOnly),
            "symmetric-normalized" | "symmetric" => Some(Self::SymmetricNormalized),
            _ => None,
        }
    }
}

pub fn normalize_adjacency(graph: &TextAttributedGraph, mode: Normalization) -> SparseMatrix {
    let n = graph.node_count();
    // degree of A + I
    let deg: Vec<f64> = (0..n).map(|i| graph.neighbors(i).len() as f64 + 1.0).collect();
    let rows = (0..n)
        .map(|i| {
            core::iter::once(i)
                .chain(graph.neighbors(i).iter().copied())
                .map(|j| {
                    let v = match mode {
                        Normalization::SelfLoopOnly => 1.0,
                        Normalization::SymmetricNormalized => 1.0 / (sqrt(deg[i]) * sqrt(deg[j])),
                    };
                    (j, v)
                })
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(rows)
}

/// Normalized adjacency paired with the feature matrix: everything the
/// encoder needs from a graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub adjacency: SparseMatrix,
    pub features: Matrix,
}

impl GraphContext {
    pub fn new(graph: &TextAttributedGraph, mode: Normalization) -> Self {
        Self { adjacency: normalize_adjacency(graph, mode), features: graph.features().clone() }
    }

    /// Scales every non-zero feature row to unit sum.
    pub fn row_normalized(mut self) -> Self {
        for i in 0..self.features.rows() {
            let row = self.features.row_mut(i);
            let sum: f64 = row.iter().sum();
            if sum != 0.0 && sum.is_finite() {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::string::{String, ToString};
    use alloc::vec;

    #[test]
    fn row_normalization_keeps_zero_rows() {
        let g = TextAttributedGraph::new(
            vec!["a".to_string()],
            vec![String::new(); 2],
            Matrix::from_rows(&[[1.0, 3.0], [0.0, 0.0]]),
            vec![None; 2],
            &[],
        )
        .unwrap();
        let ctx = GraphContext::new(&g, Normalization::SelfLoopOnly).row_normalized();
        assert_eq!(ctx.features.row(0), &[0.25, 0.75]);
        assert_eq!(ctx.features.row(1), &[0.0, 0.0]);
    }

    fn path(n: usize) -> TextAttributedGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        TextAttributedGraph::new(
            vec!["a".to_string()],
            vec![String::new(); n],
            Matrix::zeros(n, 1),
            vec![None; n],
            &edges,
        )
        .unwrap()
    }

    #[test]
    fn isolated_node_is_identity_in_both_modes() {
        let g = path(1);
        for mode in [Normalization::SelfLoopOnly, Normalization::SymmetricNormalized] {
            assert_eq!(normalize_adjacency(&g, mode).to_dense(), Matrix::from_rows(&[[1.0]]));
        }
    }

    #[test]
    fn two_node_edge() {
        let g = path(2);
        assert_eq!(
            normalize_adjacency(&g, Normalization::SelfLoopOnly).to_dense(),
            Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]])
        );
        let sym = normalize_adjacency(&g, Normalization::SymmetricNormalized).to_dense();
        assert!(sym.max_abs_diff(&Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]])) < 1e-15);
    }

    #[test]
    fn self_loop_mode_is_a_plus_i() {
        let g = path(5);
        let mut expected = g.adjacency_dense();
        expected.add_assign(&Matrix::identity(5));
        assert_eq!(normalize_adjacency(&g, Normalization::SelfLoopOnly).to_dense(), expected);
    }
}
