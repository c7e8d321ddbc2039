//! Alignment projector: maps node embeddings into the decoder's token
//! embedding space, one graph token per node.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::digest::fingerprint;
use crate::linalg::{sqrt, Activation, Matrix};
use crate::{Error, NodeId, Result};

/// Single-hidden-layer MLP: `token = act(h W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorParams {
    pub weights_1: Matrix,
    pub bias_1: Vec<f64>,
    pub weights_2: Matrix,
    pub bias_2: Vec<f64>,
    pub activation: Activation,
}

impl ProjectorParams {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, output_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let b1 = 1.0 / sqrt(input_dim as f64);
        let b2 = 1.0 / sqrt(hidden as f64);
        Self {
            weights_1: Matrix::uniform(input_dim, hidden, b1, rng),
            bias_1: (0..hidden).map(|_| rng.gen_range(-b1..=b1)).collect(),
            weights_2: Matrix::uniform(hidden, output_dim, b2, rng),
            bias_2: (0..output_dim).map(|_| rng.gen_range(-b2..=b2)).collect(),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights_1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights_2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.weights_1.cols();
        if self.bias_1.len() != h || self.weights_2.rows() != h || self.bias_2.len() != self.weights_2.cols() {
            return Err(Error::DimensionMismatch {
                context: "projector parameters",
                expected: format!("hidden width {h}"),
                got: format!(
                    "b1={}, W2 rows={}, b2={} for W2 cols={}",
                    self.bias_1.len(),
                    self.weights_2.rows(),
                    self.bias_2.len(),
                    self.weights_2.cols()
                ),
            });
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let b1 = Matrix::from_vec(1, self.bias_1.len(), self.bias_1.clone()).unwrap_or_else(|_| Matrix::zeros(0, 0));
        let b2 = Matrix::from_vec(1, self.bias_2.len(), self.bias_2.clone()).unwrap_or_else(|_| Matrix::zeros(0, 0));
        fingerprint([&self.weights_1, &b1, &self.weights_2, &b2])
    }
}

/// A node's embedding in decoder token space.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphToken {
    pub node_id: NodeId,
    pub embedding: Vec<f64>,
}

/// Forward result: one graph token per input row, plus the cache needed for
/// [`project_backward`].
#[derive(Debug, Clone)]
pub struct Projection {
    /// Row `i` is the graph token of node `i`.
    pub tokens: Matrix,
    input: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    params_fingerprint: u64,
}

impl Projection {
    pub fn graph_tokens(&self) -> Vec<GraphToken> {
        (0..self.tokens.rows())
            .map(|i| GraphToken { node_id: i, embedding: self.tokens.row(i).to_vec() })
            .collect()
    }
}

pub fn project(embeddings: &Matrix, params: &ProjectorParams) -> Result<Projection> {
    params.validate()?;
    if embeddings.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "project",
            expected: format!("{} embedding columns", params.input_dim()),
            got: format!("{}", embeddings.cols()),
        });
    }
    let mut hidden_pre = embeddings.matmul(&params.weights_1)?;
    hidden_pre.add_row_broadcast(&params.bias_1);
    let hidden = params.activation.apply_matrix(&hidden_pre);
    let mut tokens = hidden.matmul(&params.weights_2)?;
    tokens.add_row_broadcast(&params.bias_2);
    if !tokens.is_finite() {
        return Err(Error::NonFinite("graph tokens"));
    }
    Ok(Projection {
        tokens,
        input: embeddings.clone(),
        hidden_pre,
        hidden,
        params_fingerprint: params.fingerprint(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorGrads {
    pub weights_1: Matrix,
    pub bias_1: Vec<f64>,
    pub weights_2: Matrix,
    pub bias_2: Vec<f64>,
    /// `∂loss/∂embeddings`, fed to the encoder's backward pass.
    pub input: Matrix,
}

pub fn project_backward(cache: &Projection, params: &ProjectorParams, upstream: &Matrix) -> Result<ProjectorGrads> {
    if cache.params_fingerprint != params.fingerprint() {
        return Err(Error::StaleCache("projector"));
    }
    if upstream.shape() != cache.tokens.shape() {
        return Err(Error::DimensionMismatch {
            context: "project_backward upstream",
            expected: format!("{}x{}", cache.tokens.rows(), cache.tokens.cols()),
            got: format!("{}x{}", upstream.rows(), upstream.cols()),
        });
    }
    let weights_2 = cache.hidden.t_matmul(upstream)?;
    let bias_2 = upstream.column_sums();
    let mut d_pre = upstream.matmul_t(&params.weights_2)?;
    for (g, &z) in d_pre.as_mut_slice().iter_mut().zip(cache.hidden_pre.as_slice()) {
        *g *= params.activation.derivative(z);
    }
    let weights_1 = cache.input.t_matmul(&d_pre)?;
    let bias_1 = d_pre.column_sums();
    let input = d_pre.matmul_t(&params.weights_1)?;
    Ok(ProjectorGrads { weights_1, bias_1, weights_2, bias_2, input })
}

/// Untrainable seeded linear map, used when the projector is ablated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLinearMap {
    pub weights: Matrix,
}

impl FixedLinearMap {
    pub fn init<R: Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        Self { weights: Matrix::uniform(input_dim, output_dim, 1.0 / sqrt(input_dim as f64), rng) }
    }

    pub fn apply(&self, embeddings: &Matrix) -> Result<Matrix> {
        embeddings.matmul(&self.weights)
    }

    pub fn backward(&self, upstream: &Matrix) -> Result<Matrix> {
        upstream.matmul_t(&self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use alloc::vec;

    fn identity_params(d: usize) -> ProjectorParams {
        ProjectorParams {
            weights_1: Matrix::identity(d),
            bias_1: vec![0.0; d],
            weights_2: Matrix::identity(d),
            bias_2: vec![0.0; d],
            activation: Activation::Identity,
        }
    }

    #[test]
    fn identity_configuration_passes_embeddings_through() {
        let mut rng = seeded_rng(3);
        let h = Matrix::uniform(5, 4, 2.0, &mut rng);
        let params = identity_params(4);
        let p = project(&h, &params).unwrap();
        assert_eq!(p.tokens, h);
        let up = Matrix::uniform(5, 4, 1.0, &mut rng);
        let g = project_backward(&p, &params, &up).unwrap();
        assert_eq!(g.input, up);
    }

    #[test]
    fn zero_weights_emit_the_output_bias() {
        let mut rng = seeded_rng(4);
        let h = Matrix::uniform(3, 2, 1.0, &mut rng);
        let params = ProjectorParams {
            weights_1: Matrix::zeros(2, 6),
            bias_1: vec![0.0; 6],
            weights_2: Matrix::zeros(6, 3),
            bias_2: vec![0.5, -1.0, 2.0],
            activation: Activation::Relu,
        };
        let p = project(&h, &params).unwrap();
        for t in p.graph_tokens() {
            assert_eq!(t.embedding, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn matches_dense_loop_oracle() {
        let mut rng = seeded_rng(5);
        let h = Matrix::uniform(4, 3, 1.0, &mut rng);
        let params = ProjectorParams::init(3, 7, 5, Activation::Tanh, &mut rng);
        let p = project(&h, &params).unwrap();
        for i in 0..4 {
            let mut hidden = vec![0.0; 7];
            for k in 0..7 {
                let mut acc = params.bias_1[k];
                for j in 0..3 {
                    acc += h[(i, j)] * params.weights_1[(j, k)];
                }
                hidden[k] = libm::tanh(acc);
            }
            for o in 0..5 {
                let mut acc = params.bias_2[o];
                for k in 0..7 {
                    acc += hidden[k] * params.weights_2[(k, o)];
                }
                assert!((p.tokens[(i, o)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded_rng(6);
        let h = Matrix::uniform(4, 3, 1.0, &mut rng);
        let params = ProjectorParams::init(3, 7, 5, Activation::Relu, &mut rng);
        let p = project(&h, &params).unwrap();
        let g = project_backward(&p, &params, &Matrix::zeros(4, 5)).unwrap();
        assert_eq!(g.weights_1.frobenius_norm() + g.weights_2.frobenius_norm() + g.input.frobenius_norm(), 0.0);
        assert!(g.bias_1.iter().chain(&g.bias_2).all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let mut rng = seeded_rng(7);
        let params = ProjectorParams::init(3, 4, 2, Activation::Relu, &mut rng);
        assert!(project(&Matrix::zeros(2, 5), &params).is_err());
        let p = project(&Matrix::zeros(2, 3), &params).unwrap();
        let mut other = params.clone();
        other.bias_2[0] += 1.0;
        assert_eq!(project_backward(&p, &other, &Matrix::zeros(2, 2)), Err(Error::StaleCache("projector")));
    }
}
