//! Message-passing encoder: `H^l = σ(Ã H^{l-1} W_l)` for `l = 1..L`, `H^0 = X`,
//! with per-layer weights and exact reverse-mode gradients.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::digest::fingerprint;
use crate::linalg::{sqrt, Activation, Matrix, SparseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub layer_weights: Vec<Matrix>,
    pub activation: Activation,
}

impl GnnParams {
    pub fn new(layer_weights: Vec<Matrix>, activation: Activation) -> Result<Self> {
        let p = Self { layer_weights, activation };
        p.validate()?;
        Ok(p)
    }

    /// `dims = [F, d_1, ..., d_L]`; weights uniform in `±1/√fan_in`.
    pub fn init<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
        }
        let layer_weights = dims
            .windows(2)
            .map(|w| Matrix::uniform(w[0], w[1], 1.0 / sqrt(w[0] as f64), rng))
            .collect();
        Self::new(layer_weights, activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.is_empty() {
            return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
        }
        for (l, pair) in self.layer_weights.windows(2).enumerate() {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::DimensionMismatch {
                    context: "encoder layer chain",
                    expected: format!("layer {} input dim {}", l + 2, pair[0].cols()),
                    got: format!("{}", pair[1].rows()),
                });
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layer_weights.last().map_or(0, Matrix::cols)
    }
}

/// Final-layer node embeddings `H = H^L`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub matrix: Matrix,
}

/// Per-layer state kept by [`gnn_forward`] for [`gnn_backward`].
#[derive(Debug, Clone)]
pub struct GnnCache {
    /// `H^{l-1}` for each layer.
    inputs: Vec<Matrix>,
    /// Pre-activations `Ã H^{l-1} W_l`.
    preacts: Vec<Matrix>,
    params_fingerprint: u64,
    adjacency_shape: (usize, usize),
}

pub fn gnn_forward(
    adjacency: &SparseMatrix,
    features: &Matrix,
    params: &GnnParams,
) -> Result<(NodeEmbeddings, GnnCache)> {
    params.validate()?;
    if features.rows() != adjacency.dim() || features.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "gnn_forward",
            expected: format!("{}x{} features", adjacency.dim(), params.input_dim()),
            got: format!("{}x{}", features.rows(), features.cols()),
        });
    }
    let mut inputs = Vec::with_capacity(params.layer_count());
    let mut preacts = Vec::with_capacity(params.layer_count());
    let mut h = features.clone();
    for w in &params.layer_weights {
        // Ã (H W) is cheaper than (Ã H) W whenever the layer narrows.
        let z = adjacency.matmul(&h.matmul(w)?)?;
        let next = params.activation.apply_matrix(&z);
        if !next.is_finite() {
            return Err(Error::NonFinite("encoder activations"));
        }
        inputs.push(h);
        preacts.push(z);
        h = next;
    }
    let cache = GnnCache {
        inputs,
        preacts,
        params_fingerprint: fingerprint(&params.layer_weights),
        adjacency_shape: (adjacency.dim(), adjacency.nnz()),
    };
    Ok((NodeEmbeddings { matrix: h }, cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnGrads {
    pub layer_weights: Vec<Matrix>,
}

/// Gradients of a scalar loss with respect to every layer weight, given
/// `upstream = ∂loss/∂H^L`.
pub fn gnn_backward(
    adjacency: &SparseMatrix,
    cache: &GnnCache,
    params: &GnnParams,
    upstream: &Matrix,
) -> Result<GnnGrads> {
    if cache.params_fingerprint != fingerprint(&params.layer_weights)
        || cache.adjacency_shape != (adjacency.dim(), adjacency.nnz())
        || cache.preacts.len() != params.layer_count()
    {
        return Err(Error::StaleCache("encoder"));
    }
    let last = &cache.preacts[cache.preacts.len() - 1];
    if upstream.shape() != last.shape() {
        return Err(Error::DimensionMismatch {
            context: "gnn_backward upstream",
            expected: format!("{}x{}", last.rows(), last.cols()),
            got: format!("{}x{}", upstream.rows(), upstream.cols()),
        });
    }
    let mut grads = Vec::with_capacity(params.layer_count());
    let mut d_h = upstream.clone();
    for l in (0..params.layer_count()).rev() {
        let z = &cache.preacts[l];
        let mut d_z = d_h;
        for (g, &pre) in d_z.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *g *= params.activation.derivative(pre);
        }
        // Ã is symmetric, so Ãᵀ dZ = Ã dZ.
        let d_p = adjacency.matmul(&d_z)?;
        grads.push(cache.inputs[l].t_matmul(&d_p)?);
        d_h = if l > 0 { d_p.matmul_t(&params.layer_weights[l])? } else { Matrix::zeros(0, 0) };
    }
    grads.reverse();
    Ok(GnnGrads { layer_weights: grads })
}
