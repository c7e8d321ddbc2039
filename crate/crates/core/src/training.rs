//! Supervised fine-tuning: encoder → projector → frozen decoder, with the
//! loss masked to the response and updates applied to the encoder and
//! projector only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{InstructionExample, LanguageModel, PromptLayout, PromptTemplate, Provenance, Vocabulary};
use crate::digest::{Digest, TensorHasher};
use crate::encoder::{gnn_backward, gnn_forward, GnnCache, GnnParams};
use crate::graph::{GraphContext, Normalization, TextAttributedGraph};
use crate::linalg::{Activation, Matrix};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::projector::{project, project_backward, FixedLinearMap, Projection, ProjectorParams};
use crate::{Error, NodeId, Result, SeededRng};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Lower bound on the relative-error denominator, so coordinates whose true
/// gradient is ~0 are judged by absolute error.
pub const FD_DENOMINATOR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncoderStage {
    Gnn(GnnParams),
    /// Raw feature rows go straight to the projector.
    Raw { feature_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProjectorStage {
    Mlp(ProjectorParams),
    /// Seeded random map, never updated.
    Fixed(FixedLinearMap),
}

/// Trainable state. The decoder is passed alongside and never owned here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub encoder: EncoderStage,
    pub projector: ProjectorStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder layer widths after the input features.
    pub gnn_dims: Vec<usize>,
    pub gnn_activation: Activation,
    pub normalization: Normalization,
    /// Scale feature rows to unit sum before encoding.
    pub row_normalize_features: bool,
    pub projector_hidden: usize,
    pub projector_activation: Activation,
    pub use_gnn: bool,
    pub trainable_projector: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gnn_dims: vec![32, 32],
            gnn_activation: Activation::Relu,
            normalization: Normalization::SymmetricNormalized,
            row_normalize_features: true,
            projector_hidden: 64,
            projector_activation: Activation::Relu,
            use_gnn: true,
            trainable_projector: true,
        }
    }
}

impl ModelConfig {
    pub fn graph_context(&self, graph: &TextAttributedGraph) -> GraphContext {
        let ctx = GraphContext::new(graph, self.normalization);
        if self.row_normalize_features {
            ctx.row_normalized()
        } else {
            ctx
        }
    }
}

impl ParameterSet {
    pub fn init(config: &ModelConfig, feature_dim: usize, embed_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if feature_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidArgument("feature and embedding widths must be positive".into()));
        }
        let encoder = if config.use_gnn {
            let mut dims = vec![feature_dim];
            dims.extend_from_slice(&config.gnn_dims);
            EncoderStage::Gnn(GnnParams::init(&dims, config.gnn_activation, rng)?)
        } else {
            EncoderStage::Raw { feature_dim }
        };
        let width = match &encoder {
            EncoderStage::Gnn(g) => g.output_dim(),
            EncoderStage::Raw { feature_dim } => *feature_dim,
        };
        let projector = if config.trainable_projector {
            if config.projector_hidden == 0 {
                return Err(Error::InvalidArgument("projector hidden width must be positive".into()));
            }
            ProjectorStage::Mlp(ProjectorParams::init(width, config.projector_hidden, embed_dim, config.projector_activation, rng))
        } else {
            ProjectorStage::Fixed(FixedLinearMap::init(width, embed_dim, rng))
        };
        Ok(Self { encoder, projector })
    }

    pub fn encoder_output_dim(&self) -> usize {
        match &self.encoder {
            EncoderStage::Gnn(g) => g.output_dim(),
            EncoderStage::Raw { feature_dim } => *feature_dim,
        }
    }

    pub fn token_dim(&self) -> usize {
        match &self.projector {
            ProjectorStage::Mlp(p) => p.output_dim(),
            ProjectorStage::Fixed(m) => m.weights.cols(),
        }
    }

    /// Checks that features → encoder → projector → decoder widths chain.
    pub fn validate(&self, feature_dim: usize, embed_dim: usize) -> Result<()> {
        let input = match &self.encoder {
            EncoderStage::Gnn(g) => {
                g.validate()?;
                g.input_dim()
            }
            EncoderStage::Raw { feature_dim } => *feature_dim,
        };
        let proj_in = match &self.projector {
            ProjectorStage::Mlp(p) => {
                p.validate()?;
                p.input_dim()
            }
            ProjectorStage::Fixed(m) => m.weights.rows(),
        };
        let chain = [
            ("feature width", feature_dim, input),
            ("projector input", self.encoder_output_dim(), proj_in),
            ("graph token width", embed_dim, self.token_dim()),
        ];
        for (context, expected, got) in chain {
            if expected != got {
                return Err(Error::DimensionMismatch { context, expected: format!("{expected}"), got: format!("{got}") });
            }
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order: encoder layers, then `W1 b1 W2 b2`.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let EncoderStage::Gnn(g) = &self.encoder {
            out.extend(g.layer_weights.iter().map(Matrix::as_slice));
        }
        if let ProjectorStage::Mlp(p) = &self.projector {
            out.extend([p.weights_1.as_slice(), &p.bias_1, p.weights_2.as_slice(), &p.bias_2]);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let EncoderStage::Gnn(g) = &mut self.encoder {
            out.extend(g.layer_weights.iter_mut().map(Matrix::as_mut_slice));
        }
        if let ProjectorStage::Mlp(p) = &mut self.projector {
            out.extend([p.weights_1.as_mut_slice(), &mut p.bias_1, p.weights_2.as_mut_slice(), &mut p.bias_2]);
        }
        out
    }

    /// Number of leading [`ParameterSet::trainable`] tensors owned by the encoder.
    pub fn encoder_tensor_count(&self) -> usize {
        match &self.encoder {
            EncoderStage::Gnn(g) => g.layer_count(),
            EncoderStage::Raw { .. } => 0,
        }
    }

    pub fn digest(&self) -> Digest {
        let mut h = TensorHasher::default();
        match &self.encoder {
            EncoderStage::Gnn(g) => {
                h.label("gnn").label(g.activation.name());
                for w in &g.layer_weights {
                    h.matrix(w);
                }
            }
            EncoderStage::Raw { feature_dim } => {
                h.label("raw").usize(*feature_dim);
            }
        }
        match &self.projector {
            ProjectorStage::Mlp(p) => {
                h.label("mlp").label(p.activation.name());
                h.matrix(&p.weights_1).values(&p.bias_1).matrix(&p.weights_2).values(&p.bias_2);
            }
            ProjectorStage::Fixed(m) => {
                h.label("fixed").matrix(&m.weights);
            }
        }
        h.finish()
    }
}

/// Encoder and projector outputs for every node.
#[derive(Debug, Clone)]
pub struct TokenForward {
    /// Row `i` is node `i`'s graph token.
    pub tokens: Matrix,
    gnn: Option<GnnCache>,
    projection: Option<Projection>,
}

pub fn graph_tokens(ctx: &GraphContext, params: &ParameterSet) -> Result<TokenForward> {
    let (embeddings, gnn) = match &params.encoder {
        EncoderStage::Gnn(g) => {
            let (h, cache) = gnn_forward(&ctx.adjacency, &ctx.features, g)?;
            (h.matrix, Some(cache))
        }
        EncoderStage::Raw { .. } => (ctx.features.clone(), None),
    };
    match &params.projector {
        ProjectorStage::Mlp(p) => {
            let proj = project(&embeddings, p)?;
            Ok(TokenForward { tokens: proj.tokens.clone(), gnn, projection: Some(proj) })
        }
        ProjectorStage::Fixed(m) => Ok(TokenForward { tokens: m.apply(&embeddings)?, gnn, projection: None }),
    }
}

/// Gradients aligned with [`ParameterSet::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
    pub encoder_tensors: usize,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        l2(self.tensors.iter().flatten())
    }

    pub fn encoder_norm(&self) -> f64 {
        l2(self.tensors[..self.encoder_tensors].iter().flatten())
    }

    pub fn projector_norm(&self) -> f64 {
        l2(self.tensors[self.encoder_tensors..].iter().flatten())
    }
}

fn l2<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    libm::sqrt(values.map(|v| v * v).sum())
}

fn check_dataset<M: LanguageModel + ?Sized>(
    ctx: &GraphContext,
    model: &M,
    dataset: &[InstructionExample],
    params: &ParameterSet,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    params.validate(ctx.features.cols(), model.embed_dim())?;
    let n = ctx.features.rows();
    if let Some(bad) = dataset.iter().flat_map(|e| &e.layout.graph_slots).find(|s| s.node >= n) {
        return Err(Error::InvalidNode { node: bad.node, reason: "graph slot outside the graph".into() });
    }
    Ok(())
}

/// Mean response loss over `dataset` (forward only).
pub fn dataset_loss<M: LanguageModel + ?Sized>(
    ctx: &GraphContext,
    model: &M,
    dataset: &[InstructionExample],
    params: &ParameterSet,
) -> Result<f64> {
    check_dataset(ctx, model, dataset, params)?;
    let fwd = graph_tokens(ctx, params)?;
    let mut total = 0.0;
    for ex in dataset {
        let instr = ex.layout.embed(&fwd.tokens, model)?;
        total += model.response_loss(&instr, &ex.target)?.loss;
    }
    finite_loss(total / dataset.len() as f64)
}

fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("training loss"))
    }
}

/// Mean response loss and its gradient with respect to every trainable tensor.
/// Per-example contributions are reduced in dataset order.
pub fn loss_and_gradients<M: LanguageModel + ?Sized>(
    ctx: &GraphContext,
    model: &M,
    dataset: &[InstructionExample],
    params: &ParameterSet,
) -> Result<(f64, Gradients)> {
    check_dataset(ctx, model, dataset, params)?;
    let fwd = graph_tokens(ctx, params)?;
    let scale = 1.0 / dataset.len() as f64;
    let mut d_tokens = Matrix::zeros(fwd.tokens.rows(), fwd.tokens.cols());
    let mut total = 0.0;
    for ex in dataset {
        let instr = ex.layout.embed(&fwd.tokens, model)?;
        let rl = model.response_loss(&instr, &ex.target)?;
        total += rl.loss;
        for slot in &ex.layout.graph_slots {
            for (g, v) in d_tokens.row_mut(slot.node).iter_mut().zip(rl.instruction_grad.row(slot.position)) {
                *g += scale * v;
            }
        }
    }
    let loss = finite_loss(total * scale)?;

    let mut tensors = Vec::new();
    let d_embeddings = match (&params.projector, &fwd.projection) {
        (ProjectorStage::Mlp(p), Some(proj)) => {
            let g = project_backward(proj, p, &d_tokens)?;
            let proj_grads =
                [g.weights_1.into_vec(), g.bias_1, g.weights_2.into_vec(), g.bias_2];
            (g.input, Some(proj_grads))
        }
        (ProjectorStage::Fixed(m), _) => (m.backward(&d_tokens)?, None),
        (ProjectorStage::Mlp(_), None) => return Err(Error::StaleCache("projector")),
    };
    let encoder_tensors = params.encoder_tensor_count();
    if let (EncoderStage::Gnn(g), Some(cache)) = (&params.encoder, &fwd.gnn) {
        let gg = gnn_backward(&ctx.adjacency, cache, g, &d_embeddings.0)?;
        tensors.extend(gg.layer_weights.into_iter().map(Matrix::into_vec));
    }
    if let Some(p) = d_embeddings.1 {
        tensors.extend(p);
    }
    Ok((loss, Gradients { tensors, encoder_tensors }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Loss before the update.
    pub loss: f64,
    pub encoder_grad_norm: f64,
    pub projector_grad_norm: f64,
}

/// One full-batch forward, backward and optimizer update. Only the encoder
/// and projector change.
pub fn sft_step<M: LanguageModel + ?Sized>(
    ctx: &GraphContext,
    model: &M,
    dataset: &[InstructionExample],
    params: &mut ParameterSet,
    optimizer: &mut OptimizerState,
) -> Result<StepReport> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let (loss, grads) = loss_and_gradients(ctx, model, dataset, params)?;
    let report = StepReport { loss, encoder_grad_norm: grads.encoder_norm(), projector_grad_norm: grads.projector_norm() };
    let slices: Vec<&[f64]> = grads.tensors.iter().map(Vec::as_slice).collect();
    optimizer.step(params.trainable_mut(), slices);
    if params.trainable().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Only full-batch training is implemented.
    pub full_batch: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, optimizer: OptimizerConfig::default(), full_batch: true, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !self.full_batch {
            return Err(Error::InvalidArgument("mini-batch training is not supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Pre-update loss of each epoch.
    pub losses: Vec<f64>,
    pub encoder_grad_norms: Vec<f64>,
    pub projector_grad_norms: Vec<f64>,
}

/// Runs `config.epochs` steps of [`sft_step`], checking that the decoder
/// stays bit-identical.
pub fn fit<M: LanguageModel + ?Sized>(
    ctx: &GraphContext,
    model: &M,
    dataset: &[InstructionExample],
    params: &mut ParameterSet,
    config: &TrainConfig,
    optimizer: &mut OptimizerState,
) -> Result<FitReport> {
    config.validate()?;
    optimizer.config = config.optimizer;
    let before = model.digest();
    let mut report = FitReport { losses: Vec::new(), encoder_grad_norms: Vec::new(), projector_grad_norms: Vec::new() };
    for _ in 0..config.epochs {
        let step = sft_step(ctx, model, dataset, params, optimizer)?;
        report.losses.push(step.loss);
        report.encoder_grad_norms.push(step.encoder_grad_norm);
        report.projector_grad_norms.push(step.projector_grad_norm);
    }
    let after = model.digest();
    if before != after {
        return Err(Error::DecoderMutated { before: before.to_hex(), after: after.to_hex() });
    }
    Ok(report)
}

/// Ground-truth instruction examples for `nodes`, in the given order.
pub fn ground_truth_examples(
    graph: &TextAttributedGraph,
    nodes: impl IntoIterator<Item = NodeId>,
    template: &PromptTemplate,
    vocab: &Vocabulary,
) -> Result<Vec<InstructionExample>> {
    nodes
        .into_iter()
        .map(|n| {
            let class = graph.require_label(n)?;
            let layout = PromptLayout::build(n, graph, template, vocab)?;
            InstructionExample::new(layout, class, Provenance::GroundTruth, template, graph.label_space(), vocab)
        })
        .collect()
}

/// A scalar inside [`ParameterSet::trainable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCoord {
    pub tensor: usize,
    pub index: usize,
}

/// `count` coordinates drawn uniformly over all trainable scalars.
pub fn sample_coordinates(params: &ParameterSet, count: usize, rng: &mut SeededRng) -> Vec<ParamCoord> {
    let lens: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
    let total: usize = lens.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let mut k = rng.gen_range(0..total);
            let mut tensor = 0;
            while k >= lens[tensor] {
                k -= lens[tensor];
                tensor += 1;
            }
            ParamCoord { tensor, index: k }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

/// Compares analytic gradients with central differences at `coords`.
/// Relative error is `|a - n| / max(|a|, |n|, FD_DENOMINATOR_FLOOR)`.
pub fn finite_difference_check<M: LanguageModel + ?Sized>(
    ctx: &GraphContext,
    model: &M,
    dataset: &[InstructionExample],
    params: &ParameterSet,
    coords: &[ParamCoord],
) -> Result<GradCheckReport> {
    if coords.is_empty() {
        return Err(Error::InvalidArgument("no coordinates sampled".into()));
    }
    let (_, grads) = loss_and_gradients(ctx, model, dataset, params)?;
    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(coords.len());
    for &coord in coords {
        let analytic = *grads
            .tensors
            .get(coord.tensor)
            .and_then(|t| t.get(coord.index))
            .ok_or_else(|| Error::InvalidArgument(format!("coordinate {coord:?} out of range")))?;
        let original = params.trainable()[coord.tensor][coord.index];
        probe.trainable_mut()[coord.tensor][coord.index] = original + FD_STEP;
        let plus = dataset_loss(ctx, model, dataset, &probe)?;
        probe.trainable_mut()[coord.tensor][coord.index] = original - FD_STEP;
        let minus = dataset_loss(ctx, model, dataset, &probe)?;
        probe.trainable_mut()[coord.tensor][coord.index] = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let denom = analytic.abs().max(numeric.abs()).max(FD_DENOMINATOR_FLOOR);
        entries.push(GradCheckEntry { coord, analytic, numeric, relative_error: (analytic - numeric).abs() / denom });
    }
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_relative_error, entries })
}
