//! Greedy-decoding predictions, transductive accuracy and relative
//! improvement.

use alloc::vec::Vec;

use crate::confidence::ScoredResponse;
use crate::decoder::{decode_greedy, LanguageModel, PromptLayout, PromptTemplate, TokenId};
use crate::graph::{GraphContext, TextAttributedGraph};
use crate::linalg::Matrix;
use crate::training::{graph_tokens, ModelConfig, ParameterSet};
use crate::{Error, NodeId, Result};

/// Everything needed to turn parameters into per-node predictions.
pub struct TaskContext<'a, M: LanguageModel + ?Sized> {
    pub graph: &'a TextAttributedGraph,
    pub graph_ctx: GraphContext,
    pub template: &'a PromptTemplate,
    pub model: &'a M,
    pub label_ids: Vec<TokenId>,
    /// Greedy decoding stops after this many tokens.
    pub max_response_len: usize,
}

impl<'a, M: LanguageModel + ?Sized> TaskContext<'a, M> {
    pub fn new(
        graph: &'a TextAttributedGraph,
        template: &'a PromptTemplate,
        model: &'a M,
        model_config: &ModelConfig,
    ) -> Result<Self> {
        let label_ids = model.vocab().label_ids(graph.label_space())?;
        Ok(Self {
            graph,
            graph_ctx: model_config.graph_context(graph),
            template,
            model,
            label_ids,
            max_response_len: template.response_len() + 2,
        })
    }

    /// Decodes one node given precomputed graph tokens.
    pub fn score_node(&self, tokens: &Matrix, node: NodeId) -> Result<ScoredResponse> {
        let layout = PromptLayout::build(node, self.graph, self.template, self.model.vocab())?;
        let instruction = layout.embed(tokens, self.model)?;
        decode_greedy(&instruction, self.model, self.max_response_len, &self.label_ids)
    }

    /// One scored response per node, in the order of `nodes`.
    pub fn score_nodes<S: NodeScanner + ?Sized>(
        &self,
        params: &ParameterSet,
        nodes: &[NodeId],
        scanner: &S,
    ) -> Result<Vec<ScoredResponse>> {
        if nodes.is_empty() {
            return Ok(Vec::new());
        }
        let fwd = graph_tokens(&self.graph_ctx, params)?;
        let tokens = &fwd.tokens;
        scanner.scan(nodes, &|n| self.score_node(tokens, n))
    }
}

/// Runs a per-node scoring function over a node list. Implementations may
/// work in parallel but must return results in input order.
pub trait NodeScanner: Sync {
    fn scan(
        &self,
        nodes: &[NodeId],
        score: &(dyn Fn(NodeId) -> Result<ScoredResponse> + Sync),
    ) -> Result<Vec<ScoredResponse>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl NodeScanner for Sequential {
    fn scan(
        &self,
        nodes: &[NodeId],
        score: &(dyn Fn(NodeId) -> Result<ScoredResponse> + Sync),
    ) -> Result<Vec<ScoredResponse>> {
        nodes.iter().map(|&n| score(n)).collect()
    }
}

/// Fraction of `responses` whose parsed label equals the node's ground
/// truth; rejects count as wrong.
pub fn accuracy_of(responses: &[ScoredResponse], graph: &TextAttributedGraph) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for r in responses {
        let truth = graph.require_label(r.node_id)?;
        if r.parsed_label == Some(truth) {
            correct += 1;
        }
    }
    Ok(correct as f64 / responses.len() as f64)
}

pub fn evaluate_accuracy<M: LanguageModel + ?Sized, S: NodeScanner + ?Sized>(
    task: &TaskContext<'_, M>,
    params: &ParameterSet,
    eval_nodes: &[NodeId],
    scanner: &S,
) -> Result<f64> {
    if eval_nodes.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    for &n in eval_nodes {
        task.graph.require_label(n)?;
    }
    accuracy_of(&task.score_nodes(params, eval_nodes, scanner)?, task.graph)
}

/// `100 (improved - baseline) / baseline`, unrounded.
pub fn relative_improvement_exact(baseline: f64, improved: f64) -> Result<f64> {
    if !(baseline > 0.0) || !baseline.is_finite() || !improved.is_finite() {
        return Err(Error::InvalidArgument("relative improvement needs a positive finite baseline".into()));
    }
    Ok(100.0 * (improved - baseline) / baseline)
}

/// [`relative_improvement_exact`] rounded to one decimal.
pub fn relative_improvement(baseline: f64, improved: f64) -> Result<f64> {
    relative_improvement_exact(baseline, improved).map(round_tenth)
}

/// Half-away-from-zero rounding to one decimal; `-0.0` becomes `0.0`.
pub fn round_tenth(x: f64) -> f64 {
    let r = libm::round(x * 10.0) / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}
