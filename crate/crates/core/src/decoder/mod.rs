//! The frozen generative predictor: vocabulary, prompt construction, a tiny
//! causal transformer, greedy decoding and pretraining.

pub mod doubles;
mod generate;
mod pretrain;
mod prompt;
mod transformer;
mod vocab;

pub use generate::{decode_greedy, parse_label};
pub use pretrain::{pretrain_decoder, CorpusSpec, PretrainConfig, PretrainReport};
pub use prompt::{
    build_instruction, GraphSlot, Instruction, InstructionExample, PromptLayout, PromptTemplate, PromptWarning,
    Provenance, Segment, DEFAULT_TEMPLATE,
};
pub use transformer::{BlockWeights, DecoderWeights, ForwardCache, TransformerConfig, TransformerDecoder};
pub use vocab::{detokenize, label_word, split_words, tokenize, TokenId, Vocabulary};

use alloc::vec::Vec;

use crate::digest::Digest;
use crate::linalg::Matrix;
use crate::Result;

/// Loss over the response positions and its gradient with respect to every
/// instruction embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseLoss {
    pub loss: f64,
    pub instruction_grad: Matrix,
}

/// A frozen autoregressive predictor conditioned on embedded prompts.
///
/// Implementations must be pure: the same instruction and prefix always give
/// the same distribution.
pub trait LanguageModel: Sync {
    fn vocab(&self) -> &Vocabulary;
    fn embed_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn is_frozen(&self) -> bool;
    fn digest(&self) -> Digest;
    fn token_embedding(&self, id: TokenId) -> &[f64];

    /// Log-probabilities of the next token after the prompt and `prefix`.
    fn next_token_logprobs(&self, instruction: &Instruction, prefix: &[TokenId]) -> Result<Vec<f64>>;

    /// Mean cross-entropy of `target` given the prompt, with instruction
    /// positions masked out of the loss.
    fn response_loss(&self, instruction: &Instruction, target: &[TokenId]) -> Result<ResponseLoss>;
}

/// Vocabulary covering a template, a graph's label words and every word of
/// its node texts.
pub fn graph_vocabulary(graph: &crate::graph::TextAttributedGraph, template: &PromptTemplate) -> Vocabulary {
    let labels = graph.label_space().iter().map(|l| label_word(l));
    let text = graph.texts().iter().flat_map(|t| split_words(t));
    Vocabulary::build(template.literal_words().into_iter().chain(labels).chain(text))
}
