//! Scripted stand-ins for the decoder.
//!
//! A [`ScriptedDecoder`] ignores its input embeddings and, for each node,
//! emits a fixed token sequence with a fixed probability per token. The
//! remaining mass is spread evenly over the rest of the vocabulary. Its loss
//! has a zero instruction gradient, so training on it leaves the encoder and
//! projector untouched.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::prompt::{Instruction, PromptTemplate};
use super::vocab::{TokenId, Vocabulary};
use super::{LanguageModel, ResponseLoss};
use crate::digest::{Digest, TensorHasher};
use crate::graph::TextAttributedGraph;
use crate::linalg::{ln, Matrix};
use crate::{seeded_rng, ClassId, Error, NodeId, Result};

const LOGPROB_FLOOR: f64 = -50.0;

/// One scripted step: the emitted token and its probability.
pub type ScriptStep = (TokenId, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedDecoder {
    vocab: Vocabulary,
    embeddings: Matrix,
    max_len: usize,
    /// Indexed by node id. Nodes past the end emit `<eos>` with certainty.
    scripts: Vec<Vec<ScriptStep>>,
}

impl ScriptedDecoder {
    pub fn new(vocab: Vocabulary, embed_dim: usize, max_len: usize, scripts: Vec<Vec<ScriptStep>>, seed: u64) -> Result<Self> {
        for step in scripts.iter().flatten() {
            if step.0.index() >= vocab.len() || !(step.1 > 0.0 && step.1 <= 1.0) {
                return Err(Error::InvalidArgument("script step needs an in-vocabulary token and 0 < p <= 1".into()));
            }
        }
        let mut rng = seeded_rng(seed);
        let embeddings = Matrix::uniform(vocab.len(), embed_dim, 1.0, &mut rng);
        Ok(Self { vocab, embeddings, max_len, scripts })
    }

    /// Always answers with the node's true label, every token certain.
    /// Unlabeled nodes emit an unparseable response.
    pub fn oracle(graph: &TextAttributedGraph, template: &PromptTemplate, vocab: Vocabulary, embed_dim: usize) -> Result<Self> {
        let scripts = (0..graph.node_count())
            .map(|n| match graph.label(n) {
                Some(c) => certain(template.response_tokens(c, graph.label_space(), &vocab)),
                None => Ok(vec![(Vocabulary::UNK, 1.0), (Vocabulary::EOS, 1.0)]),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(vocab, embed_dim, 64, scripts, 0)
    }

    /// Emits no label word for any node.
    pub fn no_label(node_count: usize, vocab: Vocabulary, embed_dim: usize) -> Result<Self> {
        let scripts = vec![vec![(Vocabulary::UNK, 1.0), (Vocabulary::EOS, 1.0)]; node_count];
        Self::new(vocab, embed_dim, 64, scripts, 0)
    }

    /// Every node answers with `class_of(node)` and the label token has
    /// probability `p`; `<eos>` is certain.
    pub fn constant<F: Fn(NodeId) -> ClassId>(
        graph: &TextAttributedGraph,
        template: &PromptTemplate,
        vocab: Vocabulary,
        embed_dim: usize,
        class_of: F,
        p: f64,
    ) -> Result<Self> {
        let scripts = (0..graph.node_count())
            .map(|n| scripted_label(template, graph, &vocab, class_of(n), p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vocab, embed_dim, 64, scripts, 0)
    }

    /// Label noise with informative confidence: each node is mislabeled with
    /// probability `noise_rate`. Mislabeled answers get a label-token
    /// probability from `noisy_p`, correct ones from `clean_p`.
    pub fn noisy(
        graph: &TextAttributedGraph,
        template: &PromptTemplate,
        vocab: Vocabulary,
        embed_dim: usize,
        noise: &NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        let classes = graph.class_count();
        if classes < 2 {
            return Err(Error::InvalidArgument("label noise needs at least two classes".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut scripts = Vec::with_capacity(graph.node_count());
        for n in 0..graph.node_count() {
            let truth = graph.require_label(n)?;
            let flip = rng.gen::<f64>() < noise.noise_rate;
            let (class, range) = if flip {
                ((truth + rng.gen_range(1..classes)) % classes, noise.noisy_p)
            } else {
                (truth, noise.clean_p)
            };
            let p = rng.gen_range(range.0..=range.1);
            scripts.push(scripted_label(template, graph, &vocab, class, p)?);
        }
        Self::new(vocab, embed_dim, 64, scripts, seed)
    }

    pub fn script(&self, node: NodeId) -> &[ScriptStep] {
        self.scripts.get(node).map_or(&[], Vec::as_slice)
    }

    fn step_logprobs(&self, node: NodeId, step: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let (tok, p) = self.script(node).get(step).copied().unwrap_or((Vocabulary::EOS, 1.0));
        let rest = if p < 1.0 && v > 1 { ln((1.0 - p) / (v - 1) as f64) } else { f64::NEG_INFINITY };
        let mut out = vec![rest; v];
        out[tok.index()] = ln(p);
        out
    }
}

/// Parameters of [`ScriptedDecoder::noisy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub noise_rate: f64,
    pub noisy_p: (f64, f64),
    pub clean_p: (f64, f64),
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { noise_rate: 0.2, noisy_p: (0.15, 0.6), clean_p: (0.35, 1.0) }
    }
}

fn certain(tokens: Result<Vec<TokenId>>) -> Result<Vec<ScriptStep>> {
    Ok(tokens?.into_iter().map(|t| (t, 1.0)).collect())
}

fn scripted_label(
    template: &PromptTemplate,
    graph: &TextAttributedGraph,
    vocab: &Vocabulary,
    class: ClassId,
    p: f64,
) -> Result<Vec<ScriptStep>> {
    let mut steps = certain(template.response_tokens(class, graph.label_space(), vocab))?;
    if let Some(first) = steps.first_mut() {
        first.1 = p;
    }
    Ok(steps)
}

impl LanguageModel for ScriptedDecoder {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn is_frozen(&self) -> bool {
        true
    }

    fn digest(&self) -> Digest {
        let mut h = TensorHasher::default();
        h.label("scripted").usize(self.vocab.len()).matrix(&self.embeddings);
        for s in &self.scripts {
            h.usize(s.len());
            let flat: Vec<f64> = s.iter().flat_map(|&(t, p)| [t.index() as f64, p]).collect();
            h.matrix(&Matrix::from_vec(1, flat.len(), flat).expect("flat script"));
        }
        h.finish()
    }

    fn token_embedding(&self, id: TokenId) -> &[f64] {
        self.embeddings.row(id.index())
    }

    fn next_token_logprobs(&self, instruction: &Instruction, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.step_logprobs(instruction.node_id, prefix.len()))
    }

    fn response_loss(&self, instruction: &Instruction, target: &[TokenId]) -> Result<ResponseLoss> {
        if target.is_empty() {
            return Err(Error::Empty("target response"));
        }
        let mut loss = 0.0;
        for (k, t) in target.iter().enumerate() {
            let lp = self.step_logprobs(instruction.node_id, k)[t.index()];
            loss -= lp.max(LOGPROB_FLOOR);
        }
        loss /= target.len() as f64;
        Ok(ResponseLoss { loss, instruction_grad: Matrix::zeros(instruction.len(), self.embed_dim()) })
    }
}
