//! Deterministic next-token pretraining of the decoder on templated
//! instruction/response strings.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prompt::PromptTemplate;
use super::transformer::{cross_entropy, TransformerConfig, TransformerDecoder};
use super::vocab::{label_word, TokenId, Vocabulary};
use crate::graph::SyntheticConfig;
use crate::linalg::Matrix;
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::{seeded_rng, ClassId, Error, Result, SeededRng};

/// Distribution of the synthetic pretraining corpus.
///
/// Each sequence picks a class uniformly, then a text of
/// `min_text_len..=max_text_len` words: each word comes from the class pool
/// with probability `class_word_rate`, otherwise uniformly from
/// `background_words`. With probability `slot_word_rate` each graph slot
/// holds a word from the class pool instead of the `<graph>` placeholder.
/// The response is the class's label word. With empty class pools the corpus
/// only teaches the prompt/response format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub label_space: Vec<String>,
    pub class_words: Vec<Vec<String>>,
    pub background_words: Vec<String>,
    pub class_word_rate: f64,
    pub slot_word_rate: f64,
    pub min_text_len: usize,
    pub max_text_len: usize,
}

impl CorpusSpec {
    /// Mirrors the text distribution of a synthetic graph.
    pub fn from_synthetic(config: &SyntheticConfig, max_text_len: usize) -> Self {
        Self {
            label_space: config.label_space(),
            class_words: config.class_pools(),
            background_words: config.vocabulary(),
            class_word_rate: config.class_word_rate,
            slot_word_rate: 0.5,
            min_text_len: 0,
            max_text_len,
        }
    }

    /// Format-only corpus: random background text, uniformly random label.
    pub fn format_only(label_space: Vec<String>, background_words: Vec<String>, max_text_len: usize) -> Self {
        let classes = label_space.len();
        Self {
            label_space,
            class_words: alloc::vec![Vec::new(); classes],
            background_words,
            class_word_rate: 0.0,
            slot_word_rate: 0.0,
            min_text_len: 0,
            max_text_len,
        }
    }

    /// Every word the corpus or the template can produce.
    pub fn vocabulary(&self, template: &PromptTemplate) -> Vocabulary {
        let labels = self.label_space.iter().map(|l| label_word(l));
        let words = template
            .literal_words()
            .into_iter()
            .chain(labels)
            .chain(self.class_words.iter().flatten().cloned())
            .chain(self.background_words.iter().cloned());
        Vocabulary::build(words)
    }

    fn validate(&self) -> Result<()> {
        if self.label_space.is_empty() {
            return Err(Error::InvalidArgument("corpus needs at least one label".into()));
        }
        if self.class_words.len() != self.label_space.len() {
            return Err(Error::InvalidArgument("one class word pool per label is required".into()));
        }
        if self.min_text_len > self.max_text_len {
            return Err(Error::InvalidArgument("min_text_len exceeds max_text_len".into()));
        }
        if self.max_text_len > 0 && self.background_words.is_empty() && self.class_words.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("corpus has no words to sample text from".into()));
        }
        Ok(())
    }

    /// Samples one `(class, text token ids)` pair.
    pub fn sample(&self, vocab: &Vocabulary, rng: &mut SeededRng) -> (ClassId, Vec<TokenId>) {
        let class = rng.gen_range(0..self.label_space.len());
        (class, self.sample_text(class, vocab, rng))
    }

    fn sample_text(&self, class: ClassId, vocab: &Vocabulary, rng: &mut SeededRng) -> Vec<TokenId> {
        let len = rng.gen_range(self.min_text_len..=self.max_text_len);
        let pool = &self.class_words[class];
        let text = (0..len)
            .map(|_| {
                let word = if !pool.is_empty() && (self.background_words.is_empty() || rng.gen::<f64>() < self.class_word_rate)
                {
                    &pool[rng.gen_range(0..pool.len())]
                } else {
                    &self.background_words[rng.gen_range(0..self.background_words.len())]
                };
                vocab.id_or_unk(word)
            })
            .collect();
        text
    }

    /// Full training sequence and the index of the first response token.
    pub fn sample_sequence(
        &self,
        template: &PromptTemplate,
        vocab: &Vocabulary,
        rng: &mut SeededRng,
    ) -> Result<(Vec<TokenId>, usize)> {
        let (class, text) = self.sample(vocab, rng);
        let mut seq = template.prompt_for_text(&text, vocab);
        let pool = &self.class_words[class];
        for t in seq.iter_mut().filter(|t| **t == Vocabulary::GRAPH) {
            if !pool.is_empty() && rng.gen::<f64>() < self.slot_word_rate {
                *t = vocab.id_or_unk(&pool[rng.gen_range(0..pool.len())]);
            }
        }
        let response_start = seq.len();
        seq.extend(template.response_tokens(class, &self.label_space, vocab)?);
        Ok((seq, response_start))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub transformer: TransformerConfig,
    /// Also predict prompt tokens; by default only the response is scored.
    pub loss_on_prompt: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            transformer: TransformerConfig::default(),
            loss_on_prompt: false,
            steps: 600,
            batch_size: 16,
            optimizer: OptimizerConfig { learning_rate: 3e-3, ..OptimizerConfig::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Trains a fresh decoder by next-token prediction on sampled templated
/// sequences, then freezes it. Only response positions are scored unless
/// `loss_on_prompt` is set.
pub fn pretrain_decoder(
    corpus: &CorpusSpec,
    template: &PromptTemplate,
    config: &PretrainConfig,
) -> Result<(TransformerDecoder, PretrainReport)> {
    corpus.validate()?;
    if config.batch_size == 0 || config.steps == 0 {
        return Err(Error::InvalidArgument("pretraining needs positive steps and batch size".into()));
    }
    let vocab = corpus.vocabulary(template);
    let mut rng = seeded_rng(config.seed);
    let mut model = TransformerDecoder::new(vocab, config.transformer.clone(), &mut rng)?;
    let mut optimizer = OptimizerState::new(config.optimizer);
    let mut losses = Vec::with_capacity(config.steps);

    let max_seq = 1 + template.prompt_literal_len() + template.graph_slots() + corpus.max_text_len.min(template.max_text_len)
        + template.response_len();
    if max_seq > model.config.max_len {
        return Err(Error::SequenceTooLong { len: max_seq, max_len: model.config.max_len });
    }

    for step in 0..config.steps {
        let mut grads = model.weights.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let (seq, response_start) = corpus.sample_sequence(template, &model.vocab, &mut rng)?;
            let inputs = &seq[..seq.len() - 1];
            let first = if config.loss_on_prompt { 0 } else { response_start - 1 };
            let targets = &seq[first + 1..];
            let mut x = Matrix::zeros(0, model.config.d_model);
            for &t in inputs {
                x.push_row(model.weights.token_embeddings.row(t.index()));
            }
            let cache = model.hidden(&x)?;
            let rows: Vec<usize> = (first..inputs.len()).collect();
            let logits = model.logits(&cache, &rows);
            let (loss, mut dlogits) = cross_entropy(&logits, targets);
            if !loss.is_finite() {
                return Err(Error::NonFinite("pretraining loss"));
            }
            batch_loss += loss / config.batch_size as f64;
            dlogits.scale(1.0 / config.batch_size as f64);
            let d_input = model.backward(&cache, &rows, &dlogits, Some(&mut grads));
            for (i, &t) in inputs.iter().enumerate() {
                for (g, v) in grads.token_embeddings.row_mut(t.index()).iter_mut().zip(d_input.row(i)) {
                    *g += v;
                }
            }
        }
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite("pretraining loss"));
        }
        losses.push(batch_loss);
        let grad_slices: Vec<&[f64]> = grads.tensors().into_iter().map(Matrix::as_slice).collect();
        let param_slices: Vec<&mut [f64]> = model.weights.tensors_mut().into_iter().map(Matrix::as_mut_slice).collect();
        optimizer.step(param_slices, grad_slices);
        if !model.weights.is_finite() {
            return Err(Error::NonFinite(if step == 0 { "first pretraining update" } else { "pretraining update" }));
        }
    }
    model.freeze();
    Ok((model, PretrainReport { losses }))
}
