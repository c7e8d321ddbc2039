use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TextAttributedGraph;
use crate::linalg::Matrix;
use crate::{seeded_rng, ClassId, Error, Result};

/// Parameters of the stochastic-block-model generator.
///
/// Every class owns a pool of `words_per_class` words; a shared pool of
/// `common_words` words is class-neutral. Each of a node's `text_len` words
/// comes from its own class pool with probability `class_word_rate`,
/// otherwise uniformly from the whole vocabulary. Features are bag-of-words
/// counts over that vocabulary in [`SyntheticConfig::vocabulary`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub words_per_class: usize,
    pub common_words: usize,
    pub text_len: usize,
    pub class_word_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 300,
            classes: 3,
            p_in: 0.1,
            p_out: 0.01,
            words_per_class: 20,
            common_words: 40,
            text_len: 16,
            class_word_rate: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn new(nodes: usize, classes: usize, p_in: f64, p_out: f64, words_per_class: usize, seed: u64) -> Self {
        Self { nodes, classes, p_in, p_out, words_per_class, seed, ..Self::default() }
    }

    pub fn label_name(class: ClassId) -> String {
        if class < 26 {
            format!("label_{}", (b'a' + class as u8) as char)
        } else {
            format!("label_{class}")
        }
    }

    pub fn label_space(&self) -> Vec<String> {
        (0..self.classes).map(Self::label_name).collect()
    }

    /// Word pool of each class.
    pub fn class_pools(&self) -> Vec<Vec<String>> {
        (0..self.classes)
            .map(|c| (0..self.words_per_class).map(|k| format!("topic{c}_{k}")).collect())
            .collect()
    }

    pub fn common_pool(&self) -> Vec<String> {
        (0..self.common_words).map(|k| format!("common{k}")).collect()
    }

    /// Feature vocabulary: class pools in class order, then the common pool.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = self.class_pools().into_iter().flatten().collect();
        words.extend(self.common_pool());
        words
    }

    fn validate(&self) -> Result<()> {
        let probs_ok = (0.0..=1.0).contains(&self.p_in) && self.p_out >= 0.0 && self.p_out < self.p_in;
        if !probs_ok {
            return Err(Error::InvalidArgument(format!(
                "edge probabilities must satisfy 0 <= p_out < p_in <= 1 (p_in={}, p_out={})",
                self.p_in, self.p_out
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("at least two classes are required".into()));
        }
        if self.nodes < self.classes {
            return Err(Error::InvalidArgument(format!(
                "{} nodes cannot cover {} classes",
                self.nodes, self.classes
            )));
        }
        if self.words_per_class == 0 {
            return Err(Error::InvalidArgument("words_per_class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.class_word_rate) {
            return Err(Error::InvalidArgument("class_word_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generates a fully labeled SBM graph; bitwise deterministic in `config`.
pub fn make_synthetic_graph(config: &SyntheticConfig) -> Result<TextAttributedGraph> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let n = config.nodes;
    let mut labels: Vec<ClassId> = (0..n).map(|i| i % config.classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { config.p_in } else { config.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let vocab = config.vocabulary();
    let mut features = Matrix::zeros(n, vocab.len());
    let mut texts = Vec::with_capacity(n);
    for (node, &class) in labels.iter().enumerate() {
        let mut words = Vec::with_capacity(config.text_len);
        for _ in 0..config.text_len {
            let idx = if rng.gen::<f64>() < config.class_word_rate {
                class * config.words_per_class + rng.gen_range(0..config.words_per_class)
            } else {
                rng.gen_range(0..vocab.len())
            };
            features[(node, idx)] += 1.0;
            words.push(vocab[idx].as_str());
        }
        texts.push(words.join(" "));
    }

    TextAttributedGraph::new(
        config.label_space(),
        texts,
        features,
        labels.into_iter().map(Some).collect(),
        &edges,
    )
}
