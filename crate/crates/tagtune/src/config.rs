//! Run settings. A plain-text file of `key = value` lines supplies defaults;
//! every key is also a `--key` command-line flag that overrides the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use tagtune_core::decoder::{PretrainConfig, PromptTemplate, DEFAULT_TEMPLATE};
use tagtune_core::graph::{Normalization, SyntheticConfig};
use tagtune_core::linalg::Activation;
use tagtune_core::optim::OptimizerKind;
use tagtune_core::selftrain::SelfTrainConfig;
use tagtune_core::training::ModelConfig;

use crate::error::{Error, Result};
use crate::harness::{DecoderKind, Variant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    /// Graph JSON file; the synthetic generator is used when absent.
    pub graph: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub template: String,
    pub max_text_len: usize,
    pub neighbor_tokens: usize,
    pub pretrain: PretrainConfig,
    pub slot_word_rate: f64,
    pub model: ModelConfig,
    pub selftrain: SelfTrainConfig,
    pub ratio: f64,
    pub seed: u64,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Decoder checkpoint; a transformer decoder is pretrained in-process
    /// when absent.
    pub decoder: Option<PathBuf>,
    pub decoder_kind: DecoderKind,
    pub noise_rate: f64,
    pub double_embed_dim: usize,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let template = PromptTemplate::default();
        Self {
            graph: None,
            synthetic: SyntheticConfig::default(),
            template: DEFAULT_TEMPLATE.to_string(),
            max_text_len: template.max_text_len,
            neighbor_tokens: 0,
            pretrain: PretrainConfig::default(),
            slot_word_rate: 0.5,
            model: ModelConfig::default(),
            selftrain: SelfTrainConfig::default(),
            ratio: 0.01,
            seed: 0,
            ratios: vec![0.005, 0.01, 0.05, 0.2, 0.5, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
            variants: vec![Variant::Full, Variant::SupervisedOnly],
            decoder: None,
            decoder_kind: DecoderKind::Transformer,
            noise_rate: 0.2,
            double_embed_dim: 32,
            threads: 0,
        }
    }
}

/// Every settings key with a one-line description, in display order.
pub const KEYS: &[(&str, &str)] = &[
    ("graph", "graph JSON file (default: synthetic graph)"),
    ("nodes", "synthetic graph: node count"),
    ("classes", "synthetic graph: class count"),
    ("p-in", "synthetic graph: within-class edge probability"),
    ("p-out", "synthetic graph: between-class edge probability"),
    ("words-per-class", "synthetic graph: words in each class pool"),
    ("common-words", "synthetic graph: class-neutral words"),
    ("text-len", "synthetic graph: words per node text"),
    ("class-word-rate", "synthetic graph: probability a word comes from the class pool"),
    ("graph-seed", "synthetic graph: base seed, offset by the run seed"),
    ("template", "prompt template"),
    ("max-text-len", "node text tokens kept in the prompt"),
    ("neighbor-tokens", "extra graph tokens for 1-hop neighbours"),
    ("pretrain-steps", "decoder pretraining steps"),
    ("pretrain-batch", "decoder pretraining batch size"),
    ("pretrain-lr", "decoder pretraining learning rate"),
    ("pretrain-seed", "decoder pretraining seed"),
    ("loss-on-prompt", "also score prompt tokens during pretraining"),
    ("slot-word-rate", "probability a pretraining graph slot holds a class word"),
    ("d-model", "decoder width"),
    ("n-heads", "decoder attention heads"),
    ("n-layers", "decoder blocks"),
    ("d-ff", "decoder feed-forward width"),
    ("max-len", "decoder context length"),
    ("gnn-dims", "encoder layer widths, comma separated"),
    ("gnn-activation", "encoder activation: relu, tanh or identity"),
    ("normalization", "adjacency normalization: symmetric or self-loop"),
    ("row-normalize", "scale feature rows to unit sum"),
    ("projector-hidden", "projector hidden width"),
    ("projector-activation", "projector activation: relu, tanh or identity"),
    ("epochs", "optimizer steps per fit"),
    ("optimizer", "adam or gd"),
    ("lr", "fine-tuning learning rate"),
    ("beta1", "adam first-moment decay"),
    ("beta2", "adam second-moment decay"),
    ("epsilon", "adam epsilon"),
    ("init-seed", "base seed for parameter initialization, offset by the run seed"),
    ("threshold", "confidence threshold; -inf accepts every parseable response"),
    ("max-rounds", "self-training rounds"),
    ("warm-start", "continue each round from the previous parameters"),
    ("rescore-pseudo", "re-score and relabel pseudo-labeled nodes each round"),
    ("ratio", "labeled-to-unlabeled node ratio"),
    ("seed", "run seed"),
    ("ratios", "sweep ratios, comma separated"),
    ("seeds", "sweep seeds, comma separated"),
    ("variants", "full, supervised-only, wo-gnn, wo-ap, wo-cf; comma separated"),
    ("decoder", "decoder checkpoint JSON"),
    ("decoder-kind", "transformer, oracle or noisy"),
    ("noise-rate", "noisy decoder double: mislabel probability"),
    ("double-embed-dim", "embedding width of the decoder doubles"),
    ("threads", "worker threads (0 = automatic)"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::config(key, format!("{value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("{value:?} is not a boolean"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(key, "list is empty"));
    }
    Ok(items)
}

fn parse_activation(key: &str, value: &str) -> Result<Activation> {
    Activation::parse(value).ok_or_else(|| Error::config(key, format!("unknown activation {value:?}")))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl Settings {
    /// Values tuned on the synthetic benchmark; see `configs/benchmark.conf`.
    pub fn benchmark() -> Self {
        let mut s = Self::default();
        s.synthetic.seed = 1000;
        s.pretrain.steps = 1000;
        s.selftrain.train.epochs = 100;
        s.selftrain.train.optimizer.learning_rate = 1e-2;
        s.selftrain.threshold = 0.99;
        s.selftrain.max_rounds = 3;
        s
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        let v = value.trim();
        let syn = &mut self.synthetic;
        let tr = &mut self.pretrain.transformer;
        let train = &mut self.selftrain.train;
        match k {
            "graph" => self.graph = (!v.is_empty()).then(|| PathBuf::from(v)),
            "nodes" => syn.nodes = parse(k, v)?,
            "classes" => syn.classes = parse(k, v)?,
            "p-in" => syn.p_in = parse(k, v)?,
            "p-out" => syn.p_out = parse(k, v)?,
            "words-per-class" => syn.words_per_class = parse(k, v)?,
            "common-words" => syn.common_words = parse(k, v)?,
            "text-len" => syn.text_len = parse(k, v)?,
            "class-word-rate" => syn.class_word_rate = parse(k, v)?,
            "graph-seed" => syn.seed = parse(k, v)?,
            "template" => self.template = v.to_string(),
            "max-text-len" => self.max_text_len = parse(k, v)?,
            "neighbor-tokens" => self.neighbor_tokens = parse(k, v)?,
            "pretrain-steps" => self.pretrain.steps = parse(k, v)?,
            "pretrain-batch" => self.pretrain.batch_size = parse(k, v)?,
            "pretrain-lr" => self.pretrain.optimizer.learning_rate = parse(k, v)?,
            "pretrain-seed" => self.pretrain.seed = parse(k, v)?,
            "loss-on-prompt" => self.pretrain.loss_on_prompt = parse_bool(k, v)?,
            "slot-word-rate" => self.slot_word_rate = parse(k, v)?,
            "d-model" => tr.d_model = parse(k, v)?,
            "n-heads" => tr.n_heads = parse(k, v)?,
            "n-layers" => tr.n_layers = parse(k, v)?,
            "d-ff" => tr.d_ff = parse(k, v)?,
            "max-len" => tr.max_len = parse(k, v)?,
            "gnn-dims" => self.model.gnn_dims = parse_list(k, v)?,
            "gnn-activation" => self.model.gnn_activation = parse_activation(k, v)?,
            "normalization" => {
                self.model.normalization =
                    Normalization::parse(v).ok_or_else(|| Error::config(k, format!("unknown normalization {v:?}")))?
            }
            "row-normalize" => self.model.row_normalize_features = parse_bool(k, v)?,
            "projector-hidden" => self.model.projector_hidden = parse(k, v)?,
            "projector-activation" => self.model.projector_activation = parse_activation(k, v)?,
            "epochs" => train.epochs = parse(k, v)?,
            "optimizer" => {
                train.optimizer.kind = match v {
                    "adam" => OptimizerKind::Adam,
                    "gd" | "sgd" | "gradient-descent" => OptimizerKind::GradientDescent,
                    _ => return Err(Error::config(k, format!("unknown optimizer {v:?}"))),
                }
            }
            "lr" => train.optimizer.learning_rate = parse(k, v)?,
            "beta1" => train.optimizer.beta1 = parse(k, v)?,
            "beta2" => train.optimizer.beta2 = parse(k, v)?,
            "epsilon" => train.optimizer.epsilon = parse(k, v)?,
            "init-seed" => train.seed = parse(k, v)?,
            "threshold" => self.selftrain.threshold = parse(k, v)?,
            "max-rounds" => self.selftrain.max_rounds = parse(k, v)?,
            "warm-start" => self.selftrain.warm_start = parse_bool(k, v)?,
            "rescore-pseudo" => self.selftrain.rescore_pseudo = parse_bool(k, v)?,
            "ratio" => self.ratio = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "ratios" => self.ratios = parse_list(k, v)?,
            "seeds" => self.seeds = parse_list(k, v)?,
            "variants" => self.variants = parse_list(k, v)?,
            "decoder" => self.decoder = (!v.is_empty()).then(|| PathBuf::from(v)),
            "decoder-kind" => self.decoder_kind = parse(k, v)?,
            "noise-rate" => self.noise_rate = parse(k, v)?,
            "double-embed-dim" => self.double_embed_dim = parse(k, v)?,
            "threads" => self.threads = parse(k, v)?,
            _ => return Err(Error::config(k, "unknown key")),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax [`Settings::apply`] accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let key = normalize_key(key);
        let k = key.as_str();
        let syn = &self.synthetic;
        let tr = &self.pretrain.transformer;
        let train = &self.selftrain.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Ok(match k {
            "graph" => path(&self.graph),
            "nodes" => syn.nodes.to_string(),
            "classes" => syn.classes.to_string(),
            "p-in" => syn.p_in.to_string(),
            "p-out" => syn.p_out.to_string(),
            "words-per-class" => syn.words_per_class.to_string(),
            "common-words" => syn.common_words.to_string(),
            "text-len" => syn.text_len.to_string(),
            "class-word-rate" => syn.class_word_rate.to_string(),
            "graph-seed" => syn.seed.to_string(),
            "template" => self.template.clone(),
            "max-text-len" => self.max_text_len.to_string(),
            "neighbor-tokens" => self.neighbor_tokens.to_string(),
            "pretrain-steps" => self.pretrain.steps.to_string(),
            "pretrain-batch" => self.pretrain.batch_size.to_string(),
            "pretrain-lr" => self.pretrain.optimizer.learning_rate.to_string(),
            "pretrain-seed" => self.pretrain.seed.to_string(),
            "loss-on-prompt" => self.pretrain.loss_on_prompt.to_string(),
            "slot-word-rate" => self.slot_word_rate.to_string(),
            "d-model" => tr.d_model.to_string(),
            "n-heads" => tr.n_heads.to_string(),
            "n-layers" => tr.n_layers.to_string(),
            "d-ff" => tr.d_ff.to_string(),
            "max-len" => tr.max_len.to_string(),
            "gnn-dims" => join(&self.model.gnn_dims),
            "gnn-activation" => self.model.gnn_activation.name().to_string(),
            "normalization" => match self.model.normalization {
                Normalization::SymmetricNormalized => "symmetric".into(),
                Normalization::SelfLoopOnly => "self-loop".into(),
            },
            "row-normalize" => self.model.row_normalize_features.to_string(),
            "projector-hidden" => self.model.projector_hidden.to_string(),
            "projector-activation" => self.model.projector_activation.name().to_string(),
            "epochs" => train.epochs.to_string(),
            "optimizer" => match train.optimizer.kind {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::GradientDescent => "gd".into(),
            },
            "lr" => train.optimizer.learning_rate.to_string(),
            "beta1" => train.optimizer.beta1.to_string(),
            "beta2" => train.optimizer.beta2.to_string(),
            "epsilon" => train.optimizer.epsilon.to_string(),
            "init-seed" => train.seed.to_string(),
            "threshold" => self.selftrain.threshold.to_string(),
            "max-rounds" => self.selftrain.max_rounds.to_string(),
            "warm-start" => self.selftrain.warm_start.to_string(),
            "rescore-pseudo" => self.selftrain.rescore_pseudo.to_string(),
            "ratio" => self.ratio.to_string(),
            "seed" => self.seed.to_string(),
            "ratios" => join(&self.ratios),
            "seeds" => join(&self.seeds),
            "variants" => join(&self.variants),
            "decoder" => path(&self.decoder),
            "decoder-kind" => self.decoder_kind.to_string(),
            "noise-rate" => self.noise_rate.to_string(),
            "double-embed-dim" => self.double_embed_dim.to_string(),
            "threads" => self.threads.to_string(),
            _ => return Err(Error::config(k, "unknown key")),
        })
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        self.apply_text(&text, path)
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            })?;
            self.apply(key, value).map_err(|e| Error::Format { path: origin.to_path_buf(), line: i + 1, message: e.to_string() })?;
        }
        Ok(())
    }

    /// The settings as a `key = value` file that [`Settings::apply_text`]
    /// reads back to the same values.
    pub fn to_config_text(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k} = {}\n", self.get(k).unwrap_or_default())).collect()
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate> {
        Ok(PromptTemplate::parse(&self.template, self.max_text_len)?.with_neighbor_tokens(self.neighbor_tokens))
    }
}
