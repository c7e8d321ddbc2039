//! JSON graph files and checkpoints.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tagtune_core::decoder::{CorpusSpec, LanguageModel, PretrainConfig, PromptTemplate, TransformerDecoder};
use tagtune_core::digest::Digest;
use tagtune_core::graph::TextAttributedGraph;
use tagtune_core::linalg::Matrix;
use tagtune_core::optim::OptimizerState;
use tagtune_core::training::{ModelConfig, ParameterSet};

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(Error::io(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Pretty-printed JSON with a trailing newline; creates parent directories.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(Error::io(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub text: String,
    /// Label name, or `null` for an unlabeled node.
    pub label: Option<String>,
    /// Non-zero feature entries as `[index, value]`.
    pub features: Vec<(usize, f64)>,
}

/// Serialized form of a [`TextAttributedGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub label_space: Vec<String>,
    pub feature_dim: usize,
    pub nodes: Vec<NodeRecord>,
    /// Undirected edges, each listed once.
    pub edges: Vec<(usize, usize)>,
}

impl GraphFile {
    pub fn from_graph(graph: &TextAttributedGraph) -> Self {
        let nodes = (0..graph.node_count())
            .map(|n| NodeRecord {
                text: graph.text(n).to_string(),
                label: graph.label(n).map(|c| graph.label_space()[c].clone()),
                features: graph.features().row(n).iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect(),
            })
            .collect();
        Self {
            label_space: graph.label_space().to_vec(),
            feature_dim: graph.feature_dim(),
            nodes,
            edges: graph.edges().to_vec(),
        }
    }

    pub fn into_graph(self) -> Result<TextAttributedGraph> {
        let n = self.nodes.len();
        let mut features = Matrix::zeros(n, self.feature_dim);
        let mut texts = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (node, rec) in self.nodes.into_iter().enumerate() {
            for (idx, v) in rec.features {
                if idx >= self.feature_dim {
                    return Err(tagtune_core::Error::InvalidNode {
                        node,
                        reason: format!("feature index {idx} outside dimension {}", self.feature_dim),
                    }
                    .into());
                }
                features[(node, idx)] = v;
            }
            let label = match rec.label {
                None => None,
                Some(name) => Some(
                    self.label_space
                        .iter()
                        .position(|l| *l == name)
                        .ok_or(tagtune_core::Error::UnknownLabel { node, label: name })?,
                ),
            };
            texts.push(rec.text);
            labels.push(label);
        }
        Ok(TextAttributedGraph::new(self.label_space, texts, features, labels, &self.edges)?)
    }
}

pub fn load_graph(path: &Path) -> Result<TextAttributedGraph> {
    read_json::<GraphFile>(path)?.into_graph()
}

pub fn save_graph(path: &Path, graph: &TextAttributedGraph) -> Result<()> {
    write_json(path, &GraphFile::from_graph(graph))
}

pub const DECODER_FORMAT: &str = "tagtune-decoder/1";
pub const MODEL_FORMAT: &str = "tagtune-model/1";

/// A pretrained, frozen decoder with what it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderCheckpoint {
    pub format: String,
    pub digest: Digest,
    pub template: PromptTemplate,
    pub corpus: CorpusSpec,
    pub pretrain: PretrainConfig,
    pub final_loss: f64,
    pub decoder: TransformerDecoder,
}

impl DecoderCheckpoint {
    pub fn new(
        decoder: TransformerDecoder,
        template: PromptTemplate,
        corpus: CorpusSpec,
        pretrain: PretrainConfig,
        final_loss: f64,
    ) -> Self {
        Self { format: DECODER_FORMAT.into(), digest: decoder.digest(), template, corpus, pretrain, final_loss, decoder }
    }

    /// Loads and verifies format, freeze flag and digest.
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        check_format(path, &ckpt.format, DECODER_FORMAT)?;
        if !ckpt.decoder.is_frozen() {
            return Err(tagtune_core::Error::NotFrozen.into());
        }
        let computed = ckpt.decoder.digest();
        if computed != ckpt.digest || ckpt.decoder.freeze_digest != Some(computed) {
            return Err(Error::DigestMismatch {
                path: path.to_path_buf(),
                what: "decoder",
                recorded: ckpt.digest.to_hex(),
                computed: computed.to_hex(),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Trained encoder and projector plus optimizer state; enough to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub model: ModelConfig,
    pub params_digest: Digest,
    pub decoder_digest: Digest,
    /// Fits performed so far.
    pub round: usize,
    /// Run seed and labeled-to-unlabeled ratio that fixed the split.
    pub seed: u64,
    pub ratio: f64,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
}

impl ModelCheckpoint {
    pub fn new(
        model: ModelConfig,
        params: ParameterSet,
        optimizer: OptimizerState,
        round: usize,
        decoder_digest: Digest,
        seed: u64,
        ratio: f64,
    ) -> Self {
        let params_digest = params.digest();
        Self { format: MODEL_FORMAT.into(), model, params_digest, decoder_digest, round, seed, ratio, params, optimizer }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        check_format(path, &ckpt.format, MODEL_FORMAT)?;
        let computed = ckpt.params.digest();
        if computed != ckpt.params_digest {
            return Err(Error::DigestMismatch {
                path: path.to_path_buf(),
                what: "parameter",
                recorded: ckpt.params_digest.to_hex(),
                computed: computed.to_hex(),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Rejects a checkpoint trained against a different decoder.
    pub fn check_decoder(&self, path: &Path, decoder: Digest) -> Result<()> {
        if decoder != self.decoder_digest {
            return Err(Error::DigestMismatch {
                path: path.to_path_buf(),
                what: "decoder",
                recorded: self.decoder_digest.to_hex(),
                computed: decoder.to_hex(),
            });
        }
        Ok(())
    }
}

fn check_format(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format { path: path.to_path_buf(), line: 0, message: format!("format {found:?}, expected {expected:?}") });
    }
    Ok(())
}
