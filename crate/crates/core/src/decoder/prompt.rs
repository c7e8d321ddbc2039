//! Prompt templates and instruction construction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::vocab::{label_word, split_words, tokenize, TokenId, Vocabulary};
use super::LanguageModel;
use crate::graph::TextAttributedGraph;
use crate::linalg::Matrix;
use crate::{ClassId, Error, NodeId, Result};

pub const DEFAULT_TEMPLATE: &str = "node : <graph> text : {words} question : category ? answer : {label} <eos>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Word(String),
    Graph,
    Text,
    Label,
    Eos,
}

/// Parsed template: the prompt is everything before `{label}`, the response
/// is `{label}` and whatever follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub source: String,
    prompt: Vec<Segment>,
    response: Vec<Segment>,
    /// Node text is truncated to this many tokens.
    pub max_text_len: usize,
    /// Extra graph tokens for up to this many 1-hop neighbours (lowest ids
    /// first), placed right after the node's own token.
    pub neighbor_tokens: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE, 12).expect("default template parses")
    }
}

impl PromptTemplate {
    pub fn parse(source: &str, max_text_len: usize) -> Result<Self> {
        let mut segments = Vec::new();
        for piece in source.split_whitespace() {
            match piece {
                "<graph>" => segments.push(Segment::Graph),
                "{words}" => segments.push(Segment::Text),
                "{label}" => segments.push(Segment::Label),
                "<eos>" => segments.push(Segment::Eos),
                other => segments.extend(split_words(other).into_iter().map(Segment::Word)),
            }
        }
        let labels = segments.iter().filter(|s| **s == Segment::Label).count();
        if labels != 1 {
            return Err(Error::InvalidArgument(format!("template needs exactly one {{label}}, found {labels}")));
        }
        let at = segments.iter().position(|s| *s == Segment::Label).unwrap_or(0);
        let response = segments.split_off(at);
        if response.last() != Some(&Segment::Eos) || response.iter().filter(|s| **s == Segment::Eos).count() != 1 {
            return Err(Error::InvalidArgument("template response must end with a single <eos>".into()));
        }
        if response.iter().any(|s| matches!(s, Segment::Graph | Segment::Text)) {
            return Err(Error::InvalidArgument("template response may not contain <graph> or {words}".into()));
        }
        if segments.contains(&Segment::Eos) {
            return Err(Error::InvalidArgument("<eos> may only follow {label}".into()));
        }
        Ok(Self { source: source.to_string(), prompt: segments, response, max_text_len, neighbor_tokens: 0 })
    }

    pub fn with_neighbor_tokens(mut self, k: usize) -> Self {
        self.neighbor_tokens = k;
        self
    }

    /// Literal words used by the template, in order.
    pub fn literal_words(&self) -> Vec<String> {
        self.prompt
            .iter()
            .chain(&self.response)
            .filter_map(|s| match s {
                Segment::Word(w) => Some(w.clone()),
                _ => None,
            })
            .collect()
    }

    /// Number of literal template tokens in the prompt.
    pub fn prompt_literal_len(&self) -> usize {
        self.prompt.iter().filter(|s| matches!(s, Segment::Word(_))).count()
    }

    pub fn graph_slots(&self) -> usize {
        self.prompt.iter().filter(|s| **s == Segment::Graph).count()
    }

    /// Handcrafted target response for a class.
    pub fn response_tokens(&self, class: ClassId, label_space: &[String], vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        let name = label_space
            .get(class)
            .ok_or_else(|| Error::InvalidArgument(format!("class {class} outside label space")))?;
        let word = label_word(name);
        self.response
            .iter()
            .map(|s| match s {
                Segment::Label => vocab
                    .id(&word)
                    .ok_or_else(|| Error::InvalidArgument(format!("label word {word:?} not in vocabulary"))),
                Segment::Eos => Ok(Vocabulary::EOS),
                Segment::Word(w) => Ok(vocab.id_or_unk(w)),
                Segment::Graph | Segment::Text => unreachable!("rejected by parse"),
            })
            .collect()
    }

    pub fn response_len(&self) -> usize {
        self.response.len()
    }

    /// Prompt token ids for an arbitrary text, with one `<graph>` placeholder
    /// per slot; used to build pretraining sequences.
    pub fn prompt_for_text(&self, text: &[TokenId], vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(1 + self.prompt.len() + text.len());
        out.push(Vocabulary::BOS);
        for s in &self.prompt {
            match s {
                Segment::Word(w) => out.push(vocab.id_or_unk(w)),
                Segment::Graph => out.push(Vocabulary::GRAPH),
                Segment::Text => out.extend(text.iter().take(self.max_text_len).copied()),
                Segment::Label | Segment::Eos => {}
            }
        }
        out
    }
}

/// A graph-token position in a prompt and the node whose token fills it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSlot {
    pub position: usize,
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptWarning {
    /// The node has neither text nor non-zero features.
    NoContent,
}

/// Token-level layout of one node's prompt. Graph slots carry the `<graph>`
/// id and are overwritten with graph token embeddings by [`PromptLayout::embed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub node_id: NodeId,
    pub tokens: Vec<TokenId>,
    pub graph_slots: Vec<GraphSlot>,
    pub warning: Option<PromptWarning>,
}

impl PromptLayout {
    pub fn build(node: NodeId, graph: &TextAttributedGraph, template: &PromptTemplate, vocab: &Vocabulary) -> Result<Self> {
        if node >= graph.node_count() {
            return Err(Error::InvalidArgument(format!("node {node} outside graph of {}", graph.node_count())));
        }
        let text = tokenize(graph.text(node), vocab);
        let warning = (text.is_empty() && graph.features().row(node).iter().all(|&v| v == 0.0))
            .then_some(PromptWarning::NoContent);
        let mut tokens = Vec::new();
        let mut graph_slots = Vec::new();
        tokens.push(Vocabulary::BOS);
        for s in &template.prompt {
            match s {
                Segment::Word(w) => tokens.push(vocab.id_or_unk(w)),
                Segment::Graph => {
                    let extra = graph.neighbors(node).iter().take(template.neighbor_tokens);
                    for &n in core::iter::once(&node).chain(extra) {
                        graph_slots.push(GraphSlot { position: tokens.len(), node: n });
                        tokens.push(Vocabulary::GRAPH);
                    }
                }
                Segment::Text => tokens.extend(text.iter().take(template.max_text_len).copied()),
                Segment::Label | Segment::Eos => {}
            }
        }
        Ok(Self { node_id: node, tokens, graph_slots, warning })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Embeds the prompt: token embeddings everywhere, graph tokens (rows of
    /// `graph_tokens`, indexed by node id) at the graph slots.
    pub fn embed<M: LanguageModel + ?Sized>(&self, graph_tokens: &Matrix, model: &M) -> Result<Instruction> {
        let d = model.embed_dim();
        if graph_tokens.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "graph token width",
                expected: format!("{d}"),
                got: format!("{}", graph_tokens.cols()),
            });
        }
        let mut embeddings = Matrix::zeros(0, d);
        let mut slots = self.graph_slots.iter().peekable();
        for (pos, &tok) in self.tokens.iter().enumerate() {
            match slots.peek() {
                Some(slot) if slot.position == pos => {
                    embeddings.push_row(graph_tokens.row(slot.node));
                    slots.next();
                }
                _ => embeddings.push_row(model.token_embedding(tok)),
            }
        }
        Ok(Instruction { node_id: self.node_id, embeddings, graph_slots: self.graph_slots.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    GroundTruth,
    Pseudo,
}

/// A node's prompt paired with its target response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub layout: PromptLayout,
    pub class: ClassId,
    pub target: Vec<TokenId>,
    pub provenance: Provenance,
}

impl InstructionExample {
    pub fn new(
        layout: PromptLayout,
        class: ClassId,
        provenance: Provenance,
        template: &PromptTemplate,
        label_space: &[String],
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let target = template.response_tokens(class, label_space, vocab)?;
        Ok(Self { layout, class, target, provenance })
    }

    pub fn node_id(&self) -> NodeId {
        self.layout.node_id
    }
}

/// An embedded prompt, ready for the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub node_id: NodeId,
    /// One row per prompt position; positional embeddings are added by the
    /// decoder.
    pub embeddings: Matrix,
    pub graph_slots: Vec<GraphSlot>,
}

impl Instruction {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }
}

/// Builds and embeds the prompt of `node` in one go.
pub fn build_instruction<M: LanguageModel + ?Sized>(
    node: NodeId,
    graph_tokens: &Matrix,
    graph: &TextAttributedGraph,
    template: &PromptTemplate,
    model: &M,
) -> Result<(PromptLayout, Instruction)> {
    let layout = PromptLayout::build(node, graph, template, model.vocab())?;
    let instruction = layout.embed(graph_tokens, model)?;
    Ok((layout, instruction))
}
