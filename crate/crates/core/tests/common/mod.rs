#![allow(dead_code)]

use rand::Rng;
use tagtune_core::decoder::{graph_vocabulary, PromptTemplate, TransformerConfig, TransformerDecoder};
use tagtune_core::graph::{Normalization, TextAttributedGraph};
use tagtune_core::linalg::{Activation, Matrix};
use tagtune_core::training::ModelConfig;
use tagtune_core::{seeded_rng, ClassId};

pub const WORDS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];

/// Random labeled graph with `classes` classes (node `i` has class
/// `i % classes`), 6 features in `[-1, 1)` and edge probability `p_edge`.
pub fn random_graph(seed: u64, nodes: usize, classes: usize, p_edge: f64) -> TextAttributedGraph {
    let mut rng = seeded_rng(seed);
    let texts: Vec<String> = (0..nodes)
        .map(|_| (0..rng.gen_range(0..4)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" "))
        .collect();
    let feats: Vec<f64> = (0..nodes * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<Option<ClassId>> = (0..nodes).map(|i| Some(i % classes)).collect();
    let mut edges = Vec::new();
    for a in 0..nodes {
        for b in a + 1..nodes {
            if rng.gen::<f64>() < p_edge {
                edges.push((a, b));
            }
        }
    }
    let space = (0..classes).map(|c| format!("class{c}")).collect();
    TextAttributedGraph::new(space, texts, Matrix::from_vec(nodes, 6, feats).unwrap(), labels, &edges).unwrap()
}

/// Two-block graph whose features are a noisy one-hot of the class.
pub fn separable_graph(seed: u64, nodes: usize) -> TextAttributedGraph {
    let mut rng = seeded_rng(seed);
    let labels: Vec<Option<ClassId>> = (0..nodes).map(|i| Some(i % 2)).collect();
    let mut feats = Vec::with_capacity(nodes * 4);
    for l in &labels {
        let c = l.unwrap();
        for k in 0..4 {
            let base = if k % 2 == c { 1.0 } else { 0.0 };
            feats.push(base + rng.gen_range(-0.1..0.1));
        }
    }
    let mut edges = Vec::new();
    for a in 0..nodes {
        for b in a + 1..nodes {
            let p = if a % 2 == b % 2 { 0.3 } else { 0.02 };
            if rng.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let texts = vec![String::new(); nodes];
    TextAttributedGraph::new(
        vec!["left".into(), "right".into()],
        texts,
        Matrix::from_vec(nodes, 4, feats).unwrap(),
        labels,
        &edges,
    )
    .unwrap()
}

pub fn tiny_transformer() -> TransformerConfig {
    TransformerConfig { d_model: 8, n_heads: 2, n_layers: 2, d_ff: 12, max_len: 64 }
}

/// Randomly initialized, frozen decoder covering the graph's vocabulary.
pub fn frozen_decoder(graph: &TextAttributedGraph, template: &PromptTemplate, seed: u64) -> TransformerDecoder {
    let mut model =
        TransformerDecoder::new(graph_vocabulary(graph, template), tiny_transformer(), &mut seeded_rng(seed)).unwrap();
    model.freeze();
    model
}

pub fn tiny_model_config(activation: Activation) -> ModelConfig {
    ModelConfig {
        gnn_dims: vec![5],
        gnn_activation: activation,
        normalization: Normalization::SymmetricNormalized,
        row_normalize_features: false,
        projector_hidden: 6,
        projector_activation: activation,
        use_gnn: true,
        trainable_projector: true,
    }
}
