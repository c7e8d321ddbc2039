mod common;

use std::fs;

use common::{small_decoder, small_settings};
use tagtune::formats::{load_graph, save_graph, DecoderCheckpoint, GraphFile, ModelCheckpoint};
use tagtune::Error;
use tagtune_core::graph::{make_synthetic_graph, SyntheticConfig, TextAttributedGraph};
use tagtune_core::linalg::Matrix;
use tagtune_core::optim::{OptimizerConfig, OptimizerState};
use tagtune_core::seeded_rng;
use tagtune_core::training::{ModelConfig, ParameterSet};

#[test]
fn graph_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/g.json");
    let g = make_synthetic_graph(&SyntheticConfig { nodes: 30, ..SyntheticConfig::default() }).unwrap();
    save_graph(&path, &g).unwrap();
    assert_eq!(load_graph(&path).unwrap(), g);
}

#[test]
fn unlabeled_nodes_and_fractional_features_survive() {
    let features = Matrix::from_rows(&[[0.1, 0.0], [0.0, -2.5], [1.0 / 3.0, 0.0]]);
    let g = TextAttributedGraph::new(
        vec!["a".into(), "b".into()],
        vec!["x y".into(), "".into(), "z".into()],
        features,
        vec![Some(1), None, Some(0)],
        &[(0, 1), (2, 1)],
    )
    .unwrap();
    let file = GraphFile::from_graph(&g);
    assert_eq!(file.nodes[1].label, None);
    assert_eq!(file.nodes[1].features, vec![(1, -2.5)]);
    assert_eq!(file.edges, vec![(0, 1), (1, 2)]);
    let text = serde_json::to_string(&file).unwrap();
    let back: GraphFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.into_graph().unwrap(), g);
}

#[test]
fn graph_file_errors_are_reported() {
    let mut file = GraphFile::from_graph(&make_synthetic_graph(&SyntheticConfig { nodes: 9, ..Default::default() }).unwrap());
    file.nodes[0].label = Some("nope".into());
    assert!(matches!(file.clone().into_graph(), Err(Error::Core(tagtune_core::Error::UnknownLabel { node: 0, .. }))));
    file.nodes[0].label = None;
    file.nodes[0].features.push((file.feature_dim, 1.0));
    assert!(file.clone().into_graph().is_err());
    file.nodes[0].features.pop();
    file.edges.push((3, 3));
    assert!(file.into_graph().is_err());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    assert!(matches!(load_graph(&bad), Err(Error::Json { .. })));
    assert!(matches!(load_graph(&dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn decoder_checkpoint_round_trips_and_detects_tampering() {
    let s = small_settings();
    let ckpt = small_decoder(&s);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dec.json");
    ckpt.save(&path).unwrap();
    let loaded = DecoderCheckpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.decoder.compute_digest(), ckpt.digest);

    let mut tampered = ckpt.clone();
    tampered.decoder.weights.token_embeddings[(5, 0)] += 1e-9;
    tampered.save(&path).unwrap();
    assert!(matches!(DecoderCheckpoint::load(&path), Err(Error::DigestMismatch { what: "decoder", .. })));

    let mut unfrozen = ckpt.clone();
    unfrozen.decoder.frozen = false;
    unfrozen.save(&path).unwrap();
    assert!(matches!(DecoderCheckpoint::load(&path), Err(Error::Core(tagtune_core::Error::NotFrozen))));

    let mut wrong = ckpt;
    wrong.format = "other/9".into();
    wrong.save(&path).unwrap();
    assert!(matches!(DecoderCheckpoint::load(&path), Err(Error::Format { .. })));
}

#[test]
fn model_checkpoint_round_trips_and_detects_tampering() {
    let mc = ModelConfig { gnn_dims: vec![4], projector_hidden: 5, ..ModelConfig::default() };
    let params = ParameterSet::init(&mc, 6, 8, &mut seeded_rng(3)).unwrap();
    let opt = OptimizerState::new(OptimizerConfig::default());
    let other = ParameterSet::init(&mc, 6, 8, &mut seeded_rng(4)).unwrap().digest();
    let ckpt = ModelCheckpoint::new(mc, params, opt, 2, other, 7, 0.25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    ckpt.save(&path).unwrap();
    let loaded = ModelCheckpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    loaded.check_decoder(&path, other).unwrap();
    assert!(matches!(loaded.check_decoder(&path, ckpt.params_digest), Err(Error::DigestMismatch { .. })));

    let text = fs::read_to_string(&path).unwrap();
    let hex = ckpt.params_digest.to_hex();
    let flipped = if hex.starts_with('0') { format!("1{}", &hex[1..]) } else { format!("0{}", &hex[1..]) };
    fs::write(&path, text.replacen(&hex, &flipped, 1)).unwrap();
    assert!(matches!(ModelCheckpoint::load(&path), Err(Error::DigestMismatch { what: "parameter", .. })));
}
