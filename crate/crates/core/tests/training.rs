mod common;

use common::{frozen_decoder, random_graph, separable_graph, tiny_model_config};
use tagtune_core::decoder::doubles::ScriptedDecoder;
use tagtune_core::decoder::{graph_vocabulary, InstructionExample, LanguageModel, PromptTemplate, TransformerDecoder};
use tagtune_core::graph::{split_nodes, GraphContext};
use tagtune_core::linalg::Activation;
use tagtune_core::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use tagtune_core::training::{
    dataset_loss, fit, ground_truth_examples, loss_and_gradients, sft_step, ModelConfig, ParameterSet, TrainConfig,
};
use tagtune_core::{seeded_rng, Error};

fn gd(lr: f64) -> OptimizerConfig {
    OptimizerConfig { kind: OptimizerKind::GradientDescent, learning_rate: lr, ..OptimizerConfig::default() }
}

fn flat(params: &ParameterSet) -> Vec<f64> {
    params.trainable().concat()
}

struct Toy {
    ctx: GraphContext,
    model: TransformerDecoder,
    data: Vec<InstructionExample>,
    params: ParameterSet,
}

fn toy(seed: u64, nodes: usize) -> Toy {
    let graph = random_graph(seed, nodes, 2, 0.6);
    let template = PromptTemplate::default().with_neighbor_tokens(1);
    let model = frozen_decoder(&graph, &template, seed + 50);
    let mc = tiny_model_config(Activation::Tanh);
    let params = ParameterSet::init(&mc, 6, 8, &mut seeded_rng(seed)).unwrap();
    let ctx = mc.graph_context(&graph);
    let data = ground_truth_examples(&graph, 0..nodes, &template, &model.vocab).unwrap();
    Toy { ctx, model, data, params }
}

#[test]
fn gradient_descent_step_matches_finite_difference_update() {
    let Toy { ctx, model, data, mut params } = toy(3, 2);
    let lr = 0.05;
    let before = flat(&params);
    // Oracle: central differences of the loss for every trainable scalar.
    let h = 1e-5;
    let mut probe = params.clone();
    let mut expected = Vec::with_capacity(before.len());
    let mut k = 0;
    for t in 0..probe.trainable().len() {
        for i in 0..probe.trainable()[t].len() {
            let x = before[k];
            probe.trainable_mut()[t][i] = x + h;
            let plus = dataset_loss(&ctx, &model, &data, &probe).unwrap();
            probe.trainable_mut()[t][i] = x - h;
            let minus = dataset_loss(&ctx, &model, &data, &probe).unwrap();
            probe.trainable_mut()[t][i] = x;
            expected.push(x - lr * (plus - minus) / (2.0 * h));
            k += 1;
        }
    }
    let mut opt = OptimizerState::new(gd(lr));
    sft_step(&ctx, &model, &data, &mut params, &mut opt).unwrap();
    let after = flat(&params);
    let update_norm: f64 = after.iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let err: f64 = after.iter().zip(&expected).map(|(a, e)| (a - e).powi(2)).sum::<f64>().sqrt();
    assert!(update_norm > 0.0);
    assert!(err / update_norm <= 1e-4, "relative error {}", err / update_norm);
}

#[test]
fn gradient_descent_update_is_exact() {
    let Toy { ctx, model, data, mut params } = toy(4, 5);
    let lr = 0.3;
    let before = flat(&params);
    let (_, grads) = loss_and_gradients(&ctx, &model, &data, &params).unwrap();
    sft_step(&ctx, &model, &data, &mut params, &mut OptimizerState::new(gd(lr))).unwrap();
    let g: Vec<f64> = grads.tensors.concat();
    for ((a, b), d) in flat(&params).iter().zip(&before).zip(&g) {
        assert_eq!(*a, b - lr * d);
    }
}

#[test]
fn vanishing_learning_rate_leaves_parameters_unchanged() {
    let Toy { ctx, model, data, mut params } = toy(5, 4);
    let before = flat(&params);
    sft_step(&ctx, &model, &data, &mut params, &mut OptimizerState::new(gd(1e-15))).unwrap();
    for (a, b) in flat(&params).iter().zip(&before) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn zero_loss_dataset_has_zero_gradient() {
    let graph = random_graph(6, 5, 2, 0.5);
    let template = PromptTemplate::default();
    let vocab = graph_vocabulary(&graph, &template);
    let oracle = ScriptedDecoder::oracle(&graph, &template, vocab, 8).unwrap();
    let mc = tiny_model_config(Activation::Relu);
    let mut params = ParameterSet::init(&mc, 6, 8, &mut seeded_rng(1)).unwrap();
    let ctx = mc.graph_context(&graph);
    let data = ground_truth_examples(&graph, 0..5, &template, &oracle.vocab().clone()).unwrap();
    let (loss, grads) = loss_and_gradients(&ctx, &oracle, &data, &params).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grads.norm(), 0.0);
    let before = params.clone();
    let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
    fit(&ctx, &oracle, &data, &mut params, &config, &mut OptimizerState::new(config.optimizer)).unwrap();
    assert_eq!(params, before);
}

#[test]
fn epochs_contract() {
    let Toy { ctx, model, data, params } = toy(7, 4);
    let zero = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let mut p = params.clone();
    let err = fit(&ctx, &model, &data, &mut p, &zero, &mut OptimizerState::new(zero.optimizer)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));

    let one = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut fitted = params.clone();
    let report = fit(&ctx, &model, &data, &mut fitted, &one, &mut OptimizerState::new(one.optimizer)).unwrap();
    assert_eq!(report.losses.len(), 1);
    let mut stepped = params.clone();
    let step = sft_step(&ctx, &model, &data, &mut stepped, &mut OptimizerState::new(one.optimizer)).unwrap();
    assert_eq!(fitted, stepped);
    assert_eq!(report.losses[0], step.loss);
}

#[test]
fn invalid_learning_rate_and_empty_dataset_are_rejected() {
    let Toy { ctx, model, data, params } = toy(8, 3);
    let bad = TrainConfig { optimizer: gd(0.0), ..TrainConfig::default() };
    let mut p = params.clone();
    assert!(fit(&ctx, &model, &data, &mut p, &bad, &mut OptimizerState::new(bad.optimizer)).is_err());
    let mut opt = OptimizerState::new(gd(0.1));
    assert_eq!(sft_step(&ctx, &model, &[], &mut p, &mut opt).unwrap_err(), Error::Empty("training dataset"));
}

#[test]
fn unfrozen_decoder_is_rejected() {
    let Toy { ctx, mut model, data, mut params } = toy(9, 3);
    model.frozen = false;
    let mut opt = OptimizerState::new(gd(0.1));
    assert_eq!(sft_step(&ctx, &model, &data, &mut params, &mut opt).unwrap_err(), Error::NotFrozen);
}

#[test]
fn fit_keeps_decoder_and_is_reproducible() {
    let Toy { ctx, model, data, params } = toy(10, 6);
    let digest = model.digest();
    let bytes = model.weights.clone();
    let config = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let run = || {
        let mut p = params.clone();
        let mut opt = OptimizerState::new(config.optimizer);
        let report = fit(&ctx, &model, &data, &mut p, &config, &mut opt).unwrap();
        (p, opt, report)
    };
    let a = run();
    let b = run();
    assert_eq!(model.digest(), digest);
    assert_eq!(model.weights, bytes);
    assert_eq!(a.0.digest(), b.0.digest());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_ne!(a.0.digest(), params.digest());
}

#[test]
fn loss_is_invariant_under_dataset_permutation() {
    let Toy { ctx, model, data, params } = toy(11, 6);
    let (l1, g1) = loss_and_gradients(&ctx, &model, &data, &params).unwrap();
    let mut rev = data.clone();
    rev.reverse();
    rev.swap(0, 2);
    let (l2, g2) = loss_and_gradients(&ctx, &model, &rev, &params).unwrap();
    assert!((l1 - l2).abs() <= 1e-12);
    for (a, b) in g1.tensors.concat().iter().zip(&g2.tensors.concat()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn fit_lowers_loss_on_separable_graph() {
    let mut improved = 0;
    for seed in 1..=5u64 {
        let graph = separable_graph(seed, 20);
        let template = PromptTemplate::default();
        let model = frozen_decoder(&graph, &template, seed);
        let split = split_nodes(&graph, 1.0, seed).unwrap();
        assert_eq!(split.labeled.len(), 10);
        let mc = ModelConfig { gnn_dims: vec![6], projector_hidden: 8, ..ModelConfig::default() };
        let mut params = ParameterSet::init(&mc, 4, 8, &mut seeded_rng(seed)).unwrap();
        let ctx = mc.graph_context(&graph);
        let data = ground_truth_examples(&graph, split.labeled.iter().copied(), &template, &model.vocab).unwrap();
        let config = TrainConfig { epochs: 30, optimizer: OptimizerConfig { learning_rate: 1e-2, ..Default::default() }, ..Default::default() };
        let report = fit(&ctx, &model, &data, &mut params, &config, &mut OptimizerState::new(config.optimizer)).unwrap();
        if report.losses.last().unwrap() < report.losses.first().unwrap() {
            improved += 1;
        }
    }
    assert!(improved >= 4, "loss fell in only {improved} of 5 seeds");
}

#[test]
fn fixed_projector_reports_zero_projector_gradient() {
    let graph = random_graph(12, 6, 2, 0.5);
    let template = PromptTemplate::default();
    let model = frozen_decoder(&graph, &template, 2);
    let mc = ModelConfig { trainable_projector: false, ..tiny_model_config(Activation::Relu) };
    let mut params = ParameterSet::init(&mc, 6, 8, &mut seeded_rng(3)).unwrap();
    let ctx = mc.graph_context(&graph);
    let data = ground_truth_examples(&graph, 0..6, &template, &model.vocab).unwrap();
    let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let report = fit(&ctx, &model, &data, &mut params, &config, &mut OptimizerState::new(config.optimizer)).unwrap();
    assert!(report.projector_grad_norms.iter().all(|&g| g == 0.0));
    assert!(report.encoder_grad_norms.iter().all(|&g| g > 0.0));
}

#[test]
fn raw_encoder_feeds_features_to_projector() {
    let graph = random_graph(13, 6, 2, 0.5);
    let template = PromptTemplate::default();
    let model = frozen_decoder(&graph, &template, 2);
    let mc = ModelConfig { use_gnn: false, ..tiny_model_config(Activation::Relu) };
    let mut params = ParameterSet::init(&mc, 6, 8, &mut seeded_rng(3)).unwrap();
    assert_eq!(params.encoder_output_dim(), 6);
    assert_eq!(params.encoder_tensor_count(), 0);
    let ctx = mc.graph_context(&graph);
    let data = ground_truth_examples(&graph, 0..6, &template, &model.vocab).unwrap();
    let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let report = fit(&ctx, &model, &data, &mut params, &config, &mut OptimizerState::new(config.optimizer)).unwrap();
    assert!(report.encoder_grad_norms.iter().all(|&g| g == 0.0));
    assert!(report.projector_grad_norms.iter().all(|&g| g > 0.0));
}
