//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use tagtune_core::decoder::doubles::NoiseModel;
use tagtune_core::eval::{evaluate_accuracy, TaskContext};
use tagtune_core::graph::split_nodes;
use tagtune_core::optim::OptimizerState;
use tagtune_core::training::{fit, ground_truth_examples, ParameterSet};
use tagtune_core::{seeded_rng, NodeId};

use crate::config::Settings;
use crate::cora::load_cora;
use crate::formats::{save_graph, write_json, DecoderCheckpoint, ModelCheckpoint};
use crate::harness::{
    ablation_spec, pretrain_checkpoint, run_sweep, write_sweep, Cell, DecoderChoice, DecoderKind, ExperimentSpec, GraphSource,
    Manifest, Variant,
};
use crate::logs::{write_csv, RoundRow, ScoreRow};
use crate::scan::RayonScanner;

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Graph source, decoder checkpoint (for the transformer decoder) and prompt
/// template. A decoder checkpoint brings its own template.
fn prepare(settings: &Settings) -> Result<(GraphSource, Option<DecoderCheckpoint>, tagtune_core::decoder::PromptTemplate)> {
    let source = GraphSource::from_settings(settings)?;
    if settings.decoder_kind != DecoderKind::Transformer {
        return Ok((source, None, settings.prompt_template()?));
    }
    let ckpt = match &settings.decoder {
        Some(path) => DecoderCheckpoint::load(path)?,
        None => {
            eprintln!("no --decoder checkpoint given; pretraining one ({} steps)", settings.pretrain.steps);
            let graph = match &source {
                GraphSource::Fixed(g) => Some(g),
                GraphSource::Synthetic(_) => None,
            };
            pretrain_checkpoint(settings, graph)?
        }
    };
    let template = ckpt.template.clone();
    Ok((source, Some(ckpt), template))
}

fn decoder_choice<'a>(settings: &Settings, ckpt: Option<&'a DecoderCheckpoint>) -> DecoderChoice<'a> {
    let embed_dim = settings.double_embed_dim;
    match (settings.decoder_kind, ckpt) {
        (DecoderKind::Transformer, Some(c)) => DecoderChoice::Transformer(&c.decoder),
        (DecoderKind::Noisy, _) => {
            DecoderChoice::Noisy { noise: NoiseModel { noise_rate: settings.noise_rate, ..NoiseModel::default() }, embed_dim }
        }
        _ => DecoderChoice::Oracle { embed_dim },
    }
}

pub fn gen_data(settings: &Settings, out: &Path) -> Result<()> {
    let source = GraphSource::Synthetic(settings.synthetic.clone());
    let graph = source.for_seed(settings.seed)?;
    save_graph(out, &graph)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "nodes": graph.node_count(),
        "edges": graph.edges().len(),
        "classes": graph.class_count(),
        "feature_dim": graph.feature_dim(),
    }))
}

pub fn convert_cora(content: &Path, cites: &Path, out: &Path) -> Result<()> {
    let (graph, stats) = load_cora(content, cites)?;
    save_graph(out, &graph)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "papers": stats.papers,
        "edges": stats.edges,
        "classes": graph.class_count(),
        "feature_dim": graph.feature_dim(),
        "dropped_self_citations": stats.self_citations,
        "dropped_duplicate_citations": stats.duplicate_citations,
        "dropped_unknown_citations": stats.unknown_citations,
    }))
}

pub fn pretrain(settings: &Settings, out: &Path) -> Result<()> {
    let source = GraphSource::from_settings(settings)?;
    let graph = match &source {
        GraphSource::Fixed(g) => Some(g),
        GraphSource::Synthetic(_) => None,
    };
    let ckpt = pretrain_checkpoint(settings, graph)?;
    ckpt.save(out)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "digest": ckpt.digest.to_hex(),
        "vocab_size": ckpt.decoder.vocab.len(),
        "final_loss": ckpt.final_loss,
    }))
}

pub fn train(settings: &Settings, out: &Path, resume: Option<&Path>) -> Result<()> {
    let (source, ckpt, template) = prepare(settings)?;
    let choice = decoder_choice(settings, ckpt.as_ref());
    let previous = resume.map(ModelCheckpoint::load).transpose()?;
    let (seed, ratio) = previous.as_ref().map_or((settings.seed, settings.ratio), |c| (c.seed, c.ratio));
    let graph = source.for_seed(seed)?;
    let predictor = choice.build(&graph, &template, seed)?;
    let model = predictor.model();
    let train_cfg = &settings.selftrain.train;
    let (mut params, mut optimizer, model_cfg, round) = match previous {
        Some(c) => {
            c.check_decoder(resume.unwrap(), model.digest())?;
            (c.params, c.optimizer, c.model, c.round)
        }
        None => {
            let mut rng = seeded_rng(train_cfg.seed.wrapping_add(seed));
            let params = ParameterSet::init(&settings.model, graph.feature_dim(), model.embed_dim(), &mut rng)?;
            (params, OptimizerState::new(train_cfg.optimizer), settings.model.clone(), 0)
        }
    };
    let task = TaskContext::new(&graph, &template, model, &model_cfg)?;
    let split = split_nodes(&graph, ratio, seed)?;
    let examples = ground_truth_examples(&graph, split.labeled.iter().copied(), &template, model.vocab())?;
    let report = fit(&task.graph_ctx, model, &examples, &mut params, train_cfg, &mut optimizer)?;
    let eval_nodes: Vec<NodeId> = split.unlabeled.iter().copied().collect();
    let accuracy = evaluate_accuracy(&task, &params, &eval_nodes, &RayonScanner)?;
    let ckpt = ModelCheckpoint::new(model_cfg, params, optimizer, round + 1, model.digest(), seed, ratio);
    ckpt.save(out)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "round": ckpt.round,
        "n_labeled": examples.len(),
        "n_eval": eval_nodes.len(),
        "first_loss": report.losses.first(),
        "last_loss": report.losses.last(),
        "accuracy": accuracy,
        "params_digest": ckpt.params_digest.to_hex(),
    }))
}

#[derive(Serialize)]
struct PredictionRow {
    node_id: NodeId,
    true_label: Option<String>,
    predicted_label: Option<String>,
    confidence: f64,
}

pub fn eval(settings: &Settings, model_path: &Path, predictions: Option<&Path>) -> Result<()> {
    let (source, ckpt, template) = prepare(settings)?;
    let choice = decoder_choice(settings, ckpt.as_ref());
    let saved = ModelCheckpoint::load(model_path)?;
    let graph = source.for_seed(saved.seed)?;
    let predictor = choice.build(&graph, &template, saved.seed)?;
    let model = predictor.model();
    saved.check_decoder(model_path, model.digest())?;
    let task = TaskContext::new(&graph, &template, model, &saved.model)?;
    let split = split_nodes(&graph, saved.ratio, saved.seed)?;
    let eval_nodes: Vec<NodeId> = split.unlabeled.iter().copied().collect();
    let scored = task.score_nodes(&saved.params, &eval_nodes, &RayonScanner)?;
    let accuracy = tagtune_core::eval::accuracy_of(&scored, &graph)?;
    if let Some(path) = predictions {
        let name = |c: Option<usize>| c.map(|c| graph.label_space()[c].clone());
        let rows: Vec<PredictionRow> = scored
            .iter()
            .map(|r| PredictionRow {
                node_id: r.node_id,
                true_label: name(graph.label(r.node_id)),
                predicted_label: name(r.parsed_label),
                confidence: r.confidence,
            })
            .collect();
        write_csv(path, &rows)?;
    }
    print_json(&json!({
        "model": model_path.display().to_string(),
        "seed": saved.seed,
        "ratio": saved.ratio,
        "n_eval": eval_nodes.len(),
        "accuracy": accuracy,
    }))
}

pub fn selftrain(settings: &Settings, out: &Path) -> Result<()> {
    let (source, ckpt, template) = prepare(settings)?;
    let mut cell_settings = settings.clone();
    cell_settings.seeds = vec![settings.seed];
    cell_settings.ratios = vec![settings.ratio];
    cell_settings.variants = vec![Variant::Full];
    let spec = ExperimentSpec { settings: cell_settings, graph: source, template, decoder: decoder_choice(settings, ckpt.as_ref()) };
    let cell = Cell { seed: settings.seed, ratio: settings.ratio, variant: Variant::Full };
    let run = spec.run_cell(cell, &RayonScanner).context("self-training failed")?;
    let graph = spec.graph.for_seed(settings.seed)?;
    let name = |c: Option<usize>| c.map(|c| graph.label_space()[c].clone());
    let state = &run.outcome.state;

    let rounds: Vec<RoundRow> = state.history.iter().map(RoundRow::from).collect();
    let scores: Vec<ScoreRow> = state
        .scores
        .iter()
        .map(|s| ScoreRow {
            round: s.round,
            node_id: s.node_id,
            confidence: s.confidence,
            entropy: s.entropy,
            parsed_label: name(s.parsed_label),
            true_label: name(graph.label(s.node_id)),
            terminated: s.terminated,
            selected: s.selected,
        })
        .collect();
    write_csv(&out.join("results.csv"), &run.rows)?;
    write_csv(&out.join("rounds.csv"), &rounds)?;
    write_csv(&out.join("scores.csv"), &scores)?;
    write_csv(&out.join("losses.csv"), &run.losses)?;
    let model_ckpt = ModelCheckpoint::new(
        settings.model.clone(),
        state.params.clone(),
        state.optimizer.clone(),
        state.history.len(),
        run.decoder_digest,
        settings.seed,
        settings.ratio,
    );
    model_ckpt.save(&out.join("checkpoint.json"))?;
    write_json(&out.join("manifest.json"), &Manifest::new("selftrain", &spec, vec![run.manifest()]))?;
    print_json(&json!({
        "out": out.display().to_string(),
        "rounds": run.outcome.rounds,
        "n_pseudo": state.pseudo_nodes().len(),
        "pseudo_precision": state.pseudo_precision(&|n| graph.label(n)),
        "accuracy": run.final_accuracy,
        "params_digest": model_ckpt.params_digest.to_hex(),
    }))
}

pub fn sweep(settings: &Settings, out: &Path, ablate: bool) -> Result<()> {
    let (source, ckpt, template) = prepare(settings)?;
    let spec = ExperimentSpec {
        settings: settings.clone(),
        graph: source,
        template,
        decoder: decoder_choice(settings, ckpt.as_ref()),
    };
    let spec = if ablate { ablation_spec(spec) } else { spec };
    let cells = spec.cells().len();
    eprintln!("running {cells} cells");
    let outcome = run_sweep(&spec)?;
    let command = if ablate { "ablate" } else { "sweep" };
    write_sweep(out, command, &spec, &outcome)?;
    let failed: Vec<_> = outcome.cells.iter().filter(|c| c.error.is_some()).collect();
    println!("{:>8} {:>16} {:>6} {:>9} {:>9} {:>9}", "ratio", "variant", "seeds", "accuracy", "std", "rel.imp%");
    for s in &outcome.summary {
        let rel = s.relative_improvement_vs_supervised.map_or("-".to_string(), |r| format!("{r:+.1}"));
        println!(
            "{:>8} {:>16} {:>6} {:>9.4} {:>9.4} {:>9}",
            s.ratio, s.variant.name(), s.n_seeds, s.mean_accuracy, s.std_accuracy, rel
        );
    }
    if !failed.is_empty() {
        for c in &failed {
            eprintln!("cell seed={} ratio={} variant={} failed: {}", c.seed, c.ratio, c.variant, c.error.as_deref().unwrap_or(""));
        }
        bail!("{} of {cells} cells failed; see {}", failed.len(), out.join("results.csv").display());
    }
    Ok(())
}
