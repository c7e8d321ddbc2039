//! Experiment cells, label-ratio sweeps and ablations.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tagtune_core::decoder::doubles::{NoiseModel, ScriptedDecoder};
use tagtune_core::decoder::{graph_vocabulary, pretrain_decoder, CorpusSpec, LanguageModel, PromptTemplate, TransformerDecoder};
use tagtune_core::digest::Digest;
use tagtune_core::eval::{evaluate_accuracy, relative_improvement, NodeScanner, TaskContext};
use tagtune_core::graph::{make_synthetic_graph, split_nodes, SyntheticConfig, TextAttributedGraph};
use tagtune_core::selftrain::{run_self_training, PipelineState, SelfTrainConfig, SelfTrainOutcome, Stage};
use tagtune_core::training::{ModelConfig, ParameterSet};
use tagtune_core::{seeded_rng, NodeId};

use crate::config::{Settings, KEYS};
use crate::error::{Error, Result};
use crate::formats::{write_json, DecoderCheckpoint};
use crate::logs::{write_csv, LossRow, ResultRow, SummaryRow};
use crate::scan::RayonScanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "supervised-only")]
    SupervisedOnly,
    #[serde(rename = "wo-gnn")]
    WithoutGnn,
    #[serde(rename = "wo-ap")]
    WithoutAp,
    #[serde(rename = "wo-cf")]
    WithoutCf,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::SupervisedOnly, Variant::WithoutGnn, Variant::WithoutAp, Variant::WithoutCf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SupervisedOnly => "supervised-only",
            Variant::WithoutGnn => "wo-gnn",
            Variant::WithoutAp => "wo-ap",
            Variant::WithoutCf => "wo-cf",
        }
    }

    /// Model and self-training configuration of this variant.
    pub fn configure(self, model: &ModelConfig, selftrain: &SelfTrainConfig) -> (ModelConfig, SelfTrainConfig) {
        let (mut model, mut selftrain) = (model.clone(), selftrain.clone());
        match self {
            Variant::Full => {}
            Variant::SupervisedOnly => selftrain.max_rounds = 0,
            Variant::WithoutGnn => model.use_gnn = false,
            Variant::WithoutAp => model.trainable_projector = false,
            Variant::WithoutCf => selftrain.threshold = f64::NEG_INFINITY,
        }
        (model, selftrain)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "w/o-gnn" | "without-gnn" => return Ok(Variant::WithoutGnn),
            "w/o-ap" | "without-ap" => return Ok(Variant::WithoutAp),
            "w/o-cf" | "without-cf" => return Ok(Variant::WithoutCf),
            "supervised" => return Ok(Variant::SupervisedOnly),
            _ => {}
        }
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    /// The pretrained transformer decoder.
    Transformer,
    /// Scripted double answering every node's true label with certainty.
    Oracle,
    /// Scripted double with label noise and informative confidence.
    Noisy,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Transformer => "transformer",
            DecoderKind::Oracle => "oracle",
            DecoderKind::Noisy => "noisy",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "transformer" => Ok(DecoderKind::Transformer),
            "oracle" => Ok(DecoderKind::Oracle),
            "noisy" => Ok(DecoderKind::Noisy),
            _ => Err(format!("unknown decoder kind {s:?}")),
        }
    }
}

/// Where each cell's graph comes from.
#[derive(Debug, Clone)]
pub enum GraphSource {
    /// Generated per cell with seed `config.seed + run seed`.
    Synthetic(SyntheticConfig),
    /// The same graph for every cell.
    Fixed(TextAttributedGraph),
}

impl GraphSource {
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        Ok(match &settings.graph {
            Some(path) => GraphSource::Fixed(crate::formats::load_graph(path)?),
            None => GraphSource::Synthetic(settings.synthetic.clone()),
        })
    }

    pub fn for_seed(&self, seed: u64) -> Result<Cow<'_, TextAttributedGraph>> {
        Ok(match self {
            GraphSource::Synthetic(cfg) => {
                Cow::Owned(make_synthetic_graph(&SyntheticConfig { seed: cfg.seed.wrapping_add(seed), ..cfg.clone() })?)
            }
            GraphSource::Fixed(g) => Cow::Borrowed(g),
        })
    }
}

/// The frozen predictor every cell decodes with.
#[derive(Debug, Clone, Copy)]
pub enum DecoderChoice<'a> {
    Transformer(&'a TransformerDecoder),
    /// Built per graph.
    Oracle { embed_dim: usize },
    /// Built per graph, with the run seed.
    Noisy { noise: NoiseModel, embed_dim: usize },
}

/// A decoder ready for one graph.
pub enum Predictor<'a> {
    Shared(&'a TransformerDecoder),
    Scripted(ScriptedDecoder),
}

impl Predictor<'_> {
    pub fn model(&self) -> &dyn LanguageModel {
        match self {
            Predictor::Shared(m) => *m,
            Predictor::Scripted(m) => m,
        }
    }
}

impl<'a> DecoderChoice<'a> {
    pub fn build(&self, graph: &TextAttributedGraph, template: &PromptTemplate, seed: u64) -> Result<Predictor<'a>> {
        Ok(match *self {
            DecoderChoice::Transformer(m) => Predictor::Shared(m),
            DecoderChoice::Oracle { embed_dim } => {
                Predictor::Scripted(ScriptedDecoder::oracle(graph, template, graph_vocabulary(graph, template), embed_dim)?)
            }
            DecoderChoice::Noisy { noise, embed_dim } => Predictor::Scripted(ScriptedDecoder::noisy(
                graph,
                template,
                graph_vocabulary(graph, template),
                embed_dim,
                &noise,
                seed,
            )?),
        })
    }
}

/// A full experiment: graph source, decoder, template and the settings that
/// carry ratios, seeds, variants and training configuration.
pub struct ExperimentSpec<'a> {
    pub settings: Settings,
    pub graph: GraphSource,
    pub template: PromptTemplate,
    pub decoder: DecoderChoice<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub ratio: f64,
    pub variant: Variant,
}

/// Everything one cell produced.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: Cell,
    /// Per-round rows followed by the final row.
    pub rows: Vec<ResultRow>,
    pub losses: Vec<LossRow>,
    pub outcome: SelfTrainOutcome,
    pub eval_nodes: Vec<NodeId>,
    pub final_accuracy: f64,
    pub initial_params_digest: Digest,
    pub decoder_digest: Digest,
}

impl CellRun {
    pub fn manifest(&self) -> CellManifest {
        CellManifest {
            seed: self.cell.seed,
            ratio: self.cell.ratio,
            variant: self.cell.variant,
            rounds: Some(self.outcome.rounds),
            decoder_digest: Some(self.decoder_digest),
            initial_params_digest: Some(self.initial_params_digest),
            final_params_digest: Some(self.outcome.state.params.digest()),
            error: None,
        }
    }
}

/// Digests and outcome of one cell, for the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellManifest {
    pub seed: u64,
    pub ratio: f64,
    pub variant: Variant,
    pub rounds: Option<usize>,
    pub decoder_digest: Option<Digest>,
    pub initial_params_digest: Option<Digest>,
    pub final_params_digest: Option<Digest>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub command: String,
    /// Every settings key with its value.
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub ratios: Vec<f64>,
    pub variants: Vec<Variant>,
    pub template: PromptTemplate,
    pub decoder_digest: Option<Digest>,
    pub cells: Vec<CellManifest>,
}

pub const MANIFEST_FORMAT: &str = "tagtune-manifest/1";

impl Manifest {
    pub fn new(command: &str, spec: &ExperimentSpec<'_>, cells: Vec<CellManifest>) -> Self {
        let s = &spec.settings;
        Self {
            format: MANIFEST_FORMAT,
            command: command.to_string(),
            config: KEYS.iter().map(|(k, _)| (k.to_string(), s.get(k).unwrap_or_default())).collect(),
            seeds: s.seeds.clone(),
            ratios: s.ratios.clone(),
            variants: s.variants.clone(),
            template: spec.template.clone(),
            decoder_digest: match spec.decoder {
                DecoderChoice::Transformer(m) => Some(m.digest()),
                _ => None,
            },
            cells,
        }
    }
}

impl<'a> ExperimentSpec<'a> {
    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        if s.ratios.is_empty() {
            return Err(Error::config("ratios", "list is empty"));
        }
        if s.seeds.is_empty() {
            return Err(Error::config("seeds", "list is empty"));
        }
        if s.variants.is_empty() {
            return Err(Error::config("variants", "list is empty"));
        }
        Ok(())
    }

    /// Every `(seed, ratio, variant)` combination, in key order.
    pub fn cells(&self) -> Vec<Cell> {
        let s = &self.settings;
        let variants: BTreeSet<Variant> = s.variants.iter().copied().collect();
        let mut ratios = s.ratios.clone();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        let seeds: BTreeSet<u64> = s.seeds.iter().copied().collect();
        let mut cells = Vec::new();
        for &seed in &seeds {
            for &ratio in &ratios {
                for &variant in &variants {
                    cells.push(Cell { seed, ratio, variant });
                }
            }
        }
        cells
    }

    /// Runs one cell: split, initialize, self-train, and evaluate on the
    /// split's unlabeled nodes after every fit.
    pub fn run_cell<S: NodeScanner + ?Sized>(&self, cell: Cell, scanner: &S) -> Result<CellRun> {
        let s = &self.settings;
        let graph = self.graph.for_seed(cell.seed)?;
        let graph = graph.as_ref();
        let (model_cfg, st_cfg) = cell.variant.configure(&s.model, &s.selftrain);
        let predictor = self.decoder.build(graph, &self.template, cell.seed)?;
        let model = predictor.model();
        let task = TaskContext::new(graph, &self.template, model, &model_cfg)?;
        let split = split_nodes(graph, cell.ratio, cell.seed)?;
        let mut rng = seeded_rng(st_cfg.train.seed.wrapping_add(cell.seed));
        let initial = ParameterSet::init(&model_cfg, graph.feature_dim(), model.embed_dim(), &mut rng)?;
        let initial_params_digest = initial.digest();
        let eval_nodes: Vec<NodeId> = split.unlabeled.iter().copied().collect();

        let mut accuracies: Vec<tagtune_core::Result<f64>> = Vec::new();
        let mut observer = |state: &PipelineState| {
            if !state.history.is_empty() {
                accuracies.push(evaluate_accuracy(&task, &state.params, &eval_nodes, scanner));
            }
        };
        let outcome = run_self_training(&task, &split, &st_cfg, initial, scanner, &mut observer)?;
        let accuracies = accuracies.into_iter().collect::<tagtune_core::Result<Vec<f64>>>()?;

        let mut rows = Vec::with_capacity(outcome.state.history.len());
        let mut losses = Vec::new();
        for (record, &accuracy) in outcome.state.history.iter().zip(&accuracies) {
            rows.push(ResultRow {
                seed: cell.seed,
                ratio: cell.ratio,
                variant: cell.variant,
                stage: record.stage,
                round: record.round,
                accuracy: Some(accuracy),
                n_labeled: Some(record.n_labeled),
                n_pseudo_accepted: Some(record.n_pseudo),
                pseudo_precision: record.pseudo_precision,
                relative_improvement_vs_supervised: None,
                error: None,
            });
            losses.extend(LossRow::from_record(cell.seed, cell.ratio, cell.variant, record));
        }
        let final_accuracy = *accuracies.last().ok_or(tagtune_core::Error::Empty("fit history"))?;
        Ok(CellRun {
            cell,
            rows,
            losses,
            outcome,
            eval_nodes,
            final_accuracy,
            initial_params_digest,
            decoder_digest: model.digest(),
        })
    }
}

/// Deterministic output of a sweep, independent of scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub losses: Vec<LossRow>,
    pub cells: Vec<CellManifest>,
}

fn cmp_key(a: (u64, f64, Variant, usize), b: (u64, f64, Variant, usize)) -> Ordering {
    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3))
}

/// Runs every cell, concurrently on a rayon pool. A failing cell becomes a
/// single row carrying its error.
pub fn run_sweep(spec: &ExperimentSpec<'_>) -> Result<SweepOutcome> {
    spec.validate()?;
    let cells = spec.cells();
    let run = || -> Vec<(Cell, Result<CellRun>)> {
        cells.par_iter().map(|&cell| (cell, spec.run_cell(cell, &RayonScanner))).collect()
    };
    let results = if spec.settings.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.settings.threads)
            .build()
            .map_err(|e| Error::config("threads", e.to_string()))?
            .install(run)
    } else {
        run()
    };

    let mut rows = Vec::new();
    let mut losses = Vec::new();
    let mut manifest = Vec::new();
    for (cell, result) in results {
        match result {
            Ok(run) => {
                manifest.push(run.manifest());
                rows.extend(run.rows);
                losses.extend(run.losses);
            }
            Err(e) => {
                manifest.push(CellManifest {
                    seed: cell.seed,
                    ratio: cell.ratio,
                    variant: cell.variant,
                    rounds: None,
                    decoder_digest: None,
                    initial_params_digest: None,
                    final_params_digest: None,
                    error: Some(e.to_string()),
                });
                rows.push(ResultRow {
                    seed: cell.seed,
                    ratio: cell.ratio,
                    variant: cell.variant,
                    stage: Stage::Final,
                    round: 0,
                    accuracy: None,
                    n_labeled: None,
                    n_pseudo_accepted: None,
                    pseudo_precision: None,
                    relative_improvement_vs_supervised: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    fill_relative_improvements(&mut rows);
    rows.sort_by(|a, b| cmp_key((a.seed, a.ratio, a.variant, a.round), (b.seed, b.ratio, b.variant, b.round)));
    losses.sort_by(|a, b| {
        cmp_key((a.seed, a.ratio, a.variant, a.round), (b.seed, b.ratio, b.variant, b.round)).then(a.epoch.cmp(&b.epoch))
    });
    let summary = summarize(&rows);
    Ok(SweepOutcome { rows, summary, losses, cells: manifest })
}

fn final_accuracy(row: &ResultRow) -> Option<f64> {
    (row.stage == Stage::Final && row.error.is_none()).then_some(row.accuracy).flatten()
}

/// Sets the relative improvement of every final row whose seed and ratio has
/// a positive supervised-only final accuracy.
pub fn fill_relative_improvements(rows: &mut [ResultRow]) {
    let baselines: Vec<(u64, f64, f64)> = rows
        .iter()
        .filter(|r| r.variant == Variant::SupervisedOnly)
        .filter_map(|r| final_accuracy(r).map(|a| (r.seed, r.ratio, a)))
        .collect();
    for row in rows.iter_mut() {
        let Some(acc) = final_accuracy(row) else { continue };
        let base = baselines.iter().find(|b| b.0 == row.seed && b.1.total_cmp(&row.ratio).is_eq());
        row.relative_improvement_vs_supervised = base.and_then(|b| relative_improvement(b.2, acc).ok());
    }
}

/// Seed-averaged final accuracies per `(ratio, variant)`.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<((f64, Variant), Vec<&ResultRow>)> = Vec::new();
    for row in rows.iter().filter(|r| final_accuracy(r).is_some()) {
        match groups.iter_mut().find(|(k, _)| k.0.total_cmp(&row.ratio).is_eq() && k.1 == row.variant) {
            Some((_, g)) => g.push(row),
            None => groups.push(((row.ratio, row.variant), vec![row])),
        }
    }
    groups.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.cmp(&b.0 .1)));
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut summary: Vec<SummaryRow> = groups
        .iter()
        .map(|((ratio, variant), g)| {
            let accs: Vec<f64> = g.iter().filter_map(|r| r.accuracy).collect();
            let m = mean(&accs);
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let precisions: Vec<f64> = g.iter().filter_map(|r| r.pseudo_precision).collect();
            SummaryRow {
                ratio: *ratio,
                variant: *variant,
                n_seeds: accs.len(),
                mean_accuracy: m,
                std_accuracy: std,
                mean_pseudo_precision: (!precisions.is_empty()).then(|| mean(&precisions)),
                relative_improvement_vs_supervised: None,
            }
        })
        .collect();
    let baselines: Vec<(f64, f64)> =
        summary.iter().filter(|s| s.variant == Variant::SupervisedOnly).map(|s| (s.ratio, s.mean_accuracy)).collect();
    for s in &mut summary {
        let base = baselines.iter().find(|b| b.0.total_cmp(&s.ratio).is_eq());
        s.relative_improvement_vs_supervised = base.and_then(|b| relative_improvement(b.1, s.mean_accuracy).ok());
    }
    summary
}

/// Restricts a spec to one ratio and all five variants.
pub fn ablation_spec(mut spec: ExperimentSpec<'_>) -> ExperimentSpec<'_> {
    spec.settings.ratios = vec![spec.settings.ratio];
    spec.settings.variants = Variant::ALL.to_vec();
    spec
}

pub fn run_ablation(spec: ExperimentSpec<'_>) -> Result<SweepOutcome> {
    run_sweep(&ablation_spec(spec))
}

/// Writes `results.csv`, `summary.csv`, `losses.csv` and `manifest.json`.
pub fn write_sweep(dir: &Path, command: &str, spec: &ExperimentSpec<'_>, outcome: &SweepOutcome) -> Result<()> {
    write_csv(&dir.join("results.csv"), &outcome.rows)?;
    write_csv(&dir.join("summary.csv"), &outcome.summary)?;
    write_csv(&dir.join("losses.csv"), &outcome.losses)?;
    write_json(&dir.join("manifest.json"), &Manifest::new(command, spec, outcome.cells.clone()))
}

/// Pretraining corpus for the settings: mirrors the synthetic generator, or
/// teaches only the answer format over a file graph's own words.
pub fn decoder_corpus(settings: &Settings, graph: Option<&TextAttributedGraph>, template: &PromptTemplate) -> CorpusSpec {
    match graph {
        None => {
            let mut corpus = CorpusSpec::from_synthetic(&settings.synthetic, template.max_text_len);
            corpus.slot_word_rate = settings.slot_word_rate;
            corpus
        }
        Some(g) => {
            let words: BTreeSet<String> =
                g.texts().iter().flat_map(|t| tagtune_core::decoder::split_words(t)).collect();
            CorpusSpec::format_only(g.label_space().to_vec(), words.into_iter().collect(), template.max_text_len)
        }
    }
}

/// Pretrains and freezes a transformer decoder for the settings.
pub fn pretrain_checkpoint(settings: &Settings, graph: Option<&TextAttributedGraph>) -> Result<DecoderCheckpoint> {
    let template = settings.prompt_template()?;
    let corpus = decoder_corpus(settings, graph, &template);
    let (decoder, report) = pretrain_decoder(&corpus, &template, &settings.pretrain)?;
    let tail = &report.losses[report.losses.len().saturating_sub(20)..];
    let final_loss = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(DecoderCheckpoint::new(decoder, template, corpus, settings.pretrain.clone(), final_loss))
}
