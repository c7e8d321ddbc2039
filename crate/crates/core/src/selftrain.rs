//! The self-training loop: fit on the labeled set, pseudo-label the
//! unlabeled nodes with frozen parameters, keep the confident ones, repeat.
//! One last fit on the final labeled set always follows the loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::confidence::{filter_confident, ScoredResponse};
use crate::decoder::{InstructionExample, LanguageModel, PromptLayout, Provenance};
use crate::digest::Digest;
use crate::eval::{NodeScanner, TaskContext};
use crate::graph::DataSplit;
use crate::optim::OptimizerState;
use crate::training::{fit, ground_truth_examples, FitReport, ParameterSet, TrainConfig};
use crate::{ClassId, Error, NodeId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    /// Strict acceptance threshold on confidence; `-inf` accepts every
    /// parseable response.
    pub threshold: f64,
    pub max_rounds: usize,
    /// Continue from the previous round's parameters and optimizer state;
    /// otherwise every fit restarts from the initial parameters.
    pub warm_start: bool,
    pub train: TrainConfig,
    /// Extension: also re-score already pseudo-labeled nodes each round and
    /// relabel those that are confidently assigned a different class.
    pub rescore_pseudo: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self { threshold: 0.7, max_rounds: 3, warm_start: true, train: TrainConfig::default(), rescore_pseudo: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Round,
    Final,
}

/// Summary of one fit (and, for loop rounds, the pseudo-labeling after it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub stage: Stage,
    /// 1-based count of fits performed so far.
    pub round: usize,
    /// Sizes after this round's augmentation.
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_scored: usize,
    pub n_selected: usize,
    pub n_relabeled: usize,
    pub mean_confidence: Option<f64>,
    pub min_confidence: Option<f64>,
    pub max_confidence: Option<f64>,
    /// Precision of all pseudo-labels in the labeled set, when ground truth
    /// is known for them.
    pub pseudo_precision: Option<f64>,
    pub n_pseudo: usize,
    pub fit: FitReport,
}

/// Per-node outcome of one round's scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub round: usize,
    pub node_id: NodeId,
    pub confidence: f64,
    pub entropy: f64,
    pub parsed_label: Option<ClassId>,
    pub terminated: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    /// Ground-truth examples first, in split order, then pseudo examples in
    /// order of acceptance.
    pub labeled: Vec<InstructionExample>,
    pub unlabeled: BTreeSet<NodeId>,
    pub selected_last_round: BTreeSet<NodeId>,
    pub round: usize,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    pub history: Vec<RoundRecord>,
    pub scores: Vec<ScoreRecord>,
}

impl PipelineState {
    pub fn new<M: LanguageModel + ?Sized>(
        task: &TaskContext<'_, M>,
        split: &DataSplit,
        params: ParameterSet,
        config: &TrainConfig,
    ) -> Result<Self> {
        split.validate(task.graph)?;
        let labeled = ground_truth_examples(task.graph, split.labeled.iter().copied(), task.template, task.model.vocab())?;
        Ok(Self {
            labeled,
            unlabeled: split.unlabeled.clone(),
            selected_last_round: BTreeSet::new(),
            round: 0,
            params,
            optimizer: OptimizerState::new(config.optimizer),
            history: Vec::new(),
            scores: Vec::new(),
        })
    }

    pub fn pseudo_nodes(&self) -> Vec<NodeId> {
        self.labeled.iter().filter(|e| e.provenance == Provenance::Pseudo).map(|e| e.node_id()).collect()
    }

    /// Fraction of pseudo-labeled examples whose class matches the graph's
    /// ground truth; `None` without pseudo examples or ground truth.
    pub fn pseudo_precision(&self, truth: &dyn Fn(NodeId) -> Option<ClassId>) -> Option<f64> {
        let mut total = 0usize;
        let mut right = 0usize;
        for e in self.labeled.iter().filter(|e| e.provenance == Provenance::Pseudo) {
            let t = truth(e.node_id())?;
            total += 1;
            right += usize::from(t == e.class);
        }
        (total > 0).then(|| right as f64 / total as f64)
    }

    fn summary(&self) -> String {
        let pseudo = self.pseudo_nodes();
        format!(
            "round={} |D_L|={} (pseudo {}) |V_U|={} selected_last_round={:?} labeled_nodes={:?} unlabeled={:?}",
            self.round,
            self.labeled.len(),
            pseudo.len(),
            self.unlabeled.len(),
            self.selected_last_round,
            self.labeled.iter().map(InstructionExample::node_id).collect::<Vec<_>>(),
            self.unlabeled,
        )
    }
}

/// Cross-round invariants checked at every round boundary.
struct Guard {
    node_count: usize,
    ground_truth: Vec<(NodeId, ClassId)>,
    digest: Digest,
    last_sizes: (usize, usize),
}

impl Guard {
    fn new<M: LanguageModel + ?Sized>(task: &TaskContext<'_, M>, state: &PipelineState) -> Self {
        Self {
            node_count: task.graph.node_count(),
            ground_truth: state
                .labeled
                .iter()
                .filter(|e| e.provenance == Provenance::GroundTruth)
                .map(|e| (e.node_id(), e.class))
                .collect(),
            digest: task.model.digest(),
            last_sizes: (state.labeled.len(), state.unlabeled.len()),
        }
    }

    fn check<M: LanguageModel + ?Sized>(&mut self, task: &TaskContext<'_, M>, state: &PipelineState, max_rounds: usize) -> Result<()> {
        let fail = |what: String| Err(Error::InvariantViolation { round: state.round, what, dump: state.summary() });
        let labeled: BTreeSet<NodeId> = state.labeled.iter().map(InstructionExample::node_id).collect();
        if labeled.len() != state.labeled.len() {
            return fail("a node appears twice in the labeled set".into());
        }
        if let Some(n) = labeled.intersection(&state.unlabeled).next() {
            return fail(format!("node {n} is both labeled and unlabeled"));
        }
        if state.labeled.len() + state.unlabeled.len() != self.node_count {
            return fail(format!(
                "|D_L| + |V_U| = {} + {} != {}",
                state.labeled.len(),
                state.unlabeled.len(),
                self.node_count
            ));
        }
        if state.labeled.len() < self.last_sizes.0 || state.unlabeled.len() > self.last_sizes.1 {
            return fail("labeled set shrank or unlabeled set grew".into());
        }
        let kept = state.labeled.iter().take(self.ground_truth.len());
        if kept.len() != self.ground_truth.len()
            || kept.zip(&self.ground_truth).any(|(e, &(n, c))| {
                e.node_id() != n || e.class != c || e.provenance != Provenance::GroundTruth
            })
        {
            return fail("a ground-truth example was removed or overwritten".into());
        }
        if state.round > max_rounds {
            return fail(format!("{} rounds exceed the limit of {max_rounds}", state.round));
        }
        let digest = task.model.digest();
        if digest != self.digest {
            return fail(format!("decoder digest changed from {} to {}", self.digest, digest));
        }
        self.last_sizes = (state.labeled.len(), state.unlabeled.len());
        Ok(())
    }
}

/// Scores every node of `V_U` (plus, with the rescore extension, every
/// pseudo-labeled node) with the current parameters, ascending by node id.
pub fn generate_pseudo_set<M: LanguageModel + ?Sized, S: NodeScanner + ?Sized>(
    task: &TaskContext<'_, M>,
    state: &PipelineState,
    rescore_pseudo: bool,
    scanner: &S,
) -> Result<Vec<ScoredResponse>> {
    let mut nodes: BTreeSet<NodeId> = state.unlabeled.clone();
    if rescore_pseudo {
        nodes.extend(state.pseudo_nodes());
    }
    let nodes: Vec<NodeId> = nodes.into_iter().collect();
    task.score_nodes(&state.params, &nodes, scanner)
}

/// Moves each selected node from `V_U` into the labeled set as a pseudo
/// example whose target is the template response for its parsed label.
pub fn augment<M: LanguageModel + ?Sized>(
    task: &TaskContext<'_, M>,
    state: &mut PipelineState,
    selected: &[&ScoredResponse],
) -> Result<()> {
    let mut additions = Vec::with_capacity(selected.len());
    let mut seen = BTreeSet::new();
    for r in selected {
        if !state.unlabeled.contains(&r.node_id) || !seen.insert(r.node_id) {
            return Err(Error::NotUnlabeled(r.node_id));
        }
        let class = r
            .parsed_label
            .ok_or_else(|| Error::InvalidArgument(format!("node {} has no parsed label", r.node_id)))?;
        additions.push((r.node_id, class));
    }
    for (node, class) in additions {
        let layout = PromptLayout::build(node, task.graph, task.template, task.model.vocab())?;
        let vocab = task.model.vocab();
        let example = InstructionExample::new(layout, class, Provenance::Pseudo, task.template, task.graph.label_space(), vocab)?;
        state.unlabeled.remove(&node);
        state.labeled.push(example);
    }
    state.selected_last_round = selected.iter().map(|r| r.node_id).collect();
    Ok(())
}

/// Relabels pseudo examples (never ground truth) that were confidently
/// re-scored with a different class. Returns the number changed.
fn relabel<M: LanguageModel + ?Sized>(task: &TaskContext<'_, M>, state: &mut PipelineState, rescored: &[&ScoredResponse]) -> Result<usize> {
    let new_class: BTreeMap<NodeId, ClassId> =
        rescored.iter().filter_map(|r| r.parsed_label.map(|c| (r.node_id, c))).collect();
    let mut changed = 0;
    for e in state.labeled.iter_mut().filter(|e| e.provenance == Provenance::Pseudo) {
        if let Some(&c) = new_class.get(&e.node_id()) {
            if c != e.class {
                e.class = c;
                e.target = task.template.response_tokens(c, task.graph.label_space(), task.model.vocab())?;
                changed += 1;
            }
        }
    }
    Ok(changed)
}

fn run_fit<M: LanguageModel + ?Sized>(
    task: &TaskContext<'_, M>,
    state: &mut PipelineState,
    config: &SelfTrainConfig,
    initial: &ParameterSet,
) -> Result<FitReport> {
    if !config.warm_start {
        state.params = initial.clone();
        state.optimizer = OptimizerState::new(config.train.optimizer);
    }
    fit(&task.graph_ctx, task.model, &state.labeled, &mut state.params, &config.train, &mut state.optimizer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainOutcome {
    pub state: PipelineState,
    /// Number of loop rounds (fit + pseudo-labeling) executed.
    pub rounds: usize,
}

/// Runs up to `max_rounds` rounds, stopping early once `V_U` is empty, then
/// one final fit. `observer` sees the state at every round boundary.
pub fn run_self_training<M: LanguageModel + ?Sized, S: NodeScanner + ?Sized>(
    task: &TaskContext<'_, M>,
    split: &DataSplit,
    config: &SelfTrainConfig,
    initial: ParameterSet,
    scanner: &S,
    observer: &mut dyn FnMut(&PipelineState),
) -> Result<SelfTrainOutcome> {
    if !task.model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if config.threshold.is_nan() {
        return Err(Error::InvalidArgument("threshold must not be NaN".into()));
    }
    config.train.validate()?;
    let mut state = PipelineState::new(task, split, initial.clone(), &config.train)?;
    let mut guard = Guard::new(task, &state);
    guard.check(task, &state, config.max_rounds)?;
    observer(&state);
    let truth = |n: NodeId| task.graph.label(n);

    let mut rounds = 0;
    while rounds < config.max_rounds && !state.unlabeled.is_empty() {
        let fit_report = run_fit(task, &mut state, config, &initial)?;
        let scored = generate_pseudo_set(task, &state, config.rescore_pseudo, scanner)?;
        let (fresh, rescored): (Vec<&ScoredResponse>, Vec<&ScoredResponse>) =
            filter_confident(&scored, config.threshold).into_iter().partition(|r| state.unlabeled.contains(&r.node_id));
        let n_relabeled = if config.rescore_pseudo { relabel(task, &mut state, &rescored)? } else { 0 };
        augment(task, &mut state, &fresh)?;
        rounds += 1;
        state.round = rounds;

        let confidences: Vec<f64> = scored.iter().map(|r| r.confidence).filter(|c| c.is_finite()).collect();
        let selected = &state.selected_last_round;
        state.scores.extend(scored.iter().map(|r| ScoreRecord {
            round: rounds,
            node_id: r.node_id,
            confidence: r.confidence,
            entropy: r.entropy,
            parsed_label: r.parsed_label,
            terminated: r.terminated,
            selected: selected.contains(&r.node_id),
        }));
        let record = RoundRecord {
            stage: Stage::Round,
            round: rounds,
            n_labeled: state.labeled.len(),
            n_unlabeled: state.unlabeled.len(),
            n_scored: scored.len(),
            n_selected: fresh.len(),
            n_relabeled,
            mean_confidence: (!confidences.is_empty()).then(|| confidences.iter().sum::<f64>() / confidences.len() as f64),
            min_confidence: confidences.iter().copied().reduce(f64::min),
            max_confidence: confidences.iter().copied().reduce(f64::max),
            pseudo_precision: state.pseudo_precision(&truth),
            n_pseudo: state.labeled.len() - guard.ground_truth.len(),
            fit: fit_report,
        };
        state.history.push(record);
        guard.check(task, &state, config.max_rounds)?;
        observer(&state);
    }

    let fit_report = run_fit(task, &mut state, config, &initial)?;
    state.selected_last_round.clear();
    state.history.push(RoundRecord {
        stage: Stage::Final,
        round: rounds + 1,
        n_labeled: state.labeled.len(),
        n_unlabeled: state.unlabeled.len(),
        n_scored: 0,
        n_selected: 0,
        n_relabeled: 0,
        mean_confidence: None,
        min_confidence: None,
        max_confidence: None,
        pseudo_precision: state.pseudo_precision(&truth),
        n_pseudo: state.labeled.len() - guard.ground_truth.len(),
        fit: fit_report,
    });
    guard.check(task, &state, config.max_rounds)?;
    observer(&state);
    Ok(SelfTrainOutcome { state, rounds })
}
