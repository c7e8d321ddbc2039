//! CSV row types and writers.

use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;
use tagtune_core::selftrain::{RoundRecord, Stage};
use tagtune_core::NodeId;

use crate::error::{Error, Result};
use crate::harness::Variant;

/// One accuracy measurement of one sweep cell. Rows are keyed by
/// `(seed, ratio, variant, round)`; the final fit of a run with `R` loop
/// rounds has round `R + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub seed: u64,
    pub ratio: f64,
    pub variant: Variant,
    pub stage: Stage,
    pub round: usize,
    /// Fraction of the split's unlabeled nodes predicted correctly.
    pub accuracy: Option<f64>,
    pub n_labeled: Option<usize>,
    pub n_pseudo_accepted: Option<usize>,
    pub pseudo_precision: Option<f64>,
    /// Percentage over the supervised-only final accuracy of the same seed
    /// and ratio; filled on final rows only.
    pub relative_improvement_vs_supervised: Option<f64>,
    pub error: Option<String>,
}

/// [`RoundRecord`] without the per-epoch vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRow {
    pub stage: Stage,
    pub round: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_scored: usize,
    pub n_selected: usize,
    pub n_relabeled: usize,
    pub n_pseudo: usize,
    pub pseudo_precision: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub min_confidence: Option<f64>,
    pub max_confidence: Option<f64>,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

impl From<&RoundRecord> for RoundRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            stage: r.stage,
            round: r.round,
            n_labeled: r.n_labeled,
            n_unlabeled: r.n_unlabeled,
            n_scored: r.n_scored,
            n_selected: r.n_selected,
            n_relabeled: r.n_relabeled,
            n_pseudo: r.n_pseudo,
            pseudo_precision: r.pseudo_precision,
            mean_confidence: r.mean_confidence,
            min_confidence: r.min_confidence,
            max_confidence: r.max_confidence,
            first_loss: r.fit.losses.first().copied(),
            last_loss: r.fit.losses.last().copied(),
        }
    }
}

/// Loss and gradient norms of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRow {
    pub seed: u64,
    pub ratio: f64,
    pub variant: Variant,
    pub stage: Stage,
    pub round: usize,
    pub epoch: usize,
    pub loss: f64,
    pub encoder_grad_norm: f64,
    pub projector_grad_norm: f64,
}

impl LossRow {
    pub fn from_record(seed: u64, ratio: f64, variant: Variant, r: &RoundRecord) -> Vec<Self> {
        (0..r.fit.losses.len())
            .map(|epoch| Self {
                seed,
                ratio,
                variant,
                stage: r.stage,
                round: r.round,
                epoch,
                loss: r.fit.losses[epoch],
                encoder_grad_norm: r.fit.encoder_grad_norms.get(epoch).copied().unwrap_or(0.0),
                projector_grad_norm: r.fit.projector_grad_norms.get(epoch).copied().unwrap_or(0.0),
            })
            .collect()
    }
}

/// Per-node pseudo-labeling outcome of one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub round: usize,
    pub node_id: NodeId,
    pub confidence: f64,
    pub entropy: f64,
    pub parsed_label: Option<String>,
    pub true_label: Option<String>,
    pub terminated: bool,
    pub selected: bool,
}

/// Mean final accuracy over seeds for one `(ratio, variant)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub ratio: f64,
    pub variant: Variant,
    pub n_seeds: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_accuracy: f64,
    pub mean_pseudo_precision: Option<f64>,
    /// Percentage of `mean_accuracy` over the supervised-only mean.
    pub relative_improvement_vs_supervised: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(path))
}
