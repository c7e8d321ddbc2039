use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::TextAttributedGraph;
use crate::{seeded_rng, Error, NodeId, Result};

/// Partition of the node set into labeled and unlabeled nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub labeled: BTreeSet<NodeId>,
    pub unlabeled: BTreeSet<NodeId>,
}

impl DataSplit {
    /// Labeled count that best satisfies `|labeled| ≈ ratio · |unlabeled|`
    /// with `|labeled| + |unlabeled| = n`; exact halves round down.
    pub fn labeled_count(n: usize, ratio: f64) -> usize {
        let ideal = ratio * n as f64 / (1.0 + ratio);
        let count = libm::ceil(ideal - 0.5).max(0.0) as usize;
        count.min(n)
    }

    pub fn validate(&self, graph: &TextAttributedGraph) -> Result<()> {
        let n = graph.node_count();
        if let Some(&node) = self.labeled.intersection(&self.unlabeled).next() {
            return Err(Error::InvalidArgument(format!("node {node} is both labeled and unlabeled")));
        }
        if self.labeled.len() + self.unlabeled.len() != n
            || self.labeled.iter().chain(&self.unlabeled).any(|&v| v >= n)
        {
            return Err(Error::InvalidArgument("split does not cover the node set".into()));
        }
        for &node in &self.labeled {
            graph.require_label(node)?;
        }
        Ok(())
    }
}

/// Seeded, class-stratified split: one labeled node per (non-empty) class
/// first, then uniformly random nodes until the labeled count is reached.
pub fn split_nodes(graph: &TextAttributedGraph, labeled_to_unlabeled_ratio: f64, seed: u64) -> Result<DataSplit> {
    if !(labeled_to_unlabeled_ratio > 0.0 && labeled_to_unlabeled_ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "labeled-to-unlabeled ratio must be positive, got {labeled_to_unlabeled_ratio}"
        )));
    }
    if let Some(node) = (0..graph.node_count()).find(|&v| graph.label(v).is_none()) {
        return Err(Error::MissingLabel(node));
    }
    let n = graph.node_count();
    let target = DataSplit::labeled_count(n, labeled_to_unlabeled_ratio);
    let mut by_class: Vec<Vec<NodeId>> = graph.nodes_by_class().into_iter().filter(|c| !c.is_empty()).collect();
    if target < by_class.len() {
        return Err(Error::RatioTooSmall {
            ratio: labeled_to_unlabeled_ratio,
            labeled: target,
            classes: by_class.len(),
        });
    }
    let mut rng = seeded_rng(seed);
    let mut labeled = BTreeSet::new();
    let mut rest = Vec::with_capacity(n);
    for members in &mut by_class {
        members.shuffle(&mut rng);
        labeled.insert(members[0]);
        rest.extend_from_slice(&members[1..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    labeled.extend(rest.iter().take(target - labeled.len()).copied());
    let unlabeled = (0..n).filter(|v| !labeled.contains(v)).collect();
    Ok(DataSplit { labeled, unlabeled })
}
