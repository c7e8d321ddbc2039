use rayon::prelude::*;
use tagtune_core::confidence::ScoredResponse;
use tagtune_core::eval::NodeScanner;
use tagtune_core::{NodeId, Result};

/// Scores nodes on the current rayon pool; results keep input order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonScanner;

impl NodeScanner for RayonScanner {
    fn scan(
        &self,
        nodes: &[NodeId],
        score: &(dyn Fn(NodeId) -> Result<ScoredResponse> + Sync),
    ) -> Result<Vec<ScoredResponse>> {
        nodes.par_iter().map(|&n| score(n)).collect()
    }
}
