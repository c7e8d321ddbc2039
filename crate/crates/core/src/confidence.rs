//! Sequence-level confidence of generated responses and threshold filtering.
//!
//! The "entropy" of a response is its mean per-token negative
//! log-likelihood (natural log); confidence is one minus that.

use alloc::vec::Vec;

use crate::decoder::{parse_label, TokenId};
use crate::{ClassId, Error, NodeId, Result};

/// Mean negated log-probability of the emitted tokens.
pub fn response_entropy(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::Empty("log-probability sequence"));
    }
    let mut sum = 0.0;
    for &lp in token_logprobs {
        if !lp.is_finite() {
            return Err(Error::NonFinite("token log-probability"));
        }
        if lp > 0.0 {
            return Err(Error::PositiveLogProb(lp));
        }
        sum -= lp;
    }
    Ok(sum / token_logprobs.len() as f64)
}

/// `c = 1 - H`; may be negative.
pub fn confidence(entropy: f64) -> f64 {
    1.0 - entropy
}

/// A generated response with its per-token scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse {
    pub node_id: NodeId,
    pub tokens: Vec<TokenId>,
    pub token_logprobs: Vec<f64>,
    pub terminated: bool,
    pub entropy: f64,
    /// `-inf` when the response is unterminated, so it is never selected.
    pub confidence: f64,
    pub parsed_label: Option<ClassId>,
}

impl ScoredResponse {
    pub fn new(
        node_id: NodeId,
        tokens: Vec<TokenId>,
        token_logprobs: Vec<f64>,
        terminated: bool,
        label_ids: &[TokenId],
    ) -> Self {
        let entropy = response_entropy(&token_logprobs).unwrap_or(f64::INFINITY);
        let confidence = if terminated && entropy.is_finite() { confidence(entropy) } else { f64::NEG_INFINITY };
        let parsed_label = parse_label(&tokens, terminated, label_ids);
        Self { node_id, tokens, token_logprobs, terminated, entropy, confidence, parsed_label }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Eligible for selection at all, irrespective of the threshold.
    pub fn is_selectable(&self) -> bool {
        self.terminated && self.parsed_label.is_some()
    }
}

/// Responses with `confidence > threshold` (strict) and a parsed label.
pub fn filter_confident(scored: &[ScoredResponse], threshold: f64) -> Vec<&ScoredResponse> {
    scored.iter().filter(|r| r.is_selectable() && r.confidence > threshold).collect()
}
