//! Allocation-only core of a semi-supervised instruction-tuning pipeline for
//! text-attributed graphs.
//!
//! A message-passing encoder and an alignment projector turn each node into a
//! graph token that is spliced into the prompt of a small frozen autoregressive
//! decoder. Only the encoder and projector are trained. Unlabeled nodes are
//! pseudo-labelled by greedy decoding, scored by their mean token
//! log-likelihood, and the confident ones are folded back into the training set
//! round after round.
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and the
//! experiment harness live in the companion `tagtune` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod confidence;
pub mod decoder;
pub mod digest;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod optim;
pub mod projector;
pub mod selftrain;
pub mod training;

pub use error::{Error, Result};

/// Index of a node in a [`graph::TextAttributedGraph`].
pub type NodeId = usize;
/// Index into a graph's label space.
pub type ClassId = usize;

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
