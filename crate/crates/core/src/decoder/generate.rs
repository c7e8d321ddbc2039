use alloc::vec::Vec;

use super::prompt::Instruction;
use super::vocab::{TokenId, Vocabulary};
use super::LanguageModel;
use crate::confidence::ScoredResponse;
use crate::linalg::argmax;
use crate::{ClassId, Error, Result};

/// Greedy decoding: append the arg-max token (lowest id on ties) until
/// `<eos>` or `max_response_len` tokens.
///
/// `label_ids` are the label-word token ids in label-space order, used to
/// parse the response.
pub fn decode_greedy<M: LanguageModel + ?Sized>(
    instruction: &Instruction,
    model: &M,
    max_response_len: usize,
    label_ids: &[TokenId],
) -> Result<ScoredResponse> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if max_response_len == 0 {
        return Err(Error::InvalidArgument("max_response_len must be at least 1".into()));
    }
    let mut tokens = Vec::with_capacity(max_response_len);
    let mut logprobs = Vec::with_capacity(max_response_len);
    let mut terminated = false;
    while tokens.len() < max_response_len && instruction.len() + tokens.len() < model.max_len() {
        let lp = model.next_token_logprobs(instruction, &tokens)?;
        let next = argmax(&lp);
        tokens.push(TokenId(next as u32));
        logprobs.push(lp[next]);
        if TokenId(next as u32) == Vocabulary::EOS {
            terminated = true;
            break;
        }
    }
    if tokens.is_empty() {
        return Err(Error::SequenceTooLong { len: instruction.len() + 1, max_len: model.max_len() });
    }
    Ok(ScoredResponse::new(instruction.node_id, tokens, logprobs, terminated, label_ids))
}

/// Class whose label word occurs first; `None` (reject) when no label word
/// occurs or the response is unterminated.
pub fn parse_label(tokens: &[TokenId], terminated: bool, label_ids: &[TokenId]) -> Option<ClassId> {
    if !terminated {
        return None;
    }
    tokens.iter().find_map(|t| label_ids.iter().position(|l| l == t))
}
