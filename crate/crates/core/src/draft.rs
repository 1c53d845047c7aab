//! Pieces shared by the greedy and the tree decoder: which adaptive ids to
//! append, the adaptive-token draft pass, and per-generation accounting.

use std::time::Duration;

use crate::error::{DecodeError, ModelError};
use crate::model::{KvCache, Logits, ModelConfig, ModelParams, TokenId};

/// Adaptive ids appended after the committed sequence when drafting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdaptiveTokens {
    /// One id repeated `k` times; any `k` works.
    Identical(TokenId),
    /// The j-th appended token is the j-th id; `k` is bounded by the list.
    Diverse(Vec<TokenId>),
}

impl AdaptiveTokens {
    pub fn identical(cfg: &ModelConfig) -> Self {
        AdaptiveTokens::Identical(cfg.first_adaptive())
    }

    pub fn diverse(cfg: &ModelConfig) -> Self {
        AdaptiveTokens::Diverse(cfg.adaptive_ids())
    }

    pub fn take(&self, k: usize) -> Result<Vec<TokenId>, DecodeError> {
        match self {
            AdaptiveTokens::Identical(id) => Ok(vec![*id; k]),
            AdaptiveTokens::Diverse(ids) if k <= ids.len() => Ok(ids[..k].to_vec()),
            AdaptiveTokens::Diverse(ids) => Err(DecodeError::TooManyDrafts {
                k,
                available: ids.len(),
            }),
        }
    }

    pub fn max_k(&self) -> Option<usize> {
        match self {
            AdaptiveTokens::Identical(_) => None,
            AdaptiveTokens::Diverse(ids) => Some(ids.len()),
        }
    }
}

/// Draft step 1 as a raw pass: feeds `pending` followed by `k` adaptive
/// tokens, then rolls the cache back so only the pending tokens' entries stay.
/// Returns `k + 1` logits rows: the last pending position, then one per
/// adaptive token.
pub fn adaptive_pass(
    params: &ModelParams,
    cache: &mut KvCache,
    pending: &[TokenId],
    k: usize,
    adaptive: &AdaptiveTokens,
) -> Result<Logits, DecodeError> {
    if pending.is_empty() {
        return Err(ModelError::EmptyInput.into());
    }
    let max_seq = params.config().max_seq;
    let needed = cache.len() + pending.len() + k;
    if needed > max_seq {
        return Err(ModelError::SequenceTooLong { needed, max_seq }.into());
    }
    let mut input = pending.to_vec();
    input.extend(adaptive.take(k)?);
    let keep = cache.len() + pending.len();
    let logits = params.forward_causal(&input, cache)?;
    cache.rollback(keep)?;
    let vocab = logits.vocab();
    let first = pending.len() - 1;
    Ok(Logits::new(vocab, logits.as_slice()[first * vocab..].to_vec()))
}

/// Truncates `block` at `room` tokens and just after the first stop id.
/// Returns whether a stop id was hit.
pub(crate) fn clip_block(block: &mut Vec<TokenId>, room: usize, stop_ids: &[TokenId]) -> bool {
    block.truncate(room);
    if let Some(i) = block.iter().position(|t| stop_ids.contains(t)) {
        block.truncate(i + 1);
        return true;
    }
    false
}

/// Accounting for one generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenStats {
    pub loops: usize,
    pub forward_passes: usize,
    /// Tokens committed by each loop (after max_new / stop truncation).
    pub accepted_per_loop: Vec<usize>,
    /// Draft tokens accepted by each loop's verification.
    pub drafts_accepted_per_loop: Vec<usize>,
    /// Draft tokens offered by each loop (k, unless clipped by max_seq).
    pub drafts_per_loop: Vec<usize>,
    /// `accept_count_per_index[j]` counts loops that accepted the (j+1)-th draft.
    pub accept_count_per_index: Vec<usize>,
    pub wall_time: Duration,
    pub new_tokens: usize,
}

impl GenStats {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            accept_count_per_index: vec![0; k],
            ..Default::default()
        }
    }

    pub(crate) fn record_loop(&mut self, committed: usize, drafts_accepted: usize, offered: usize) {
        self.loops += 1;
        self.forward_passes += 2;
        self.accepted_per_loop.push(committed);
        self.drafts_accepted_per_loop.push(drafts_accepted);
        self.drafts_per_loop.push(offered);
        for c in &mut self.accept_count_per_index[..drafts_accepted] {
            *c += 1;
        }
        self.new_tokens += committed;
    }

    /// Appends another generation's loops, as if both ran back to back.
    pub fn absorb(&mut self, other: &GenStats) {
        self.loops += other.loops;
        self.forward_passes += other.forward_passes;
        self.accepted_per_loop.extend_from_slice(&other.accepted_per_loop);
        self.drafts_accepted_per_loop
            .extend_from_slice(&other.drafts_accepted_per_loop);
        self.drafts_per_loop.extend_from_slice(&other.drafts_per_loop);
        if self.accept_count_per_index.len() < other.accept_count_per_index.len() {
            self.accept_count_per_index
                .resize(other.accept_count_per_index.len(), 0);
        }
        for (a, b) in self
            .accept_count_per_index
            .iter_mut()
            .zip(&other.accept_count_per_index)
        {
            *a += b;
        }
        self.wall_time += other.wall_time;
        self.new_tokens += other.new_tokens;
    }

    /// Mean over loops of accepted drafts / offered drafts. `None` when no
    /// loop offered any draft.
    pub fn accept_rate(&self) -> Option<f64> {
        let rates: Vec<f64> = self
            .drafts_accepted_per_loop
            .iter()
            .zip(&self.drafts_per_loop)
            .filter(|(_, &k)| k > 0)
            .map(|(&a, &k)| a as f64 / k as f64)
            .collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }

    pub fn tokens_per_loop(&self) -> f64 {
        if self.loops == 0 {
            0.0
        } else {
            self.new_tokens as f64 / self.loops as f64
        }
    }

    /// Fraction of loops that accepted the (j+1)-th draft.
    pub fn accept_rate_by_index(&self) -> Vec<f64> {
        self.accept_count_per_index
            .iter()
            .map(|&c| {
                if self.loops == 0 {
                    0.0
                } else {
                    c as f64 / self.loops as f64
                }
            })
            .collect()
    }
}
