//! Two-step-draft-then-verify greedy decoding.
//!
//! Each loop makes exactly two forward passes:
//!
//! 1. the pending tokens plus `k` adaptive tokens, giving the next token
//!    `y[n+1]` and `k` drafts `d'[1..=k]` for the positions after it;
//! 2. `y[n+1]` followed by the drafts, giving `y[n+2]` (computed from verified
//!    context) and `k` re-drafts `d''[1..=k]`, each conditioned on the drafts
//!    before it.
//!
//! Verification walks the drafts as a chain anchored at `y[n+2]`: `d''[j]` is
//! accepted while `d'[j]` equals the token accepted just before it. The output
//! is token-for-token the plain greedy continuation.

use std::time::Instant;

use crate::draft::{adaptive_pass, clip_block, AdaptiveTokens, GenStats};
use crate::error::{DecodeError, ModelError};
use crate::model::{argmax, KvCache, ModelParams, TokenId};

/// Everything one loop produced before verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftState {
    /// Committed length `n` when the loop started.
    pub prefix_len: usize,
    pub step1_next: TokenId,
    pub step1_drafts: Vec<TokenId>,
    pub step2_next: TokenId,
    pub step2_drafts: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    /// Always starts with `[step1_next, step2_next]`.
    pub accepted: Vec<TokenId>,
    /// How many drafts were accepted (`accepted.len() - 2`).
    pub drafts_accepted: usize,
    /// Cache length that keeps only entries computed from matching context.
    pub rollback_len: usize,
}

/// Draft step 1. `pending` are the committed tokens not yet in the cache.
pub fn draft_step1(
    params: &ModelParams,
    cache: &mut KvCache,
    pending: &[TokenId],
    k: usize,
    adaptive: &AdaptiveTokens,
) -> Result<(TokenId, Vec<TokenId>), DecodeError> {
    let logits = adaptive_pass(params, cache, pending, k, adaptive)?;
    let next = argmax(logits.row(0));
    let drafts = (1..=k).map(|j| argmax(logits.row(j))).collect();
    Ok((next, drafts))
}

/// Draft step 2. Leaves `1 + drafts.len()` new entries in the cache.
pub fn draft_step2(
    params: &ModelParams,
    cache: &mut KvCache,
    next: TokenId,
    drafts: &[TokenId],
) -> Result<(TokenId, Vec<TokenId>), DecodeError> {
    let max_seq = params.config().max_seq;
    let needed = cache.len() + 1 + drafts.len();
    if needed > max_seq {
        return Err(ModelError::SequenceTooLong { needed, max_seq }.into());
    }
    let mut input = Vec::with_capacity(drafts.len() + 1);
    input.push(next);
    input.extend_from_slice(drafts);
    let logits = params.forward_causal(&input, cache)?;
    let next2 = argmax(logits.row(0));
    let drafts2 = (1..input.len()).map(|j| argmax(logits.row(j))).collect();
    Ok((next2, drafts2))
}

pub fn verify_greedy(state: &DraftState) -> Verdict {
    let mut accepted = vec![state.step1_next, state.step2_next];
    let mut prev = state.step2_next;
    let mut m = 0;
    for (&d1, &d2) in state.step1_drafts.iter().zip(&state.step2_drafts) {
        if d1 != prev {
            break;
        }
        accepted.push(d2);
        prev = d2;
        m += 1;
    }
    Verdict {
        accepted,
        drafts_accepted: m,
        // step1_next plus the m drafts that matched were fed with correct context.
        rollback_len: state.prefix_len + 1 + m,
    }
}

#[derive(Debug, Clone)]
pub struct GreedyOptions {
    pub k: usize,
    pub max_new: usize,
    pub stop_ids: Vec<TokenId>,
    pub adaptive: AdaptiveTokens,
}

impl GreedyOptions {
    pub fn new(params: &ModelParams, k: usize, max_new: usize) -> Self {
        Self {
            k,
            max_new,
            stop_ids: Vec::new(),
            adaptive: AdaptiveTokens::identical(params.config()),
        }
    }
}

/// One loop as seen by a trace consumer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopTrace {
    pub state: DraftState,
    pub verdict: Verdict,
    pub committed: Vec<TokenId>,
}

pub fn generate_greedy(
    params: &ModelParams,
    prompt: &[TokenId],
    opts: &GreedyOptions,
) -> Result<(Vec<TokenId>, GenStats), DecodeError> {
    generate_greedy_with(params, prompt, opts, verify_greedy, None)
}

/// [`generate_greedy`] with a replaceable verification rule and an optional
/// per-loop trace.
pub fn generate_greedy_with(
    params: &ModelParams,
    prompt: &[TokenId],
    opts: &GreedyOptions,
    verify: impl Fn(&DraftState) -> Verdict,
    mut trace: Option<&mut Vec<LoopTrace>>,
) -> Result<(Vec<TokenId>, GenStats), DecodeError> {
    let start = Instant::now();
    if prompt.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let max_seq = params.config().max_seq;
    let needed = prompt.len() + opts.max_new;
    if needed > max_seq {
        return Err(ModelError::SequenceTooLong { needed, max_seq }.into());
    }
    if let Some(max_k) = opts.adaptive.max_k() {
        if opts.k > max_k {
            return Err(DecodeError::TooManyDrafts {
                k: opts.k,
                available: max_k,
            });
        }
    }

    let mut stats = GenStats::new(opts.k);
    let mut out = Vec::with_capacity(opts.max_new);
    let mut cache = params.new_cache();
    let mut pending = prompt.to_vec();
    while out.len() < opts.max_new {
        let n = cache.len() + pending.len();
        // Near max_seq, draft fewer tokens so step 2 still fits.
        let k = opts.k.min(max_seq - n - 1);
        let (next, drafts) = draft_step1(params, &mut cache, &pending, k, &opts.adaptive)?;
        let (next2, drafts2) = draft_step2(params, &mut cache, next, &drafts)?;
        let state = DraftState {
            prefix_len: n,
            step1_next: next,
            step1_drafts: drafts,
            step2_next: next2,
            step2_drafts: drafts2,
        };
        let verdict = verify(&state);
        cache.rollback(verdict.rollback_len)?;
        pending = vec![*verdict.accepted.last().expect("verdict is never empty")];

        let mut block = verdict.accepted.clone();
        let stopped = clip_block(&mut block, opts.max_new - out.len(), &opts.stop_ids);
        stats.record_loop(block.len(), verdict.drafts_accepted, k);
        out.extend_from_slice(&block);
        if let Some(t) = trace.as_deref_mut() {
            t.push(LoopTrace {
                state,
                verdict,
                committed: block,
            });
        }
        if stopped {
            break;
        }
    }
    stats.wall_time = start.elapsed();
    Ok((out, stats))
}
