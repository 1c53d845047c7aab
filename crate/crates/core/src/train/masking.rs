//! Replacement of standard input tokens by adaptive tokens.
//!
//! Two independent random processes pick the replaced positions: every
//! position opens a window with probability `rate`, and each window's size
//! is uniform on `1..=L`. Overlapping windows merge. Replacement changes
//! inputs only; labels always stay the original next tokens.

use std::ops::Range;

use rand::Rng;

use crate::draft::AdaptiveTokens;
use crate::error::TrainError;
use crate::model::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    /// Sequence length the plan was drawn for.
    pub len: usize,
    pub max_window: usize,
    pub rate: f64,
    /// `(start, window)` pairs in start order; windows are clipped to `len`.
    pub replacements: Vec<(usize, usize)>,
}

impl MaskPlan {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            max_window: 1,
            rate: 0.0,
            replacements: Vec::new(),
        }
    }

    /// Replaced ranges after merging overlapping or touching windows.
    pub fn runs(&self) -> Vec<Range<usize>> {
        let mut runs: Vec<Range<usize>> = Vec::new();
        let mut windows: Vec<Range<usize>> = self.replacements.iter().map(|&(s, w)| s..s + w).collect();
        windows.sort_by_key(|r| r.start);
        for r in windows {
            match runs.last_mut() {
                Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                _ => runs.push(r),
            }
        }
        runs
    }

    pub fn replaced_count(&self) -> usize {
        self.runs().iter().map(|r| r.len()).sum()
    }

    /// Shortens every merged run to at most `max_run` positions. Needed when
    /// each offset in a run must map to its own diverse adaptive id.
    pub fn cap_runs(&self, max_run: usize) -> MaskPlan {
        MaskPlan {
            replacements: self
                .runs()
                .into_iter()
                .map(|r| (r.start, r.len().min(max_run)))
                .collect(),
            ..self.clone()
        }
    }
}

pub fn plan_masks(n: usize, max_window: usize, rate: f64, rng: &mut impl Rng) -> MaskPlan {
    assert!(n >= 1, "sequence length must be positive");
    assert!(max_window >= 1, "max mask window must be positive");
    assert!(rate > 0.0 && rate < 1.0, "mask rate must lie in (0, 1)");
    let mut replacements = Vec::new();
    for start in 0..n {
        if rng.random::<f64>() < rate {
            let w = rng.random_range(1..=max_window);
            replacements.push((start, w.min(n - start)));
        }
    }
    MaskPlan {
        len: n,
        max_window,
        rate,
        replacements,
    }
}

/// A training sequence: inputs, next-token labels, and which inputs are adaptive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedSeq {
    pub inputs: Vec<TokenId>,
    /// `labels[i]` is the original token after position `i`; the last is `None`.
    pub labels: Vec<Option<TokenId>>,
    pub m_mask: Vec<bool>,
}

impl MixedSeq {
    /// The sequence with no replacement.
    pub fn pure(y: &[TokenId]) -> Self {
        Self {
            inputs: y.to_vec(),
            labels: next_labels(y),
            m_mask: vec![false; y.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.m_mask.iter().filter(|&&m| m).count()
    }
}

fn next_labels(y: &[TokenId]) -> Vec<Option<TokenId>> {
    (0..y.len()).map(|i| y.get(i + 1).copied()).collect()
}

pub fn apply_masks(
    y: &[TokenId],
    plan: &MaskPlan,
    adaptive: &AdaptiveTokens,
) -> Result<MixedSeq, TrainError> {
    for &(start, window) in &plan.replacements {
        if window == 0 || start + window > y.len() || plan.len != y.len() {
            return Err(TrainError::PlanBounds {
                start,
                window,
                len: y.len(),
            });
        }
    }
    let mut seq = MixedSeq::pure(y);
    for run in plan.runs() {
        let ids = match adaptive {
            AdaptiveTokens::Identical(id) => vec![*id; run.len()],
            AdaptiveTokens::Diverse(ids) if run.len() <= ids.len() => ids[..run.len()].to_vec(),
            AdaptiveTokens::Diverse(ids) => {
                return Err(TrainError::RunTooLong {
                    run: run.len(),
                    available: ids.len(),
                })
            }
        };
        for (pos, id) in run.zip(ids) {
            seq.inputs[pos] = id;
            seq.m_mask[pos] = true;
        }
    }
    Ok(seq)
}
