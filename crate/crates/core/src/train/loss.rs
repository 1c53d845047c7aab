//! Basic and improved adaptive-token objectives.
//!
//! Both are weighted sums of per-position negative log-likelihoods, so a
//! single `weights` vector drives both the loss value and its gradient.

use num_traits::Float;

use crate::error::TrainError;
use crate::model::ops::log_softmax;
use crate::model::{Logits, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean NLL over positions whose input is a standard token (and that the
    /// active objective trains on).
    pub standard_loss: f64,
    /// Mean NLL over positions whose input is an adaptive token; `None` when
    /// there are none.
    pub adaptive_loss: Option<f64>,
    pub combined: f64,
    pub w: f64,
}

/// NLL of the label at each position of row-major `logits`; `None` where the
/// label is absent.
pub fn nll_rows<F: Float>(logits: &[F], vocab: usize, labels: &[Option<TokenId>]) -> Vec<Option<f64>> {
    assert_eq!(logits.len(), vocab * labels.len(), "logits / labels misaligned");
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.map(|t| -log_softmax(&logits[i * vocab..(i + 1) * vocab])[t as usize]))
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Weight per position: uniform over every labelled position.
pub fn basic_weights(labels: &[Option<TokenId>]) -> Vec<f64> {
    let n = labels.iter().filter(|l| l.is_some()).count();
    labels
        .iter()
        .map(|l| if l.is_some() && n > 0 { 1.0 / n as f64 } else { 0.0 })
        .collect()
}

/// Weights for the two streams: `1/(2·N_pure)` on every labelled pure
/// position, `w/(2·N_masked)` on every labelled adaptive-input position of
/// the mixed stream, zero elsewhere.
pub fn improved_weights(
    pure_labels: &[Option<TokenId>],
    mixed_labels: &[Option<TokenId>],
    m_mask: &[bool],
    w: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n_pure = pure_labels.iter().filter(|l| l.is_some()).count();
    let n_mask = mixed_labels
        .iter()
        .zip(m_mask)
        .filter(|(l, &m)| m && l.is_some())
        .count();
    let pw = pure_labels
        .iter()
        .map(|l| if l.is_some() { 0.5 / n_pure as f64 } else { 0.0 })
        .collect();
    let mw = mixed_labels
        .iter()
        .zip(m_mask)
        .map(|(l, &m)| {
            if m && l.is_some() {
                0.5 * w / n_mask as f64
            } else {
                0.0
            }
        })
        .collect();
    (pw, mw)
}

/// Mean NLL over every labelled position of the mixed sequence, adaptive or not.
pub fn loss_basic(
    logits: &Logits,
    labels: &[Option<TokenId>],
    m_mask: &[bool],
) -> Result<LossReport, TrainError> {
    let nll = nll_rows(logits.as_slice(), logits.vocab(), labels);
    let combined = mean(nll.iter().flatten().copied()).ok_or(TrainError::EmptyLoss)?;
    let split = |adaptive: bool| {
        mean(
            nll.iter()
                .zip(m_mask)
                .filter(|(_, &m)| m == adaptive)
                .filter_map(|(n, _)| *n),
        )
    };
    Ok(LossReport {
        standard_loss: split(false).unwrap_or(0.0),
        adaptive_loss: split(true),
        combined,
        w: 1.0,
    })
}

/// `½·(pure-stream mean NLL + w · mean NLL over the adaptive-input positions of
/// the mixed stream)`. Standard-input positions of the mixed stream do not count.
pub fn loss_improved(
    pure_logits: &Logits,
    pure_labels: &[Option<TokenId>],
    mixed_logits: &Logits,
    mixed_labels: &[Option<TokenId>],
    m_mask: &[bool],
    w: f64,
) -> Result<LossReport, TrainError> {
    let pure = nll_rows(pure_logits.as_slice(), pure_logits.vocab(), pure_labels);
    let mixed = nll_rows(mixed_logits.as_slice(), mixed_logits.vocab(), mixed_labels);
    let pure_mean = mean(pure.iter().flatten().copied());
    let masked_mean = mean(
        mixed
            .iter()
            .zip(m_mask)
            .filter(|(_, &m)| m)
            .filter_map(|(n, _)| *n),
    );
    if pure_mean.is_none() && masked_mean.is_none() {
        return Err(TrainError::EmptyLoss);
    }
    let combined = 0.5 * (pure_mean.unwrap_or(0.0) + w * masked_mean.unwrap_or(0.0));
    Ok(LossReport {
        standard_loss: pure_mean.unwrap_or(0.0),
        adaptive_loss: masked_mean,
        combined,
        w,
    })
}

/// Gradient of `Σ weights[i] · nll[i]` with respect to the logits.
pub fn dlogits<F: Float>(logits: &[F], vocab: usize, labels: &[Option<TokenId>], weights: &[f64]) -> Vec<F> {
    let mut g = vec![F::zero(); logits.len()];
    for (i, (l, &w)) in labels.iter().zip(weights).enumerate() {
        let Some(t) = l else { continue };
        if w == 0.0 {
            continue;
        }
        let ls = log_softmax(&logits[i * vocab..(i + 1) * vocab]);
        for (j, lp) in ls.iter().enumerate() {
            let target = if j == *t as usize { 1.0 } else { 0.0 };
            g[i * vocab + j] = F::from(w * (lp.exp() - target)).unwrap();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f32]]) -> Logits {
        Logits::new(rows[0].len(), rows.concat())
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let l = logits(&[&[0.0; 6], &[0.0; 6], &[0.0; 6]]);
        let r = loss_basic(&l, &[Some(1), Some(4), None], &[false; 3]).unwrap();
        assert!((r.combined - 6f64.ln()).abs() < 1e-12);
        assert_eq!(r.adaptive_loss, None);
    }

    #[test]
    fn perfect_logits_give_zero() {
        let l = logits(&[&[200.0, 0.0, 0.0], &[0.0, 0.0, 200.0]]);
        let r = loss_basic(&l, &[Some(0), Some(2)], &[false, true]).unwrap();
        assert!(r.combined.abs() < 1e-12);
        assert_eq!(r.adaptive_loss, Some(0.0));
    }

    #[test]
    fn basic_without_replacement_is_plain_lm_loss() {
        let l = logits(&[&[1.0, 2.0, 0.5], &[0.1, -1.0, 0.3]]);
        let labels = [Some(1), Some(0)];
        let r = loss_basic(&l, &labels, &[false, false]).unwrap();
        let want = nll_rows(l.as_slice(), 3, &labels).iter().flatten().sum::<f64>() / 2.0;
        assert!((r.combined - want).abs() < 1e-12);
        assert!((r.standard_loss - want).abs() < 1e-12);
    }

    #[test]
    fn improved_without_masks_is_half_pure() {
        let p = logits(&[&[1.0, 2.0, 0.5], &[0.1, -1.0, 0.3]]);
        let labels = [Some(1), Some(0)];
        let r = loss_improved(&p, &labels, &p, &labels, &[false, false], 1.0).unwrap();
        let pure = loss_basic(&p, &labels, &[false, false]).unwrap().combined;
        assert!((r.combined - 0.5 * pure).abs() < 1e-12);
    }

    #[test]
    fn improved_needs_some_position() {
        let p = logits(&[&[1.0, 2.0, 0.5]]);
        assert!(matches!(
            loss_improved(&p, &[None], &p, &[Some(1)], &[false], 1.0),
            Err(TrainError::EmptyLoss)
        ));
    }

    #[test]
    fn combined_recomposes_from_weights() {
        let pure = logits(&[&[1.0, 2.0, 0.5, 0.0], &[0.1, -1.0, 0.3, 2.0], &[0.0; 4]]);
        let mixed = logits(&[
            &[0.5, 0.0, 0.0, 1.0],
            &[2.0, 1.0, 0.0, 0.0],
            &[0.2, 0.0, 3.0, 0.0],
        ]);
        let pl = [Some(1), Some(3), None];
        let ml = [Some(0), Some(2), Some(2)];
        let mask = [false, true, true];
        let r = loss_improved(&pure, &pl, &mixed, &ml, &mask, 0.7).unwrap();
        let (pw, mw) = improved_weights(&pl, &ml, &mask, 0.7);
        let dot =
            |n: Vec<Option<f64>>, w: &[f64]| n.iter().zip(w).map(|(n, w)| n.unwrap_or(0.0) * w).sum::<f64>();
        let total =
            dot(nll_rows(pure.as_slice(), 4, &pl), &pw) + dot(nll_rows(mixed.as_slice(), 4, &ml), &mw);
        assert!((total - r.combined).abs() < 1e-12);

        let b = loss_basic(&mixed, &ml, &mask).unwrap();
        let bw = basic_weights(&ml);
        assert!((dot(nll_rows(mixed.as_slice(), 4, &ml), &bw) - b.combined).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_means_zero_gradient() {
        let mixed = [0.5f64, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0];
        let labels = [Some(0), Some(2)];
        let (_, mw) = improved_weights(&[Some(1)], &labels, &[true, false], 0.0);
        assert!(dlogits(&mixed, 4, &labels, &mw).iter().all(|&g| g == 0.0));
        let (_, mw) = improved_weights(&[Some(1)], &labels, &[true, false], 1.0);
        let g = dlogits(&mixed, 4, &labels, &mw);
        assert!(g[..4].iter().any(|&x| x != 0.0));
        assert!(
            g[4..].iter().all(|&x| x == 0.0),
            "standard mixed position must not train"
        );
    }

    #[test]
    fn dlogits_matches_finite_difference() {
        let mut x = vec![0.3f64, -1.2, 0.8, 0.1, 1.5, -0.4];
        let labels = [Some(2), Some(0)];
        let w = [0.25, 0.75];
        let f = |x: &[f64]| {
            nll_rows(x, 3, &labels)
                .iter()
                .zip(&w)
                .map(|(n, w)| n.unwrap() * w)
                .sum::<f64>()
        };
        let g = dlogits(&x, 3, &labels, &w);
        for i in 0..x.len() {
            let h = 1e-6;
            x[i] += h;
            let up = f(&x);
            x[i] -= 2.0 * h;
            let down = f(&x);
            x[i] += h;
            assert!(((up - down) / (2.0 * h) - g[i]).abs() < 1e-8);
        }
    }
}
