//! Reference implementations used as ground truth by tests and `verify`.
//!
//! Nothing here calls into the speculative decoders. The only shared pieces
//! are the model forward pass, the argmax tie rule and the truncation rule
//! that defines the target sampling distribution.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{DecodeError, ModelError};
use crate::model::{argmax, Logits, ModelParams, TokenId};
use crate::sampling::{truncate_dist, SamplingConfig, SessionRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Feed one token per step through a KV cache.
    Cached,
    /// Re-run the whole sequence from scratch at every step.
    Recompute,
}

fn check_room(params: &ModelParams, prompt: &[TokenId], max_new: usize) -> Result<(), DecodeError> {
    if prompt.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let max_seq = params.config().max_seq;
    let needed = prompt.len() + max_new;
    if needed > max_seq {
        return Err(ModelError::SequenceTooLong { needed, max_seq }.into());
    }
    Ok(())
}

/// Next-token logits for each step of an autoregressive run, driven by `pick`.
fn autoregress(
    params: &ModelParams,
    prompt: &[TokenId],
    max_new: usize,
    stop_ids: &[TokenId],
    mode: OracleMode,
    mut pick: impl FnMut(usize, &[f32]) -> Result<TokenId, DecodeError>,
) -> Result<Vec<TokenId>, DecodeError> {
    check_room(params, prompt, max_new)?;
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(max_new);
    let mut cache = params.new_cache();
    let mut logits = params.forward_causal(prompt, &mut cache)?;
    for step in 0..max_new {
        let t = pick(step, logits.last())?;
        out.push(t);
        seq.push(t);
        if stop_ids.contains(&t) || step + 1 == max_new {
            break;
        }
        logits = match mode {
            OracleMode::Cached => params.forward_causal(&[t], &mut cache)?,
            OracleMode::Recompute => {
                let mut fresh = params.new_cache();
                params.forward_causal(&seq, &mut fresh)?
            }
        };
    }
    Ok(out)
}

/// Plain greedy decoding, one token per forward pass.
pub fn generate_vanilla_greedy(
    params: &ModelParams,
    prompt: &[TokenId],
    max_new: usize,
    stop_ids: &[TokenId],
    mode: OracleMode,
) -> Result<Vec<TokenId>, DecodeError> {
    autoregress(params, prompt, max_new, stop_ids, mode, |_, l| Ok(argmax(l)))
}

/// Plain nucleus sampling. Step `i` draws from stream `i` of the session RNG.
pub fn generate_vanilla_nucleus(
    params: &ModelParams,
    prompt: &[TokenId],
    config: &SamplingConfig,
    max_new: usize,
    stop_ids: &[TokenId],
) -> Result<Vec<TokenId>, DecodeError> {
    let rng = SessionRng::new(config.seed);
    autoregress(
        params,
        prompt,
        max_new,
        stop_ids,
        OracleMode::Cached,
        |step, l| Ok(truncate_dist(l, config)?.sample(rng.uniform(step as u64, 0))),
    )
}

/// Cache-free causal forward of `prefix ++ branch`. Returns `1 + branch.len()`
/// rows: the prefix-final position, then one per branch token.
pub fn branch_logits(
    params: &ModelParams,
    prefix: &[TokenId],
    branch: &[TokenId],
) -> Result<Logits, DecodeError> {
    if prefix.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let mut seq = prefix.to_vec();
    seq.extend_from_slice(branch);
    let mut cache = params.new_cache();
    let l = params.forward_causal(&seq, &mut cache)?;
    let v = l.vocab();
    Ok(Logits::new(v, l.as_slice()[(prefix.len() - 1) * v..].to_vec()))
}

/// Exact marginal distribution of each of the first `depth` sampled tokens
/// under nucleus sampling, by enumerating every continuation with non-zero
/// probability. Entry `[i][t]` is P(token i = t).
pub fn nucleus_marginals(
    params: &ModelParams,
    prompt: &[TokenId],
    config: &SamplingConfig,
    depth: usize,
) -> Result<Vec<Vec<f64>>, DecodeError> {
    let vocab = params.config().vocab_size;
    let mut marg = vec![vec![0.0; vocab]; depth];
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 1.0)];
    while let Some((branch, p)) = stack.pop() {
        let logits = branch_logits(params, prompt, &branch)?;
        let dist = truncate_dist(logits.last(), config)?;
        for &(t, q) in dist.entries() {
            marg[branch.len()][t as usize] += p * q;
            if branch.len() + 1 < depth {
                let mut next = branch.clone();
                next.push(t);
                stack.push((next, p * q));
            }
        }
    }
    Ok(marg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `observed` counts against `expected` probabilities.
/// Cells with expected count below 5 are pooled into one cell. Observations
/// in zero-probability cells make the test fail outright (p = 0).
pub fn chi_square_gof(observed: &[usize], expected: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), expected.len());
    let n: usize = observed.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected) {
        if p <= 0.0 {
            if o > 0 {
                return ChiSquare {
                    statistic: f64::INFINITY,
                    dof: 0,
                    p_value: 0.0,
                };
            }
            continue;
        }
        let e = p * nf;
        if e < 5.0 {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        if pooled.1 >= 5.0 || cells.is_empty() {
            cells.push(pooled);
        } else {
            // Fold a small pooled cell into the smallest regular cell.
            let i = (0..cells.len())
                .min_by(|&a, &b| cells[a].1.total_cmp(&cells[b].1))
                .unwrap();
            cells[i].0 += pooled.0;
            cells[i].1 += pooled.1;
        }
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).unwrap().sf(statistic)
    };
    ChiSquare {
        statistic,
        dof,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(vocab: usize) -> ModelParams {
        ModelParams::init(ModelConfig {
            vocab_size: vocab,
            n_adaptive: 1,
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            max_seq: 48,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn zero_new_tokens_is_empty() {
        let p = model(16);
        let out = generate_vanilla_greedy(&p, &[1, 2], 0, &[], OracleMode::Cached).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn cached_equals_recompute() {
        let p = model(16);
        let a = generate_vanilla_greedy(&p, &[1, 2, 3], 30, &[], OracleMode::Cached).unwrap();
        let b = generate_vanilla_greedy(&p, &[1, 2, 3], 30, &[], OracleMode::Recompute).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, b);
    }

    #[test]
    fn nucleus_is_seed_deterministic_and_degenerates_to_greedy() {
        let p = model(16);
        let cfg = SamplingConfig {
            temperature: 1.0,
            seed: 9,
            ..Default::default()
        };
        let a = generate_vanilla_nucleus(&p, &[1, 2], &cfg, 20, &[]).unwrap();
        let b = generate_vanilla_nucleus(&p, &[1, 2], &cfg, 20, &[]).unwrap();
        assert_eq!(a, b);
        let cold = SamplingConfig {
            temperature: 1e-7,
            ..cfg
        };
        let g = generate_vanilla_greedy(&p, &[1, 2], 20, &[], OracleMode::Cached).unwrap();
        assert_eq!(generate_vanilla_nucleus(&p, &[1, 2], &cold, 20, &[]).unwrap(), g);
    }

    #[test]
    fn empty_branch_gives_prefix_final_row() {
        let p = model(16);
        let l = branch_logits(&p, &[4, 5, 6], &[]).unwrap();
        assert_eq!(l.rows(), 1);
        let mut c = p.new_cache();
        let full = p.forward_causal(&[4, 5, 6], &mut c).unwrap();
        assert_eq!(l.row(0), full.last());
    }

    #[test]
    fn single_step_samples_match_analytic_distribution() {
        let p = model(8);
        let cfg = SamplingConfig {
            temperature: 1.0,
            top_k: 10,
            top_p: 0.95,
            seed: 0,
        };
        let dist = truncate_dist(branch_logits(&p, &[1, 2], &[]).unwrap().last(), &cfg).unwrap();
        let mut counts = vec![0usize; 8];
        for seed in 0..10_000u64 {
            let c = SamplingConfig { seed, ..cfg };
            let t = generate_vanilla_nucleus(&p, &[1, 2], &c, 1, &[]).unwrap()[0];
            counts[t as usize] += 1;
        }
        let expected: Vec<f64> = (0..8).map(|t| dist.prob(t)).collect();
        let chi = chi_square_gof(&counts, &expected);
        assert!(chi.p_value > 0.01, "{chi:?}");
    }

    #[test]
    fn marginals_sum_to_one() {
        let p = model(8);
        let m = nucleus_marginals(&p, &[3], &SamplingConfig::default(), 3).unwrap();
        for row in &m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chi_square_flags_a_biased_sample() {
        let fair = chi_square_gof(&[2500, 2500, 2500, 2500], &[0.25; 4]);
        assert!(fair.p_value > 0.99);
        let biased = chi_square_gof(&[3000, 2300, 2300, 2400], &[0.25; 4]);
        assert!(biased.p_value < 1e-6);
        let impossible = chi_square_gof(&[1, 9], &[0.0, 1.0]);
        assert_eq!(impossible.p_value, 0.0);
    }
}
