use anyhow::{Context, Result};
use sdsat::greedy::{generate_greedy_with, verify_greedy, DraftState, LoopTrace, Verdict};
use sdsat::model::checkpoint;
use sdsat::oracle::{chi_square_gof, generate_vanilla_greedy, nucleus_marginals, OracleMode};
use sdsat::{generate_nucleus, GreedyOptions, ModelParams, NucleusOptions, SamplingConfig, TokenId};

use crate::adaptive_tokens;
use crate::args::VerifyArgs;
use crate::io::load_prompts;

/// Accepts every re-draft without checking it against the step-1 drafts.
fn accept_everything(s: &DraftState) -> Verdict {
    let mut accepted = vec![s.step1_next, s.step2_next];
    accepted.extend_from_slice(&s.step2_drafts);
    Verdict {
        accepted,
        drafts_accepted: s.step2_drafts.len(),
        rollback_len: s.prefix_len + 1 + s.step2_drafts.len(),
    }
}

fn first_divergence(a: &[TokenId], b: &[TokenId]) -> Option<usize> {
    let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    (common < a.len().max(b.len())).then_some(common)
}

fn describe(pos: usize, expected: &[TokenId], got: &[TokenId], trace: &[LoopTrace]) -> String {
    let mut end = 0;
    let (idx, lp) = trace
        .iter()
        .enumerate()
        .find(|(_, t)| {
            end += t.committed.len();
            end > pos
        })
        .unwrap_or((trace.len(), &trace[trace.len() - 1]));
    let s = &lp.state;
    format!(
        "first divergent position {pos}: expected {:?}, got {:?}; loop {idx}: step1 next {} drafts {:?}, \
         step2 next {} drafts {:?}, committed {:?}",
        expected.get(pos),
        got.get(pos),
        s.step1_next,
        s.step1_drafts,
        s.step2_next,
        s.step2_drafts,
        lp.committed
    )
}

fn greedy_suite(a: &VerifyArgs, params: &ModelParams, prompts: &[Vec<TokenId>]) -> Result<bool> {
    let d = &a.decode;
    let mut ok = true;
    for &k in &a.k {
        let opts = GreedyOptions {
            k,
            max_new: d.max_new,
            stop_ids: d.stop_ids.clone(),
            adaptive: adaptive_tokens(d.adaptive_tokens, params),
        };
        let mut matched = 0;
        for (pi, prompt) in prompts.iter().enumerate() {
            let expected =
                generate_vanilla_greedy(params, prompt, d.max_new, &d.stop_ids, OracleMode::Cached)?;
            let mut trace = Vec::new();
            let (got, _) = if a.corrupt_verifier {
                generate_greedy_with(params, prompt, &opts, accept_everything, Some(&mut trace))?
            } else {
                generate_greedy_with(params, prompt, &opts, verify_greedy, Some(&mut trace))?
            };
            match first_divergence(&expected, &got) {
                None => matched += 1,
                Some(pos) => {
                    ok = false;
                    println!("  k={k} prompt {pi}: {}", describe(pos, &expected, &got, &trace));
                }
            }
        }
        let verdict = if matched == prompts.len() { "PASS" } else { "FAIL" };
        println!(
            "greedy k={k}: {matched}/{} prompts identical to plain decoding [{verdict}]",
            prompts.len()
        );
    }
    Ok(ok)
}

fn nucleus_suite(a: &VerifyArgs, params: &ModelParams, prompt: &[TokenId]) -> Result<bool> {
    let d = &a.decode;
    let depth = a.chi_depth.min(d.max_new);
    let base = SamplingConfig {
        temperature: a.temperature,
        top_k: d.top_k,
        top_p: d.top_p,
        seed: d.seed,
    };
    let expected =
        nucleus_marginals(params, prompt, &base, depth).context("enumerating the sampling oracle")?;
    let vocab = params.config().vocab_size;
    let mut ok = true;
    for &k in a.k.iter().filter(|&&k| k > 0) {
        let mut counts = vec![vec![0usize; vocab]; depth];
        for t in 0..a.chi_trials {
            let sampling = SamplingConfig {
                seed: d.seed.wrapping_add(t as u64),
                ..base
            };
            let mut opts = NucleusOptions::new(params, k, sampling, depth);
            opts.adaptive = adaptive_tokens(d.adaptive_tokens, params);
            let (out, _) = generate_nucleus(params, prompt, &opts)?;
            for (i, &tok) in out.iter().enumerate() {
                counts[i][tok as usize] += 1;
            }
        }
        for (i, (obs, exp)) in counts.iter().zip(&expected).enumerate() {
            let chi = chi_square_gof(obs, exp);
            let pass = chi.p_value > a.alpha;
            ok &= pass;
            println!(
                "nucleus k={k} position {}: chi2 {:.2} on {} dof, p = {:.4} [{}]",
                i + 1,
                chi.statistic,
                chi.dof,
                chi.p_value,
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(ok)
}

/// Returns whether every check passed.
pub fn run(a: &VerifyArgs) -> Result<bool> {
    let d = &a.decode;
    let params =
        checkpoint::load(&d.checkpoint).with_context(|| format!("loading {}", d.checkpoint.display()))?;
    let prompts = load_prompts(&d.prompts, d.prompt_format, &params)?;
    let mut ok = greedy_suite(a, &params, &prompts)?;
    if a.chi_trials > 0 && a.temperature > 0.0 {
        ok &= nucleus_suite(a, &params, &prompts[0])?;
    }
    println!("verify: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
