mod common;

use proptest::prelude::*;
use sdsat::greedy::{generate_greedy_with, DraftState, Verdict};
use sdsat::oracle::{generate_vanilla_greedy, OracleMode};
use sdsat::{generate_greedy, AdaptiveTokens, GreedyOptions, ModelConfig, ModelParams, TokenId};

use common::{random_prompts, untrained};

fn small_model(seed: u64, vocab: usize, n_adaptive: usize) -> ModelParams {
    untrained(ModelConfig {
        vocab_size: vocab,
        n_adaptive,
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        max_seq: 48,
        seed,
    })
}

/// Low-vocabulary untrained models tend to repeat themselves, which makes
/// drafts match often enough to exercise long accepted runs.
fn scenario() -> impl Strategy<Value = (u64, usize, Vec<TokenId>, usize, usize, Vec<TokenId>, bool)> {
    (
        0u64..1000,
        4usize..12,
        1usize..8,
        0usize..=9,
        1usize..=24,
        any::<bool>(),
    )
        .prop_flat_map(|(seed, ordinary, plen, k, max_new, diverse)| {
            let prompt = prop::collection::vec(0..ordinary as TokenId, plen);
            let stops = prop::collection::vec(0..ordinary as TokenId, 0..2);
            (
                Just(seed),
                Just(ordinary),
                prompt,
                Just(k),
                Just(max_new),
                stops,
                Just(diverse),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn output_matches_plain_greedy((seed, ordinary, prompt, k, max_new, stops, diverse) in scenario()) {
        let params = small_model(seed, ordinary + 9, 9);
        let mut opts = GreedyOptions::new(&params, k, max_new);
        opts.stop_ids = stops.clone();
        if diverse {
            opts.adaptive = AdaptiveTokens::diverse(params.config());
        }
        let (out, stats) = generate_greedy(&params, &prompt, &opts).unwrap();
        let want = generate_vanilla_greedy(&params, &prompt, max_new, &stops, OracleMode::Recompute).unwrap();
        prop_assert_eq!(&out, &want);

        prop_assert_eq!(stats.forward_passes, 2 * stats.loops);
        prop_assert_eq!(stats.new_tokens, out.len());
        for (i, &c) in stats.accepted_per_loop.iter().enumerate() {
            prop_assert!(c <= k + 2);
            if i + 1 < stats.loops {
                prop_assert!(c >= 2);
            }
        }
        if let Some(pos) = out.iter().position(|t| stops.contains(t)) {
            prop_assert_eq!(pos + 1, out.len());
        }
    }
}

#[test]
fn diverse_tokens_reject_oversized_k() {
    let params = small_model(1, 12, 3);
    let mut opts = GreedyOptions::new(&params, 4, 8);
    opts.adaptive = AdaptiveTokens::diverse(params.config());
    assert!(generate_greedy(&params, &[1, 2], &opts).is_err());
}

#[test]
fn drafting_near_the_context_limit_still_matches() {
    let params = small_model(5, 16, 4);
    let prompt: Vec<TokenId> = (0..40).map(|i| i % 12).collect();
    let opts = GreedyOptions::new(&params, 13, 8);
    let (out, _) = generate_greedy(&params, &prompt, &opts).unwrap();
    let want = generate_vanilla_greedy(&params, &prompt, 8, &[], OracleMode::Recompute).unwrap();
    assert_eq!(out, want);
}

/// Trusts every re-draft. The equivalence check must notice.
fn trusting_verifier(s: &DraftState) -> Verdict {
    let mut accepted = vec![s.step1_next, s.step2_next];
    accepted.extend_from_slice(&s.step2_drafts);
    Verdict {
        accepted,
        drafts_accepted: s.step2_drafts.len(),
        rollback_len: s.prefix_len + 1 + s.step2_drafts.len(),
    }
}

#[test]
fn corrupted_verification_is_detected() {
    let params = small_model(11, 40, 4);
    let opts = GreedyOptions::new(&params, 5, 24);
    let prompts = random_prompts(20, 36, 8, 4);
    let mut diverged = 0;
    for p in &prompts {
        let mut trace = Vec::new();
        let (out, _) = generate_greedy_with(&params, p, &opts, trusting_verifier, Some(&mut trace)).unwrap();
        let want = generate_vanilla_greedy(&params, p, 24, &[], OracleMode::Cached).unwrap();
        if out != want {
            diverged += 1;
            // The first wrong token lies inside a loop that accepted drafts.
            let pos = out.iter().zip(&want).take_while(|(a, b)| a == b).count();
            let mut end = 0;
            let culprit = trace.iter().find(|t| {
                end += t.committed.len();
                end > pos
            });
            assert!(culprit.unwrap().verdict.drafts_accepted > 0);
        }
    }
    assert!(diverged >= 15, "only {diverged} of 20 corrupted runs diverged");
}
