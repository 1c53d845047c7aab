use anyhow::{Context, Result};
use sdsat::model::checkpoint;
use sdsat::{generate_greedy, generate_nucleus, GenStats, GreedyOptions, NucleusOptions, SamplingConfig};

use crate::adaptive_tokens;
use crate::args::GenerateArgs;
use crate::io::{load_prompts, render};

pub fn run(a: &GenerateArgs) -> Result<()> {
    let d = &a.decode;
    let params =
        checkpoint::load(&d.checkpoint).with_context(|| format!("loading {}", d.checkpoint.display()))?;
    let prompts = load_prompts(&d.prompts, d.prompt_format, &params)?;
    let n_adaptive = params.config().n_adaptive;
    let adaptive = adaptive_tokens(d.adaptive_tokens, &params);

    let mut total = GenStats::default();
    for (i, prompt) in prompts.iter().enumerate() {
        let (out, stats) = if a.temperature == 0.0 {
            let opts = GreedyOptions {
                k: a.k,
                max_new: d.max_new,
                stop_ids: d.stop_ids.clone(),
                adaptive: adaptive.clone(),
            };
            generate_greedy(&params, prompt, &opts)?
        } else {
            let sampling = SamplingConfig {
                temperature: a.temperature,
                top_k: d.top_k,
                top_p: d.top_p,
                seed: d.seed.wrapping_add(i as u64),
            };
            let mut opts = NucleusOptions::new(&params, a.k, sampling, d.max_new);
            opts.stop_ids = d.stop_ids.clone();
            opts.adaptive = adaptive.clone();
            generate_nucleus(&params, prompt, &opts)?
        };
        println!(
            "{}\t{}",
            render(prompt, d.prompt_format, n_adaptive),
            render(&out, d.prompt_format, n_adaptive)
        );
        total.absorb(&stats);
    }
    eprintln!(
        "{} tokens in {} loops, {} forward passes, accept rate {}, {:.3} tokens/loop",
        total.new_tokens,
        total.loops,
        total.forward_passes,
        total.accept_rate().map_or("-".into(), |v| format!("{v:.3}")),
        total.tokens_per_loop()
    );
    Ok(())
}
