use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sdsat::bench::{bench_svg, run_bench, write_bench_csv, write_index_csv, write_loop_csv, BenchSpec};
use sdsat::model::checkpoint;

use crate::adaptive_tokens;
use crate::args::BenchArgs;
use crate::io::{file_tag, load_prompts, sidecar, write_with};

pub fn run(a: &BenchArgs) -> Result<()> {
    let d = &a.decode;
    let params =
        checkpoint::load(&d.checkpoint).with_context(|| format!("loading {}", d.checkpoint.display()))?;
    let prompts = load_prompts(&d.prompts, d.prompt_format, &params)?;

    for &k in a.k.iter().filter(|&&k| k > a.mask_window) {
        eprintln!(
            "warning: k = {k} exceeds the training mask window {}; drafts past it were never trained directly",
            a.mask_window
        );
    }

    let spec = BenchSpec {
        model_tag: a.model_tag.clone().unwrap_or_else(|| file_tag(&d.checkpoint)),
        dataset_tag: a.dataset_tag.clone().unwrap_or_else(|| file_tag(&d.prompts)),
        ks: a.k.clone(),
        temperatures: a.temperature.clone(),
        top_k: d.top_k,
        top_p: d.top_p,
        seed: d.seed,
        max_new: d.max_new,
        repeats: a.repeats,
        stop_ids: d.stop_ids.clone(),
        adaptive: adaptive_tokens(d.adaptive_tokens, &params),
        timing: !a.no_timing,
    };
    let points = run_bench(&params, &prompts, &spec)?;

    let comment = (!a.no_timing).then(|| {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |t| t.as_secs());
        format!("generated at unix time {secs}")
    });
    write_with(&a.out_csv, |w| write_bench_csv(&points, comment.as_deref(), w))?;
    let index_path = sidecar(&a.out_csv, "index");
    write_with(&index_path, |w| write_index_csv(&points, w))?;
    let loops_path = sidecar(&a.out_csv, "loops");
    write_with(&loops_path, |w| write_loop_csv(&points, spec.timing, w))?;
    if let Some(svg) = &a.plot_svg {
        std::fs::write(svg, bench_svg(&points)).with_context(|| format!("writing {}", svg.display()))?;
    }

    for p in &points {
        let r = &p.row;
        eprintln!(
            "k={:<3} T={:<4} accept {:>6}  tokens/loop {:.3}  passes {}",
            r.k,
            r.temperature,
            r.accept_rate.map_or("-".into(), |v| format!("{v:.3}")),
            r.tokens_per_loop,
            r.forward_passes
        );
    }
    eprintln!(
        "wrote {}, {}, {}",
        a.out_csv.display(),
        index_path.display(),
        loops_path.display()
    );
    Ok(())
}
