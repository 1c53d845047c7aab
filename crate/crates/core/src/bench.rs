//! Sweeps over draft length and temperature, reported as CSV rows.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Instant;

use crate::draft::{AdaptiveTokens, GenStats};
use crate::error::DecodeError;
use crate::greedy::{generate_greedy, GreedyOptions};
use crate::model::{ModelParams, TokenId};
use crate::oracle::{generate_vanilla_greedy, generate_vanilla_nucleus, OracleMode};
use crate::sampling::SamplingConfig;
use crate::tree::{generate_nucleus, NucleusOptions};

/// One sweep point. `k = 0` is plain one-token-per-pass decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model_tag: String,
    pub k: usize,
    pub temperature: f64,
    pub dataset_tag: String,
    /// Mean over loops of accepted drafts / k; `None` for the baseline.
    pub accept_rate: Option<f64>,
    /// `None` when timing is disabled.
    pub tokens_per_second: Option<f64>,
    pub tokens_per_loop: f64,
    pub forward_passes: usize,
}

pub const BENCH_HEADER: &str =
    "model_tag,k,temperature,dataset_tag,accept_rate,tokens_per_second,tokens_per_loop,forward_passes";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub row: BenchRow,
    /// Fraction of loops accepting the (j+1)-th draft.
    pub accept_by_index: Vec<f64>,
    pub loops: usize,
    pub mean_loop_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub model_tag: String,
    pub dataset_tag: String,
    pub ks: Vec<usize>,
    pub temperatures: Vec<f64>,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
    pub max_new: usize,
    pub repeats: usize,
    pub stop_ids: Vec<TokenId>,
    pub adaptive: AdaptiveTokens,
    pub timing: bool,
}

impl BenchSpec {
    pub fn new(params: &ModelParams) -> Self {
        let d = SamplingConfig::default();
        Self {
            model_tag: "model".into(),
            dataset_tag: "prompts".into(),
            ks: vec![0, 1, 3, 5],
            temperatures: vec![0.0],
            top_k: d.top_k,
            top_p: d.top_p,
            seed: 0,
            max_new: 32,
            repeats: 1,
            stop_ids: Vec::new(),
            adaptive: AdaptiveTokens::identical(params.config()),
            timing: true,
        }
    }

    fn sampling(&self, temperature: f64, seed: u64) -> SamplingConfig {
        SamplingConfig {
            temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            seed,
        }
    }
}

/// Runs one `(k, temperature)` point over every prompt and repeat.
pub fn run_point(
    params: &ModelParams,
    prompts: &[Vec<TokenId>],
    spec: &BenchSpec,
    k: usize,
    temperature: f64,
) -> Result<BenchPoint, DecodeError> {
    let mut total = GenStats::default();
    for (pi, prompt) in prompts.iter().enumerate() {
        for r in 0..spec.repeats {
            let seed = spec.seed.wrapping_add((pi * spec.repeats + r) as u64);
            let sampling = spec.sampling(temperature, seed);
            let stats = if k == 0 {
                vanilla_stats(params, prompt, &sampling, spec)?
            } else if temperature == 0.0 {
                let opts = GreedyOptions {
                    k,
                    max_new: spec.max_new,
                    stop_ids: spec.stop_ids.clone(),
                    adaptive: spec.adaptive.clone(),
                };
                generate_greedy(params, prompt, &opts)?.1
            } else {
                let mut opts = NucleusOptions::new(params, k, sampling, spec.max_new);
                opts.stop_ids = spec.stop_ids.clone();
                opts.adaptive = spec.adaptive.clone();
                generate_nucleus(params, prompt, &opts)?.1
            };
            total.absorb(&stats);
        }
    }
    let secs = total.wall_time.as_secs_f64();
    let row = BenchRow {
        model_tag: spec.model_tag.clone(),
        k,
        temperature,
        dataset_tag: spec.dataset_tag.clone(),
        accept_rate: if k == 0 { None } else { total.accept_rate() },
        tokens_per_second: (spec.timing && secs > 0.0).then(|| total.new_tokens as f64 / secs),
        tokens_per_loop: total.tokens_per_loop(),
        forward_passes: total.forward_passes,
    };
    Ok(BenchPoint {
        row,
        accept_by_index: total.accept_rate_by_index(),
        loops: total.loops,
        mean_loop_seconds: if total.loops == 0 {
            0.0
        } else {
            secs / total.loops as f64
        },
    })
}

/// Baseline accounting: every committed token is one loop of one pass.
fn vanilla_stats(
    params: &ModelParams,
    prompt: &[TokenId],
    sampling: &SamplingConfig,
    spec: &BenchSpec,
) -> Result<GenStats, DecodeError> {
    let start = Instant::now();
    let out = if sampling.is_greedy() {
        generate_vanilla_greedy(params, prompt, spec.max_new, &spec.stop_ids, OracleMode::Cached)?
    } else {
        generate_vanilla_nucleus(params, prompt, sampling, spec.max_new, &spec.stop_ids)?
    };
    let n = out.len();
    Ok(GenStats {
        loops: n,
        forward_passes: n,
        accepted_per_loop: vec![1; n],
        drafts_accepted_per_loop: vec![0; n],
        drafts_per_loop: vec![0; n],
        accept_count_per_index: Vec::new(),
        wall_time: start.elapsed(),
        new_tokens: n,
    })
}

/// Every point of the sweep in `(k, temperature)` order. Points are spread
/// over the available cores; each owns its decoding state.
pub fn run_bench(
    params: &ModelParams,
    prompts: &[Vec<TokenId>],
    spec: &BenchSpec,
) -> Result<Vec<BenchPoint>, DecodeError> {
    let mut grid: Vec<(usize, f64)> = spec
        .ks
        .iter()
        .flat_map(|&k| spec.temperatures.iter().map(move |&t| (k, t)))
        .collect();
    grid.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    grid.dedup();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(grid.len().max(1));
    let mut results: Vec<Option<Result<BenchPoint, DecodeError>>> = (0..grid.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = results.chunks_mut(grid.len().div_ceil(workers).max(1)).collect();
        let mut offset = 0;
        for chunk in chunks {
            let pts = &grid[offset..offset + chunk.len()];
            offset += chunk.len();
            s.spawn(move || {
                for (slot, &(k, t)) in chunk.iter_mut().zip(pts) {
                    *slot = Some(run_point(params, prompts, spec, k, t));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every point ran")).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Bench rows under [`BENCH_HEADER`], preceded by `# comment` if given.
pub fn write_bench_csv(points: &[BenchPoint], comment: Option<&str>, mut out: impl Write) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{BENCH_HEADER}")?;
    for p in points {
        let r = &p.row;
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{}",
            r.model_tag,
            r.k,
            r.temperature,
            r.dataset_tag,
            opt(r.accept_rate),
            opt(r.tokens_per_second),
            r.tokens_per_loop,
            r.forward_passes
        )?;
    }
    Ok(())
}

/// Accept rate per adaptive index, one line per `(k, temperature, index)`.
pub fn write_index_csv(points: &[BenchPoint], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "k,temperature,index,accept_rate")?;
    for p in points {
        for (j, a) in p.accept_by_index.iter().enumerate() {
            writeln!(out, "{},{},{},{:.6}", p.row.k, p.row.temperature, j + 1, a)?;
        }
    }
    Ok(())
}

/// Loop counts and mean loop time. With timing off the time column is empty.
pub fn write_loop_csv(points: &[BenchPoint], timing: bool, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "k,temperature,loops,passes_per_loop,mean_loop_seconds")?;
    for p in points {
        let ppl = if p.loops == 0 {
            0.0
        } else {
            p.row.forward_passes as f64 / p.loops as f64
        };
        let t = timing.then_some(p.mean_loop_seconds);
        writeln!(
            out,
            "{},{},{},{:.6},{}",
            p.row.k,
            p.row.temperature,
            p.loops,
            ppl,
            opt(t)
        )?;
    }
    Ok(())
}

/// Two side-by-side line charts against k: accept rate and tokens per loop,
/// one line per temperature.
pub fn bench_svg(points: &[BenchPoint]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    let mut temps: Vec<f64> = points.iter().map(|p| p.row.temperature).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    let k_max = points.iter().map(|p| p.row.k).max().unwrap_or(1).max(1) as f64;
    let tpl_max = points.iter().map(|p| p.row.tokens_per_loop).fold(1.0, f64::max);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * W,
        H
    );
    type Panel = (&'static str, f64, fn(&BenchRow) -> Option<f64>);
    let panels: [Panel; 2] = [
        ("accept rate", 1.0, |r| r.accept_rate),
        ("tokens per loop", tpl_max, |r| Some(r.tokens_per_loop)),
    ];
    for (pi, (title, y_max, get)) in panels.iter().enumerate() {
        let x0 = pi as f64 * W;
        let sx = |k: f64| x0 + PAD + k / k_max * (W - 2.0 * PAD);
        let sy = |v: f64| H - PAD - v / y_max * (H - 2.0 * PAD);
        let _ = writeln!(svg, r#"<text x="{}" y="16">{title}</text>"#, x0 + PAD);
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="black" points="{},{} {},{} {},{}"/>"#,
            sx(0.0),
            sy(*y_max),
            sx(0.0),
            sy(0.0),
            sx(k_max),
            sy(0.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">k</text>"#,
            sx(k_max) - 4.0,
            H - PAD + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{y_max:.2}</text>"#,
            x0 + 2.0,
            sy(*y_max) + 4.0
        );
        for (ti, t) in temps.iter().enumerate() {
            let pts: Vec<String> = points
                .iter()
                .filter(|p| p.row.temperature == *t)
                .filter_map(|p| get(&p.row).map(|v| format!("{:.1},{:.1}", sx(p.row.k as f64), sy(v))))
                .collect();
            let color = colors[ti % colors.len()];
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">T={t}</text>"#,
                x0 + W - PAD - 30.0,
                PAD + 14.0 * ti as f64
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
