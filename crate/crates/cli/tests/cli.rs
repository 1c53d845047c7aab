use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdsat::model::checkpoint;
use sdsat::tokenizer::ByteTokenizer;
use sdsat::{ModelConfig, ModelParams};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn sdsat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdsat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// An untrained checkpoint with a small shape, written through `train --steps 0`.
fn untrained(dir: &TempDir) -> String {
    let ckpt = path(dir, "init.ckpt");
    let corpus = fixture("corpus.txt");
    let o = sdsat(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        &ckpt,
        "--steps",
        "0",
        "--d-model",
        "16",
        "--heads",
        "2",
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    ckpt
}

#[test]
fn zero_steps_writes_the_initialization() {
    let dir = TempDir::new().unwrap();
    let ckpt = untrained(&dir);
    let loaded = checkpoint::load(&ckpt).unwrap();
    let expected = ModelParams::init(ModelConfig {
        vocab_size: ByteTokenizer::new(8).vocab_size(),
        n_adaptive: 8,
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        max_seq: 128,
        seed: 9,
    })
    .unwrap();
    assert_eq!(loaded.config(), expected.config());
    assert_eq!(loaded.data(), expected.data());
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = sdsat(&[
        "train",
        "--corpus",
        &path(&dir, "absent.txt"),
        "--checkpoint",
        &path(&dir, "m.ckpt"),
    ]);
    assert!(!o.status.success());
    assert!(text(&o).contains("absent.txt"));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn both_modes_share_one_loss_csv() {
    let dir = TempDir::new().unwrap();
    let csv = path(&dir, "loss.csv");
    let corpus = fixture("corpus.txt");
    let o = sdsat(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        &path(&dir, "m.ckpt"),
        "--out-csv",
        &csv,
        "--steps",
        "6",
        "--d-model",
        "16",
        "--heads",
        "2",
        "--seq-len",
        "24",
        "--mode",
        "both",
        "--log-every",
        "0",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "step,standard_loss,adaptive_loss,mode");
    assert_eq!(lines.len(), 13);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",basic")).count(), 6);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",improved")).count(), 6);
}

#[test]
fn command_line_overrides_config_file() {
    let dir = TempDir::new().unwrap();
    let conf = path(&dir, "t.conf");
    let corpus = fixture("corpus.txt");
    std::fs::write(
        &conf,
        format!(
            "corpus = {}\ncheckpoint = {}\nsteps = 5\nd_model = 16\nheads = 2\nseed = 9\n",
            corpus.display(),
            path(&dir, "from_file.ckpt")
        ),
    )
    .unwrap();
    let o = sdsat(&[
        "train",
        "--config",
        &conf,
        "--steps",
        "0",
        "--checkpoint",
        &path(&dir, "cli.ckpt"),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(!dir.path().join("from_file.ckpt").exists());
    let reference = checkpoint::load(untrained(&dir)).unwrap();
    assert_eq!(
        checkpoint::load(path(&dir, "cli.ckpt")).unwrap().data(),
        reference.data()
    );
}

#[test]
fn bench_without_timing_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let ckpt = untrained(&dir);
    let prompts = fixture("prompts.txt");
    let run = |name: &str| {
        let out = path(&dir, name);
        let o = sdsat(&[
            "bench",
            "--checkpoint",
            &ckpt,
            "--prompts",
            prompts.to_str().unwrap(),
            "--k",
            "0,1,3",
            "--temperature",
            "0,0.7",
            "--max-new",
            "12",
            "--no-timing",
            "--out-csv",
            &out,
            "--plot-svg",
            &path(&dir, "plot.svg"),
        ]);
        assert!(o.status.success(), "{}", text(&o));
        out
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let first = std::fs::read(&a).unwrap();
    assert_eq!(first, std::fs::read(&b).unwrap());
    for side in ["a.index.csv", "a.loops.csv"] {
        let other = side.replacen('a', "b", 1);
        assert_eq!(
            std::fs::read(dir.path().join(side)).unwrap(),
            std::fs::read(dir.path().join(other)).unwrap()
        );
    }
    assert!(std::fs::read_to_string(dir.path().join("plot.svg"))
        .unwrap()
        .starts_with("<svg"));

    let body = String::from_utf8(first).unwrap();
    let rows: Vec<Vec<&str>> = body.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(body.lines().next().unwrap(), sdsat::bench::BENCH_HEADER);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[5], "", "tokens/s must be empty without timing");
        let k: f64 = r[1].parse().unwrap();
        let tpl: f64 = r[6].parse().unwrap();
        if k == 0.0 {
            assert_eq!(r[4], "");
            assert_eq!(tpl, 1.0);
        } else {
            assert!(tpl <= k + 2.0);
        }
    }
}

#[test]
fn verify_passes_on_an_untrained_model() {
    let dir = TempDir::new().unwrap();
    let ckpt = untrained(&dir);
    let prompts = fixture("prompts.txt");
    let o = sdsat(&[
        "verify",
        "--checkpoint",
        &ckpt,
        "--prompts",
        prompts.to_str().unwrap(),
        "--k",
        "1,5,13",
        "--max-new",
        "24",
        "--chi-trials",
        "400",
        "--top-k",
        "4",
    ]);
    let out = text(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("greedy k=13: 10/10"));
    assert!(out.contains("verify: PASS"));
}

#[test]
fn corrupted_verifier_is_caught() {
    let dir = TempDir::new().unwrap();
    let ckpt = untrained(&dir);
    let prompts = fixture("prompts.txt");
    let o = sdsat(&[
        "verify",
        "--checkpoint",
        &ckpt,
        "--prompts",
        prompts.to_str().unwrap(),
        "--k",
        "5",
        "--chi-trials",
        "0",
        "--corrupt-verifier",
    ]);
    let out = text(&o);
    assert!(!o.status.success(), "{out}");
    assert!(out.contains("first divergent position"));
    assert!(out.contains("loop 0"));
    assert!(out.contains("verify: FAIL"));
}

#[test]
fn generate_prints_one_line_per_prompt() {
    let dir = TempDir::new().unwrap();
    let ckpt = untrained(&dir);
    let prompts = fixture("prompts.txt");
    for t in ["0", "0.8"] {
        let o = sdsat(&[
            "generate",
            "--checkpoint",
            &ckpt,
            "--prompts",
            prompts.to_str().unwrap(),
            "--k",
            "3",
            "--max-new",
            "10",
            "--temperature",
            t,
        ]);
        assert!(o.status.success(), "{}", text(&o));
        assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 10);
    }
}

#[test]
fn id_prompts_must_avoid_adaptive_ids() {
    let dir = TempDir::new().unwrap();
    let ckpt = untrained(&dir);
    let bad = path(&dir, "bad.txt");
    std::fs::write(&bad, "1 2 263\n").unwrap();
    let o = sdsat(&[
        "generate",
        "--checkpoint",
        &ckpt,
        "--prompts",
        &bad,
        "--prompt-format",
        "ids",
        "--max-new",
        "4",
    ]);
    assert!(!o.status.success());
    assert!(text(&o).contains("263"));
}
