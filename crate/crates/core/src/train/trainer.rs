//! The toy training loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backprop::{backward, forward_tape};
use super::corpus::Corpus;
use super::loss::{basic_weights, dlogits, improved_weights, nll_rows, LossReport};
use super::masking::{apply_masks, plan_masks, MixedSeq};
use super::optim::{clip_grad_norm, AdamW, AdamWConfig, CosineSchedule};
use crate::draft::AdaptiveTokens;
use crate::error::TrainError;
use crate::model::{ModelConfig, ModelParams, ParamLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// Every sequence is mixed; every position counts.
    Basic,
    /// Half pure sequences, half mixed; mixed sequences count only at
    /// adaptive-input positions.
    Improved,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Basic => "basic",
            LossMode::Improved => "improved",
        })
    }
}

impl FromStr for LossMode {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(LossMode::Basic),
            "improved" => Ok(LossMode::Improved),
            _ => Err(TrainError::Setting(format!("unknown loss mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdaptiveKind {
    Identical,
    Diverse,
}

impl AdaptiveKind {
    pub fn tokens(self, cfg: &ModelConfig) -> AdaptiveTokens {
        match self {
            AdaptiveKind::Identical => AdaptiveTokens::identical(cfg),
            AdaptiveKind::Diverse => AdaptiveTokens::diverse(cfg),
        }
    }
}

impl fmt::Display for AdaptiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptiveKind::Identical => "identical",
            AdaptiveKind::Diverse => "diverse",
        })
    }
}

impl FromStr for AdaptiveKind {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identical" => Ok(AdaptiveKind::Identical),
            "diverse" => Ok(AdaptiveKind::Diverse),
            _ => Err(TrainError::Setting(format!("unknown adaptive token kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per step. Improved mode splits them evenly between streams.
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Maximum mask window `L`.
    pub mask_window: usize,
    pub mask_rate: f64,
    /// Weight of the adaptive term in improved mode.
    pub w: f64,
    pub mode: LossMode,
    pub adaptive: AdaptiveKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            seq_len: 64,
            lr: 3e-3,
            min_lr_ratio: 0.2,
            warmup_frac: 0.2,
            weight_decay: 0.01,
            grad_clip: 1.0,
            mask_window: 5,
            mask_rate: 0.1,
            w: 1.0,
            mode: LossMode::Improved,
            adaptive: AdaptiveKind::Identical,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig, corpus: &Corpus) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Setting(m));
        if self.seq_len < 2 || self.seq_len > model.max_seq {
            return bad(format!(
                "seq_len {} must be in 2..={}",
                self.seq_len, model.max_seq
            ));
        }
        if self.batch_size < 2 || self.batch_size > u16::MAX as usize {
            return bad(format!("batch_size {} must be in 2..=65535", self.batch_size));
        }
        if self.mask_window == 0 {
            return bad("mask_window must be at least 1".into());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1)", self.mask_rate));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("lr must be positive and min_lr_ratio in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac {} must lie in [0, 1)", self.warmup_frac));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return bad(format!("w {} must be finite and non-negative", self.w));
        }
        if model.is_adaptive(corpus.max_id()) {
            return bad(format!(
                "corpus contains id {} but ids from {} up are reserved for adaptive tokens",
                corpus.max_id(),
                model.first_adaptive()
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            peak: self.lr,
            min: self.lr * self.min_lr_ratio,
            warmup: ((self.steps as f64 * self.warmup_frac).round() as usize).max(1),
            total: self.steps,
        }
    }
}

/// Sequences for one optimizer step. Basic mode has no pure stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub pure: Vec<MixedSeq>,
    pub mixed: Vec<MixedSeq>,
}

/// Sample `i` of step `step` draws from its own stream, so batches do not
/// depend on assembly order.
fn sample_rng(seed: u64, step: usize, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 16) | i as u64);
    rng
}

pub fn make_batch(
    corpus: &Corpus,
    cfg: &TrainConfig,
    model: &ModelConfig,
    step: usize,
) -> Result<Batch, TrainError> {
    let adaptive = cfg.adaptive.tokens(model);
    let half = cfg.batch_size / 2;
    let mut batch = Batch {
        pure: Vec::with_capacity(half),
        mixed: Vec::with_capacity(cfg.batch_size),
    };
    for i in 0..cfg.batch_size {
        let mut rng = sample_rng(cfg.seed, step, i);
        let y = corpus.sample_window(cfg.seq_len, &mut rng);
        let mut plan = plan_masks(y.len(), cfg.mask_window, cfg.mask_rate, &mut rng);
        if let Some(max) = adaptive.max_k() {
            plan = plan.cap_runs(max);
        }
        if i < half && cfg.mode == LossMode::Improved {
            batch.pure.push(MixedSeq::pure(&y));
        }
        if i >= half || cfg.mode == LossMode::Basic {
            batch.mixed.push(apply_masks(&y, &plan, &adaptive)?);
        }
    }
    Ok(batch)
}

fn concat<T: Clone>(parts: impl Iterator<Item = Vec<T>>) -> Vec<T> {
    parts.flatten().collect()
}

fn mean_where(nll: &[Option<f64>], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (s, n) = nll
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .filter_map(|(_, v)| *v)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Loss of a batch under `mode`, and optionally its gradient with respect to
/// `w`. `standard_loss` averages the positions with a standard input that the
/// mode trains on: the pure stream in improved mode, the unreplaced positions
/// of the mixed stream in basic mode.
pub fn batch_objective<F: Float>(
    model: &ModelConfig,
    layout: &ParamLayout,
    w: &[F],
    batch: &Batch,
    mode: LossMode,
    adaptive_weight: f64,
    want_grad: bool,
) -> Result<(LossReport, Option<Vec<F>>), TrainError> {
    let v = model.vocab_size;
    let pure_tapes: Vec<_> = batch
        .pure
        .iter()
        .map(|s| forward_tape(model, layout, w, &s.inputs))
        .collect();
    let mixed_tapes: Vec<_> = batch
        .mixed
        .iter()
        .map(|s| forward_tape(model, layout, w, &s.inputs))
        .collect();

    let pure_labels = concat(batch.pure.iter().map(|s| s.labels.clone()));
    let mixed_labels = concat(batch.mixed.iter().map(|s| s.labels.clone()));
    let mixed_mask = concat(batch.mixed.iter().map(|s| s.m_mask.clone()));
    let pure_nll = concat(
        batch
            .pure
            .iter()
            .zip(&pure_tapes)
            .map(|(s, t)| nll_rows(&t.logits, v, &s.labels)),
    );
    let mixed_nll = concat(
        batch
            .mixed
            .iter()
            .zip(&mixed_tapes)
            .map(|(s, t)| nll_rows(&t.logits, v, &s.labels)),
    );

    let (pure_w, mixed_w, effective_w) = match mode {
        LossMode::Basic => (vec![0.0; pure_labels.len()], basic_weights(&mixed_labels), 1.0),
        LossMode::Improved => {
            let (p, m) = improved_weights(&pure_labels, &mixed_labels, &mixed_mask, adaptive_weight);
            (p, m, adaptive_weight)
        }
    };
    let dot = |n: &[Option<f64>], w: &[f64]| -> f64 {
        n.iter()
            .zip(w)
            .map(|(n, w)| if *w == 0.0 { 0.0 } else { n.unwrap_or(0.0) * w })
            .sum()
    };
    let combined = dot(&pure_nll, &pure_w) + dot(&mixed_nll, &mixed_w);
    let trained_any = pure_w.iter().chain(&mixed_w).any(|&x| x != 0.0);
    if !trained_any && !(mode == LossMode::Improved && adaptive_weight == 0.0 && !pure_labels.is_empty()) {
        return Err(TrainError::EmptyLoss);
    }
    let report = LossReport {
        standard_loss: match mode {
            LossMode::Basic => mean_where(&mixed_nll, |i| !mixed_mask[i]),
            LossMode::Improved => mean_where(&pure_nll, |_| true),
        }
        .unwrap_or(0.0),
        adaptive_loss: mean_where(&mixed_nll, |i| mixed_mask[i]),
        combined,
        w: effective_w,
    };
    if !want_grad {
        return Ok((report, None));
    }

    let mut grad = vec![F::zero(); w.len()];
    let mut off = 0;
    for (s, t) in batch.pure.iter().zip(&pure_tapes) {
        let ws = &pure_w[off..off + s.len()];
        off += s.len();
        if ws.iter().any(|&x| x != 0.0) {
            let dl = dlogits(&t.logits, v, &s.labels, ws);
            backward(model, layout, w, t, &dl, &mut grad);
        }
    }
    off = 0;
    for (s, t) in batch.mixed.iter().zip(&mixed_tapes) {
        let ws = &mixed_w[off..off + s.len()];
        off += s.len();
        if ws.iter().any(|&x| x != 0.0) {
            let dl = dlogits(&t.logits, v, &s.labels, ws);
            backward(model, layout, w, t, &dl, &mut grad);
        }
    }
    Ok((report, Some(grad)))
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub standard_loss: f64,
    pub adaptive_loss: Option<f64>,
    pub combined: f64,
    pub lr: f64,
    pub mode: LossMode,
}

/// Matrices other than the embeddings receive weight decay.
fn decay_mask(layout: &ParamLayout) -> Vec<bool> {
    let mut m = vec![false; layout.total];
    let mut mark = |r: &std::ops::Range<usize>| m[r.clone()].iter_mut().for_each(|b| *b = true);
    for l in &layout.layers {
        for r in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2] {
            mark(r);
        }
    }
    mark(&layout.w_out);
    m
}

/// Trains `params` in place. `on_step` sees every record as it is produced.
pub fn train(
    params: &mut ModelParams,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>, TrainError> {
    let model = *params.config();
    cfg.validate(&model, corpus)?;
    let layout = params.layout().clone();
    let schedule = cfg.schedule();
    let decay = decay_mask(&layout);
    let mut opt = AdamW::new(
        layout.total,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = make_batch(corpus, cfg, &model, step)?;
        let (report, grad) = batch_objective(&model, &layout, params.data(), &batch, cfg.mode, cfg.w, true)?;
        if !report.combined.is_finite() {
            return Err(TrainError::Diverged {
                step,
                loss: report.combined,
            });
        }
        let mut grad = grad.expect("gradient requested");
        clip_grad_norm(&mut grad, cfg.grad_clip);
        let lr = schedule.lr(step);
        opt.step(params.data_mut(), &grad, lr, &decay);
        let rec = LossRecord {
            step,
            standard_loss: report.standard_loss,
            adaptive_loss: report.adaptive_loss,
            combined: report.combined,
            lr,
            mode: cfg.mode,
        };
        on_step(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Loss curve as CSV with columns `step,standard_loss,adaptive_loss,mode`.
/// A missing adaptive loss is an empty field.
pub fn write_loss_csv(records: &[LossRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,standard_loss,adaptive_loss,mode")?;
    for r in records {
        let a = r.adaptive_loss.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.6},{},{}", r.step, r.standard_loss, a, r.mode)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::corpus::MarkovSource;
    use rand::Rng;

    fn model_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            n_adaptive: 2,
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            max_seq: 16,
            seed: 3,
        }
    }

    fn corpus() -> Corpus {
        MarkovSource::new(8, 0.9, 1).corpus(20, 30, 2)
    }

    fn cfg(mode: LossMode) -> TrainConfig {
        TrainConfig {
            steps: 3,
            batch_size: 4,
            seq_len: 12,
            mask_rate: 0.3,
            mode,
            ..Default::default()
        }
    }

    #[test]
    fn batches_are_deterministic_and_share_windows() {
        let m = model_cfg();
        let c = corpus();
        let a = make_batch(&c, &cfg(LossMode::Improved), &m, 5).unwrap();
        assert_eq!(a, make_batch(&c, &cfg(LossMode::Improved), &m, 5).unwrap());
        assert_eq!((a.pure.len(), a.mixed.len()), (2, 2));
        let b = make_batch(&c, &cfg(LossMode::Basic), &m, 5).unwrap();
        assert!(b.pure.is_empty());
        assert_eq!(&b.mixed[2..], &a.mixed[..]);
        assert_eq!(b.mixed[0].labels, a.pure[0].labels);
        assert_ne!(a, make_batch(&c, &cfg(LossMode::Improved), &m, 6).unwrap());
    }

    #[test]
    fn rejects_corpus_with_adaptive_ids() {
        let m = model_cfg();
        let c = Corpus::new(vec![vec![1, 2, 9]]).unwrap();
        assert!(cfg(LossMode::Basic).validate(&m, &c).is_err());
    }

    #[test]
    fn improved_gradient_ignores_standard_mixed_positions() {
        // Identical input for both streams: with w = 0 only the pure stream
        // trains, so the gradient must equal half of the pure-only gradient.
        let m = model_cfg();
        let p = ModelParams::init(m).unwrap();
        let c = corpus();
        let b = make_batch(&c, &cfg(LossMode::Improved), &m, 0).unwrap();
        let (_, g0) = batch_objective(&m, p.layout(), p.data(), &b, LossMode::Improved, 0.0, true).unwrap();
        let pure_only = Batch {
            pure: b.pure.clone(),
            mixed: Vec::new(),
        };
        let (_, g1) = batch_objective(
            &m,
            p.layout(),
            p.data(),
            &pure_only,
            LossMode::Improved,
            1.0,
            true,
        )
        .unwrap();
        for (a, b) in g0.unwrap().iter().zip(g1.unwrap()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn training_reduces_loss() {
        let m = ModelConfig {
            d_model: 16,
            max_seq: 32,
            ..model_cfg()
        };
        let mut p = ModelParams::init(m).unwrap();
        let c = corpus();
        let t = TrainConfig {
            steps: 60,
            batch_size: 4,
            seq_len: 24,
            lr: 1e-2,
            ..Default::default()
        };
        let recs = train(&mut p, &c, &t, |_| {}).unwrap();
        let first = recs[..5].iter().map(|r| r.standard_loss).sum::<f64>() / 5.0;
        let last = recs[55..].iter().map(|r| r.standard_loss).sum::<f64>() / 5.0;
        assert!(last < first - 0.3, "{first} -> {last}");
    }

    #[test]
    fn csv_layout() {
        let recs = [
            LossRecord {
                step: 0,
                standard_loss: 2.5,
                adaptive_loss: None,
                combined: 1.0,
                lr: 0.1,
                mode: LossMode::Basic,
            },
            LossRecord {
                step: 1,
                standard_loss: 2.0,
                adaptive_loss: Some(3.0),
                combined: 1.0,
                lr: 0.1,
                mode: LossMode::Basic,
            },
        ];
        let mut buf = Vec::new();
        write_loss_csv(&recs, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,standard_loss,adaptive_loss,mode\n0,2.500000,,basic\n1,2.000000,3.000000,basic\n"
        );
    }

    #[test]
    fn both_modes_gradients_match_finite_differences() {
        let m = model_cfg();
        let p = ModelParams::init(m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w: Vec<f64> = p
            .data()
            .iter()
            .map(|&x| x as f64 + rng.random_range(-0.1..0.1))
            .collect();
        for mode in [LossMode::Basic, LossMode::Improved] {
            let b = make_batch(&corpus(), &cfg(mode), &m, 1).unwrap();
            let (_, g) = batch_objective(&m, p.layout(), &w, &b, mode, 1.0, true).unwrap();
            let g = g.unwrap();
            for _ in 0..20 {
                let i = rng.random_range(0..w.len());
                let orig = w[i];
                let h = 1e-5;
                w[i] = orig + h;
                let up = batch_objective(&m, p.layout(), &w, &b, mode, 1.0, false)
                    .unwrap()
                    .0
                    .combined;
                w[i] = orig - h;
                let down = batch_objective(&m, p.layout(), &w, &b, mode, 1.0, false)
                    .unwrap()
                    .0
                    .combined;
                w[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-7);
                assert!(rel < 1e-3, "{mode} param {i}: {} vs {fd}", g[i]);
            }
        }
    }
}
