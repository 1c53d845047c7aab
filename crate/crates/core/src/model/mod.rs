//! A small pre-norm decoder-only transformer with learned positional
//! embeddings, an external KV cache and arbitrary attention masks.
//!
//! Adaptive tokens are ordinary rows at the top of the embedding table; the
//! model itself has no notion of them.

mod cache;
pub mod checkpoint;
mod forward;
mod mask;
pub(crate) mod ops;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use cache::KvCache;
pub(crate) use forward::attention;
pub use forward::Logits;
pub use mask::AttnMask;

use crate::error::ModelError;

pub type TokenId = u32;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Number of reserved adaptive ids, occupying the top of the vocabulary.
    pub n_adaptive: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab_size < 8 {
            return bad(format!("vocab_size {} < 8", self.vocab_size));
        }
        if self.n_adaptive == 0 || self.n_adaptive >= self.vocab_size {
            return bad(format!(
                "n_adaptive {} must be in 1..{}",
                self.n_adaptive, self.vocab_size
            ));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.max_seq == 0 {
            return bad("n_layers, n_heads, d_model and max_seq must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size > u32::MAX as usize {
            return bad("vocab_size does not fit token ids".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    /// First adaptive id; every id at or above it is adaptive.
    pub fn first_adaptive(&self) -> TokenId {
        (self.vocab_size - self.n_adaptive) as TokenId
    }

    pub fn adaptive_ids(&self) -> Vec<TokenId> {
        (self.first_adaptive()..self.vocab_size as TokenId).collect()
    }

    pub fn is_adaptive(&self, id: TokenId) -> bool {
        id >= self.first_adaptive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_gain: Range<usize>,
    pub lnf_bias: Range<usize>,
    pub w_out: Range<usize>,
    pub total: usize,
}

/// How a tensor is initialized.
#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = LayoutBuilder::default();
        Self::build(cfg, &mut b)
    }

    fn build(cfg: &ModelConfig, b: &mut LayoutBuilder) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff());
        let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
        let tok_emb = b.take(v * d, Init::Normal(INIT_STD));
        let pos_emb = b.take(cfg.max_seq * d, Init::Normal(INIT_STD));
        let layers = (0..cfg.n_layers)
            .map(|_| LayerLayout {
                ln1_gain: b.take(d, Init::Ones),
                ln1_bias: b.take(d, Init::Zeros),
                wq: b.take(d * d, Init::Normal(INIT_STD)),
                bq: b.take(d, Init::Zeros),
                wk: b.take(d * d, Init::Normal(INIT_STD)),
                bk: b.take(d, Init::Zeros),
                wv: b.take(d * d, Init::Normal(INIT_STD)),
                bv: b.take(d, Init::Zeros),
                wo: b.take(d * d, Init::Normal(resid_std)),
                bo: b.take(d, Init::Zeros),
                ln2_gain: b.take(d, Init::Ones),
                ln2_bias: b.take(d, Init::Zeros),
                w1: b.take(d * f, Init::Normal(INIT_STD)),
                b1: b.take(f, Init::Zeros),
                w2: b.take(f * d, Init::Normal(resid_std)),
                b2: b.take(d, Init::Zeros),
            })
            .collect();
        let lnf_gain = b.take(d, Init::Ones);
        let lnf_bias = b.take(d, Init::Zeros);
        let w_out = b.take(d * v, Init::Normal(INIT_STD));
        ParamLayout {
            tok_emb,
            pos_emb,
            layers,
            lnf_gain,
            lnf_bias,
            w_out,
            total: b.next,
        }
    }
}

#[derive(Default)]
struct LayoutBuilder {
    next: usize,
    inits: Vec<(Range<usize>, Init)>,
}

impl LayoutBuilder {
    fn take(&mut self, len: usize, init: Init) -> Range<usize> {
        let r = self.next..self.next + len;
        self.next += len;
        self.inits.push((r.clone(), init));
        r
    }
}

/// Immutable model weights plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    data: Vec<f32>,
}

impl ModelParams {
    /// Deterministic initialization from `config.seed`. Every tensor draws from
    /// one ChaCha stream in declaration order, so adaptive embedding rows use
    /// the same scheme and stream as standard rows.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut builder = LayoutBuilder::default();
        let layout = ParamLayout::build(&config, &mut builder);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut data = vec![0.0f32; layout.total];
        for (range, init) in builder.inits {
            match init {
                Init::Zeros => {}
                Init::Ones => data[range].fill(1.0),
                Init::Normal(std) => {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    for v in &mut data[range] {
                        *v = normal.sample(&mut rng) as f32;
                    }
                }
            }
        }
        Ok(Self { config, layout, data })
    }

    pub fn from_parts(config: ModelConfig, data: Vec<f32>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if data.len() != layout.total {
            return Err(ModelError::Config(format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for v in &self.data {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.config.n_layers, self.config.d_model)
    }
}

/// 64-bit FNV-1a.
pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best as TokenId
}
