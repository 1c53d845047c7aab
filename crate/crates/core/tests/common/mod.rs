#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdsat::train::{train, MarkovSource, TrainConfig};
use sdsat::{ModelConfig, ModelParams, TokenId};

pub const N_STATES: usize = 16;

pub fn markov_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: N_STATES + 8,
        n_adaptive: 8,
        n_layers: 2,
        n_heads: 4,
        d_model: 32,
        max_seq: 128,
        seed,
    }
}

/// A model trained on a Markov chain whose preferred successor is taken with
/// probability `p_main`.
pub struct MarkovTask {
    pub source: MarkovSource,
    pub params: ModelParams,
    pub untrained: ModelParams,
}

impl MarkovTask {
    pub fn train(p_main: f64, steps: usize) -> Self {
        let source = MarkovSource::new(N_STATES, p_main, 7);
        let corpus = source.corpus(200, 128, 1);
        let untrained = ModelParams::init(markov_model_config(1)).unwrap();
        let mut params = untrained.clone();
        let cfg = TrainConfig {
            steps,
            batch_size: 8,
            seq_len: 96,
            lr: 1e-2,
            mask_window: 5,
            mask_rate: 0.15,
            ..Default::default()
        };
        train(&mut params, &corpus, &cfg, |_| {}).unwrap();
        Self {
            source,
            params,
            untrained,
        }
    }

    pub fn prompts(&self, n: usize, len: usize, seed: u64) -> Vec<Vec<TokenId>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.source.sequence(len, &mut rng)).collect()
    }
}

pub fn untrained(cfg: ModelConfig) -> ModelParams {
    ModelParams::init(cfg).unwrap()
}

pub fn random_prompts(n: usize, vocab: u32, max_len: usize, seed: u64) -> Vec<Vec<TokenId>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        })
        .collect()
}

/// Elementwise relative closeness with a small absolute floor.
pub fn max_rel_err(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            (x - y).abs() / x.abs().max(y.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}
