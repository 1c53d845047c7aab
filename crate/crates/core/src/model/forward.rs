use num_traits::Float;

use super::ops::{c, gelu, layer_norm, matmul, softmax_in_place};
use super::{AttnMask, KvCache, ModelParams, TokenId};
use crate::error::ModelError;

/// One row of unnormalized scores over the vocabulary per query position.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    vocab: usize,
    data: Vec<f32>,
}

impl Logits {
    pub fn new(vocab: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len() % vocab, 0);
        Self { vocab, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn last(&self) -> &[f32] {
        self.row(self.rows() - 1)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Multi-head scaled dot-product attention of `n_q` queries over `n_k` keys.
/// Masked keys are skipped entirely, so the arithmetic for a query depends only
/// on the keys it may see and their order. When `probs` is given it receives
/// the `[head, query, key]` attention weights (zero where masked).
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention<F: Float>(
    q: &[F],
    keys: &[F],
    values: &[F],
    n_q: usize,
    n_k: usize,
    d: usize,
    n_heads: usize,
    allowed: impl Fn(usize, usize) -> bool,
    mut probs: Option<&mut Vec<F>>,
) -> Vec<F> {
    let hd = d / n_heads;
    let scale = F::one() / c::<F>(hd as f64).sqrt();
    let mut out = vec![F::zero(); n_q * d];
    if let Some(p) = probs.as_deref_mut() {
        p.clear();
        p.resize(n_heads * n_q * n_k, F::zero());
    }
    let mut scores = Vec::with_capacity(n_k);
    let mut idx = Vec::with_capacity(n_k);
    for h in 0..n_heads {
        let lo = h * hd;
        for r in 0..n_q {
            let qr = &q[r * d + lo..r * d + lo + hd];
            scores.clear();
            idx.clear();
            for j in 0..n_k {
                if !allowed(r, j) {
                    continue;
                }
                let kj = &keys[j * d + lo..j * d + lo + hd];
                let mut s = F::zero();
                for (&a, &b) in qr.iter().zip(kj) {
                    s = s + a * b;
                }
                scores.push(s * scale);
                idx.push(j);
            }
            softmax_in_place(&mut scores);
            let or = &mut out[r * d + lo..r * d + lo + hd];
            for (&p, &j) in scores.iter().zip(&idx) {
                let vj = &values[j * d + lo..j * d + lo + hd];
                for (o, &v) in or.iter_mut().zip(vj) {
                    *o = *o + p * v;
                }
            }
            if let Some(pp) = probs.as_deref_mut() {
                let base = (h * n_q + r) * n_k;
                for (&p, &j) in scores.iter().zip(&idx) {
                    pp[base + j] = p;
                }
            }
        }
    }
    out
}

impl ModelParams {
    /// Runs `tokens` at `positions` through the model, attending to the cached
    /// prefix and to each other as `mask` allows. Appends one cache entry per
    /// token and returns one logits row per token.
    pub fn forward(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        mask: &AttnMask,
        cache: &mut KvCache,
    ) -> Result<Logits, ModelError> {
        let cfg = &self.config;
        let n = tokens.len();
        if n == 0 {
            return Err(ModelError::EmptyInput);
        }
        if positions.len() != n {
            return Err(ModelError::PositionCount {
                tokens: n,
                positions: positions.len(),
            });
        }
        if cache.n_layers() != cfg.n_layers || cache.d_model() != cfg.d_model {
            return Err(ModelError::CacheShape);
        }
        let prior = cache.len();
        if mask.rows() != n || mask.cols() != prior + n {
            return Err(ModelError::MaskShape {
                rows: mask.rows(),
                cols: mask.cols(),
                want_rows: n,
                want_cols: prior + n,
            });
        }
        if let Some(row) = (0..n).find(|&r| !mask.allows_self(r)) {
            return Err(ModelError::MaskSelf { row });
        }
        if let Some(&pos) = positions.iter().find(|&&p| p >= cfg.max_seq) {
            return Err(ModelError::Position {
                pos,
                max_seq: cfg.max_seq,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::Token {
                id,
                vocab: cfg.vocab_size,
            });
        }

        let d = cfg.d_model;
        let f = cfg.d_ff();
        let w = &self.data[..];
        let lay = &self.layout;

        let mut x = vec![0.0f32; n * d];
        for (r, (&t, &p)) in tokens.iter().zip(positions).enumerate() {
            let te = &w[lay.tok_emb.start + t as usize * d..][..d];
            let pe = &w[lay.pos_emb.start + p * d..][..d];
            for i in 0..d {
                x[r * d + i] = te[i] + pe[i];
            }
        }

        for (l, ll) in lay.layers.iter().enumerate() {
            let (h, _, _) = layer_norm(&x, n, d, &w[ll.ln1_gain.clone()], &w[ll.ln1_bias.clone()]);
            let q = matmul(&h, n, d, &w[ll.wq.clone()], d, Some(&w[ll.bq.clone()]));
            let k = matmul(&h, n, d, &w[ll.wk.clone()], d, Some(&w[ll.bk.clone()]));
            let v = matmul(&h, n, d, &w[ll.wv.clone()], d, Some(&w[ll.bv.clone()]));
            cache.push_layer(l, &k, &v);
            let att = attention(
                &q,
                cache.keys(l),
                cache.values(l),
                n,
                prior + n,
                d,
                cfg.n_heads,
                |r, j| mask.allowed(r, j),
                None,
            );
            let o = matmul(&att, n, d, &w[ll.wo.clone()], d, Some(&w[ll.bo.clone()]));
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            let (h2, _, _) = layer_norm(&x, n, d, &w[ll.ln2_gain.clone()], &w[ll.ln2_bias.clone()]);
            let mut u = matmul(&h2, n, d, &w[ll.w1.clone()], f, Some(&w[ll.b1.clone()]));
            for ui in u.iter_mut() {
                *ui = gelu(*ui);
            }
            let m = matmul(&u, n, f, &w[ll.w2.clone()], d, Some(&w[ll.b2.clone()]));
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
        }
        cache.commit(n);

        let (hf, _, _) = layer_norm(&x, n, d, &w[lay.lnf_gain.clone()], &w[lay.lnf_bias.clone()]);
        let logits = matmul(&hf, n, d, &w[lay.w_out.clone()], cfg.vocab_size, None);
        Ok(Logits::new(cfg.vocab_size, logits))
    }

    /// Causal forward of `tokens` continuing right after the cached prefix.
    pub fn forward_causal(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<Logits, ModelError> {
        let start = cache.len();
        let positions: Vec<usize> = (start..start + tokens.len()).collect();
        let mask = AttnMask::causal(tokens.len(), start);
        self.forward(tokens, &positions, &mask, cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(seed: u64) -> ModelParams {
        ModelParams::init(ModelConfig {
            vocab_size: 20,
            n_adaptive: 3,
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            max_seq: 24,
            seed,
        })
        .unwrap()
    }

    const SEQ: [TokenId; 10] = [3, 9, 1, 16, 4, 4, 12, 0, 7, 2];

    fn rel_close(a: &[f32], b: &[f32], tol: f32) -> bool {
        a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-6))
    }

    #[test]
    fn single_call_matches_token_by_token() {
        let p = model(7);
        let mut c1 = p.new_cache();
        let full = p.forward_causal(&SEQ, &mut c1).unwrap();
        let mut c2 = p.new_cache();
        let mut last = None;
        for (i, &t) in SEQ.iter().enumerate() {
            let l = p.forward_causal(&[t], &mut c2).unwrap();
            assert!(rel_close(l.row(0), full.row(i), 1e-5), "position {i}");
            last = Some(l);
        }
        assert!(rel_close(last.unwrap().row(0), full.last(), 1e-5));
        assert_eq!(c1, c2);
    }

    #[test]
    fn rollback_then_replay_is_bit_identical() {
        let p = model(8);
        let mut c = p.new_cache();
        p.forward_causal(&SEQ[..4], &mut c).unwrap();
        let a = p.forward_causal(&SEQ[4..], &mut c).unwrap();
        c.rollback(4).unwrap();
        let b = p.forward_causal(&SEQ[4..], &mut c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn write_ten_rollback_six_write_four() {
        let p = model(9);
        let mut straight = p.new_cache();
        let want = p.forward_causal(&SEQ, &mut straight).unwrap();
        let mut c = p.new_cache();
        p.forward_causal(&SEQ, &mut c).unwrap();
        c.rollback(6).unwrap();
        let got = p.forward_causal(&SEQ[6..], &mut c).unwrap();
        assert_eq!(got.last(), want.last());
    }

    #[test]
    fn shape_errors() {
        let p = model(1);
        let mut c = p.new_cache();
        let bad = AttnMask::causal(2, 1);
        assert!(matches!(
            p.forward(&[1, 2], &[0, 1], &bad, &mut c),
            Err(ModelError::MaskShape { .. })
        ));
        assert!(matches!(
            p.forward(&[1], &[24], &AttnMask::causal(1, 0), &mut c),
            Err(ModelError::Position { .. })
        ));
        assert!(matches!(
            p.forward(&[20], &[0], &AttnMask::causal(1, 0), &mut c),
            Err(ModelError::Token { .. })
        ));
        let blind = AttnMask::from_fn(1, 1, |_, _| false);
        assert!(matches!(
            p.forward(&[1], &[0], &blind, &mut c),
            Err(ModelError::MaskSelf { row: 0 })
        ));
        assert!(c.is_empty());
    }

    #[test]
    fn logits_are_finite() {
        let p = model(2);
        let mut c = p.new_cache();
        let l = p.forward_causal(&SEQ, &mut c).unwrap();
        assert!(l.as_slice().iter().all(|v| v.is_finite()));
    }
}
