//! Reverse-mode gradients for causal training sequences.
//!
//! The tape forward reuses the inference kernels, generic over the float
//! type, so the gradient checker can run the same arithmetic in f64.

use num_traits::Float;

use crate::model::ops::{c, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, matmul_backward};
use crate::model::{ModelConfig, ParamLayout, TokenId};

struct LayerTape<F> {
    h1: Vec<F>,
    xhat1: Vec<F>,
    rstd1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    h2: Vec<F>,
    xhat2: Vec<F>,
    rstd2: Vec<F>,
    u_pre: Vec<F>,
    u: Vec<F>,
}

/// Activations of one causal forward pass over positions `0..n`.
pub struct Tape<F> {
    tokens: Vec<TokenId>,
    layers: Vec<LayerTape<F>>,
    xhat_f: Vec<F>,
    rstd_f: Vec<F>,
    hf: Vec<F>,
    /// Row-major `[n, vocab]`.
    pub logits: Vec<F>,
}

impl<F> Tape<F> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Causal forward of `tokens` at positions `0..n`, keeping every activation.
/// The caller guarantees ids are in range and `n <= max_seq`.
pub fn forward_tape<F: Float>(cfg: &ModelConfig, lay: &ParamLayout, w: &[F], tokens: &[TokenId]) -> Tape<F> {
    let n = tokens.len();
    let d = cfg.d_model;
    let f = cfg.d_ff();
    assert!(n >= 1 && n <= cfg.max_seq, "sequence length {n} out of range");
    let mut x = vec![F::zero(); n * d];
    for (r, &t) in tokens.iter().enumerate() {
        let te = &w[lay.tok_emb.start + t as usize * d..][..d];
        let pe = &w[lay.pos_emb.start + r * d..][..d];
        for i in 0..d {
            x[r * d + i] = te[i] + pe[i];
        }
    }
    let mut layers = Vec::with_capacity(lay.layers.len());
    for ll in &lay.layers {
        let (h1, xhat1, rstd1) = layer_norm(&x, n, d, &w[ll.ln1_gain.clone()], &w[ll.ln1_bias.clone()]);
        let q = matmul(&h1, n, d, &w[ll.wq.clone()], d, Some(&w[ll.bq.clone()]));
        let k = matmul(&h1, n, d, &w[ll.wk.clone()], d, Some(&w[ll.bk.clone()]));
        let v = matmul(&h1, n, d, &w[ll.wv.clone()], d, Some(&w[ll.bv.clone()]));
        let mut probs = Vec::new();
        let att = crate::model::attention(&q, &k, &v, n, n, d, cfg.n_heads, |r, j| j <= r, Some(&mut probs));
        let o = matmul(&att, n, d, &w[ll.wo.clone()], d, Some(&w[ll.bo.clone()]));
        for (xi, &oi) in x.iter_mut().zip(&o) {
            *xi = *xi + oi;
        }
        let (h2, xhat2, rstd2) = layer_norm(&x, n, d, &w[ll.ln2_gain.clone()], &w[ll.ln2_bias.clone()]);
        let u_pre = matmul(&h2, n, d, &w[ll.w1.clone()], f, Some(&w[ll.b1.clone()]));
        let u: Vec<F> = u_pre.iter().map(|&z| gelu(z)).collect();
        let m = matmul(&u, n, f, &w[ll.w2.clone()], d, Some(&w[ll.b2.clone()]));
        for (xi, &mi) in x.iter_mut().zip(&m) {
            *xi = *xi + mi;
        }
        layers.push(LayerTape {
            h1,
            xhat1,
            rstd1,
            q,
            k,
            v,
            probs,
            att,
            h2,
            xhat2,
            rstd2,
            u_pre,
            u,
        });
    }
    let (hf, xhat_f, rstd_f) = layer_norm(&x, n, d, &w[lay.lnf_gain.clone()], &w[lay.lnf_bias.clone()]);
    let logits = matmul(&hf, n, d, &w[lay.w_out.clone()], cfg.vocab_size, None);
    Tape {
        tokens: tokens.to_vec(),
        layers,
        xhat_f,
        rstd_f,
        hf,
        logits,
    }
}

/// Accumulates into `grad` the gradient of `Σ dlogits · logits` through the tape.
pub fn backward<F: Float>(
    cfg: &ModelConfig,
    lay: &ParamLayout,
    w: &[F],
    tape: &Tape<F>,
    dlogits: &[F],
    grad: &mut [F],
) {
    let n = tape.len();
    let d = cfg.d_model;
    let f = cfg.d_ff();
    let hd = cfg.head_dim();
    let n_heads = cfg.n_heads;
    let scale = F::one() / c::<F>(hd as f64).sqrt();
    assert_eq!(grad.len(), w.len());

    let mut dhf = vec![F::zero(); n * d];
    matmul_backward(
        dlogits,
        &tape.hf,
        &w[lay.w_out.clone()],
        n,
        d,
        cfg.vocab_size,
        Some(&mut dhf),
        &mut grad[lay.w_out.clone()],
        None,
    );
    let mut dx = vec![F::zero(); n * d];
    {
        let (dg, db) = two_ranges(grad, &lay.lnf_gain, &lay.lnf_bias);
        layer_norm_backward(
            &dhf,
            &tape.xhat_f,
            &tape.rstd_f,
            &w[lay.lnf_gain.clone()],
            n,
            d,
            &mut dx,
            dg,
            db,
        );
    }

    for (ll, t) in lay.layers.iter().zip(&tape.layers).rev() {
        // MLP branch: x += w2 · gelu(w1 · ln2(x))
        let mut du = vec![F::zero(); n * f];
        {
            let (dw, db) = two_ranges(grad, &ll.w2, &ll.b2);
            matmul_backward(&dx, &t.u, &w[ll.w2.clone()], n, f, d, Some(&mut du), dw, Some(db));
        }
        for (g, &z) in du.iter_mut().zip(&t.u_pre) {
            *g = *g * gelu_grad(z);
        }
        let mut dh2 = vec![F::zero(); n * d];
        {
            let (dw, db) = two_ranges(grad, &ll.w1, &ll.b1);
            matmul_backward(
                &du,
                &t.h2,
                &w[ll.w1.clone()],
                n,
                d,
                f,
                Some(&mut dh2),
                dw,
                Some(db),
            );
        }
        {
            let (dg, db) = two_ranges(grad, &ll.ln2_gain, &ll.ln2_bias);
            layer_norm_backward(
                &dh2,
                &t.xhat2,
                &t.rstd2,
                &w[ll.ln2_gain.clone()],
                n,
                d,
                &mut dx,
                dg,
                db,
            );
        }

        // Attention branch: x += wo · attn(ln1(x))
        let mut datt = vec![F::zero(); n * d];
        {
            let (dw, db) = two_ranges(grad, &ll.wo, &ll.bo);
            matmul_backward(
                &dx,
                &t.att,
                &w[ll.wo.clone()],
                n,
                d,
                d,
                Some(&mut datt),
                dw,
                Some(db),
            );
        }
        let mut dq = vec![F::zero(); n * d];
        let mut dk = vec![F::zero(); n * d];
        let mut dv = vec![F::zero(); n * d];
        let mut dp = vec![F::zero(); n];
        for h in 0..n_heads {
            let lo = h * hd;
            for r in 0..n {
                let p = &t.probs[(h * n + r) * n..(h * n + r + 1) * n];
                let dout = &datt[r * d + lo..r * d + lo + hd];
                let mut dot = F::zero();
                for j in 0..=r {
                    let vj = &t.v[j * d + lo..j * d + lo + hd];
                    let mut s = F::zero();
                    for (&a, &b) in dout.iter().zip(vj) {
                        s = s + a * b;
                    }
                    dp[j] = s;
                    dot = dot + p[j] * s;
                    for i in 0..hd {
                        dv[j * d + lo + i] = dv[j * d + lo + i] + p[j] * dout[i];
                    }
                }
                for j in 0..=r {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    for i in 0..hd {
                        dq[r * d + lo + i] = dq[r * d + lo + i] + ds * t.k[j * d + lo + i];
                        dk[j * d + lo + i] = dk[j * d + lo + i] + ds * t.q[r * d + lo + i];
                    }
                }
            }
        }
        let mut dh1 = vec![F::zero(); n * d];
        for (g, wr, br) in [
            (&dq, &ll.wq, &ll.bq),
            (&dk, &ll.wk, &ll.bk),
            (&dv, &ll.wv, &ll.bv),
        ] {
            let (dw, db) = two_ranges(grad, wr, br);
            matmul_backward(g, &t.h1, &w[wr.clone()], n, d, d, Some(&mut dh1), dw, Some(db));
        }
        {
            let (dg, db) = two_ranges(grad, &ll.ln1_gain, &ll.ln1_bias);
            layer_norm_backward(
                &dh1,
                &t.xhat1,
                &t.rstd1,
                &w[ll.ln1_gain.clone()],
                n,
                d,
                &mut dx,
                dg,
                db,
            );
        }
    }

    for (r, &tok) in tape.tokens.iter().enumerate() {
        let te = lay.tok_emb.start + tok as usize * d;
        let pe = lay.pos_emb.start + r * d;
        for i in 0..d {
            grad[te + i] = grad[te + i] + dx[r * d + i];
            grad[pe + i] = grad[pe + i] + dx[r * d + i];
        }
    }
}

/// Two disjoint mutable views into the gradient vector; `a` must precede `b`.
fn two_ranges<'g, F>(
    g: &'g mut [F],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'g mut [F], &'g mut [F]) {
    assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
