//! Dense row-major kernels shared by the inference forward pass and the
//! training tape. They are generic over the float type so gradients can be
//! checked in f64 against the exact same arithmetic.

use num_traits::Float;

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn c<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

/// `y[n, out] = x[n, inp] · w[inp, out] (+ b)`.
pub(crate) fn matmul<F: Float>(
    x: &[F],
    n: usize,
    inp: usize,
    w: &[F],
    out: usize,
    b: Option<&[F]>,
) -> Vec<F> {
    debug_assert_eq!(x.len(), n * inp);
    debug_assert_eq!(w.len(), inp * out);
    let mut y = vec![F::zero(); n * out];
    for r in 0..n {
        let yr = &mut y[r * out..(r + 1) * out];
        if let Some(b) = b {
            yr.copy_from_slice(b);
        }
        let xr = &x[r * inp..(r + 1) * inp];
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * out..(i + 1) * out];
            for (yo, &wo) in yr.iter_mut().zip(wr) {
                *yo = *yo + xi * wo;
            }
        }
    }
    y
}

/// Accumulates gradients of [`matmul`] into `dx`, `dw`, `db`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward<F: Float>(
    dy: &[F],
    x: &[F],
    w: &[F],
    n: usize,
    inp: usize,
    out: usize,
    dx: Option<&mut [F]>,
    dw: &mut [F],
    db: Option<&mut [F]>,
) {
    for r in 0..n {
        let dyr = &dy[r * out..(r + 1) * out];
        let xr = &x[r * inp..(r + 1) * inp];
        for (i, &xi) in xr.iter().enumerate() {
            let dwr = &mut dw[i * out..(i + 1) * out];
            for (d, &g) in dwr.iter_mut().zip(dyr) {
                *d = *d + xi * g;
            }
        }
    }
    if let Some(db) = db {
        for r in 0..n {
            for (d, &g) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
                *d = *d + g;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..n {
            let dyr = &dy[r * out..(r + 1) * out];
            for i in 0..inp {
                let wr = &w[i * out..(i + 1) * out];
                let mut acc = F::zero();
                for (&wo, &g) in wr.iter().zip(dyr) {
                    acc = acc + wo * g;
                }
                dx[r * inp + i] = dx[r * inp + i] + acc;
            }
        }
    }
}

/// Row-wise layer norm. Returns (output, normalized input, reciprocal std per row).
pub(crate) fn layer_norm<F: Float>(
    x: &[F],
    n: usize,
    d: usize,
    gain: &[F],
    bias: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut y = vec![F::zero(); n * d];
    let mut xhat = vec![F::zero(); n * d];
    let mut rstd = vec![F::zero(); n];
    let dn = c::<F>(d as f64);
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().fold(F::zero(), |a, &v| a + v) / dn;
        let var = xr.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
        let rs = F::one() / (var + c(LN_EPS)).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * gain[i] + bias[i];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<F: Float>(
    dy: &[F],
    xhat: &[F],
    rstd: &[F],
    gain: &[F],
    n: usize,
    d: usize,
    dx: &mut [F],
    dgain: &mut [F],
    dbias: &mut [F],
) {
    let dn = c::<F>(d as f64);
    let mut dxhat = vec![F::zero(); d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for i in 0..d {
            dgain[i] = dgain[i] + dyr[i] * xr[i];
            dbias[i] = dbias[i] + dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            sum_dxhat = sum_dxhat + dxhat[i];
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[i] * xr[i];
        }
        for i in 0..d {
            let g = (dxhat[i] - sum_dxhat / dn - xr[i] * sum_dxhat_xhat / dn) * rstd[r];
            dx[r * d + i] = dx[r * d + i] + g;
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<F: Float>(x: F) -> F {
    let inner = c::<F>(GELU_K) * (x + c::<F>(GELU_A) * x * x * x);
    c::<F>(0.5) * x * (F::one() + inner.tanh())
}

pub(crate) fn gelu_grad<F: Float>(x: F) -> F {
    let inner = c::<F>(GELU_K) * (x + c::<F>(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = c::<F>(GELU_K) * (F::one() + c::<F>(3.0 * GELU_A) * x * x);
    c::<F>(0.5) * (F::one() + t) + c::<F>(0.5) * x * (F::one() - t * t) * dinner
}

/// In-place softmax over `xs`; returns nothing. `xs` must hold at least one finite value.
pub(crate) fn softmax_in_place<F: Float>(xs: &mut [F]) {
    let max = xs.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut sum = F::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in xs.iter_mut() {
        *v = *v / sum;
    }
}

/// Log-softmax of one row, in f64.
pub(crate) fn log_softmax<F: Float>(xs: &[F]) -> Vec<f64> {
    let max = xs
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64().unwrap()));
    let lse = xs
        .iter()
        .map(|&v| (v.to_f64().unwrap() - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    xs.iter().map(|&v| v.to_f64().unwrap() - lse).collect()
}
