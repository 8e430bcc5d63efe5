//! Dense kernels. Matrices are row-major slices.

use super::Scalar;

pub(crate) const LN_EPS: f64 = 1e-12;

/// `a (m×k) · b (k×n)`.
pub(crate) fn mm<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == F::zero() {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + x * w;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub(crate) fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `out (k×n) += aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub(crate) fn mm_tn_acc<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == F::zero() {
                continue;
            }
            for (o, &y) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o = *o + x * y;
            }
        }
    }
}

pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

/// Adds `bias` to every row of `x`.
pub(crate) fn add_bias<F: Scalar>(x: &mut [F], bias: &[F]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// `out += column sums of dy`.
pub(crate) fn bias_grad<F: Scalar>(dy: &[F], out: &mut [F]) {
    for row in dy.chunks(out.len()) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o = *o + g;
        }
    }
}

/// Affine map `x·W + b`.
pub(crate) fn affine<F: Scalar>(x: &[F], w: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut y = mm(x, w, m, k, n);
    add_bias(&mut y, b);
    y
}

/// Backward of [`affine`]: accumulates weight and bias gradients, returns dx.
pub(crate) fn affine_back<F: Scalar>(
    x: &[F],
    w: &[F],
    dy: &[F],
    m: usize,
    k: usize,
    n: usize,
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    mm_tn_acc(x, dy, m, k, n, dw);
    bias_grad(dy, db);
    mm_nt(dy, w, m, n, k)
}

/// Row-wise layer norm. Returns the output and the cached `(x̂, 1/σ)`.
pub(crate) fn layer_norm<F: Scalar>(x: &[F], gamma: &[F], beta: &[F]) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = gamma.len();
    let nf = F::c(n as f64);
    let eps = F::c(LN_EPS);
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.len() / n);
    for (r, row) in x.chunks(n).enumerate() {
        let mean = row.iter().fold(F::zero(), |s, &v| s + v) / nf;
        let var = row.iter().fold(F::zero(), |s, &v| s + (v - mean) * (v - mean)) / nf;
        let rs = F::one() / (var + eps).sqrt();
        rstd.push(rs);
        for j in 0..n {
            let h = (row[j] - mean) * rs;
            xhat[r * n + j] = h;
            y[r * n + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_back<F: Scalar>(
    dy: &[F],
    xhat: &[F],
    rstd: &[F],
    gamma: &[F],
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Vec<F> {
    let n = gamma.len();
    let nf = F::c(n as f64);
    let mut dx = vec![F::zero(); dy.len()];
    let mut dxhat = vec![F::zero(); n];
    for (r, &rs) in rstd.iter().enumerate() {
        let o = r * n;
        let (mut s1, mut s2) = (F::zero(), F::zero());
        for j in 0..n {
            let g = dy[o + j];
            dgamma[j] = dgamma[j] + g * xhat[o + j];
            dbeta[j] = dbeta[j] + g;
            dxhat[j] = g * gamma[j];
            s1 = s1 + dxhat[j];
            s2 = s2 + dxhat[j] * xhat[o + j];
        }
        for j in 0..n {
            dx[o + j] = rs / nf * (nf * dxhat[j] - s1 - xhat[o + j] * s2);
        }
    }
    dx
}

const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let c = F::c((2.0 / std::f64::consts::PI).sqrt());
    let t = (c * (x + F::c(GELU_A) * x * x * x)).tanh();
    F::c(0.5) * x * (F::one() + t)
}

pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::c((2.0 / std::f64::consts::PI).sqrt());
    let t = (c * (x + F::c(GELU_A) * x * x * x)).tanh();
    let half = F::c(0.5);
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::c(3.0 * GELU_A) * x * x)
}

/// In-place softmax over a row; `-inf` entries get probability zero.
pub(crate) fn softmax<F: Scalar>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Log-softmax of a row.
pub(crate) fn log_softmax<F: Scalar>(row: &[F]) -> Vec<F> {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = row.iter().fold(F::zero(), |s, &v| s + (v - max).exp()).ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 - 2.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5).collect(); // 3×4
        let c = mm(&a, &b, 2, 3, 4);
        // bᵀ stored as 4×3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        assert_eq!(mm_nt(&a, &bt, 2, 3, 4), c);
        let mut out = vec![0.0; 12];
        // aᵀ (3×2) · c (2×4)
        mm_tn_acc(&a, &c, 2, 3, 4, &mut out);
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        assert_eq!(out, mm(&at, &c, 3, 2, 4));
    }

    #[test]
    fn layer_norm_moments() {
        let x = [1.0f64, 2.0, 3.0, 10.0];
        let (y, _, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn softmax_masks() {
        let mut r = [1.0f64, f64::NEG_INFINITY, 1.0];
        softmax(&mut r);
        assert_eq!(r, [0.5, 0.0, 0.5]);
        let ls = log_softmax(&[0.0f64; 4]);
        assert!(ls.iter().all(|v| (v + 4f64.ln()).abs() < 1e-12));
    }
}
