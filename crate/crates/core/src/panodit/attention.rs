//! Multi-head scaled dot-product attention with an optional additive logit
//! bias, plus its backward pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matrix::Matrix;

/// Softmax probabilities of each head, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub probs: Vec<Matrix<T>>,
}

fn check_shapes<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, heads: usize, bias: Option<&[T]>) -> Result<()> {
    let d = q.cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape {
            expected: format!("model width divisible by {heads} heads"),
            actual: format!("width {d}"),
        });
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::Shape {
            expected: format!("K and V with {d} columns and equal rows"),
            actual: format!("K {}x{}, V {}x{}", k.rows(), k.cols(), v.rows(), v.cols()),
        });
    }
    if let Some(b) = bias {
        if b.len() != q.rows() * k.rows() {
            return Err(Error::Shape {
                expected: format!("{}x{} bias", q.rows(), k.rows()),
                actual: format!("{} values", b.len()),
            });
        }
    }
    Ok(())
}

/// `softmax(Q_h K_h^T / sqrt(d_h) + bias) V_h` for each head `h`, heads
/// concatenated along columns. `bias` is row-major `n_q x n_k`.
pub fn attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    heads: usize,
    bias: Option<&[T]>,
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    check_shapes(q, k, v, heads, bias)?;
    let (nq, nk, d) = (q.rows(), k.rows(), q.cols());
    let dh = d / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut out = Matrix::zeros(nq, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (q.slice_cols(h * dh, (h + 1) * dh), k.slice_cols(h * dh, (h + 1) * dh), v.slice_cols(h * dh, (h + 1) * dh));
        let mut p = qh.matmul_t(&kh)?.scale(scale);
        if let Some(b) = bias {
            for (l, &bv) in p.data_mut().iter_mut().zip(b) {
                *l += bv;
            }
        }
        softmax_rows(&mut p, nk);
        out.set_cols(h * dh, &p.matmul(&vh)?);
        probs.push(p);
    }
    Ok((out, AttentionCache { probs }))
}

fn softmax_rows<T: Scalar>(m: &mut Matrix<T>, cols: usize) {
    for row in m.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Gradients of the attention inputs given the gradient of its output.
pub fn attention_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    d_out: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let heads = cache.probs.len();
    let d = q.cols();
    let dh = d / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut dq = Matrix::zeros(q.rows(), d);
    let mut dk = Matrix::zeros(k.rows(), d);
    let mut dv = Matrix::zeros(v.rows(), d);
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = (q.slice_cols(cols.0, cols.1), k.slice_cols(cols.0, cols.1), v.slice_cols(cols.0, cols.1));
        let doh = d_out.slice_cols(cols.0, cols.1);
        dv.set_cols(cols.0, &p.t_matmul(&doh)?);
        let dp = doh.matmul_t(&vh)?;
        // softmax backward: dS = P * (dP - rowsum(P * dP))
        let mut ds = Matrix::zeros(p.rows(), p.cols());
        for i in 0..p.rows() {
            let dot: T = p.row(i).iter().zip(dp.row(i)).map(|(&a, &b)| a * b).sum();
            for j in 0..p.cols() {
                ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - dot) * scale;
            }
        }
        dq.set_cols(cols.0, &ds.matmul(&kh)?);
        dk.set_cols(cols.0, &ds.t_matmul(&qh)?);
    }
    Ok((dq, dk, dv))
}
