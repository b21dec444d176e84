use crate::error::{domain, Error, Result};
use crate::mask::{mask_to_bias, SphereMask};
use crate::plucker::PluckerField;
use crate::scalar::Scalar;

use super::attention::{attention, attention_backward, AttentionCache};
use super::matrix::Matrix;
use super::weights::{BlockConfig, BlockWeights, ParamId};

fn check_tokens<T: Scalar>(m: &Matrix<T>, config: &BlockConfig, what: &str) -> Result<()> {
    let want = (config.tokens(), config.d_model);
    if m.shape() != want {
        return Err(Error::Shape {
            expected: format!("{what} of shape {}x{}", want.0, want.1),
            actual: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok(())
}

fn check_mask(mask: &SphereMask, config: &BlockConfig) -> Result<()> {
    if mask.n() != config.tokens() {
        return Err(Error::Shape {
            expected: format!("mask over {} tokens", config.tokens()),
            actual: format!("mask over {} tokens", mask.n()),
        });
    }
    Ok(())
}

/// Mean-pools the six Plücker channels onto the token grid. One row per
/// token, frame-major.
pub fn pool_condition<T: Scalar>(field: &PluckerField<T>, config: &BlockConfig) -> Result<Matrix<T>> {
    let g = config.grid;
    let dims = [field.frames(), field.height(), field.width()];
    let cells = [g.frames(), g.rows(), g.cols()];
    if dims.iter().zip(cells).any(|(&d, c)| d % c != 0) {
        return Err(domain(format!("field dims {dims:?} do not reduce to token grid {cells:?}")));
    }
    let (ft, fh, fw) = (dims[0] / cells[0], dims[1] / cells[1], dims[2] / cells[2]);
    let count = T::from_usize_lossy(ft * fh * fw);
    let mut out = Matrix::zeros(g.len(), 6);
    for idx in 0..g.len() {
        let (t, r, c) = g.coords(idx);
        let mut acc = [T::zero(); 6];
        for dt in 0..ft {
            for dy in 0..fh {
                for dx in 0..fw {
                    let cell = field.get(t * ft + dt, r * fh + dy, c * fw + dx);
                    for (a, v) in acc.iter_mut().zip(cell) {
                        *a += v;
                    }
                }
            }
        }
        for (j, a) in acc.into_iter().enumerate() {
            out[(idx, j)] = a / count;
        }
    }
    Ok(out)
}

/// Condition tokens: pooled field times the 6 x d_model encoder.
pub fn encode_condition<T: Scalar>(
    field: &PluckerField<T>,
    config: &BlockConfig,
    weights: &BlockWeights<T>,
) -> Result<Matrix<T>> {
    pool_condition(field, config)?.matmul(weights.get(ParamId::CondProj))
}

struct AttnTrace<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    out: Matrix<T>,
    cache: AttentionCache<T>,
}

fn project_attend<T: Scalar>(
    xq: &Matrix<T>,
    xkv: &Matrix<T>,
    wq: &Matrix<T>,
    wk: &Matrix<T>,
    wv: &Matrix<T>,
    heads: usize,
    bias: Option<&[T]>,
) -> Result<AttnTrace<T>> {
    let q = xq.matmul(wq)?;
    let k = xkv.matmul(wk)?;
    let v = xkv.matmul(wv)?;
    let (out, cache) = attention(&q, &k, &v, heads, bias)?;
    Ok(AttnTrace { q, k, v, out, cache })
}

/// Gradients w.r.t. the three projections, plus the gradients of the query
/// and key/value inputs.
fn project_attend_backward<T: Scalar>(
    tr: &AttnTrace<T>,
    xq: &Matrix<T>,
    xkv: &Matrix<T>,
    wk: &Matrix<T>,
    wv: &Matrix<T>,
    d_out: &Matrix<T>,
) -> Result<([Matrix<T>; 3], Matrix<T>)> {
    let (dq, dk, dv) = attention_backward(&tr.cache, &tr.q, &tr.k, &tr.v, d_out)?;
    let d_xkv = dk.matmul_t(wk)?.add(&dv.matmul_t(wv)?)?;
    Ok(([xq.t_matmul(&dq)?, xkv.t_matmul(&dk)?, xkv.t_matmul(&dv)?], d_xkv))
}

fn global_trace<T: Scalar>(x: &Matrix<T>, w: &BlockWeights<T>, config: &BlockConfig) -> Result<AttnTrace<T>> {
    use ParamId::*;
    project_attend(x, x, w.get(GlobalQ), w.get(GlobalK), w.get(GlobalV), config.heads, None)
}

fn exploration_trace<T: Scalar>(
    x: &Matrix<T>,
    h: &Matrix<T>,
    w: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<AttnTrace<T>> {
    use ParamId::*;
    // Only the video-token half of the output is used, so only video tokens
    // need to issue queries.
    project_attend(x, h, w.get(ExpQ), w.get(ExpK), w.get(ExpV), config.heads, None)
}

fn sphere_trace<T: Scalar>(
    x: &Matrix<T>,
    bias: &[T],
    w: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<AttnTrace<T>> {
    use ParamId::*;
    project_attend(x, x, w.get(SphereQ), w.get(SphereK), w.get(SphereV), config.heads, Some(bias))
}

/// Frozen global self-attention: `Attn(x Wq, x Wk, x Wv) Wo`.
pub fn global_branch<T: Scalar>(x: &Matrix<T>, weights: &BlockWeights<T>, config: &BlockConfig) -> Result<Matrix<T>> {
    check_tokens(x, config, "x")?;
    global_trace(x, weights, config)?.out.matmul(weights.get(ParamId::GlobalO))
}

/// Exploration branch output, after its zero-linear.
pub fn exploration_branch<T: Scalar>(
    x: &Matrix<T>,
    condition: &Matrix<T>,
    weights: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<Matrix<T>> {
    check_tokens(x, config, "x")?;
    check_tokens(condition, config, "condition")?;
    let h = x.concat_rows(condition)?;
    exploration_trace(x, &h, weights, config)?
        .out
        .matmul(weights.get(ParamId::ExpO))?
        .matmul(weights.get(ParamId::ExpZero))
}

/// Sphere branch output, after its zero-linear. `bias` is the dense `N x N`
/// logit bias.
pub fn sphere_branch<T: Scalar>(
    x: &Matrix<T>,
    bias: &[T],
    weights: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<Matrix<T>> {
    sphere_trace(x, bias, weights, config)?.out.matmul(weights.get(ParamId::SphereZero))
}

/// Per-head attention probabilities of the sphere branch.
pub fn sphere_attention_weights<T: Scalar>(
    x: &Matrix<T>,
    mask: &SphereMask,
    weights: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<Vec<Matrix<T>>> {
    check_tokens(x, config, "x")?;
    check_mask(mask, config)?;
    let bias = mask_to_bias(mask, config.bias_mode);
    Ok(sphere_trace(x, &bias, weights, config)?.cache.probs)
}

pub fn forward_block<T: Scalar>(
    x: &Matrix<T>,
    condition: &Matrix<T>,
    mask: &SphereMask,
    weights: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<Matrix<T>> {
    check_tokens(x, config, "x")?;
    check_tokens(condition, config, "condition")?;
    check_mask(mask, config)?;
    let bias = mask_to_bias(mask, config.bias_mode);
    let global = global_branch(x, weights, config)?;
    let exploration = exploration_branch(x, condition, weights, config)?;
    let sphere = sphere_branch(x, &bias, weights, config)?;
    global.add(&exploration)?.add(&sphere)
}

/// `L = sum(forward_block(x, pooled * Wc, mask)^2)` and its gradient w.r.t.
/// every parameter, in [`ParamId::ALL`] order. Frozen parameters get zeros.
pub fn loss_and_grads<T: Scalar>(
    x: &Matrix<T>,
    pooled: &Matrix<T>,
    mask: &SphereMask,
    weights: &BlockWeights<T>,
    config: &BlockConfig,
) -> Result<(T, Vec<Matrix<T>>)> {
    use ParamId::*;
    check_tokens(x, config, "x")?;
    check_mask(mask, config)?;
    if pooled.shape() != (config.tokens(), 6) {
        return Err(Error::Shape {
            expected: format!("pooled field of shape {}x6", config.tokens()),
            actual: format!("{}x{}", pooled.rows(), pooled.cols()),
        });
    }
    let w = weights;
    let bias = mask_to_bias(mask, config.bias_mode);
    let c = pooled.matmul(w.get(CondProj))?;
    let h = x.concat_rows(&c)?;

    let g = global_trace(x, w, config)?;
    let e = exploration_trace(x, &h, w, config)?;
    let e_o = e.out.matmul(w.get(ExpO))?;
    let s = sphere_trace(x, &bias, w, config)?;
    let out = g
        .out
        .matmul(w.get(GlobalO))?
        .add(&e_o.matmul(w.get(ExpZero))?)?
        .add(&s.out.matmul(w.get(SphereZero))?)?;
    let loss = out.sum_squares();
    let d_out = out.scale(T::lit(2.0));

    let mut grads: Vec<Matrix<T>> = ParamId::ALL
        .iter()
        .map(|id| {
            let (r, c) = id.shape(config.d_model);
            Matrix::zeros(r, c)
        })
        .collect();

    if !w.global_frozen() {
        grads[GlobalO.index()] = g.out.t_matmul(&d_out)?;
        let d_attn = d_out.matmul_t(w.get(GlobalO))?;
        let ([gq, gk, gv], _) = project_attend_backward(&g, x, x, w.get(GlobalK), w.get(GlobalV), &d_attn)?;
        grads[GlobalQ.index()] = gq;
        grads[GlobalK.index()] = gk;
        grads[GlobalV.index()] = gv;
    }

    grads[SphereZero.index()] = s.out.t_matmul(&d_out)?;
    let d_attn = d_out.matmul_t(w.get(SphereZero))?;
    let ([sq, sk, sv], _) = project_attend_backward(&s, x, x, w.get(SphereK), w.get(SphereV), &d_attn)?;
    grads[SphereQ.index()] = sq;
    grads[SphereK.index()] = sk;
    grads[SphereV.index()] = sv;

    grads[ExpZero.index()] = e_o.t_matmul(&d_out)?;
    let d_eo = d_out.matmul_t(w.get(ExpZero))?;
    grads[ExpO.index()] = e.out.t_matmul(&d_eo)?;
    let d_attn = d_eo.matmul_t(w.get(ExpO))?;
    let ([eq, ek, ev], d_h) = project_attend_backward(&e, x, &h, w.get(ExpK), w.get(ExpV), &d_attn)?;
    grads[ExpQ.index()] = eq;
    grads[ExpK.index()] = ek;
    grads[ExpV.index()] = ev;
    let d_c = d_h.slice_rows(config.tokens(), 2 * config.tokens());
    grads[CondProj.index()] = pooled.t_matmul(&d_c)?;

    Ok((loss, grads))
}

/// Finite-difference stencil used by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    Central2,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`
    Central4,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub stencil: Stencil,
    /// Denominator floor of the relative error. Entries whose gradient is
    /// below it are judged by absolute error, since finite differences of
    /// an O(10) loss carry ~1e-10 of rounding noise.
    pub floor: f64,
    /// Check at most this many entries per parameter array (evenly strided).
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-4, stencil: Stencil::Central4, floor: 1e-4, max_entries_per_param: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(ParamId, usize)>,
    pub entries_checked: usize,
    /// Every analytic gradient of a frozen parameter is exactly zero.
    pub frozen_grads_zero: bool,
}

fn loss_only(
    x: &Matrix<f64>,
    pooled: &Matrix<f64>,
    bias: &[f64],
    w: &BlockWeights<f64>,
    config: &BlockConfig,
) -> Result<f64> {
    let c = pooled.matmul(w.get(ParamId::CondProj))?;
    let out = global_branch(x, w, config)?
        .add(&exploration_branch(x, &c, w, config)?)?
        .add(&sphere_branch(x, bias, w, config)?)?;
    Ok(out.sum_squares())
}

/// Compares analytic gradients of every trainable parameter against central
/// finite differences of the same loss.
/// Relative error per entry: `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    weights: &BlockWeights<f64>,
    config: &BlockConfig,
    x: &Matrix<f64>,
    pooled: &Matrix<f64>,
    mask: &SphereMask,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let eps = options.epsilon;
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(domain(format!("epsilon {eps} outside [1e-7, 1e-4]")));
    }
    let (_, grads) = loss_and_grads(x, pooled, mask, weights, config)?;
    let bias = mask_to_bias(mask, config.bias_mode);
    let frozen_grads_zero = ParamId::ALL
        .iter()
        .filter(|id| !weights.is_trainable(**id))
        .all(|id| grads[id.index()].is_zero());
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries_checked: 0, frozen_grads_zero };
    let mut probe = weights.clone();
    let mut loss_at = |id: ParamId, idx: usize, value: f64| -> Result<f64> {
        probe.get_mut(id).data_mut()[idx] = value;
        loss_only(x, pooled, &bias, &probe, config)
    };
    for id in ParamId::ALL {
        if !weights.is_trainable(id) {
            continue;
        }
        let len = grads[id.index()].data().len();
        let step = match options.max_entries_per_param {
            Some(m) if m > 0 && m < len => len.div_ceil(m),
            _ => 1,
        };
        for idx in (0..len).step_by(step) {
            let orig = weights.get(id).data()[idx];
            let numeric = match options.stencil {
                Stencil::Central2 => {
                    (loss_at(id, idx, orig + eps)? - loss_at(id, idx, orig - eps)?) / (2.0 * eps)
                }
                Stencil::Central4 => {
                    let (p1, m1) = (loss_at(id, idx, orig + eps)?, loss_at(id, idx, orig - eps)?);
                    let (p2, m2) = (loss_at(id, idx, orig + 2.0 * eps)?, loss_at(id, idx, orig - 2.0 * eps)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps)
                }
            };
            loss_at(id, idx, orig)?;
            let analytic = grads[id.index()].data()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(options.floor);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((id, idx));
            }
        }
    }
    Ok(report)
}
