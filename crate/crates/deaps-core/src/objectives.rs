//! Training objectives: similarity, gradual interpolation, and covariance.
//!
//! The static branch pulls two same-subject crops together through a
//! symmetric cosine loss. The dynamic branch asks the projection at time t
//! to sit on the line between the projections at t-i and t+j, weighted by
//! distance, and only over the feature subset that changed most between
//! the endpoints. A covariance penalty on the student projections
//! decorrelates features so neither branch collapses.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the covariance penalty in the total.
    pub alpha: f64,
    /// Floor for cosine denominators.
    pub eps: f64,
    /// Features kept by the change mask in the dynamic branch.
    pub n_selected: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.1,
            eps: 1e-8,
            n_selected: 32,
        }
    }
}

/// Mean over rows of `1 - cos(a_r, b_r)`, with the denominator floored at
/// `eps` so zero vectors yield a loss of one instead of NaN.
pub fn cosine_loss(a: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "cosine loss over mismatched shapes {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let dot = (a * b)?.sum_keepdim(D::Minus1)?;
    let na = a.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let nb = b.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let denom_raw = (na * nb)?;
    let floor = (denom_raw.ones_like()? * eps)?;
    let cos = (dot / denom_raw.maximum(&floor)?)?;
    Ok((cos.neg()? + 1.0)?.mean_all()?)
}

/// Distance-weighted average of two endpoint projections: the point a
/// linear trajectory from `z_a` (at t-i) to `z_b` (at t+j) passes through
/// at time t. Small `i` pulls the result toward `z_a`.
pub fn par(z_a: &Tensor, z_b: &Tensor, i: &Tensor, j: &Tensor) -> Result<Tensor> {
    for (name, t) in [("i", i), ("j", j)] {
        let vals = t
            .flatten_all()?
            .to_dtype(candle_core::DType::F64)?
            .to_vec1::<f64>()?;
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::config(format!(
                "interpolation offset {name} must be strictly positive"
            )));
        }
    }
    let num = (z_a.broadcast_mul(j)? + z_b.broadcast_mul(i)?)?;
    let denom = (i + j)?;
    Ok(num.broadcast_div(&denom)?)
}

/// Per-row 0/1 mask selecting the `n` features whose endpoint predictions
/// differ most in absolute value; ties resolve to the lower index. The
/// result is a constant, so gradients never flow through the selection.
pub fn gradual_mask(pred_a: &Tensor, pred_b: &Tensor, n: usize) -> Result<Tensor> {
    let (b, d) = pred_a.dims2()?;
    if pred_b.dims() != pred_a.dims() {
        return Err(Error::shape("mask inputs must share a shape"));
    }
    let n = n.min(d);
    let diff = (pred_a - pred_b)?
        .abs()?
        .to_dtype(candle_core::DType::F64)?
        .to_vec2::<f64>()?;
    let mut mask = vec![0.0f64; b * d];
    for (row, diffs) in diff.iter().enumerate() {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&x, &y| diffs[y].total_cmp(&diffs[x]).then(x.cmp(&y)));
        for &feature in idx.iter().take(n) {
            mask[row * d + feature] = 1.0;
        }
    }
    Ok(Tensor::from_vec(mask, (b, d), pred_a.device())?.to_dtype(pred_a.dtype())?)
}

/// One directional interpolation term: cosine loss between the masked
/// middle vector and the masked weighted average of the endpoints.
pub fn gradual_term(
    mid: &Tensor,
    z_a: &Tensor,
    z_b: &Tensor,
    i: &Tensor,
    j: &Tensor,
    mask: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let target = par(z_a, z_b, i, j)?;
    cosine_loss(&(mid * mask)?, &(target * mask)?, eps)
}

/// Mean squared off-diagonal covariance per feature: `sum_{i!=j} C_ij^2 / d`
/// with `C = Xc^T Xc / (B - 1)` over mean-centered rows.
pub fn covariance_loss(z: &Tensor) -> Result<Tensor> {
    let (b, d) = z.dims2()?;
    if b < 2 {
        return Err(Error::shape("covariance needs at least two rows"));
    }
    let mean = z.mean_keepdim(0)?;
    let xc = z.broadcast_sub(&mean)?;
    let c = (xc.t()?.matmul(&xc)? / (b as f64 - 1.0))?;
    let sq = c.sqr()?;
    let mut eye = vec![0.0f64; d * d];
    for k in 0..d {
        eye[k * (d + 1)] = 1.0;
    }
    let eye = Tensor::from_vec(eye, (d, d), z.device())?.to_dtype(z.dtype())?;
    let off = (sq.sum_all()? - (sq * eye)?.sum_all()?)?;
    Ok((off / d as f64)?)
}

/// Everything one optimization step needs: student projections, student
/// predictions, and teacher projections for the anchor pair and the
/// triplet, plus the per-item offsets as [B, 1] columns. Teacher tensors
/// must already be detached.
pub struct ForwardBundle {
    pub s_static_1: Tensor,
    pub s_static_t: Tensor,
    pub s_dyn_a: Tensor,
    pub s_dyn_t: Tensor,
    pub s_dyn_b: Tensor,
    pub p_static_1: Tensor,
    pub p_static_t: Tensor,
    pub p_dyn_a: Tensor,
    pub p_dyn_t: Tensor,
    pub p_dyn_b: Tensor,
    pub t_static_1: Tensor,
    pub t_static_t: Tensor,
    pub t_dyn_a: Tensor,
    pub t_dyn_t: Tensor,
    pub t_dyn_b: Tensor,
    pub offsets_i: Tensor,
    pub offsets_j: Tensor,
}

/// Scalar views of one step's loss terms. `l_cov` is the raw penalty;
/// `total` already includes its weight.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossBreakdown {
    pub l_sim: f64,
    pub l_gra: f64,
    pub l_cov: f64,
    pub total: f64,
}

/// Change mask for the dynamic branch, from the student's endpoint
/// predictions.
pub fn make_mask(bundle: &ForwardBundle, cfg: &LossConfig) -> Result<Tensor> {
    gradual_mask(&bundle.p_dyn_a, &bundle.p_dyn_b, cfg.n_selected)
}

/// Combines the three objectives into the optimized scalar.
pub fn total_loss(
    bundle: &ForwardBundle,
    mask: &Tensor,
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let l_sim = ((cosine_loss(&bundle.p_static_1, &bundle.t_static_t, cfg.eps)?
        + cosine_loss(&bundle.p_static_t, &bundle.t_static_1, cfg.eps)?)?
        * 0.5)?;

    let student_endpoints = gradual_term(
        &bundle.t_dyn_t,
        &bundle.p_dyn_a,
        &bundle.p_dyn_b,
        &bundle.offsets_i,
        &bundle.offsets_j,
        mask,
        cfg.eps,
    )?;
    let teacher_endpoints = gradual_term(
        &bundle.p_dyn_t,
        &bundle.t_dyn_a,
        &bundle.t_dyn_b,
        &bundle.offsets_i,
        &bundle.offsets_j,
        mask,
        cfg.eps,
    )?;
    let l_gra = ((student_endpoints + teacher_endpoints)? * 0.5)?;

    let static_cat = Tensor::cat(&[&bundle.s_static_1, &bundle.s_static_t], 0)?;
    let dynamic_cat = Tensor::cat(&[&bundle.s_dyn_a, &bundle.s_dyn_t, &bundle.s_dyn_b], 0)?;
    let l_cov = (covariance_loss(&static_cat)? + covariance_loss(&dynamic_cat)?)?;

    let total = ((&l_sim + &l_gra)? + (&l_cov * cfg.alpha)?)?;
    let breakdown = LossBreakdown {
        l_sim: scalar(&l_sim)?,
        l_gra: scalar(&l_gra)?,
        l_cov: scalar(&l_cov)?,
        total: scalar(&total)?,
    };
    Ok((total, breakdown))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_vec0::<f64>()?)
}
