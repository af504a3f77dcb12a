//! Finite-difference gradient checking helpers.
//!
//! Used by tests to confirm that backpropagated gradients match central
//! differences. Run models in f64 here; f32 rounding swamps the comparison
//! at useful step sizes.

use candle_core::{DType, Tensor, Var};

use crate::error::Result;

/// Gradient of a scalar loss with respect to `var`, flattened to f64.
/// Returns zeros when the graph does not touch the variable.
pub fn analytic_grad(loss: &Tensor, var: &Var) -> Result<Vec<f64>> {
    let grads = loss.backward()?;
    match grads.get(var) {
        Some(g) => Ok(g
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?),
        None => Ok(vec![0.0; var.elem_count()]),
    }
}

/// Central-difference gradient of `f` with respect to `var`. Each element
/// is perturbed by `±step` through `Var::set`, so `f` must re-run the
/// forward pass on every call. The variable is restored afterwards.
pub fn finite_diff_grad<F, E>(f: &mut F, var: &Var, step: f64) -> Result<Vec<f64>>
where
    F: FnMut() -> std::result::Result<Tensor, E>,
    E: Into<crate::Error>,
{
    let shape = var.shape().clone();
    let device = var.device().clone();
    let dtype = var.dtype();
    let base = var
        .as_tensor()
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?;

    let mut grad = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += step;
        var.set(
            &Tensor::from_vec(plus, base.len(), &device)?
                .to_dtype(dtype)?
                .reshape(shape.dims())?,
        )?;
        let f_plus = f()
            .map_err(Into::into)?
            .to_dtype(DType::F64)?
            .to_vec0::<f64>()?;

        let mut minus = base.clone();
        minus[k] -= step;
        var.set(
            &Tensor::from_vec(minus, base.len(), &device)?
                .to_dtype(dtype)?
                .reshape(shape.dims())?,
        )?;
        let f_minus = f()
            .map_err(Into::into)?
            .to_dtype(DType::F64)?
            .to_vec0::<f64>()?;

        grad.push((f_plus - f_minus) / (2.0 * step));
    }
    var.set(
        &Tensor::from_vec(base.clone(), base.len(), &device)?
            .to_dtype(dtype)?
            .reshape(shape.dims())?,
    )?;
    Ok(grad)
}

/// Worst-case elementwise relative error between two gradients, with the
/// denominator floored at one so near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}
