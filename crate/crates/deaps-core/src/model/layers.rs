//! Hand-rolled neural layers over autograd variables.
//!
//! Initialization draws every value in f64 from a seeded counter-based
//! generator and converts afterwards, so models built at different dtypes
//! start from identical weights and runs are reproducible from the seed.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Seeded weight initializer.
pub struct Init {
    rng: ChaCha12Rng,
    pub device: Device,
    pub dtype: DType,
}

impl Init {
    /// Weight draws use stream 0 of the seed; the batch sampler uses
    /// stream 1, so the two sequences never alias.
    pub fn new(seed: u64, device: Device, dtype: DType) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(0);
        Init { rng, device, dtype }
    }

    fn materialize(&self, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Uniform draw on [-bound, bound).
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.materialize(values, shape)
    }

    /// Zero-mean Gaussian draw.
    pub fn normal(&mut self, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                z * std
            })
            .collect();
        self.materialize(values, shape)
    }

    pub fn zeros(&self, shape: &[usize]) -> Result<Var> {
        self.materialize(vec![0.0; shape.iter().product()], shape)
    }

    pub fn ones(&self, shape: &[usize]) -> Result<Var> {
        self.materialize(vec![1.0; shape.iter().product()], shape)
    }
}

/// Affine map `x @ w + b` with weights stored as [in, out].
pub struct Linear {
    pub w: Var,
    pub b: Var,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Both weight and bias start uniform on [-1/sqrt(in), 1/sqrt(in)).
    pub fn new(init: &mut Init, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = init.uniform(&[in_dim, out_dim], bound)?;
        let b = init.uniform(&[out_dim], bound)?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    /// Applies the map over the last axis; any leading axes are flattened
    /// through the matmul and restored afterwards.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let flat = x.reshape((rows, self.in_dim))?;
        let y = flat.matmul(self.w.as_tensor())?.broadcast_add(self.b.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }

    pub fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Per-token normalization over the last axis.
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &Init, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: init.ones(&[dim])?,
            beta: init.zeros(&[dim])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = x.dims().len() - 1;
        let mean = x.mean_keepdim(last)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(last)?;
        let norm = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(norm
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }

    pub fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Batch normalization over [batch, features] inputs.
pub struct BatchNorm1d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(init: &Init, dim: usize) -> Result<Self> {
        Ok(BatchNorm1d {
            gamma: init.ones(&[dim])?,
            beta: init.zeros(&[dim])?,
            running_mean: init.zeros(&[dim])?,
            running_var: init.ones(&[dim])?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Training mode normalizes by batch statistics and folds them into
    /// the running buffers; evaluation mode normalizes by the buffers. A
    /// single-row training batch has no usable variance, so it falls back
    /// to the affine part alone.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let b = x.dim(0)?;
        if train {
            if b == 1 {
                return Ok(x
                    .broadcast_mul(self.gamma.as_tensor())?
                    .broadcast_add(self.beta.as_tensor())?);
            }
            let mean = x.mean_keepdim(0)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?;
            let norm = centered.broadcast_div(&(var.clone() + self.eps)?.sqrt()?)?;
            let out = norm
                .broadcast_mul(self.gamma.as_tensor())?
                .broadcast_add(self.beta.as_tensor())?;

            let m = self.momentum;
            let unbiased = (var.detach() * (b as f64 / (b as f64 - 1.0)))?;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().squeeze(0)? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (unbiased.squeeze(0)? * m)?)?;
            self.running_mean.set(&new_mean.detach())?;
            self.running_var.set(&new_var.detach())?;
            Ok(out)
        } else {
            let centered = x.broadcast_sub(self.running_mean.as_tensor())?;
            let denom = (self.running_var.as_tensor().clone() + self.eps)?.sqrt()?;
            Ok(centered
                .broadcast_div(&denom)?
                .broadcast_mul(self.gamma.as_tensor())?
                .broadcast_add(self.beta.as_tensor())?)
        }
    }

    pub fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init64(seed: u64) -> Init {
        Init::new(seed, Device::Cpu, DType::F64)
    }

    #[test]
    fn linear_matches_a_hand_computed_product() {
        let mut init = init64(1);
        let lin = Linear::new(&mut init, 2, 3).unwrap();
        let w = lin.w.as_tensor().to_vec2::<f64>().unwrap();
        let b = lin.b.as_tensor().to_vec1::<f64>().unwrap();
        let x = Tensor::from_vec(vec![1.0f64, -0.5], (1, 2), &Device::Cpu).unwrap();
        let y = lin.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        for o in 0..3 {
            let expect = 1.0 * w[0][o] - 0.5 * w[1][o] + b[o];
            assert!((y[0][o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_flattens_leading_axes() {
        let mut init = init64(2);
        let lin = Linear::new(&mut init, 4, 5).unwrap();
        let x3 = Tensor::from_vec((0..24).map(|v| v as f64).collect::<Vec<_>>(), (2, 3, 4), &Device::Cpu).unwrap();
        let y3 = lin.forward(&x3).unwrap();
        assert_eq!(y3.dims(), &[2, 3, 5]);
        let x2 = x3.reshape((6, 4)).unwrap();
        let y2 = lin.forward(&x2).unwrap();
        let a = y3.reshape((6, 5)).unwrap().to_vec2::<f64>().unwrap();
        let b = y2.to_vec2::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_init_stays_inside_the_fan_in_bound() {
        let mut init = init64(3);
        let lin = Linear::new(&mut init, 16, 8).unwrap();
        let bound = 1.0 / 4.0;
        for row in lin.w.as_tensor().to_vec2::<f64>().unwrap() {
            for v in row {
                assert!(v.abs() <= bound);
            }
        }
    }

    #[test]
    fn init_is_identical_across_dtypes() {
        let mut a = Init::new(9, Device::Cpu, DType::F32);
        let mut b = Init::new(9, Device::Cpu, DType::F64);
        let va = a.uniform(&[8], 0.5).unwrap();
        let vb = b.uniform(&[8], 0.5).unwrap();
        let fa = va.as_tensor().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap();
        let fb = vb.as_tensor().to_vec1::<f64>().unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn layernorm_standardizes_each_row() {
        let init = init64(4);
        let ln = LayerNorm::new(&init, 6).unwrap();
        let x = Tensor::from_vec(
            vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, -3.0, 0.0, 3.0, 6.0, 9.0, 12.0],
            (2, 6),
            &Device::Cpu,
        )
        .unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in y {
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_training_uses_batch_statistics() {
        let init = init64(5);
        let bn = BatchNorm1d::new(&init, 2).unwrap();
        let x = Tensor::from_vec(vec![1.0f64, 10.0, 3.0, 30.0, 5.0, 50.0, 7.0, 70.0], (4, 2), &Device::Cpu).unwrap();
        let y = bn.forward(&x, true).unwrap().to_vec2::<f64>().unwrap();
        for col in 0..2 {
            let vals: Vec<f64> = y.iter().map(|r| r[col]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // One update folds a tenth of the batch statistics into buffers
        // that started at zero mean and unit variance.
        let rm = bn.running_mean.as_tensor().to_vec1::<f64>().unwrap();
        let rv = bn.running_var.as_tensor().to_vec1::<f64>().unwrap();
        assert!((rm[0] - 0.1 * 4.0).abs() < 1e-10);
        let batch_var_unbiased = 20.0 / 3.0;
        assert!((rv[0] - (0.9 + 0.1 * batch_var_unbiased)).abs() < 1e-9);
    }

    #[test]
    fn batchnorm_eval_uses_the_running_buffers() {
        let init = init64(6);
        let bn = BatchNorm1d::new(&init, 2).unwrap();
        bn.running_mean
            .set(&Tensor::from_vec(vec![1.0f64, -1.0], 2, &Device::Cpu).unwrap())
            .unwrap();
        bn.running_var
            .set(&Tensor::from_vec(vec![4.0f64, 0.25], 2, &Device::Cpu).unwrap())
            .unwrap();
        let x = Tensor::from_vec(vec![3.0f64, 0.0], (1, 2), &Device::Cpu).unwrap();
        let y = bn.forward(&x, false).unwrap().to_vec2::<f64>().unwrap();
        assert!((y[0][0] - (3.0 - 1.0) / (4.0f64 + 1e-5).sqrt()).abs() < 1e-10);
        assert!((y[0][1] - (0.0 + 1.0) / (0.25f64 + 1e-5).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn batchnorm_single_row_training_batch_skips_normalization() {
        let init = init64(7);
        let bn = BatchNorm1d::new(&init, 3).unwrap();
        let x = Tensor::from_vec(vec![2.0f64, -4.0, 9.0], (1, 3), &Device::Cpu).unwrap();
        let y = bn.forward(&x, true).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(y[0], vec![2.0, -4.0, 9.0]);
        // Buffers stay untouched.
        assert_eq!(
            bn.running_mean.as_tensor().to_vec1::<f64>().unwrap(),
            vec![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn batchnorm_backpropagates_through_batch_statistics() {
        let init = init64(8);
        let bn = BatchNorm1d::new(&init, 2).unwrap();
        let x = Var::from_tensor(
            &Tensor::from_vec(vec![0.3f64, -1.0, 2.0, 0.7, -0.5, 1.5], (3, 2), &Device::Cpu)
                .unwrap(),
        )
        .unwrap();
        let mut f = || -> crate::error::Result<Tensor> {
            let y = bn.forward(x.as_tensor(), true)?;
            // A nonlinear readout makes the check sensitive to the full
            // normalization Jacobian, not just its diagonal.
            Ok(y.sqr()?.mul(&y)?.sum_all()?)
        };
        let loss = f().unwrap();
        let analytic = crate::gradcheck::analytic_grad(&loss, &x).unwrap();
        let numeric = crate::gradcheck::finite_diff_grad(&mut f, &x, 1e-6).unwrap();
        assert!(crate::gradcheck::max_relative_error(&analytic, &numeric) < 1e-7);
    }
}
