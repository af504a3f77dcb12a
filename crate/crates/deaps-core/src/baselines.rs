//! Baseline self-supervised methods sharing the same encoder.
//!
//! Both baselines consume the anchor pair (x1, x_t) of the quadruplet
//! stream. The non-contrastive baseline mirrors the student/teacher
//! similarity branch alone; the contrastive baseline trains a single
//! network with a temperature-scaled cross-entropy over in-batch
//! negatives.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::model::encoder::{Encoder, EncoderConfig};
use crate::model::heads::MlpHead;
use crate::model::layers::Init;
use crate::objectives::cosine_loss;

/// Encoder with a single projection head, plus a prediction head when the
/// method trains a student against a weight-averaged teacher.
pub struct BaselineModel {
    pub encoder: Encoder,
    pub proj: MlpHead,
    pub pred: Option<MlpHead>,
}

impl BaselineModel {
    pub fn with_predictor(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        let mut model = Self::plain(init, cfg)?;
        model.pred = Some(MlpHead::new(
            init,
            cfg.head_out,
            cfg.head_hidden,
            cfg.head_out,
        )?);
        Ok(model)
    }

    pub fn plain(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        Ok(BaselineModel {
            encoder: Encoder::new(init, cfg)?,
            proj: MlpHead::new(init, cfg.model_dim, cfg.head_hidden, cfg.head_out)?,
            pred: None,
        })
    }

    pub fn vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.encoder.collect_vars("encoder", &mut out);
        self.proj.collect_vars("proj", &mut out);
        if let Some(p) = &self.pred {
            p.collect_vars("pred", &mut out);
        }
        out
    }

    pub fn buffers(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.proj.collect_buffers("proj", &mut out);
        if let Some(p) = &self.pred {
            p.collect_buffers("pred", &mut out);
        }
        out
    }

    pub fn copy_weights_from(&self, source: &BaselineModel) -> Result<()> {
        let mut from: BTreeMap<String, Var> = BTreeMap::new();
        for (name, var) in source.vars().into_iter().chain(source.buffers()) {
            from.insert(name, var);
        }
        for (name, var) in self.vars().into_iter().chain(self.buffers()) {
            if let Some(src) = from.get(&name) {
                var.set(&src.as_tensor().detach())?;
            }
        }
        Ok(())
    }

    pub fn ema_pairs(student: &BaselineModel, teacher: &BaselineModel) -> Vec<(Var, Var)> {
        let teacher_map: BTreeMap<String, Var> = teacher.vars().into_iter().collect();
        student
            .vars()
            .into_iter()
            .filter_map(|(name, s)| teacher_map.get(&name).map(|t| (s, t.clone())))
            .collect()
    }
}

/// Symmetric student/teacher similarity loss over the anchor pair:
/// student predictions chase the teacher's projection of the other crop.
pub fn byol_loss(
    p1: &Tensor,
    pt: &Tensor,
    teacher_z1: &Tensor,
    teacher_zt: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    Ok(((cosine_loss(p1, teacher_zt, eps)? + cosine_loss(pt, teacher_z1, eps)?)? * 0.5)?)
}

/// Temperature-scaled cross-entropy over in-batch negatives. Rows k and
/// k+B of the normalized concatenation are positives; every other row is
/// a negative. Self-similarities are masked out of the denominator.
pub fn nt_xent_loss(za: &Tensor, zb: &Tensor, temperature: f64, eps: f64) -> Result<Tensor> {
    let (b, _d) = za.dims2()?;
    if zb.dims() != za.dims() {
        return Err(Error::shape("contrastive views must share a shape"));
    }
    if b < 2 {
        return Err(Error::shape(
            "contrastive loss needs at least two items for negatives",
        ));
    }
    if temperature <= 0.0 {
        return Err(Error::config("temperature must be positive"));
    }
    let z = Tensor::cat(&[za, zb], 0)?;
    let norm = z.sqr()?.sum_keepdim(1)?.sqrt()?;
    let floor = (norm.ones_like()? * eps)?;
    let u = z.broadcast_div(&norm.maximum(&floor)?)?;
    let sim = (u.matmul(&u.t()?)? / temperature)?;

    let n = 2 * b;
    let mut diag = vec![0.0f64; n * n];
    for k in 0..n {
        diag[k * (n + 1)] = 1.0;
    }
    let diag = Tensor::from_vec(diag, (n, n), za.device())?.to_dtype(za.dtype())?;
    let sim = (sim - (diag * 1e9)?)?;

    let max = sim.max_keepdim(1)?.detach();
    let lse = (sim.broadcast_sub(&max)?.exp()?.sum_keepdim(1)?.log()? + max)?;

    let pos_idx: Vec<u32> = (0..n).map(|k| ((k + b) % n) as u32).collect();
    let idx = Tensor::from_vec(pos_idx, (n, 1), za.device())?;
    let pos = sim.gather(&idx, 1)?;

    Ok((lse - pos)?.mean_all()?)
}
