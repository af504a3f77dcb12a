//! Projection and prediction heads, and the student/teacher model pair.

use std::collections::BTreeMap;

use candle_core::Var;

use crate::error::Result;
use crate::model::encoder::{Encoder, EncoderConfig};
use crate::model::layers::{BatchNorm1d, Init, Linear};

/// Two-layer perceptron with batch normalization after the first map.
pub struct MlpHead {
    pub fc1: Linear,
    pub bn: BatchNorm1d,
    pub fc2: Linear,
}

impl MlpHead {
    pub fn new(init: &mut Init, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        Ok(MlpHead {
            fc1: Linear::new(init, in_dim, hidden)?,
            bn: BatchNorm1d::new(init, hidden)?,
            fc2: Linear::new(init, hidden, out_dim)?,
        })
    }

    pub fn forward(&self, x: &candle_core::Tensor, train: bool) -> Result<candle_core::Tensor> {
        let h = self.fc1.forward(x)?;
        let h = self.bn.forward(&h, train)?;
        let h = h.relu()?;
        self.fc2.forward(&h)
    }

    pub fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.fc1.collect_vars(&format!("{prefix}.fc1"), out);
        self.bn.collect_vars(&format!("{prefix}.bn"), out);
        self.fc2.collect_vars(&format!("{prefix}.fc2"), out);
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.bn.collect_buffers(&format!("{prefix}.bn"), out);
    }
}

/// Encoder plus its static and dynamic heads. The student carries
/// prediction heads on top of the projections; the teacher, being a
/// weight-averaged copy, has none.
pub struct DeapsModel {
    pub encoder: Encoder,
    pub proj_static: MlpHead,
    pub proj_dynamic: MlpHead,
    pub pred_static: Option<MlpHead>,
    pub pred_dynamic: Option<MlpHead>,
}

impl DeapsModel {
    pub fn student(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        let mut model = Self::teacher(init, cfg)?;
        model.pred_static = Some(MlpHead::new(
            init,
            cfg.head_out,
            cfg.head_hidden,
            cfg.head_out,
        )?);
        model.pred_dynamic = Some(MlpHead::new(
            init,
            cfg.head_out,
            cfg.head_hidden,
            cfg.head_out,
        )?);
        Ok(model)
    }

    pub fn teacher(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        Ok(DeapsModel {
            encoder: Encoder::new(init, cfg)?,
            proj_static: MlpHead::new(init, cfg.model_dim, cfg.head_hidden, cfg.head_out)?,
            proj_dynamic: MlpHead::new(init, cfg.model_dim, cfg.head_hidden, cfg.head_out)?,
            pred_static: None,
            pred_dynamic: None,
        })
    }

    pub fn vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.encoder.collect_vars("encoder", &mut out);
        self.proj_static.collect_vars("proj_static", &mut out);
        self.proj_dynamic.collect_vars("proj_dynamic", &mut out);
        if let Some(p) = &self.pred_static {
            p.collect_vars("pred_static", &mut out);
        }
        if let Some(p) = &self.pred_dynamic {
            p.collect_vars("pred_dynamic", &mut out);
        }
        out
    }

    pub fn buffers(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.proj_static.collect_buffers("proj_static", &mut out);
        self.proj_dynamic.collect_buffers("proj_dynamic", &mut out);
        if let Some(p) = &self.pred_static {
            p.collect_buffers("pred_static", &mut out);
        }
        if let Some(p) = &self.pred_dynamic {
            p.collect_buffers("pred_dynamic", &mut out);
        }
        out
    }

    /// Copies every tensor whose name exists in both models, so a fresh
    /// teacher can start as an exact clone of the student's shared parts.
    pub fn copy_weights_from(&self, source: &DeapsModel) -> Result<()> {
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

    /// (student, teacher) variable pairs for the weight average, matched
    /// by name over the modules both models own.
    pub fn ema_pairs(student: &DeapsModel, teacher: &DeapsModel) -> Vec<(Var, Var)> {
        let teacher_map: BTreeMap<String, Var> = teacher.vars().into_iter().collect();
        student
            .vars()
            .into_iter()
            .filter_map(|(name, s)| teacher_map.get(&name).map(|t| (s, t.clone())))
            .collect()
    }
}
