//! Patch transformer encoder for fixed-length signal crops.
//!
//! The input crop is cut into non-overlapping patches, each patch is
//! linearly embedded, learned position embeddings are added, and a class
//! token is prepended. Pre-norm transformer blocks mix the sequence and
//! the final class-token state, after a last normalization, is the
//! representation handed to the projection heads.

use candle_core::{Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{Init, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Samples per input crop.
    pub input_len: usize,
    /// Samples per patch; must divide `input_len`.
    pub patch_len: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    /// Hidden width of the projection and prediction heads.
    pub head_hidden: usize,
    /// Output width of the projection and prediction heads.
    pub head_out: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_len: 1000,
            patch_len: 20,
            n_blocks: 6,
            n_heads: 4,
            model_dim: 128,
            head_hidden: 512,
            head_out: 256,
        }
    }
}

impl EncoderConfig {
    pub fn n_patches(&self) -> usize {
        self.input_len / self.patch_len
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_len,
            self.patch_len,
            self.n_blocks,
            self.n_heads,
            self.model_dim,
            self.head_hidden,
            self.head_out,
        ];
        if positive.iter().any(|&v| v == 0) {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        if self.input_len % self.patch_len != 0 {
            return Err(Error::config(format!(
                "patch_len {} does not divide input_len {}",
                self.patch_len, self.input_len
            )));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "n_heads {} does not divide model_dim {}",
                self.n_heads, self.model_dim
            )));
        }
        Ok(())
    }
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    // Subtracting the detached row max leaves gradients unchanged and
    // keeps the exponentials in range.
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

struct Attention {
    qkv: Linear,
    proj: Linear,
    n_heads: usize,
    head_dim: usize,
}

impl Attention {
    fn new(init: &mut Init, dim: usize, n_heads: usize) -> Result<Self> {
        Ok(Attention {
            qkv: Linear::new(init, dim, 3 * dim)?,
            proj: Linear::new(init, dim, dim)?,
            n_heads,
            head_dim: dim / n_heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let qkv = self.qkv.forward(x)?;
        let heads = |z: Tensor| -> Result<Tensor> {
            Ok(z.contiguous()?
                .reshape((b, t, self.n_heads, self.head_dim))?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b * self.n_heads, t, self.head_dim))?)
        };
        let q = heads(qkv.narrow(2, 0, d)?)?;
        let k = heads(qkv.narrow(2, d, d)?)?;
        let v = heads(qkv.narrow(2, 2 * d, d)?)?;

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * scale)?;
        let attn = softmax_last(&scores)?;
        let mixed = attn
            .matmul(&v)?
            .reshape((b, self.n_heads, t, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, d))?;
        self.proj.forward(&mixed)
    }

    fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.qkv.collect_vars(&format!("{prefix}.qkv"), out);
        self.proj.collect_vars(&format!("{prefix}.proj"), out);
    }
}

struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(init: &mut Init, dim: usize, n_heads: usize) -> Result<Self> {
        Ok(Block {
            ln1: LayerNorm::new(init, dim)?,
            attn: Attention::new(init, dim, n_heads)?,
            ln2: LayerNorm::new(init, dim)?,
            fc1: Linear::new(init, dim, 4 * dim)?,
            fc2: Linear::new(init, 4 * dim, dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.attn.forward(&self.ln1.forward(x)?)?;
        let x = (x + a)?;
        let h = self.fc1.forward(&self.ln2.forward(&x)?)?.gelu_erf()?;
        let m = self.fc2.forward(&h)?;
        Ok((x + m)?)
    }

    fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.ln1.collect_vars(&format!("{prefix}.ln1"), out);
        self.attn.collect_vars(&format!("{prefix}.attn"), out);
        self.ln2.collect_vars(&format!("{prefix}.ln2"), out);
        self.fc1.collect_vars(&format!("{prefix}.fc1"), out);
        self.fc2.collect_vars(&format!("{prefix}.fc2"), out);
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    patch_embed: Linear,
    pos: Var,
    cls: Var,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
}

impl Encoder {
    pub fn new(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let patch_embed = Linear::new(init, cfg.patch_len, cfg.model_dim)?;
        let pos = init.normal(&[cfg.n_patches(), cfg.model_dim], 0.02)?;
        let cls = init.normal(&[1, 1, cfg.model_dim], 0.02)?;
        let blocks = (0..cfg.n_blocks)
            .map(|_| Block::new(init, cfg.model_dim, cfg.n_heads))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(init, cfg.model_dim)?;
        Ok(Encoder {
            cfg: cfg.clone(),
            patch_embed,
            pos,
            cls,
            blocks,
            ln_f,
        })
    }

    /// Maps [batch, input_len] crops to [batch, model_dim] representations.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n) = x.dims2()?;
        if n != self.cfg.input_len {
            return Err(Error::shape(format!(
                "encoder expects {} samples per crop, got {}",
                self.cfg.input_len, n
            )));
        }
        let p = x.reshape((b, self.cfg.n_patches(), self.cfg.patch_len))?;
        let e = self
            .patch_embed
            .forward(&p)?
            .broadcast_add(self.pos.as_tensor())?;
        let cls = self
            .cls
            .as_tensor()
            .expand((b, 1, self.cfg.model_dim))?
            .contiguous()?;
        let mut h = Tensor::cat(&[&cls, &e], 1)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let h = self.ln_f.forward(&h)?;
        Ok(h.narrow(1, 0, 1)?.squeeze(1)?)
    }

    pub fn collect_vars(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.patch_embed
            .collect_vars(&format!("{prefix}.patch_embed"), out);
        out.push((format!("{prefix}.pos"), self.pos.clone()));
        out.push((format!("{prefix}.cls"), self.cls.clone()));
        for (i, block) in self.blocks.iter().enumerate() {
            block.collect_vars(&format!("{prefix}.blocks.{i}"), out);
        }
        self.ln_f.collect_vars(&format!("{prefix}.ln_f"), out);
    }

    pub fn param_count(&self) -> usize {
        let mut vars = Vec::new();
        self.collect_vars("encoder", &mut vars);
        vars.iter().map(|(_, v)| v.elem_count()).sum()
    }
}
