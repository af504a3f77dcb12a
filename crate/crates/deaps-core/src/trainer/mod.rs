//! Training loop: batch assembly, forward passes, optimization, the
//! teacher weight average, loss logging, and checkpoint save/resume.

pub mod adam;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::baselines::{byol_loss, nt_xent_loss, BaselineModel};
use crate::error::{Error, Result};
use crate::io::PipelineStamp;
use crate::model::encoder::{Encoder, EncoderConfig};
use crate::model::heads::DeapsModel;
use crate::model::layers::Init;
use crate::objectives::{self, ForwardBundle, LossBreakdown, LossConfig};
use crate::pipeline;
use crate::sampling::{Corpus, QuadBatch, QuadSampler, RngState, SamplerConfig};
use adam::{Adam, AdamConfig};

/// Which objective the run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Deaps,
    Byol,
    Contrastive,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Deaps => "deaps",
            Method::Byol => "byol",
            Method::Contrastive => "contrastive",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deaps" => Ok(Method::Deaps),
            "byol" => Ok(Method::Byol),
            "contrastive" => Ok(Method::Contrastive),
            other => Err(Error::config(format!(
                "unknown method {other}; expected deaps, byol, or contrastive"
            ))),
        }
    }
}

/// Floating point width the model runs at. f32 is the training default;
/// f64 exists for numerical verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn to_dtype(self) -> DType {
        match self {
            Dtype::F32 => DType::F32,
            Dtype::F64 => DType::F64,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

impl FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::config(format!(
                "unknown dtype {other}; expected f32 or f64"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub iterations: usize,
    pub batch_size: usize,
    /// Maximum span of the sampled triplet, in seconds.
    pub window_size_s: u32,
    pub min_offset_s: u32,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Teacher weight-average coefficient.
    pub tau: f64,
    /// Covariance penalty weight.
    pub alpha: f64,
    /// Features kept by the change mask.
    pub n_selected: usize,
    /// Contrastive softmax temperature.
    pub temperature: f64,
    pub checkpoint_every: usize,
    pub dtype: Dtype,
    pub encoder: EncoderConfig,
}

impl TrainConfig {
    /// Full-scale settings.
    pub fn full(method: Method) -> Self {
        TrainConfig {
            method,
            iterations: 30_000,
            batch_size: 256,
            window_size_s: 120,
            min_offset_s: 10,
            seed: 0,
            lr: 3e-4,
            weight_decay: 1.5e-6,
            tau: 0.995,
            alpha: 0.1,
            n_selected: 32,
            temperature: 0.1,
            checkpoint_every: 1000,
            dtype: Dtype::F32,
            encoder: EncoderConfig::default(),
        }
    }

    /// Reduced settings that finish in minutes on one core.
    pub fn smoke(method: Method) -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 32,
            checkpoint_every: 500,
            encoder: EncoderConfig {
                input_len: 1000,
                patch_len: 100,
                n_blocks: 2,
                n_heads: 4,
                model_dim: 48,
                head_hidden: 192,
                head_out: 96,
            },
            ..Self::full(method)
        }
    }

    /// Crop duration implied by the encoder input length at the pipeline
    /// rate.
    pub fn crop_seconds(&self) -> u32 {
        (self.encoder.input_len as f64 / pipeline::TARGET_FS) as u32
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            window_size_s: self.window_size_s,
            crop_s: self.crop_seconds(),
            min_offset_s: self.min_offset_s,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            eps: 1e-8,
            n_selected: self.n_selected,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size must be at least 2 so batch statistics exist",
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("tau must lie in [0, 1]"));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be nonnegative"));
        }
        if self.n_selected == 0 {
            return Err(Error::config("n_selected must be positive"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("lr must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be positive"));
        }
        let fs = pipeline::TARGET_FS as usize;
        if self.encoder.input_len % fs != 0 {
            return Err(Error::config(format!(
                "encoder input_len {} is not a whole number of seconds at {} Hz",
                self.encoder.input_len,
                pipeline::TARGET_FS
            )));
        }
        self.sampler_config().validate()
    }
}

/// Two configurations describe the same run when everything but the
/// iteration budget matches; resuming may only extend a run.
pub fn same_run(a: &TrainConfig, b: &TrainConfig) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    a.iterations = 0;
    b.iterations = 0;
    a == b
}

/// The networks a method trains.
pub enum Net {
    Deaps {
        student: DeapsModel,
        teacher: DeapsModel,
    },
    Byol {
        student: BaselineModel,
        teacher: BaselineModel,
    },
    Contrastive {
        student: BaselineModel,
    },
}

impl Net {
    pub fn method(&self) -> Method {
        match self {
            Net::Deaps { .. } => Method::Deaps,
            Net::Byol { .. } => Method::Byol,
            Net::Contrastive { .. } => Method::Contrastive,
        }
    }

    pub fn student_vars(&self) -> Vec<(String, Var)> {
        match self {
            Net::Deaps { student, .. } => student.vars(),
            Net::Byol { student, .. } => student.vars(),
            Net::Contrastive { student } => student.vars(),
        }
    }

    pub fn student_buffers(&self) -> Vec<(String, Var)> {
        match self {
            Net::Deaps { student, .. } => student.buffers(),
            Net::Byol { student, .. } => student.buffers(),
            Net::Contrastive { student } => student.buffers(),
        }
    }

    pub fn teacher_tensors(&self) -> Option<Vec<(String, Var)>> {
        match self {
            Net::Deaps { teacher, .. } => {
                let mut out = teacher.vars();
                out.extend(teacher.buffers());
                Some(out)
            }
            Net::Byol { teacher, .. } => {
                let mut out = teacher.vars();
                out.extend(teacher.buffers());
                Some(out)
            }
            Net::Contrastive { .. } => None,
        }
    }

    pub fn student_encoder(&self) -> &Encoder {
        match self {
            Net::Deaps { student, .. } => &student.encoder,
            Net::Byol { student, .. } => &student.encoder,
            Net::Contrastive { student } => &student.encoder,
        }
    }

    /// Moves the teacher toward the student: xi <- tau*xi + (1-tau)*theta.
    pub fn ema_step(&self, tau: f64) -> Result<()> {
        let pairs = match self {
            Net::Deaps { student, teacher } => DeapsModel::ema_pairs(student, teacher),
            Net::Byol { student, teacher } => BaselineModel::ema_pairs(student, teacher),
            Net::Contrastive { .. } => return Ok(()),
        };
        for (s, t) in pairs {
            let new = ((t.as_tensor() * tau)? + (s.as_tensor().detach() * (1.0 - tau))?)?;
            t.set(&new.detach())?;
        }
        Ok(())
    }
}

/// Builds the networks for a configuration. The teacher starts as an
/// exact copy of the student's shared modules.
pub fn build_net(cfg: &TrainConfig) -> Result<Net> {
    let device = Device::Cpu;
    let dtype = cfg.dtype.to_dtype();
    let mut init = Init::new(cfg.seed, device.clone(), dtype);
    // The teacher's own draws are overwritten by the copy; a distinct
    // seed just keeps the two initializers from aliasing by accident.
    let mut teacher_init = Init::new(cfg.seed.wrapping_add(0x9e37_79b9), device, dtype);
    Ok(match cfg.method {
        Method::Deaps => {
            let student = DeapsModel::student(&mut init, &cfg.encoder)?;
            let teacher = DeapsModel::teacher(&mut teacher_init, &cfg.encoder)?;
            teacher.copy_weights_from(&student)?;
            Net::Deaps { student, teacher }
        }
        Method::Byol => {
            let student = BaselineModel::with_predictor(&mut init, &cfg.encoder)?;
            let teacher = BaselineModel::plain(&mut teacher_init, &cfg.encoder)?;
            teacher.copy_weights_from(&student)?;
            Net::Byol { student, teacher }
        }
        Method::Contrastive => Net::Contrastive {
            student: BaselineModel::plain(&mut init, &cfg.encoder)?,
        },
    })
}

/// Loss values plus a collapse indicator: the mean per-feature standard
/// deviation of the student representations in the step's batch.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: LossBreakdown,
    pub feature_std: f64,
}

pub struct TrainState {
    pub cfg: TrainConfig,
    pub net: Net,
    pub opt: Adam,
    pub sampler: QuadSampler,
    /// Completed iterations.
    pub iteration: usize,
    pub device: Device,
    pub dtype: DType,
    loss_cfg: LossConfig,
    last_feature_std: f64,
}

impl TrainState {
    pub fn new(cfg: TrainConfig, corpus: &Corpus) -> Result<Self> {
        cfg.validate()?;
        let net = build_net(&cfg)?;
        let opt = Adam::new(AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        });
        let sampler = QuadSampler::new(cfg.sampler_config(), corpus)?;
        let loss_cfg = cfg.loss_config();
        Ok(TrainState {
            dtype: cfg.dtype.to_dtype(),
            device: Device::Cpu,
            net,
            opt,
            sampler,
            iteration: 0,
            loss_cfg,
            last_feature_std: 0.0,
            cfg,
        })
    }

    /// One optimization step: sample, forward, backpropagate, update the
    /// student, then move the teacher.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<StepStats> {
        let batch = self.sampler.next_batch(corpus)?;
        let (loss, breakdown, h) = match &self.net {
            Net::Deaps { student, teacher } => {
                let (bundle, h) =
                    deaps_forward(student, teacher, &batch, &self.device, self.dtype)?;
                let mask = objectives::make_mask(&bundle, &self.loss_cfg)?;
                let (loss, bd) = objectives::total_loss(&bundle, &mask, &self.loss_cfg)?;
                (loss, bd, h)
            }
            Net::Byol { student, teacher } => {
                let b = batch.len();
                let x = pair_input(&batch, &self.device, self.dtype)?;
                let h = student.encoder.forward(&x)?;
                let z = student.proj.forward(&h, true)?;
                let p = student
                    .pred
                    .as_ref()
                    .expect("student carries a predictor")
                    .forward(&z, true)?;
                let th = teacher.encoder.forward(&x)?;
                let tz = teacher.proj.forward(&th, true)?.detach();
                let loss = byol_loss(
                    &p.narrow(0, 0, b)?,
                    &p.narrow(0, b, b)?,
                    &tz.narrow(0, 0, b)?,
                    &tz.narrow(0, b, b)?,
                    self.loss_cfg.eps,
                )?;
                let v = scalar(&loss)?;
                let bd = LossBreakdown {
                    l_sim: v,
                    l_gra: 0.0,
                    l_cov: 0.0,
                    total: v,
                };
                (loss, bd, h.detach())
            }
            Net::Contrastive { student } => {
                let b = batch.len();
                let x = pair_input(&batch, &self.device, self.dtype)?;
                let h = student.encoder.forward(&x)?;
                let z = student.proj.forward(&h, true)?;
                let loss = nt_xent_loss(
                    &z.narrow(0, 0, b)?,
                    &z.narrow(0, b, b)?,
                    self.cfg.temperature,
                    self.loss_cfg.eps,
                )?;
                let v = scalar(&loss)?;
                let bd = LossBreakdown {
                    l_sim: v,
                    l_gra: 0.0,
                    l_cov: 0.0,
                    total: v,
                };
                (loss, bd, h.detach())
            }
        };

        if !breakdown.total.is_finite() {
            return Err(Error::data(format!(
                "non-finite loss at iteration {}: sim {} gra {} cov {}",
                self.iteration + 1,
                breakdown.l_sim,
                breakdown.l_gra,
                breakdown.l_cov
            )));
        }

        let grads = loss.backward()?;
        let params = self.net.student_vars();
        self.opt.step(&params, &grads)?;
        self.net.ema_step(self.cfg.tau)?;
        self.iteration += 1;

        let feature_std = representation_feature_std(&h)?;
        self.last_feature_std = feature_std;
        Ok(StepStats {
            loss: breakdown,
            feature_std,
        })
    }
}

/// Mean over features of the per-feature standard deviation across the
/// batch. Values collapsing toward zero mean the representations are
/// converging to a constant.
pub fn representation_feature_std(h: &Tensor) -> Result<f64> {
    let mean = h.mean_keepdim(0)?;
    let var = h.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?;
    scalar(&var.sqrt()?.mean_all()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_vec0::<f64>()?)
}

fn batch_tensor(flat: Vec<f32>, rows: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let cols = flat.len() / rows;
    Ok(Tensor::from_vec(flat, (rows, cols), device)?.to_dtype(dtype)?)
}

/// Anchor pair input [2B, L] in the order (x1 rows, x_t rows).
fn pair_input(batch: &QuadBatch, device: &Device, dtype: DType) -> Result<Tensor> {
    let b = batch.len();
    let x1 = batch_tensor(batch.flat_x1(), b, device, dtype)?;
    let xt = batch_tensor(batch.flat_x_t(), b, device, dtype)?;
    Ok(Tensor::cat(&[&x1, &xt], 0)?)
}

/// Runs student and teacher over the full quadruplet and splits the head
/// outputs back into per-stream tensors. Heads see each branch as one
/// batch so their normalization statistics cover all streams at once.
/// Returns the bundle and the detached student representations.
fn deaps_forward(
    student: &DeapsModel,
    teacher: &DeapsModel,
    batch: &QuadBatch,
    device: &Device,
    dtype: DType,
) -> Result<(ForwardBundle, Tensor)> {
    let b = batch.len();
    let x1 = batch_tensor(batch.flat_x1(), b, device, dtype)?;
    let xa = batch_tensor(batch.flat_x_tmi(), b, device, dtype)?;
    let xt = batch_tensor(batch.flat_x_t(), b, device, dtype)?;
    let xb = batch_tensor(batch.flat_x_tpj(), b, device, dtype)?;
    let x_all = Tensor::cat(&[&x1, &xa, &xt, &xb], 0)?;

    let branch =
        |model: &DeapsModel, train: bool| -> Result<(Tensor, Tensor, Tensor)> {
            let h = model.encoder.forward(&x_all)?;
            let h1 = h.narrow(0, 0, b)?;
            let ha = h.narrow(0, b, b)?;
            let ht = h.narrow(0, 2 * b, b)?;
            let hb = h.narrow(0, 3 * b, b)?;
            let zs = model
                .proj_static
                .forward(&Tensor::cat(&[&h1, &ht], 0)?, train)?;
            let zd = model
                .proj_dynamic
                .forward(&Tensor::cat(&[&ha, &ht, &hb], 0)?, train)?;
            Ok((h, zs, zd))
        };

    let (h, zs, zd) = branch(student, true)?;
    let ps = student
        .pred_static
        .as_ref()
        .expect("student carries predictors")
        .forward(&zs, true)?;
    let pd = student
        .pred_dynamic
        .as_ref()
        .expect("student carries predictors")
        .forward(&zd, true)?;

    let (_th, tzs_raw, tzd_raw) = branch(teacher, true)?;
    let tzs = tzs_raw.detach();
    let tzd = tzd_raw.detach();

    let offsets = |vals: Vec<f64>| -> Result<Tensor> {
        Ok(Tensor::from_vec(vals, (b, 1), device)?.to_dtype(dtype)?)
    };

    let bundle = ForwardBundle {
        s_static_1: zs.narrow(0, 0, b)?,
        s_static_t: zs.narrow(0, b, b)?,
        s_dyn_a: zd.narrow(0, 0, b)?,
        s_dyn_t: zd.narrow(0, b, b)?,
        s_dyn_b: zd.narrow(0, 2 * b, b)?,
        p_static_1: ps.narrow(0, 0, b)?,
        p_static_t: ps.narrow(0, b, b)?,
        p_dyn_a: pd.narrow(0, 0, b)?,
        p_dyn_t: pd.narrow(0, b, b)?,
        p_dyn_b: pd.narrow(0, 2 * b, b)?,
        t_static_1: tzs.narrow(0, 0, b)?,
        t_static_t: tzs.narrow(0, b, b)?,
        t_dyn_a: tzd.narrow(0, 0, b)?,
        t_dyn_t: tzd.narrow(0, b, b)?,
        t_dyn_b: tzd.narrow(0, 2 * b, b)?,
        offsets_i: offsets(batch.offsets_i())?,
        offsets_j: offsets(batch.offsets_j())?,
    };
    Ok((bundle, h.detach()))
}

/// Everything a checkpoint records besides the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub iteration: usize,
    pub method: Method,
    pub dtype: Dtype,
    pub train_config: TrainConfig,
    pub sampler_rng: RngState,
    pub opt_t: usize,
    pub pipeline: PipelineStamp,
    pub feature_std: f64,
}

/// Writes `ckpt_NNNNNN.safetensors` and its `.json` sidecar; returns the
/// sidecar path.
pub fn save_checkpoint(state: &TrainState, out_dir: &Path) -> Result<PathBuf> {
    let base = format!("ckpt_{:06}", state.iteration);
    let mut tensors: std::collections::HashMap<String, Tensor> = Default::default();
    for (name, var) in state
        .net
        .student_vars()
        .into_iter()
        .chain(state.net.student_buffers())
    {
        tensors.insert(format!("student.{name}"), var.as_tensor().detach());
    }
    if let Some(teacher) = state.net.teacher_tensors() {
        for (name, var) in teacher {
            tensors.insert(format!("teacher.{name}"), var.as_tensor().detach());
        }
    }
    for (name, t) in state.opt.state_tensors() {
        tensors.insert(format!("opt.{name}"), t);
    }
    let st_path = out_dir.join(format!("{base}.safetensors"));
    candle_core::safetensors::save(&tensors, &st_path)?;

    let meta = CheckpointMeta {
        format_version: 1,
        iteration: state.iteration,
        method: state.cfg.method,
        dtype: state.cfg.dtype,
        train_config: state.cfg.clone(),
        sampler_rng: state.sampler.rng_state(),
        opt_t: state.opt.t,
        pipeline: pipeline::stamp(),
        feature_std: state.last_feature_std,
    };
    let json_path = out_dir.join(format!("{base}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

/// A checkpoint pulled back into memory.
pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub net: Net,
    pub opt_state: BTreeMap<String, Tensor>,
}

/// Reads a checkpoint from its `.json` sidecar path.
pub fn load_checkpoint(json_path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(json_path).map_err(|e| Error::io(json_path, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes)?;
    if meta.format_version != 1 {
        return Err(Error::data(format!(
            "unsupported checkpoint format version {}",
            meta.format_version
        )));
    }
    meta.train_config.validate()?;

    let st_path = json_path.with_extension("safetensors");
    let tensors = candle_core::safetensors::load(&st_path, &Device::Cpu)?;

    let net = build_net(&meta.train_config)?;
    let restore = |prefix: &str, vars: Vec<(String, Var)>| -> Result<()> {
        for (name, var) in vars {
            let key = format!("{prefix}.{name}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::data(format!("checkpoint is missing tensor {key}")))?;
            var.set(t)?;
        }
        Ok(())
    };
    restore(
        "student",
        net.student_vars()
            .into_iter()
            .chain(net.student_buffers())
            .collect(),
    )?;
    if let Some(teacher) = net.teacher_tensors() {
        restore("teacher", teacher)?;
    }

    let mut opt_state = BTreeMap::new();
    for (name, t) in &tensors {
        if let Some(stripped) = name.strip_prefix("opt.") {
            opt_state.insert(stripped.to_string(), t.clone());
        }
    }
    Ok(LoadedCheckpoint {
        meta,
        net,
        opt_state,
    })
}

/// Newest checkpoint sidecar in a directory, if any.
pub fn find_latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(None),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(digits) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".json"))
        else {
            continue;
        };
        let Ok(iter) = digits.parse::<usize>() else {
            continue;
        };
        if best.as_ref().map(|(i, _)| iter > *i).unwrap_or(true) {
            best = Some((iter, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

impl TrainState {
    /// Rebuilds a run from a checkpoint so training continues the exact
    /// sequence: network weights, optimizer moments, and the sampler's
    /// generator position all restore bitwise.
    pub fn from_checkpoint(loaded: LoadedCheckpoint, corpus: &Corpus) -> Result<Self> {
        let cfg = loaded.meta.train_config.clone();
        cfg.validate()?;
        let mut opt = Adam::new(AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        });
        opt.restore(loaded.meta.opt_t, &loaded.opt_state)?;
        let mut sampler = QuadSampler::new(cfg.sampler_config(), corpus)?;
        sampler.restore_rng(&loaded.meta.sampler_rng)?;
        Ok(TrainState {
            dtype: cfg.dtype.to_dtype(),
            device: Device::Cpu,
            net: loaded.net,
            opt,
            sampler,
            iteration: loaded.meta.iteration,
            loss_cfg: cfg.loss_config(),
            last_feature_std: loaded.meta.feature_std,
            cfg,
        })
    }
}

const LOG_HEADER: &str = "iter,l_sim,l_gra,l_cov,total";

/// Rewrites the loss log keeping only rows at or before `iteration`.
fn truncate_loss_log(path: &Path, iteration: usize) -> Result<()> {
    if !path.exists() {
        fs::write(path, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(path, e))?;
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::from(LOG_HEADER);
    kept.push('\n');
    for line in text.lines().skip(1) {
        let Some(first) = line.split(',').next() else {
            continue;
        };
        if let Ok(iter) = first.parse::<usize>() {
            if iter <= iteration && !line.is_empty() {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Trains to `cfg.iterations`, resuming from the newest checkpoint in
/// `out_dir` when one exists. Writes one loss-log row per iteration and a
/// checkpoint every `checkpoint_every` iterations plus one at the end.
/// The callback sees (iteration, stats) after every step.
pub fn fit<F>(
    cfg: &TrainConfig,
    corpus: &Corpus,
    out_dir: &Path,
    mut on_step: F,
) -> Result<TrainState>
where
    F: FnMut(usize, &StepStats),
{
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("loss_log.csv");

    let mut state = match find_latest_checkpoint(out_dir)? {
        Some(json_path) => {
            let loaded = load_checkpoint(&json_path)?;
            if !same_run(&loaded.meta.train_config, cfg) {
                return Err(Error::config(format!(
                    "output directory {} holds a checkpoint from a different configuration",
                    out_dir.display()
                )));
            }
            let mut state = TrainState::from_checkpoint(loaded, corpus)?;
            state.cfg.iterations = cfg.iterations;
            truncate_loss_log(&log_path, state.iteration)?;
            state
        }
        None => {
            fs::write(&log_path, format!("{LOG_HEADER}\n"))
                .map_err(|e| Error::io(&log_path, e))?;
            TrainState::new(cfg.clone(), corpus)?
        }
    };

    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    while state.iteration < cfg.iterations {
        let stats = state.train_step(corpus)?;
        writeln!(
            log,
            "{},{},{},{},{}",
            state.iteration,
            stats.loss.l_sim,
            stats.loss.l_gra,
            stats.loss.l_cov,
            stats.loss.total
        )
        .map_err(|e| Error::io(&log_path, e))?;
        on_step(state.iteration, &stats);
        if state.iteration % cfg.checkpoint_every == 0 || state.iteration == cfg.iterations {
            save_checkpoint(&state, out_dir)?;
        }
    }
    if find_latest_checkpoint(out_dir)?.is_none() {
        save_checkpoint(&state, out_dir)?;
    }
    Ok(state)
}
