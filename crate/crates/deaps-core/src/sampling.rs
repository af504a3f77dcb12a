//! Quadruplet sampling for student/teacher training.
//!
//! Each draw picks one subject and yields four crops: an anchor `x1` from
//! one record, plus a time-ordered triplet `x_tmi`, `x_t`, `x_tpj` from a
//! different record of the same subject, spaced by integer-second offsets
//! `i` and `j`. The triplet spans at most `window_size_s` seconds, so that
//! parameter bounds how far apart the interpolation endpoints can sit.
//!
//! Sampling is driven by a counter-based generator on its own stream, so a
//! run is reproducible from the seed and can be checkpointed mid-sequence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, RecordMeta};
use crate::pipeline;

/// One preprocessed record held in memory.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub subject_id: u32,
    pub record_id: u32,
    pub samples: Vec<f32>,
    pub fs: f64,
    pub meta: RecordMeta,
}

impl LoadedRecord {
    /// Duration rounded down to whole seconds, the granularity all crop
    /// positions are drawn at.
    pub fn whole_seconds(&self) -> u32 {
        (self.samples.len() as f64 / self.fs).floor() as u32
    }
}

/// An in-memory corpus of preprocessed records grouped by subject.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<LoadedRecord>,
    pub by_subject: BTreeMap<u32, Vec<usize>>,
}

impl Corpus {
    /// Loads every record listed in a manifest. Each record must carry a
    /// sidecar whose pipeline stamp matches the current preprocessing
    /// configuration; raw or differently processed data is refused so a
    /// model never silently trains on the wrong scale.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let entries = io::read_manifest(manifest_path)?;
        if entries.is_empty() {
            return Err(Error::data("manifest lists no records"));
        }
        let expected = pipeline::stamp();
        let mut records = Vec::with_capacity(entries.len());
        for entry in &entries {
            let sig_path = io::resolve_record_path(manifest_path, &entry.path);
            let samples = io::read_signal(&sig_path)?;
            let meta = io::read_meta(&io::meta_path_for(&sig_path))?;
            match &meta.pipeline {
                Some(stamp) if *stamp == expected => {}
                Some(_) => {
                    return Err(Error::config(format!(
                        "record {} was preprocessed with different settings",
                        sig_path.display()
                    )))
                }
                None => {
                    return Err(Error::config(format!(
                        "record {} has no pipeline stamp; run preprocessing first",
                        sig_path.display()
                    )))
                }
            }
            if (meta.fs - expected.resample_hz).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "record {} sampled at {} Hz, expected {}",
                    sig_path.display(),
                    meta.fs,
                    expected.resample_hz
                )));
            }
            if meta.n_samples != samples.len() {
                return Err(Error::data(format!(
                    "record {}: sidecar says {} samples, file has {}",
                    sig_path.display(),
                    meta.n_samples,
                    samples.len()
                )));
            }
            records.push(LoadedRecord {
                subject_id: entry.subject_id,
                record_id: entry.record_id,
                samples,
                fs: meta.fs,
                meta,
            });
        }
        Ok(Self::from_records(records))
    }

    /// Builds a corpus from records already in memory.
    pub fn from_records(records: Vec<LoadedRecord>) -> Self {
        let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (idx, rec) in records.iter().enumerate() {
            by_subject.entry(rec.subject_id).or_default().push(idx);
        }
        Corpus {
            records,
            by_subject,
        }
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.by_subject.keys().copied().collect()
    }
}

/// Controls crop geometry and batch assembly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Maximum span of the triplet in seconds.
    pub window_size_s: u32,
    /// Length of each crop fed to the encoder, in seconds.
    pub crop_s: u32,
    /// Smallest allowed offset between triplet elements, in seconds.
    pub min_offset_s: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            window_size_s: 120,
            crop_s: pipeline::WINDOW_S as u32,
            min_offset_s: 10,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Largest value either offset can take.
    pub fn max_offset_s(&self) -> u32 {
        (self.window_size_s - self.crop_s) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_s == 0 || self.batch_size == 0 {
            return Err(Error::config("crop_s and batch_size must be positive"));
        }
        if self.min_offset_s == 0 {
            return Err(Error::config("min_offset_s must be positive"));
        }
        if self.max_offset_s() < self.min_offset_s {
            return Err(Error::config(format!(
                "window_size_s {} is too small: offsets need at least {} s on each side of the middle crop",
                self.window_size_s,
                2 * self.min_offset_s + self.crop_s
            )));
        }
        Ok(())
    }
}

/// One training example: an anchor crop from record A and an ordered
/// triplet from record B at times t-i, t, and t+j.
#[derive(Debug, Clone)]
pub struct QuadItem {
    pub x1: Vec<f32>,
    pub x_tmi: Vec<f32>,
    pub x_t: Vec<f32>,
    pub x_tpj: Vec<f32>,
    pub i_s: u32,
    pub j_s: u32,
    pub t_s: u32,
    pub subject_id: u32,
    pub record_a: u32,
    pub record_b: u32,
}

/// A batch of quadruplets plus helpers that flatten each stream into the
/// row-major buffer a tensor constructor wants.
#[derive(Debug, Clone)]
pub struct QuadBatch {
    pub items: Vec<QuadItem>,
}

impl QuadBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn flat_x1(&self) -> Vec<f32> {
        self.items.iter().flat_map(|q| q.x1.iter().copied()).collect()
    }

    pub fn flat_x_tmi(&self) -> Vec<f32> {
        self.items
            .iter()
            .flat_map(|q| q.x_tmi.iter().copied())
            .collect()
    }

    pub fn flat_x_t(&self) -> Vec<f32> {
        self.items.iter().flat_map(|q| q.x_t.iter().copied()).collect()
    }

    pub fn flat_x_tpj(&self) -> Vec<f32> {
        self.items
            .iter()
            .flat_map(|q| q.x_tpj.iter().copied())
            .collect()
    }

    pub fn offsets_i(&self) -> Vec<f64> {
        self.items.iter().map(|q| q.i_s as f64).collect()
    }

    pub fn offsets_j(&self) -> Vec<f64> {
        self.items.iter().map(|q| q.j_s as f64).collect()
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.items.iter().map(|q| q.subject_id).collect()
    }
}

/// Serializable generator state, captured into checkpoints so a resumed
/// run continues the exact draw sequence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    /// Word position within the stream, kept as a string because it is a
    /// 128-bit counter.
    pub word_pos: String,
    pub stream: u64,
}

/// Draws quadruplet batches from a corpus.
pub struct QuadSampler {
    cfg: SamplerConfig,
    rng: ChaCha12Rng,
    /// Subjects with at least one record long enough to host a triplet and
    /// a second record long enough to host the anchor.
    eligible: Vec<u32>,
}

impl QuadSampler {
    /// Builds a sampler over the corpus. The generator runs on stream 1 so
    /// its draws never overlap weight initialization, which uses stream 0
    /// of the same seed.
    pub fn new(cfg: SamplerConfig, corpus: &Corpus) -> Result<Self> {
        cfg.validate()?;
        let eligible: Vec<u32> = corpus
            .by_subject
            .keys()
            .filter(|&&s| !Self::triplet_records(&cfg, corpus, s).is_empty())
            .copied()
            .collect();
        if eligible.is_empty() {
            return Err(Error::data(format!(
                "no subject has both a record of at least {} s and a second record of at least {} s",
                cfg.window_size_s, cfg.crop_s
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(QuadSampler {
            cfg,
            rng,
            eligible,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn eligible_subjects(&self) -> &[u32] {
        &self.eligible
    }

    /// Record indices usable as the triplet source for a subject: long
    /// enough for the widest triplet, with at least one other record that
    /// can host the anchor crop.
    fn triplet_records(cfg: &SamplerConfig, corpus: &Corpus, subject: u32) -> Vec<usize> {
        let Some(idxs) = corpus.by_subject.get(&subject) else {
            return Vec::new();
        };
        idxs.iter()
            .copied()
            .filter(|&b| {
                corpus.records[b].whole_seconds() >= cfg.window_size_s
                    && idxs
                        .iter()
                        .any(|&a| a != b && corpus.records[a].whole_seconds() >= cfg.crop_s)
            })
            .collect()
    }

    fn crop(rec: &LoadedRecord, start_s: u32, crop_s: u32) -> Vec<f32> {
        let start = (start_s as f64 * rec.fs).round() as usize;
        let len = (crop_s as f64 * rec.fs).round() as usize;
        rec.samples[start..start + len].to_vec()
    }

    /// Draws one quadruplet for the given subject.
    pub fn sample_quad(&mut self, corpus: &Corpus, subject: u32) -> Result<QuadItem> {
        let b_candidates = Self::triplet_records(&self.cfg, corpus, subject);
        if b_candidates.is_empty() {
            return Err(Error::data(format!(
                "subject {subject} has no record pair usable for sampling"
            )));
        }
        let b_idx = b_candidates[self.rng.random_range(0..b_candidates.len())];
        let sibling = &corpus.by_subject[&subject];
        let a_candidates: Vec<usize> = sibling
            .iter()
            .copied()
            .filter(|&a| {
                a != b_idx && corpus.records[a].whole_seconds() >= self.cfg.crop_s
            })
            .collect();
        let a_idx = a_candidates[self.rng.random_range(0..a_candidates.len())];

        let rec_b = &corpus.records[b_idx];
        let rec_a = &corpus.records[a_idx];
        let crop_s = self.cfg.crop_s;

        let i_s = self
            .rng
            .random_range(self.cfg.min_offset_s..=self.cfg.max_offset_s());
        let j_s = self
            .rng
            .random_range(self.cfg.min_offset_s..=self.cfg.max_offset_s());
        let t_max = rec_b.whole_seconds() - j_s - crop_s;
        let t_s = self.rng.random_range(i_s..=t_max);

        let slots = rec_a.whole_seconds() / crop_s;
        let x1_start = self.rng.random_range(0..slots) * crop_s;

        Ok(QuadItem {
            x1: Self::crop(rec_a, x1_start, crop_s),
            x_tmi: Self::crop(rec_b, t_s - i_s, crop_s),
            x_t: Self::crop(rec_b, t_s, crop_s),
            x_tpj: Self::crop(rec_b, t_s + j_s, crop_s),
            i_s,
            j_s,
            t_s,
            subject_id: subject,
            record_a: rec_a.record_id,
            record_b: rec_b.record_id,
        })
    }

    /// Assembles a batch of `batch_size` quadruplets. Subjects are drawn
    /// uniformly with replacement; a few retries steer away from exact
    /// duplicates of (subject, record, t) when the corpus allows it.
    pub fn next_batch(&mut self, corpus: &Corpus) -> Result<QuadBatch> {
        let mut items = Vec::with_capacity(self.cfg.batch_size);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..self.cfg.batch_size {
            let mut quad = None;
            for _attempt in 0..10 {
                let subject = self.eligible[self.rng.random_range(0..self.eligible.len())];
                let q = self.sample_quad(corpus, subject)?;
                let key = (q.subject_id, q.record_b, q.t_s);
                if seen.insert(key) {
                    quad = Some(q);
                    break;
                }
                quad = Some(q);
            }
            items.push(quad.expect("at least one draw attempted"));
        }
        Ok(QuadBatch { items })
    }

    pub fn rng_state(&self) -> RngState {
        RngState {
            seed: self.rng.get_seed(),
            word_pos: self.rng.get_word_pos().to_string(),
            stream: self.rng.get_stream(),
        }
    }

    pub fn restore_rng(&mut self, state: &RngState) -> Result<()> {
        let word_pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::data("unparseable generator position"))?;
        let mut rng = ChaCha12Rng::from_seed(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(word_pos);
        self.rng = rng;
        Ok(())
    }
}
