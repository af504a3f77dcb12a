//! On-disk formats shared across the toolkit.
//!
//! A dataset is a directory holding one `.f32` signal file per record
//! (32-bit little-endian floats), a JSON sidecar per record, and a
//! `manifest.csv` listing every record with the columns
//! `subject_id,record_id,path,duration_s`. Manifest paths are stored
//! relative to the manifest file so a dataset directory can be moved as
//! a unit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transform settings stamped onto a record once it has been preprocessed.
///
/// Training records the stamp of its corpus in every checkpoint, and
/// embedding refuses data whose stamp disagrees with the checkpoint, so a
/// model is never evaluated on signals that went through a different chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStamp {
    pub resample_hz: f64,
    pub highpass_hz: f64,
    pub highpass_order: u32,
    pub normalized: bool,
}

/// Sidecar metadata stored next to each signal file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub subject_id: u32,
    pub record_id: u32,
    pub fs: f64,
    pub n_samples: usize,
    /// Subject-level binary class, present on generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_class: Option<u8>,
    /// State label per 10 s window, present on generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_labels: Option<Vec<u8>>,
    /// Present once the record has been through the preprocessing chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineStamp>,
}

impl RecordMeta {
    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.fs
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: u32,
    pub record_id: u32,
    pub path: String,
    pub duration_s: f64,
}

/// Writes raw samples as 32-bit little-endian floats.
pub fn write_signal(path: &Path, samples: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a signal file written by [`write_signal`].
pub fn read_signal(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::data(format!(
            "{}: length {} is not a multiple of 4 bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Sidecar path for a signal file (`foo.f32` keeps `foo.json` beside it).
pub fn meta_path_for(signal_path: &Path) -> PathBuf {
    signal_path.with_extension("json")
}

pub fn write_meta(path: &Path, meta: &RecordMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<RecordMeta> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes a manifest CSV with the columns `subject_id,record_id,path,duration_s`.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Resolves a manifest-relative record path against the manifest location.
pub fn resolve_record_path(manifest_path: &Path, entry_path: &str) -> PathBuf {
    let p = Path::new(entry_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
