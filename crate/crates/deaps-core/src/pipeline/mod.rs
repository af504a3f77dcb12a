//! Preprocessing chain turning raw recordings into normalized windows.
//!
//! Every record goes through the same fixed order: resample to 100 Hz,
//! zero-phase 5th-order Butterworth high-pass at 0.5 Hz, z-score to unit
//! variance, then cut into non-overlapping 10 s windows of 1000 samples.
//! [`preprocess`] applies the first three record-level stages;
//! [`preprocess_to_windows`] is the full composition, so callers cannot
//! reorder the stages by accident.

pub mod butter;
pub mod resample;

use crate::error::{Error, Result};
use crate::io::PipelineStamp;

/// Sampling rate every record is brought to, Hz.
pub const TARGET_FS: f64 = 100.0;
/// High-pass cutoff, Hz.
pub const HIGHPASS_HZ: f64 = 0.5;
/// High-pass filter order (applied forward and backward).
pub const HIGHPASS_ORDER: usize = 5;
/// Window length in samples at [`TARGET_FS`].
pub const WINDOW_SAMPLES: usize = 1000;
/// Window length in seconds.
pub const WINDOW_S: f64 = 10.0;
/// Windows with standard deviation below this (on normalized records) are
/// treated as flatline and dropped.
pub const FLATLINE_STD: f64 = 0.05;
/// Windows with at least this fraction of samples pinned to the record
/// extremes are treated as clipped and dropped.
pub const CLIP_FRACTION: f64 = 0.05;
/// Edge extension for zero-phase filtering. The slowest pole of the 0.5 Hz
/// fifth-order design decays with a time constant of about one second at
/// 100 Hz, so six seconds of padding settles the filter startup to the
/// few-per-mille level. Longer pads stop helping there: the remaining edge
/// deviation comes from the reflection junction itself, which padding
/// cannot remove. Kept under one window so a 10 s record still filters.
pub const HIGHPASS_PAD_SAMPLES: usize = 600;

/// The stamp written onto records that went through [`preprocess`].
pub fn stamp() -> PipelineStamp {
    PipelineStamp {
        resample_hz: TARGET_FS,
        highpass_hz: HIGHPASS_HZ,
        highpass_order: HIGHPASS_ORDER as u32,
        normalized: true,
    }
}

/// A single-channel recording with identity and sampling metadata.
#[derive(Debug, Clone)]
pub struct SignalRecord {
    pub subject_id: u32,
    pub record_id: u32,
    pub fs: f64,
    pub samples: Vec<f32>,
}

/// Non-overlapping 10 s windows cut from one record.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// Each window holds exactly [`WINDOW_SAMPLES`] samples.
    pub windows: Vec<Vec<f32>>,
    /// Window start times; multiples of 10 s.
    pub start_times_s: Vec<f64>,
    /// Optional per-window labels carried through filtering.
    pub labels: Option<Vec<u8>>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Brings a record to 100 Hz. Records already at 100 Hz pass through
/// untouched; rates below 50 Hz are rejected as an aliasing risk.
pub fn resample_to_100hz(record: &SignalRecord) -> Result<SignalRecord> {
    if record.fs < 50.0 {
        return Err(Error::data(format!(
            "sampling rate {} Hz is below the 50 Hz minimum",
            record.fs
        )));
    }
    if !record.samples.iter().all(|v| v.is_finite()) {
        return Err(Error::data("record contains non-finite samples"));
    }
    let samples = resample::resample(&record.samples, record.fs, TARGET_FS);
    Ok(SignalRecord { fs: TARGET_FS, samples, ..*record })
}

/// Removes DC offset and baseline wander with a zero-phase (forward plus
/// backward) 5th-order Butterworth high-pass at 0.5 Hz. Expects 100 Hz input.
pub fn highpass(record: &SignalRecord) -> Result<SignalRecord> {
    if (record.fs - TARGET_FS).abs() > 1e-9 {
        return Err(Error::data(format!(
            "high-pass expects {} Hz input, got {} Hz",
            TARGET_FS, record.fs
        )));
    }
    let filt = butter::butter_highpass(HIGHPASS_ORDER, HIGHPASS_HZ, record.fs)?;
    let x: Vec<f64> = record.samples.iter().map(|&v| v as f64).collect();
    let y = butter::filtfilt_with_pad(&filt, &x, HIGHPASS_PAD_SAMPLES)?;
    Ok(SignalRecord {
        samples: y.into_iter().map(|v| v as f32).collect(),
        ..*record
    })
}

/// Centers the record and scales it to unit sample standard deviation.
pub fn normalize(record: &SignalRecord) -> Result<SignalRecord> {
    let n = record.samples.len();
    if n < 2 {
        return Err(Error::data("record too short to normalize"));
    }
    let mean = record.samples.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = record
        .samples
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n as f64 - 1.0);
    if var <= 0.0 {
        return Err(Error::data("zero-variance record cannot be normalized"));
    }
    let sd = var.sqrt();
    Ok(SignalRecord {
        samples: record
            .samples
            .iter()
            .map(|&v| ((v as f64 - mean) / sd) as f32)
            .collect(),
        ..*record
    })
}

/// Cuts a record into the non-overlapping 10 s tiling; the trailing
/// remainder shorter than one window is discarded.
pub fn windowize(record: &SignalRecord) -> Result<WindowSet> {
    if record.samples.len() < WINDOW_SAMPLES {
        return Err(Error::data(format!(
            "record with {} samples is shorter than one {}-sample window",
            record.samples.len(),
            WINDOW_SAMPLES
        )));
    }
    let n = record.samples.len() / WINDOW_SAMPLES;
    let mut windows = Vec::with_capacity(n);
    let mut start_times_s = Vec::with_capacity(n);
    for k in 0..n {
        windows.push(record.samples[k * WINDOW_SAMPLES..(k + 1) * WINDOW_SAMPLES].to_vec());
        start_times_s.push(k as f64 * WINDOW_S);
    }
    Ok(WindowSet { windows, start_times_s, labels: None })
}

/// [`windowize`] with per-window labels attached. The label slice may be
/// longer than the tiling (trailing labels are dropped with the remainder)
/// but never shorter.
pub fn windowize_with_labels(record: &SignalRecord, labels: &[u8]) -> Result<WindowSet> {
    let mut ws = windowize(record)?;
    if labels.len() < ws.len() {
        return Err(Error::data(format!(
            "{} labels for {} windows",
            labels.len(),
            ws.len()
        )));
    }
    ws.labels = Some(labels[..ws.len()].to_vec());
    Ok(ws)
}

/// Drops flatline and clipped windows.
///
/// A window is flatline when its standard deviation falls below
/// [`FLATLINE_STD`] (the records are unit variance, so this is a 20x
/// quieter-than-usual threshold), and clipped when at least
/// [`CLIP_FRACTION`] of its samples sit exactly at the record-wide minimum
/// or maximum.
pub fn quality_filter(ws: &WindowSet) -> WindowSet {
    let mut rec_min = f32::INFINITY;
    let mut rec_max = f32::NEG_INFINITY;
    for w in &ws.windows {
        for &v in w {
            rec_min = rec_min.min(v);
            rec_max = rec_max.max(v);
        }
    }

    let keep: Vec<bool> = ws
        .windows
        .iter()
        .map(|w| {
            let n = w.len() as f64;
            let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let pinned = w.iter().filter(|&&v| v == rec_min || v == rec_max).count();
            var.sqrt() >= FLATLINE_STD && (pinned as f64) < CLIP_FRACTION * n
        })
        .collect();

    WindowSet {
        windows: ws
            .windows
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(w, _)| w.clone())
            .collect(),
        start_times_s: ws
            .start_times_s
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&t, _)| t)
            .collect(),
        labels: ws.labels.as_ref().map(|ls| {
            ls.iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&l, _)| l)
                .collect()
        }),
    }
}

/// Record-level preprocessing: resample, high-pass, normalize, in that order.
pub fn preprocess(record: &SignalRecord) -> Result<SignalRecord> {
    normalize(&highpass(&resample_to_100hz(record)?)?)
}

/// Full composition ending in the 10 s tiling.
pub fn preprocess_to_windows(record: &SignalRecord) -> Result<WindowSet> {
    windowize(&preprocess(record)?)
}
