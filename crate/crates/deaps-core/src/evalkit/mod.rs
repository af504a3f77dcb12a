//! Downstream evaluation of trained encoders: window embedding, SVC probes
//! with subject-held-out cross-validation, and principal component reports.

pub mod pca;
pub mod probe;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{self, SignalRecord};
use crate::sampling::Corpus;
use crate::trainer::{load_checkpoint, LoadedCheckpoint};

/// One embedded window with everything needed for downstream analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprRow {
    pub subject_id: u32,
    pub record_id: u32,
    pub window_start_s: f64,
    /// Named labels attached to this window, such as "state" or "static".
    pub labels: BTreeMap<String, f64>,
    /// The representation vector.
    pub h: Vec<f32>,
}

/// A set of embedded windows with a fixed representation width.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTable {
    pub dim: usize,
    pub rows: Vec<ReprRow>,
}

impl RepresentationTable {
    /// Label names present anywhere in the table, sorted.
    pub fn label_names(&self) -> Vec<String> {
        let mut names: BTreeSet<&str> = BTreeSet::new();
        for row in &self.rows {
            for k in row.labels.keys() {
                names.insert(k);
            }
        }
        names.into_iter().map(String::from).collect()
    }

    /// Writes the table as CSV. Label columns are the sorted union of label
    /// names; rows without a given label leave that cell empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        for row in &self.rows {
            if row.h.len() != self.dim {
                return Err(Error::shape(format!(
                    "row has {} features, table claims {}",
                    row.h.len(),
                    self.dim
                )));
            }
        }
        let names = self.label_names();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);

        let mut header = String::from("subject_id,record_id,window_start_s");
        for n in &names {
            header.push_str(",label.");
            header.push_str(n);
        }
        for i in 0..self.dim {
            header.push_str(&format!(",h_{i}"));
        }
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;

        for row in &self.rows {
            let mut line = format!(
                "{},{},{}",
                row.subject_id, row.record_id, row.window_start_s
            );
            for n in &names {
                line.push(',');
                if let Some(v) = row.labels.get(n) {
                    line.push_str(&v.to_string());
                }
            }
            for v in &row.h {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data(format!("{} is empty", path.display())))?
            .map_err(|e| Error::io(path, e))?;

        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[..3] != ["subject_id", "record_id", "window_start_s"] {
            return Err(Error::data(format!(
                "{} does not start with the expected representation columns",
                path.display()
            )));
        }
        let mut names: Vec<String> = Vec::new();
        let mut idx = 3;
        while idx < cols.len() {
            match cols[idx].strip_prefix("label.") {
                Some(n) => {
                    names.push(n.to_string());
                    idx += 1;
                }
                None => break,
            }
        }
        let dim = cols.len() - idx;
        for (k, col) in cols[idx..].iter().enumerate() {
            if *col != format!("h_{k}") {
                return Err(Error::data(format!(
                    "unexpected column {col} where h_{k} belongs"
                )));
            }
        }

        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::data(format!(
                    "line {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    cols.len()
                )));
            }
            let parse_err = |what: &str| {
                Error::data(format!("line {}: bad {what}", lineno + 2))
            };
            let subject_id: u32 = fields[0].parse().map_err(|_| parse_err("subject_id"))?;
            let record_id: u32 = fields[1].parse().map_err(|_| parse_err("record_id"))?;
            let window_start_s: f64 =
                fields[2].parse().map_err(|_| parse_err("window_start_s"))?;
            let mut labels = BTreeMap::new();
            for (n, cell) in names.iter().zip(&fields[3..3 + names.len()]) {
                if !cell.is_empty() {
                    let v: f64 = cell.parse().map_err(|_| parse_err(n))?;
                    labels.insert(n.clone(), v);
                }
            }
            let mut h = Vec::with_capacity(dim);
            for cell in &fields[3 + names.len()..] {
                h.push(cell.parse::<f32>().map_err(|_| parse_err("feature"))?);
            }
            rows.push(ReprRow {
                subject_id,
                record_id,
                window_start_s,
                labels,
                h,
            });
        }
        Ok(RepresentationTable { dim, rows })
    }

    /// Extracts (features, integer labels, subject ids) for one label column,
    /// skipping rows where the label is absent.
    pub fn probe_inputs(
        &self,
        label: &str,
    ) -> Result<(Vec<Vec<f64>>, Vec<i32>, Vec<String>)> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut s = Vec::new();
        for row in &self.rows {
            if let Some(&v) = row.labels.get(label) {
                if (v - v.round()).abs() > 1e-9 {
                    return Err(Error::data(format!(
                        "label {label} has non-integer value {v}"
                    )));
                }
                x.push(row.h.iter().map(|&f| f as f64).collect());
                y.push(v.round() as i32);
                s.push(row.subject_id.to_string());
            }
        }
        if x.is_empty() {
            return Err(Error::data(format!("no rows carry label {label}")));
        }
        Ok((x, y, s))
    }

    /// Extracts inputs for component analysis: features, subject ids, and the
    /// optional "static" and "state" labels per row.
    pub fn pca_inputs(
        &self,
    ) -> (
        Vec<Vec<f64>>,
        Vec<String>,
        Vec<Option<f64>>,
        Vec<Option<f64>>,
    ) {
        let mut x = Vec::new();
        let mut s = Vec::new();
        let mut stat = Vec::new();
        let mut state = Vec::new();
        for row in &self.rows {
            x.push(row.h.iter().map(|&f| f as f64).collect());
            s.push(row.subject_id.to_string());
            stat.push(row.labels.get("static").copied());
            state.push(row.labels.get("state").copied());
        }
        (x, s, stat, state)
    }
}

/// Embeds every quality-filtered window of the corpus with the student
/// encoder of a loaded checkpoint.
///
/// State labels come from the per-window label track, the static label from
/// the record metadata. Fails when the corpus was preprocessed differently
/// from the training corpus, or when the encoder does not read whole
/// pipeline windows.
pub fn embed_loaded(
    loaded: &LoadedCheckpoint,
    corpus: &Corpus,
    batch_rows: usize,
) -> Result<RepresentationTable> {
    if loaded.meta.pipeline != pipeline::stamp() {
        return Err(Error::config(
            "checkpoint was trained on data from a different preprocessing chain",
        ));
    }
    let enc_cfg = &loaded.meta.train_config.encoder;
    if enc_cfg.input_len != pipeline::WINDOW_SAMPLES {
        return Err(Error::config(format!(
            "encoder reads {} samples but evaluation windows hold {}",
            enc_cfg.input_len,
            pipeline::WINDOW_SAMPLES
        )));
    }
    if batch_rows == 0 {
        return Err(Error::config("batch_rows must be positive"));
    }

    let dtype = loaded.meta.dtype.to_dtype();
    let encoder = loaded.net.student_encoder();
    let mut rows = Vec::new();
    for rec in &corpus.records {
        let signal = SignalRecord {
            subject_id: rec.subject_id,
            record_id: rec.record_id,
            fs: rec.fs,
            samples: rec.samples.clone(),
        };
        let ws = match &rec.meta.window_labels {
            Some(labels) => pipeline::windowize_with_labels(&signal, labels)?,
            None => pipeline::windowize(&signal)?,
        };
        let ws = pipeline::quality_filter(&ws);

        let mut feats: Vec<Vec<f32>> = Vec::with_capacity(ws.len());
        for chunk in ws.windows.chunks(batch_rows) {
            let n = chunk.len();
            let flat: Vec<f32> = chunk.iter().flatten().copied().collect();
            let x = Tensor::from_vec(flat, (n, pipeline::WINDOW_SAMPLES), &Device::Cpu)?
                .to_dtype(dtype)?;
            let h = encoder.forward(&x)?.detach().to_dtype(DType::F32)?;
            feats.extend(h.to_vec2::<f32>()?);
        }

        for (k, h) in feats.into_iter().enumerate() {
            let mut labels = BTreeMap::new();
            if let Some(track) = &ws.labels {
                labels.insert("state".to_string(), track[k] as f64);
            }
            if let Some(c) = rec.meta.static_class {
                labels.insert("static".to_string(), c as f64);
            }
            rows.push(ReprRow {
                subject_id: rec.subject_id,
                record_id: rec.record_id,
                window_start_s: ws.start_times_s[k],
                labels,
                h,
            });
        }
    }
    Ok(RepresentationTable {
        dim: loaded.meta.train_config.encoder.model_dim,
        rows,
    })
}

/// Loads a checkpoint and manifest from disk and embeds the whole corpus.
pub fn embed_checkpoint(
    ckpt_json: &Path,
    manifest: &Path,
    batch_rows: usize,
) -> Result<RepresentationTable> {
    let loaded = load_checkpoint(ckpt_json)?;
    let corpus = Corpus::load(manifest)?;
    embed_loaded(&loaded, &corpus, batch_rows)
}

/// Checkpoint sidecars in a directory, sorted by iteration.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut found = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(Vec::new()),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name
            .strip_prefix("ckpt_")
            .and_then(|rest| rest.strip_suffix(".json"))
        {
            if let Ok(iter) = num.parse::<usize>() {
                found.push((iter, entry.path()));
            }
        }
    }
    found.sort();
    Ok(found)
}

/// One point of a training progression curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub accuracy: f64,
}

/// Probes every checkpoint in a run directory with a leave-one-subject-out
/// state probe, giving downstream accuracy as a function of training time.
pub fn probe_curve(
    ckpt_dir: &Path,
    manifest: &Path,
    batch_rows: usize,
) -> Result<Vec<CurvePoint>> {
    let ckpts = list_checkpoints(ckpt_dir)?;
    if ckpts.len() < 2 {
        return Err(Error::data(format!(
            "a progression curve needs at least 2 checkpoints, found {} in {}",
            ckpts.len(),
            ckpt_dir.display()
        )));
    }
    let corpus = Corpus::load(manifest)?;
    let mut points = Vec::with_capacity(ckpts.len());
    for (iteration, json_path) in ckpts {
        let loaded = load_checkpoint(&json_path)?;
        let table = embed_loaded(&loaded, &corpus, batch_rows)?;
        let (x, y, s) = table.probe_inputs("state")?;
        let result = probe::loo_cv("state", &x, &y, &s)?;
        points.push(CurvePoint {
            iteration,
            accuracy: result.accuracy,
        });
    }
    Ok(points)
}
