//! Implementations behind the subcommands.
//!
//! Each function takes a fully resolved [`RunConfig`] plus the paths it
//! operates on, writes its artifacts under the given output directory
//! (always including a `config.toml` echo and its hash), and prints a short
//! human-readable summary to stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use deaps_core::evalkit::{self, pca, probe, RepresentationTable};
use deaps_core::io::{self, ManifestEntry, RecordMeta};
use deaps_core::pipeline::{self, SignalRecord};
use deaps_core::plot::{self, DensityGroup, Series};
use deaps_core::sampling::Corpus;
use deaps_core::synthgen;
use deaps_core::trainer::{self, StepStats};
use deaps_core::Error;

use crate::config::{self, RunConfig};
use crate::CliError;

/// Cross-validation protocol selected on the command line.
#[derive(Debug, Clone, Copy)]
pub enum Protocol {
    Loo,
    Kfold(usize),
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let hash = config::echo(out, cfg)?;
    let manifest =
        synthgen::generate_dataset(out, cfg.subjects, cfg.records, cfg.duration_s, cfg.seed)?;
    println!(
        "wrote {} records to {} (config {})",
        cfg.subjects * cfg.records,
        manifest.display(),
        short(&hash)
    );
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, in_manifest: &Path, out: &Path) -> Result<(), CliError> {
    config::echo(out, cfg)?;
    let entries = io::read_manifest(in_manifest)?;
    if entries.is_empty() {
        return Err(Error::data("manifest lists no records").into());
    }
    let mut processed = Vec::with_capacity(entries.len());
    for entry in &entries {
        let rel = Path::new(&entry.path);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(Error::data(format!(
                "manifest path {} must be relative and stay inside the dataset directory",
                entry.path
            ))
            .into());
        }
        let sig_path = io::resolve_record_path(in_manifest, &entry.path);
        let dest = out.join(rel);
        if dest == sig_path {
            return Err(Error::config(
                "output directory equals the input directory; preprocessing would \
                 overwrite the raw records",
            )
            .into());
        }
        let meta = io::read_meta(&io::meta_path_for(&sig_path))?;
        if meta.pipeline.is_some() {
            return Err(Error::config(format!(
                "record {} already carries a pipeline stamp",
                sig_path.display()
            ))
            .into());
        }
        let raw = SignalRecord {
            subject_id: entry.subject_id,
            record_id: entry.record_id,
            fs: meta.fs,
            samples: io::read_signal(&sig_path)?,
        };
        let done = pipeline::preprocess(&raw)?;
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        io::write_signal(&dest, &done.samples)?;
        io::write_meta(
            &io::meta_path_for(&dest),
            &RecordMeta {
                subject_id: entry.subject_id,
                record_id: entry.record_id,
                fs: done.fs,
                n_samples: done.samples.len(),
                static_class: meta.static_class,
                window_labels: meta.window_labels,
                pipeline: Some(pipeline::stamp()),
            },
        )?;
        processed.push(ManifestEntry {
            subject_id: entry.subject_id,
            record_id: entry.record_id,
            path: entry.path.clone(),
            duration_s: done.samples.len() as f64 / done.fs,
        });
    }
    let manifest = out.join("manifest.csv");
    io::write_manifest(&manifest, &processed)?;
    println!(
        "preprocessed {} records -> {}",
        processed.len(),
        manifest.display()
    );
    Ok(())
}

pub fn dry_run(cfg: &RunConfig) -> Result<(), CliError> {
    let tc = cfg.train_config()?;
    tc.validate()?;
    let net = trainer::build_net(&tc)?;
    println!("method: {}", tc.method);
    println!("encoder parameters: {}", net.student_encoder().param_count());
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let tc = cfg.train_config()?;
    tc.validate()?;
    let hash = config::echo(out, cfg)?;
    let corpus = Corpus::load(data)?;
    let started = Instant::now();
    let stride = (tc.iterations / 20).max(1);
    let mut last: Option<StepStats> = None;
    let state = trainer::fit(&tc, &corpus, out, |iter, stats| {
        if iter % stride == 0 || iter == tc.iterations {
            eprintln!(
                "iter {iter}/{} total {:.4} sim {:.4} gra {:.4} cov {:.4}",
                tc.iterations, stats.loss.total, stats.loss.l_sim, stats.loss.l_gra, stats.loss.l_cov
            );
        }
        last = Some(*stats);
    })?;
    match last {
        Some(stats) => println!(
            "trained {} to iteration {} in {:.1}s (total loss {:.4}, feature std {:.4}, config {})",
            tc.method,
            state.iteration,
            started.elapsed().as_secs_f64(),
            stats.loss.total,
            stats.feature_std,
            short(&hash)
        ),
        // A fully trained run directory resumes to an immediate no-op.
        None => println!(
            "run already at iteration {}, nothing to do (config {})",
            state.iteration,
            short(&hash)
        ),
    }
    Ok(())
}

/// Accepts either a checkpoint sidecar or a run directory, in which case
/// the newest checkpoint wins.
fn resolve_checkpoint(path: &Path) -> Result<PathBuf, CliError> {
    if path.is_dir() {
        match trainer::find_latest_checkpoint(path)? {
            Some(p) => Ok(p),
            None => Err(Error::data(format!("no checkpoints in {}", path.display())).into()),
        }
    } else {
        Ok(path.to_path_buf())
    }
}

pub fn embed(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    config::echo(out, cfg)?;
    let ckpt = resolve_checkpoint(checkpoint)?;
    let table = evalkit::embed_checkpoint(&ckpt, data, cfg.embed_batch)?;
    let path = out.join("reps.csv");
    table.write_csv(&path)?;
    println!(
        "embedded {} windows of dim {} -> {}",
        table.rows.len(),
        table.dim,
        path.display()
    );
    Ok(())
}

pub fn probe_cmd(
    cfg: &RunConfig,
    reps: &Path,
    label: &str,
    protocol: Protocol,
    out: &Path,
) -> Result<(), CliError> {
    config::echo(out, cfg)?;
    let table = RepresentationTable::read_csv(reps)?;
    let (x, y, s) = table.probe_inputs(label)?;
    let (result, name) = match protocol {
        Protocol::Loo => (probe::loo_cv(label, &x, &y, &s)?, "loo"),
        Protocol::Kfold(k) => (probe::kfold_cv(label, &x, &y, &s, k)?, "kfold"),
    };
    let path = out.join(format!("probe_{label}_{name}.json"));
    let text = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!(
        "{label} {name}: accuracy {:.4} over {} folds -> {}",
        result.accuracy,
        result.folds.len(),
        path.display()
    );
    Ok(())
}

/// Groups one component's scores by an optional binary label, for the
/// density plots.
fn density_groups(
    scores: &[Vec<f64>],
    col: usize,
    labels: &[Option<f64>],
    name: &str,
) -> Vec<DensityGroup> {
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (row, lab) in scores.iter().zip(labels) {
        if let Some(v) = lab {
            groups.entry(v.round() as i64).or_default().push(row[col]);
        }
    }
    groups
        .into_iter()
        .map(|(value, values)| DensityGroup {
            label: format!("{name} {value}"),
            values,
        })
        .collect()
}

pub fn pca_report(cfg: &RunConfig, reps: &Path, out: &Path) -> Result<(), CliError> {
    config::echo(out, cfg)?;
    let table = RepresentationTable::read_csv(reps)?;
    let (x, subjects, static_labels, state_labels) = table.pca_inputs();
    let report = pca::analyze(&x, &subjects, &static_labels, &state_labels, cfg.max_components)?;
    let csv_path = out.join("pca.csv");
    pca::write_report_csv(&csv_path, &report)?;

    for comp in &report.components {
        let c = comp.component;
        let named: [(&str, &[Option<f64>]); 2] = [
            ("state", &report.state_labels),
            ("static", &report.static_labels),
        ];
        for (label_name, labels) in named {
            let groups = density_groups(&report.scores, c - 1, labels, label_name);
            if groups.len() < 2 {
                continue;
            }
            let svg = plot::density_chart(
                &format!("component {c} scores by {label_name} label"),
                "score",
                &groups,
            );
            let path = out.join(format!("pca_c{c:02}_{label_name}.svg"));
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        }
    }

    let flagged = |f: fn(&pca::PcaComponent) -> bool| -> Vec<usize> {
        report.components.iter().filter(|c| f(c)).map(|c| c.component).collect()
    };
    println!(
        "{} components -> {}",
        report.components.len(),
        csv_path.display()
    );
    println!("state-discriminative: {:?}", flagged(|c| c.state_flag));
    println!("static-discriminative: {:?}", flagged(|c| c.static_flag));
    Ok(())
}

pub fn curve(cfg: &RunConfig, ckpt_dir: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    config::echo(out, cfg)?;
    let points = evalkit::probe_curve(ckpt_dir, data, cfg.embed_batch)?;

    let csv_path = out.join("curve.csv");
    let mut text = String::from("iteration,accuracy\n");
    for p in &points {
        text.push_str(&format!("{},{}\n", p.iteration, p.accuracy));
    }
    fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))?;

    let series = Series {
        label: "state probe".into(),
        points: points.iter().map(|p| (p.iteration as f64, p.accuracy)).collect(),
    };
    let svg = plot::line_chart(
        "probe accuracy across training",
        "iteration",
        "accuracy",
        &[series],
    );
    let svg_path = out.join("curve.svg");
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;

    println!(
        "probed {} checkpoints -> {} and {}",
        points.len(),
        csv_path.display(),
        svg_path.display()
    );
    Ok(())
}

/// Parses the repeatable `--grid KEY=V1,V2,...` flags into the two
/// supported axes; an axis missing from the grid collapses to the
/// configured value.
fn parse_grid(cfg: &RunConfig, grids: &[String]) -> Result<(Vec<u32>, Vec<usize>), CliError> {
    if grids.is_empty() {
        return Err(CliError::usage("ablate needs at least one --grid axis"));
    }
    let mut ws_axis: Option<Vec<u32>> = None;
    let mut n_axis: Option<Vec<usize>> = None;
    for g in grids {
        let Some((key, vals)) = g.split_once('=') else {
            return Err(CliError::usage(format!(
                "--grid expects KEY=V1,V2,..., got {g:?}"
            )));
        };
        match key.trim() {
            "window_size_s" => ws_axis = Some(parse_axis(vals)?),
            "n_selected" => n_axis = Some(parse_axis(vals)?),
            other => {
                return Err(CliError::usage(format!(
                    "unknown grid key {other}; expected window_size_s or n_selected"
                )))
            }
        }
    }
    Ok((
        ws_axis.unwrap_or_else(|| vec![cfg.window_size_s]),
        n_axis.unwrap_or_else(|| vec![cfg.n_selected]),
    ))
}

fn parse_axis<T: std::str::FromStr>(vals: &str) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for v in vals.split(',') {
        let v = v.trim();
        if v.is_empty() {
            continue;
        }
        out.push(
            v.parse::<T>()
                .map_err(|_| CliError::usage(format!("bad grid value {v:?}")))?,
        );
    }
    if out.is_empty() {
        return Err(CliError::usage("empty grid axis"));
    }
    Ok(out)
}

pub fn ablate(cfg: &RunConfig, grids: &[String], data: &Path, out: &Path) -> Result<(), CliError> {
    let (ws_axis, n_axis) = parse_grid(cfg, grids)?;
    config::echo(out, cfg)?;
    let corpus = Corpus::load(data)?;

    let mut rows = Vec::new();
    for &ws in &ws_axis {
        for &n in &n_axis {
            let mut point = cfg.clone();
            point.window_size_s = ws;
            point.n_selected = n;
            let run_dir = out.join(format!("ws{ws:03}_n{n:03}"));
            let hash = config::echo(&run_dir, &point)?;
            let tc = point.train_config()?;
            tc.validate()?;
            eprintln!("ablate: training window_size_s={ws} n_selected={n}");
            trainer::fit(&tc, &corpus, &run_dir, |_, _| {})?;
            let ckpt = trainer::find_latest_checkpoint(&run_dir)?.ok_or_else(|| {
                Error::data(format!("no checkpoint written in {}", run_dir.display()))
            })?;
            let loaded = trainer::load_checkpoint(&ckpt)?;
            let table = evalkit::embed_loaded(&loaded, &corpus, point.embed_batch)?;
            let (x, y, s) = table.probe_inputs("state")?;
            let result = probe::loo_cv("state", &x, &y, &s)?;
            println!(
                "window_size_s={ws} n_selected={n} state_loo_accuracy={:.4}",
                result.accuracy
            );
            rows.push((ws, n, result.accuracy, hash));
        }
    }

    let csv_path = out.join("ablation.csv");
    let mut text = String::from("window_size_s,n_selected,state_loo_accuracy,config_sha256\n");
    for (ws, n, acc, hash) in &rows {
        text.push_str(&format!("{ws},{n},{acc},{hash}\n"));
    }
    fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))?;
    println!("{} grid points -> {}", rows.len(), csv_path.display());
    Ok(())
}
