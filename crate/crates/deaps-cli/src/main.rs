//! Command line front end for the deaps toolkit.
//!
//! The verbs cover the whole workflow: generate synthetic data, preprocess
//! raw records, train any of the three methods, embed a corpus with a
//! checkpoint, probe the representations with subject-held-out protocols,
//! inspect principal components, trace probe accuracy across a run's
//! checkpoints, and sweep small ablation grids.
//!
//! Exit codes: 0 on success, 1 when the invocation itself is wrong (bad
//! flags, unknown subcommand, unknown config keys), 2 when the work fails
//! (missing files, invalid data, training errors).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use commands::Protocol;
use config::RunConfig;
use deaps_core::Error;

/// Failure split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// The invocation is wrong; exits 1.
    Usage(String),
    /// The invocation was fine but the work failed; exits 2.
    Runtime(Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(
    name = "deaps",
    version,
    about = "Self-supervised representation learning for quasiperiodic time series"
)]
struct Cli {
    /// Seed override applied on top of presets and config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

/// Configuration and output flags shared by every subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// Base settings bundle: full or smoke.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Flat TOML config file layered over the preset.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Single KEY=VALUE override, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory; defaults to $DEAPS_OUT/<subcommand>.
    #[arg(long, alias = "out-dir", value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled dataset.
    Synth {
        /// Number of subjects.
        #[arg(long)]
        subjects: Option<usize>,
        /// Records per subject.
        #[arg(long)]
        records: Option<usize>,
        /// Record duration in seconds.
        #[arg(long, value_name = "SECONDS")]
        duration: Option<f64>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Resample, filter, normalize, and stamp raw records.
    Preprocess {
        /// Manifest of the raw input records.
        #[arg(long = "in-manifest", value_name = "CSV")]
        in_manifest: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train a model on a preprocessed corpus.
    Train {
        /// Manifest of the preprocessed training corpus.
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
        /// Objective: deaps, byol, or contrastive.
        #[arg(long)]
        method: Option<String>,
        /// Print the encoder parameter count and exit without training.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Embed every corpus window with a checkpoint's student encoder.
    Embed {
        /// Checkpoint sidecar (.json) or a run directory holding some.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Manifest of the preprocessed corpus to embed.
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Probe representations with a chosen cross-validation protocol.
    Probe {
        /// Representation table produced by embed.
        #[arg(long, value_name = "CSV")]
        reps: PathBuf,
        /// Label column to predict.
        #[arg(long, default_value = "state")]
        label: String,
        /// Cross-validation protocol: loo or kfold.
        #[arg(long, default_value = "loo")]
        protocol: String,
        /// Fold count for kfold; defaults to the kfold_k config key.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Leave-one-subject-out probe.
    Loo {
        /// Representation table produced by embed.
        #[arg(long, value_name = "CSV")]
        reps: PathBuf,
        /// Label column to predict.
        #[arg(long, default_value = "state")]
        label: String,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Subject-grouped k-fold probe.
    Kfold {
        /// Representation table produced by embed.
        #[arg(long, value_name = "CSV")]
        reps: PathBuf,
        /// Label column to predict.
        #[arg(long, default_value = "state")]
        label: String,
        /// Fold count; defaults to the kfold_k config key.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Principal component report with discriminability flags.
    PcaReport {
        /// Representation table produced by embed.
        #[arg(long, value_name = "CSV")]
        reps: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Probe accuracy for every checkpoint of a run.
    Curve {
        /// Directory holding the run's checkpoints.
        #[arg(long = "ckpt-dir", value_name = "DIR")]
        ckpt_dir: PathBuf,
        /// Manifest of the preprocessed corpus to probe on.
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train and probe across a hyperparameter grid.
    Ablate {
        /// Grid axis as KEY=V1,V2,...; repeatable.
        /// Keys: window_size_s, n_selected.
        #[arg(long, value_name = "KEY=V1,V2,...", required = true)]
        grid: Vec<String>,
        /// Manifest of the preprocessed training corpus.
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Synth { subjects, records, duration, common } => {
            let mut flags = Vec::new();
            if let Some(v) = subjects {
                flags.push(("subjects", int_value("subjects", v)?));
            }
            if let Some(v) = records {
                flags.push(("records", int_value("records", v)?));
            }
            if let Some(v) = duration {
                flags.push(("duration_s", toml::Value::Float(v)));
            }
            let cfg = build_config(&common, flags, seed)?;
            let out = resolve_out("synth", &common)?;
            commands::synth(&cfg, &out)
        }
        Cmd::Preprocess { in_manifest, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("preprocess", &common)?;
            commands::preprocess(&cfg, &in_manifest, &out)
        }
        Cmd::Train { data, method, dry_run, common } => {
            let mut flags = Vec::new();
            if let Some(m) = method {
                flags.push(("method", toml::Value::String(m)));
            }
            let cfg = build_config(&common, flags, seed)?;
            if dry_run {
                return commands::dry_run(&cfg);
            }
            let Some(data) = data else {
                return Err(CliError::usage("train needs --data MANIFEST"));
            };
            let out = resolve_out("train", &common)?;
            commands::train(&cfg, &data, &out)
        }
        Cmd::Embed { checkpoint, data, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("embed", &common)?;
            commands::embed(&cfg, &checkpoint, &data, &out)
        }
        Cmd::Probe { reps, label, protocol, k, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("probe", &common)?;
            let protocol = parse_protocol(&protocol, k, &cfg)?;
            commands::probe_cmd(&cfg, &reps, &label, protocol, &out)
        }
        Cmd::Loo { reps, label, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("loo", &common)?;
            commands::probe_cmd(&cfg, &reps, &label, Protocol::Loo, &out)
        }
        Cmd::Kfold { reps, label, k, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("kfold", &common)?;
            let k = k.unwrap_or(cfg.kfold_k);
            commands::probe_cmd(&cfg, &reps, &label, Protocol::Kfold(k), &out)
        }
        Cmd::PcaReport { reps, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("pca-report", &common)?;
            commands::pca_report(&cfg, &reps, &out)
        }
        Cmd::Curve { ckpt_dir, data, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("curve", &common)?;
            commands::curve(&cfg, &ckpt_dir, &data, &out)
        }
        Cmd::Ablate { grid, data, common } => {
            let cfg = build_config(&common, Vec::new(), seed)?;
            let out = resolve_out("ablate", &common)?;
            commands::ablate(&cfg, &grid, &data, &out)
        }
    }
}

fn build_config(
    common: &ConfigArgs,
    mut flags: Vec<(&str, toml::Value)>,
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    if let Some(s) = seed {
        flags.push(("seed", int_value("seed", s)?));
    }
    config::layer(
        common.preset.as_deref(),
        common.config.as_deref(),
        &flags,
        &common.set,
    )
}

fn int_value<T: TryInto<i64> + std::fmt::Display + Copy>(
    name: &str,
    v: T,
) -> Result<toml::Value, CliError> {
    v.try_into()
        .map(toml::Value::Integer)
        .map_err(|_| CliError::usage(format!("{name} {v} does not fit a signed 64-bit integer")))
}

fn parse_protocol(name: &str, k: Option<usize>, cfg: &RunConfig) -> Result<Protocol, CliError> {
    match name {
        "loo" => Ok(Protocol::Loo),
        "kfold" => Ok(Protocol::Kfold(k.unwrap_or(cfg.kfold_k))),
        other => Err(CliError::usage(format!(
            "unknown protocol {other}; expected loo or kfold"
        ))),
    }
}

/// Output directory: the explicit flag, else a subdirectory of the
/// DEAPS_OUT root.
fn resolve_out(sub: &str, common: &ConfigArgs) -> Result<PathBuf, CliError> {
    if let Some(dir) = &common.out {
        return Ok(dir.clone());
    }
    match std::env::var_os("DEAPS_OUT") {
        Some(root) => Ok(PathBuf::from(root).join(sub)),
        None => Err(CliError::usage(
            "no output directory: pass --out DIR or set DEAPS_OUT",
        )),
    }
}
