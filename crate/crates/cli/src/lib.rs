//! Command-line driver: synthesize data, cross-validate, evaluate, ablate,
//! check gradients and export connectome artifacts.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
//! configuration error.

pub mod commands;
pub mod config;
mod logging;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use config::{ExportKind, Settings};

#[derive(Debug, Parser)]
#[command(name = "mlcgcn", version, about = "Multi-level generated-connectome GCN toolkit")]
pub struct Cli {
    /// Flat TOML config with dotted keys such as `model.levels` or `train.lr`.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Output directory.
    #[arg(long, short, global = true, env = "MLCGCN_OUT", default_value = "mlcgcn-out")]
    pub out: PathBuf,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset with known class connectomes.
    Synth(SynthArgs),
    /// Stratified k-fold cross-validation with one checkpoint per fold.
    Train(TrainArgs),
    /// Metrics of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Cross-validate every module-ablation variant.
    Ablate(DataArgs),
    /// Finite-difference check of every parameter block on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Mean graph, strongest edges or node ranking from a checkpoint.
    Export(ExportArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub n_rois: Option<usize>,
    #[arg(long)]
    pub series_len: Option<usize>,
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    NoSfe,
    NoTfe,
    NoGroup,
    NoPearson,
    NoPositional,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of STFE levels (K).
    #[arg(long, short = 'K')]
    pub levels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Folds trained concurrently; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Remove a module; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Largest accepted relative error per block (strict).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Central-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    /// Artifact to write; defaults to `export.what` from the config.
    #[arg(value_enum)]
    pub what: Option<ExportKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Fraction of node pairs kept by top-edges.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Rank edges by signed weight instead of magnitude.
    #[arg(long)]
    pub signed: bool,
    /// Rows written by node-importance.
    #[arg(long)]
    pub top: Option<usize>,
    /// Sum absolute edge weights for node-importance.
    #[arg(long)]
    pub absolute: bool,
    /// Graph averaged: `all`, `pearson`, or a 1-based level.
    #[arg(long)]
    pub level: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn failure(msg: impl Into<String>) -> Self {
        CliError::Failure(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<mlcgcn::Error> for CliError {
    fn from(e: mlcgcn::Error) -> Self {
        match e {
            mlcgcn::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn path_value(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Config file, then `--set` pairs, then subcommand flags.
fn settings_for(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    for pair in &cli.set {
        s.set_pair(pair)?;
    }
    let int = |v: usize| v as i64;
    match &cli.command {
        Command::Synth(a) => {
            let ints = [
                ("synth.classes", a.classes),
                ("synth.samples_per_class", a.samples_per_class),
                ("synth.n_rois", a.n_rois),
                ("synth.series_len", a.series_len),
            ];
            for (k, v) in ints {
                if let Some(v) = v {
                    s.set(k, int(v))?;
                }
            }
            if let Some(v) = a.strength {
                s.set("synth.strength", v)?;
            }
            if let Some(v) = a.noise {
                s.set("synth.noise", v)?;
            }
            if let Some(v) = a.seed {
                s.set("synth.seed", v as i64)?;
            }
        }
        Command::Train(a) => {
            data_flags(&mut s, &a.data)?;
            for ablation in &a.ablate {
                match ablation {
                    Ablation::NoSfe => s.set("model.use_sfe", false)?,
                    Ablation::NoTfe => s.set("model.use_tfe", false)?,
                    Ablation::NoGroup => s.set("train.alpha", 0.0)?,
                    Ablation::NoPearson => s.set("model.use_pearson_graph", false)?,
                    Ablation::NoPositional => s.set("model.use_positional_encoding", false)?,
                }
            }
        }
        Command::Ablate(a) => data_flags(&mut s, a)?,
        Command::Eval(a) => {
            if let Some(p) = &a.checkpoint {
                s.set("checkpoint.path", path_value(p))?;
            }
            if let Some(p) = &a.manifest {
                s.set("data.manifest", path_value(p))?;
            }
        }
        Command::Gradcheck(a) => {
            if let Some(v) = a.tolerance {
                s.set("gradcheck.tolerance", v)?;
            }
            if let Some(v) = a.eps {
                s.set("gradcheck.eps", v)?;
            }
            if let Some(v) = a.seed {
                s.set("train.seed", v as i64)?;
            }
        }
        Command::Export(a) => {
            if let Some(kind) = a.what {
                s.set("export.what", kind.key())?;
            }
            if let Some(p) = &a.checkpoint {
                s.set("checkpoint.path", path_value(p))?;
            }
            if let Some(p) = &a.manifest {
                s.set("data.manifest", path_value(p))?;
            }
            if let Some(v) = a.fraction {
                s.set("export.fraction", v)?;
            }
            if a.signed {
                s.set("export.signed", true)?;
            }
            if let Some(v) = a.top {
                s.set("export.top", int(v))?;
            }
            if a.absolute {
                s.set("export.absolute", true)?;
            }
            if let Some(v) = &a.level {
                s.set_raw("export.level", v)?;
            }
        }
    }
    Ok(s)
}

fn data_flags(s: &mut Settings, a: &DataArgs) -> Result<(), CliError> {
    if let Some(p) = &a.manifest {
        s.set("data.manifest", path_value(p))?;
    }
    let ints = [
        ("model.levels", a.levels),
        ("train.epochs", a.epochs),
        ("train.folds", a.folds),
        ("train.workers", a.workers),
    ];
    for (k, v) in ints {
        if let Some(v) = v {
            s.set(k, v as i64)?;
        }
    }
    if let Some(v) = a.seed {
        s.set("train.seed", v as i64)?;
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    logging::init(cli.quiet);
    let result = settings_for(&cli).and_then(|s| commands::dispatch(&cli, &s));
    logging::close();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
