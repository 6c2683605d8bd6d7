//! `dsmfuse`: synthesize scenes, train and apply DSM refinement networks,
//! evaluate, render and profile rasters.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 numeric failure,
//! 4 alignment, 5 empty domain, 6 range.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsmfuse::synthcity::DEGRADE_PRESETS;

use manifest::{unix_now, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dsmfuse::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use dsmfuse::Error as E;
        match self {
            CliError::Usage(_) | CliError::Manifest(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::NonFinite(_) | E::Optimizer(_) => 3,
                E::Alignment(_) => 4,
                E::EmptyDomain(_) => 5,
                E::Range(_) => 6,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "dsmfuse",
    version,
    about = "Refine photogrammetric DSMs with a two-stream conditional GAN"
)]
pub struct Cli {
    /// Worker threads for tile inference; 1 is the reference setting.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,
    /// Run manifest path [default: next to the main output]
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one synthetic scene directory.
    Synth(SynthArgs),
    /// Train a generator on scene directories.
    Train(TrainArgs),
    /// Refine a DSM with a trained checkpoint.
    Infer(InferArgs),
    /// Compare predictions with ground truth inside a mask.
    Eval(EvalArgs),
    /// Render a raster as a PNG.
    Render(RenderArgs),
    /// Sample height profiles along a line.
    Profile(ProfileArgs),
    /// Rerun the command recorded in a run manifest, single-threaded.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Edge length in pixels.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 20)]
    pub buildings: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "moderate", value_parser = clap::builder::PossibleValuesParser::new(DEGRADE_PRESETS))]
    pub degrade_preset: String,
    /// Seed of the DSM degradation [default: --seed]
    #[arg(long)]
    pub degrade_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Hybrid,
    Wnet,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Patch 64, depth 6, width 16, 30 epochs.
    Desk,
    /// Patch 256, depth 8, width 64, 200 epochs.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdversarialArg {
    Lsgan,
    Bce,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scene directories.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Held-out scene directory for per-epoch validation.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Variant::Hybrid)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patches_per_epoch: Option<usize>,
    /// L1 weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Normal-vector loss weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = AdversarialArg::Lsgan)]
    pub adversarial: AdversarialArg,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Final checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log [default: train_log.csv beside --out]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Validation log [default: val_log.csv beside --out]
    #[arg(long)]
    pub val_log: Option<PathBuf>,
    /// Epochs between intermediate checkpoints; 0 writes only the final one.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Condition the discriminator on PAN as well.
    #[arg(long)]
    pub disc_on_pan: bool,
    /// Append per-step wall time to the loss log.
    #[arg(long)]
    pub wall_time: bool,
    /// Continue from a checkpoint written with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub dsm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub pred: Vec<PathBuf>,
    /// Row labels, one per --pred [default: file stems]
    #[arg(long, num_args = 1..)]
    pub label: Vec<String>,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderModeArg {
    Hillshade,
    Colormap,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = RenderModeArg::Hillshade)]
    pub mode: RenderModeArg,
    /// Sun azimuth in degrees clockwise from north.
    #[arg(long, default_value_t = 315.0)]
    pub azimuth: f64,
    #[arg(long, default_value_t = 45.0)]
    pub altitude: f64,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Column names, one per --input [default: file stems]
    #[arg(long, num_args = 1..)]
    pub label: Vec<String>,
    /// Start point as world `x,y`.
    #[arg(long, allow_hyphen_values = true)]
    pub from: String,
    /// End point as world `x,y`.
    #[arg(long, allow_hyphen_values = true)]
    pub to: String,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Paths and seeds a command reports for its manifest.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Vec<(String, u64)>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn default_manifest_path(command: &Command) -> PathBuf {
    match command {
        Command::Synth(a) => a.out.join("run.manifest"),
        Command::Train(a) => with_suffix(&a.out, ".manifest"),
        Command::Infer(a) => with_suffix(&a.out, ".manifest"),
        Command::Eval(a) => with_suffix(&a.out, ".manifest"),
        Command::Render(a) => with_suffix(&a.out, ".manifest"),
        Command::Profile(a) => with_suffix(&a.out, ".manifest"),
        Command::Replay(a) => with_suffix(&a.manifest, ".replay"),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Infer(_) => "infer",
        Command::Eval(_) => "eval",
        Command::Render(_) => "render",
        Command::Profile(_) => "profile",
        Command::Replay(_) => "replay",
    }
}

fn replay(args: &ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.command == "replay" {
        return Err(CliError::Manifest("a replay cannot be replayed".into()));
    }
    let target = with_suffix(&args.manifest, ".replay");
    let argv = std::iter::once("dsmfuse".to_string())
        .chain(recorded.args.iter().cloned())
        .chain(["--threads".to_string(), "1".to_string()]);
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| CliError::Manifest(format!("recorded arguments do not parse: {e}")))?;
    if !recorded.cwd.as_os_str().is_empty() {
        std::env::set_current_dir(&recorded.cwd).map_err(|e| CliError::io(&recorded.cwd, e))?;
    }
    execute(cli, Some(target))
}

/// Runs one parsed command and writes its manifest, also on failure.
pub fn execute(cli: Cli, manifest_path: Option<PathBuf>) -> CliResult<()> {
    if let Command::Replay(args) = &cli.command {
        return replay(args);
    }
    let started = unix_now();
    let threads = cli.threads as usize;
    let path = manifest_path
        .or(cli.manifest.clone())
        .unwrap_or_else(|| default_manifest_path(&cli.command));
    let args = commands::full_args(&cli.command)?;
    let result = commands::dispatch(&cli.command, threads);
    let (artifacts, code) = match &result {
        Ok(a) => (a, 0),
        Err(e) => (&Artifacts::default(), e.exit_code() as i32),
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command_name(&cli.command).to_string(),
        args,
        cwd: std::env::current_dir().unwrap_or_default(),
        threads,
        seeds: artifacts.seeds.clone(),
        inputs: artifacts.inputs.clone(),
        outputs: artifacts.outputs.clone(),
        started,
        finished: unix_now(),
        exit_code: code,
    };
    let saved = path
        .parent()
        .is_none_or(|p| p.as_os_str().is_empty() || p.exists())
        && manifest.save(&path).is_ok();
    match result {
        Ok(_) if !saved => Err(CliError::Manifest(format!(
            "could not write {}",
            path.display()
        ))),
        Ok(_) => Ok(()),
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
