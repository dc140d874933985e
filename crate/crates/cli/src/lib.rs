//! `perceptlab` command-line front end.
//!
//! Every command writes its outputs plus one `run_manifest.json` into its
//! output directory. The manifest holds the fully resolved configuration,
//! so `perceptlab rerun --manifest <file>` reproduces the outputs.
//!
//! Exit codes: 0 success, 1 fatal, 2 partial failure, 3 numeric abort,
//! 64 usage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use perceptlab_core::denoiser::DenoiserBackend;
use perceptlab_core::schedule::{
    NoiseSchedule, ScheduleParams, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_N_INFERENCE, DEFAULT_T_TRAIN,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod diffusion;
mod fit;
mod generate;
mod make_stimuli;
pub mod manifest;
mod replicate;
mod study;

pub use diffusion::{InvertArgs, SampleArgs};
pub use fit::{BackendKind, FitArgs, PaddingArg};
pub use generate::GenerateArgs;
pub use make_stimuli::MakeStimuliArgs;
pub use manifest::{RerunArgs, RunManifest, MANIFEST_FILE};
pub use replicate::ReplicateArgs;
pub use study::{ReportArgs, ServeArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "perceptlab", version, about = "Diffusion inversion and brightness-illusion experiments")]
pub struct Cli {
    /// Worker threads for per-stimulus and per-sweep work (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Command {
    /// Generate procedural illusion stimuli with region masks.
    MakeStimuli(MakeStimuliArgs),
    /// Build or fit a noise-prediction backend.
    FitDenoiser(FitArgs),
    /// Run DDIM inversion on one image.
    Invert(InvertArgs),
    /// Run DDIM sampling from a seeded latent or an image.
    Sample(SampleArgs),
    /// Invert a stimulus set and score perceptual alignment.
    Replicate(ReplicateArgs),
    /// Target-guided generation, optionally sweeping gamma.
    Generate(GenerateArgs),
    /// Host the psychophysics session service.
    Serve(ServeArgs),
    /// Summarize psychophysics sessions or re-emit a replication report.
    Report(ReportArgs),
    /// Re-run a command from its run manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeStimuli(_) => "make-stimuli",
            Command::FitDenoiser(_) => "fit-denoiser",
            Command::Invert(_) => "invert",
            Command::Sample(_) => "sample",
            Command::Replicate(_) => "replicate",
            Command::Generate(_) => "generate",
            Command::Serve(_) => "serve",
            Command::Report(_) => "report",
            Command::Rerun(_) => "rerun",
        }
    }

    fn out_mut(&mut self) -> Option<&mut PathBuf> {
        Some(match self {
            Command::MakeStimuli(a) => &mut a.out,
            Command::FitDenoiser(a) => &mut a.out,
            Command::Invert(a) => &mut a.out,
            Command::Sample(a) => &mut a.out,
            Command::Replicate(a) => &mut a.out,
            Command::Generate(a) => &mut a.out,
            Command::Serve(a) => &mut a.out,
            Command::Report(a) => &mut a.out,
            Command::Rerun(_) => return None,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = DEFAULT_T_TRAIN)]
    pub t_train: usize,
    #[arg(long, default_value_t = DEFAULT_BETA_START)]
    pub beta_start: f64,
    #[arg(long, default_value_t = DEFAULT_BETA_END)]
    pub beta_end: f64,
    /// Evenly spaced inference steps over the training schedule.
    #[arg(long, default_value_t = DEFAULT_N_INFERENCE)]
    pub n_inference: usize,
}

impl ScheduleArgs {
    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            t_train: self.t_train,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            n_inference: self.n_inference,
        }
    }

    fn build(&self) -> Result<NoiseSchedule, CliError> {
        self.params().build().map_err(usage)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Fatal(String),

    #[error(transparent)]
    Core(#[from] perceptlab_core::Error),
}

fn non_finite(e: &perceptlab_core::Error) -> bool {
    match e {
        perceptlab_core::Error::NonFinite { .. } => true,
        perceptlab_core::Error::Backend { source, .. } => non_finite(source),
        _ => false,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NonFinite(_) => EXIT_NUMERIC,
            CliError::Core(e) if non_finite(e) => EXIT_NUMERIC,
            _ => EXIT_FATAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Fatal(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Fatal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Fatal(e.to_string())
    }
}

pub(crate) fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Done => EXIT_OK,
            Outcome::Partial => EXIT_PARTIAL,
        }
    }
}

/// What a finished command reports back for its manifest.
#[derive(Debug)]
pub(crate) struct Run {
    pub out: PathBuf,
    pub outcome: Outcome,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
}

impl Run {
    pub fn done(out: &Path, inputs: Vec<PathBuf>) -> Self {
        Self {
            out: out.to_path_buf(),
            outcome: Outcome::Done,
            seeds: BTreeMap::new(),
            inputs,
        }
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }
}

/// Checks an input exists and rewrites it as an absolute path, so the
/// recorded configuration does not depend on the working directory.
pub(crate) fn resolve_input(path: &mut PathBuf, what: &str) -> Result<PathBuf, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{what} not found: {}", path.display())));
    }
    *path = fs::canonicalize(&*path)?;
    Ok(path.clone())
}

pub(crate) fn load_backend(path: &mut PathBuf) -> Result<DenoiserBackend, CliError> {
    resolve_input(path, "backend file")?;
    DenoiserBackend::load(&*path).map_err(|e| CliError::Usage(format!("backend {}: {e}", path.display())))
}

pub(crate) fn check_condition(backend: &DenoiserBackend, condition: Option<&str>) -> Result<(), CliError> {
    match condition {
        Some(c) if !backend.conditions.contains_key(c) => Err(CliError::Usage(format!(
            "backend `{}` has no condition `{c}`",
            backend.id
        ))),
        _ => Ok(()),
    }
}

pub(crate) fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Fatal(format!("creating {}: {e}", dir.display())))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Fatal(format!("writing {}: {e}", path.display())))
}

/// Runs one command (resolving `rerun` first) and writes its manifest.
pub fn execute(mut command: Command, jobs: Option<usize>) -> Result<Outcome, CliError> {
    if let Command::Rerun(r) = &command {
        command = manifest::load_for_rerun(r)?;
    }
    let start = Instant::now();
    let run = match &mut command {
        Command::MakeStimuli(a) => make_stimuli::run(a)?,
        Command::FitDenoiser(a) => fit::run(a)?,
        Command::Invert(a) => diffusion::run_invert(a)?,
        Command::Sample(a) => diffusion::run_sample(a)?,
        Command::Replicate(a) => replicate::run(a)?,
        Command::Generate(a) => generate::run(a)?,
        Command::Report(a) => study::run_report(a)?,
        Command::Serve(a) => {
            // Long-running: the manifest is written before serving starts.
            let (run, store, addr, ui) = study::prepare_serve(a)?;
            manifest::write(&command, &run, start.elapsed(), jobs)?;
            return study::serve(store, addr, ui);
        }
        Command::Rerun(_) => return Err(CliError::Usage("a run manifest cannot hold `rerun`".into())),
    };
    manifest::write(&command, &run, start.elapsed(), jobs)?;
    Ok(run.outcome)
}

/// Runs a parsed command line inside a rayon pool sized by `--jobs`.
pub fn run(cli: Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FATAL;
        }
    };
    let jobs = cli.jobs;
    match pool.install(|| execute(cli.command, jobs)) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            }
        }
    }
}
