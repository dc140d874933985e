//! Run manifests: the reproducibility record written next to every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::{write_json, CliError, Command, Run};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved arguments; enough to re-run the command.
    pub config: serde_json::Value,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    /// Files in the output directory, relative to it.
    pub outputs: Vec<String>,
    pub exit_code: i32,
    pub jobs: Option<usize>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// A `run_manifest.json` written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (default: the recorded one).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn list_files(root: &Path, dir: &Path, acc: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, acc)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            let rel = rel.to_string_lossy().replace('\\', "/");
            if rel != MANIFEST_FILE {
                acc.push(rel);
            }
        }
    }
    Ok(())
}

pub(crate) fn write(command: &Command, run: &Run, elapsed: Duration, jobs: Option<usize>) -> Result<PathBuf, CliError> {
    let mut outputs = Vec::new();
    if !matches!(command, Command::Serve(_)) {
        list_files(&run.out, &run.out, &mut outputs)?;
    }
    outputs.sort();
    let serde_json::Value::Object(mut tagged) = serde_json::to_value(command)? else {
        unreachable!("commands serialize as objects")
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        config: tagged.remove("config").unwrap_or_default(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: run.seeds.clone(),
        inputs: run.inputs.clone(),
        outputs,
        exit_code: run.outcome.exit_code(),
        jobs,
        duration_ms: elapsed.as_millis() as u64,
    };
    let path = run.out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("run manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("run manifest {}: {e}", path.display())))
}

pub(crate) fn load_for_rerun(args: &RerunArgs) -> Result<Command, CliError> {
    let m = read(&args.manifest)?;
    let value = serde_json::json!({ "command": m.command, "config": m.config });
    let mut command: Command = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("run manifest {}: {e}", args.manifest.display())))?;
    if let (Some(out), Some(slot)) = (&args.out, command.out_mut()) {
        *slot = out.clone();
    }
    Ok(command)
}
