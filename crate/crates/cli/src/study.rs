use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Args;
use perceptlab_core::evalreport::{emit_psych_summary, emit_report, f6, summarize_psychophysics, ReplicationReport, ReportFormat};
use perceptlab_psyserve::{load_sessions, load_sets, Store};
use serde::{Deserialize, Serialize};

use crate::replicate::parse_format;
use crate::{create_out, resolve_input, usage, CliError, Outcome, Run};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    /// Directory of study set JSON files.
    #[arg(long)]
    pub sets: PathBuf,
    /// Root that study set image paths are relative to.
    #[arg(long)]
    pub stimuli: PathBuf,
    /// Data directory; session logs go to `<out>/sessions`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Static observer client assets, served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Session log directory to summarize (needs `--sets`).
    #[arg(long, requires = "sets")]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub sets: Option<PathBuf>,
    /// A `replication.json` to re-emit as tables.
    #[arg(long)]
    pub replication: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_format, default_values = ["csv", "json"])]
    pub format: Vec<ReportFormat>,
    #[arg(long)]
    pub profiles: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn prepare_serve(a: &mut ServeArgs) -> Result<(Run, Store, SocketAddr, Option<PathBuf>), CliError> {
    let mut inputs = vec![resolve_input(&mut a.sets, "sets directory")?, resolve_input(&mut a.stimuli, "stimuli directory")?];
    if let Some(ui) = &mut a.ui {
        inputs.push(resolve_input(ui, "ui directory")?);
    }
    create_out(&a.out)?;
    let store = Store::open(&a.sets, a.out.join("sessions"), &a.stimuli).map_err(usage)?;
    Ok((Run::done(&a.out, inputs), store, a.addr, a.ui.clone()))
}

pub(crate) fn serve(store: Store, addr: SocketAddr, ui: Option<PathBuf>) -> Result<Outcome, CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    println!("serving on http://{addr}");
    rt.block_on(perceptlab_psyserve::serve(store, addr, ui.as_deref()))?;
    Ok(Outcome::Done)
}

pub(crate) fn run_report(a: &mut ReportArgs) -> Result<Run, CliError> {
    if a.sessions.is_none() && a.replication.is_none() {
        return Err(CliError::Usage("give --sessions/--sets or --replication".into()));
    }
    let mut inputs = Vec::new();
    let mut psych = None;
    if let (Some(sessions), Some(sets)) = (&mut a.sessions, &mut a.sets) {
        inputs.push(resolve_input(sessions, "sessions directory")?);
        inputs.push(resolve_input(sets, "sets directory")?);
        let records = load_sessions(sessions).map_err(usage)?;
        let sets: Vec<_> = load_sets(sets).map_err(usage)?.into_values().collect();
        psych = Some(summarize_psychophysics(&records, &sets).map_err(usage)?);
    }
    let mut replication = None;
    if let Some(path) = &mut a.replication {
        inputs.push(resolve_input(path, "replication report")?);
        let text = std::fs::read_to_string(&*path)?;
        let report: ReplicationReport =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        replication = Some(report);
    }

    create_out(&a.out)?;
    if let Some(s) = &psych {
        emit_psych_summary(s, &a.format, &a.out)?;
        let fmt = |v: Option<f64>| v.map(f6).unwrap_or_else(|| "n/a".into());
        println!(
            "{} observers; illusion mean {} median {} std {}; control mean {} median {} std {}",
            s.observers.len(),
            fmt(s.illusion.mean),
            fmt(s.illusion.median),
            fmt(s.illusion.std),
            fmt(s.control.mean),
            fmt(s.control.median),
            fmt(s.control.std)
        );
    }
    if let Some(r) = &replication {
        emit_report(r, &a.format, &a.out, a.profiles)?;
        println!("re-emitted replication report for `{}` ({} steps)", r.dataset, r.steps);
    }
    Ok(Run::done(&a.out, inputs))
}
