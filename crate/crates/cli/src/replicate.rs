use std::path::PathBuf;

use clap::Args;
use perceptlab_core::evalreport::{emit_report, f6, run_replication, ReportFormat, DEFAULT_TAUS};
use perceptlab_core::stimuli::{load_manifest, Expected};
use serde::{Deserialize, Serialize};

use crate::{check_condition, create_out, load_backend, resolve_input, usage, CliError, Outcome, Run, ScheduleArgs};

pub(crate) fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(format!("unknown format `{other}` (csv or json)")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplicateArgs {
    /// Stimulus manifest (`stimuli.json`).
    #[arg(long)]
    pub stimuli: PathBuf,
    #[arg(long)]
    pub backend: PathBuf,
    /// Inversion depths; one report per value under `steps_<k>/`.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10])]
    pub steps: Vec<usize>,
    /// Alignment thresholds, each in (0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAUS)]
    pub tau: Vec<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_format, default_values = ["csv", "json"])]
    pub format: Vec<ReportFormat>,
    /// Also write row profiles through the first labelled region.
    #[arg(long)]
    pub profiles: bool,
    /// Dataset name in the report (default: the manifest's directory name).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub cfg_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn run(a: &mut ReplicateArgs) -> Result<Run, CliError> {
    let manifest = resolve_input(&mut a.stimuli, "stimulus manifest")?;
    let backend = load_backend(&mut a.backend)?;
    check_condition(&backend, a.condition.as_deref())?;
    let sched = a.schedule.build()?;
    if a.steps.is_empty() || a.tau.is_empty() {
        return Err(CliError::Usage("--steps and --tau need at least one value".into()));
    }
    if let Some(k) = a.steps.iter().find(|&&k| k > sched.n_inference()) {
        return Err(CliError::Usage(format!(
            "{k} steps requested but the schedule has {} inference steps",
            sched.n_inference()
        )));
    }
    if let Some(t) = a.tau.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(CliError::Usage(format!("tau must be in (0, 1], got {t}")));
    }
    let all = load_manifest(&manifest).map_err(usage)?;
    let total = all.len();
    let stimuli: Vec<_> = all
        .into_iter()
        .filter(|s| s.regions.iter().any(|r| r.expected != Expected::None))
        .collect();
    if stimuli.is_empty() {
        return Err(CliError::Usage(format!(
            "{} lists no stimulus with a labelled region",
            manifest.display()
        )));
    }
    if stimuli.len() < total {
        println!("skipping {} stimuli without labelled regions", total - stimuli.len());
    }
    let dataset = a.dataset.clone().unwrap_or_else(|| {
        manifest
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "stimuli".into())
    });
    a.dataset = Some(dataset.clone());

    let model = backend.guided(a.condition.as_deref(), a.cfg_scale);
    let params = a.schedule.params();
    let mut reports = Vec::new();
    for &k in &a.steps {
        let report = run_replication(&dataset, &stimuli, &params, &backend.id, &model, k, &a.tau).map_err(usage)?;
        reports.push(report);
    }

    create_out(&a.out)?;
    let mut outcome = Outcome::Done;
    let mut all_failed = true;
    for report in &reports {
        emit_report(report, &a.format, a.out.join(format!("steps_{}", report.steps)), a.profiles)?;
        let ok = report.stimuli.len() - report.failures.len();
        all_failed &= ok == 0;
        if !report.failures.is_empty() {
            outcome = Outcome::Partial;
        }
        let pas: Vec<String> = report
            .pas
            .iter()
            .map(|p| format!("tau {} -> {}", f6(p.tau), p.pas.map(f6).unwrap_or_else(|| "n/a".into())))
            .collect();
        println!(
            "{} steps: {ok}/{} stimuli ok; PAS {}",
            report.steps,
            report.stimuli.len(),
            pas.join(", ")
        );
    }
    if all_failed {
        return Err(CliError::Fatal("every stimulus failed; see the reports for details".into()));
    }
    let mut run = Run::done(&a.out, vec![manifest, a.backend.clone()]);
    run.outcome = outcome;
    Ok(run)
}
