use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use perceptlab_core::denoiser::DenoiserBackend;
use perceptlab_core::evalreport::f6;
use perceptlab_core::guidance::{
    gamma_sweep, generate_with_guidance, target_means, GenerationOutput, GuidanceConfig, LossBreakdown, Target,
};
use perceptlab_core::imagecore::save_image;
use perceptlab_core::schedule::{export_trajectory, NoiseSchedule};
use serde::{Deserialize, Serialize};

use crate::{check_condition, create_out, load_backend, resolve_input, usage, write_json, CliError, Run, ScheduleArgs};

pub const DEFAULTS_FILE: &str = "guidance_defaults.json";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Guidance config JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required unless `--emit-defaults` is given.
    #[arg(long)]
    pub backend: Option<PathBuf>,
    /// Comma-separated gamma values; one output directory per value, all
    /// from the same seed.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    /// Overwrite flat target regions with their source value in the output.
    #[arg(long)]
    pub paste_targets: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Export the sampling trajectory (single runs only).
    #[arg(long)]
    pub capture: bool,
    /// Write the default guidance config to the output directory and stop.
    #[arg(long)]
    pub emit_defaults: bool,
    /// Latent seed; overrides the config's.
    #[arg(long, env = "PERCEPTLAB_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Resolved guidance config, recorded so reruns do not reread `config`.
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<GuidanceConfig>,
}

#[derive(Debug, Serialize)]
struct TargetResult<'a> {
    id: &'a str,
    desired: &'a [f64],
    /// Region mean of `z + O` per channel.
    means: Vec<f64>,
    abs_error: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    gamma: f64,
    seed: u64,
    final_loss: &'a LossBreakdown,
    initial_total: Option<f64>,
    final_total: Option<f64>,
    targets: Vec<TargetResult<'a>>,
}

fn write_run(dir: &Path, out: &GenerationOutput, cfg: &GuidanceConfig, targets: &[Target]) -> Result<(), CliError> {
    create_out(dir)?;
    save_image(&out.image, dir.join("image.png"))?;
    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    w.write_record(["step", "inner", "total", "vi", "sim"])?;
    for e in &out.trace {
        w.write_record([e.step.to_string(), e.inner.to_string(), f6(e.total), f6(e.vi), f6(e.sim)])?;
    }
    w.flush()?;
    let means = target_means(&out.latent, targets)?;
    let summary = RunSummary {
        gamma: cfg.gamma,
        seed: cfg.seed,
        final_loss: &out.final_loss,
        initial_total: out.trace.first().map(|e| e.total),
        final_total: out.trace.last().map(|e| e.total),
        targets: targets
            .iter()
            .zip(means)
            .map(|(t, m)| TargetResult {
                id: t.region.id(),
                desired: &t.desired,
                abs_error: m.iter().zip(&t.desired).map(|(m, k)| (m - k).abs()).collect(),
                means: m,
            })
            .collect(),
    };
    write_json(&dir.join("summary.json"), &summary)
}

fn resolve_config(a: &mut GenerateArgs) -> Result<GuidanceConfig, CliError> {
    let mut cfg = match (&a.resolved, &mut a.config) {
        (Some(cfg), _) => cfg.clone(),
        (None, Some(path)) => {
            resolve_input(path, "guidance config")?;
            let text = fs::read_to_string(&*path).map_err(usage)?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, None) => GuidanceConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    a.seed = Some(cfg.seed);
    if a.paste_targets {
        cfg.paste_targets = true;
    }
    cfg.validate().map_err(usage)?;
    if let Some(g) = a.gamma.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(CliError::Usage(format!("gamma must be finite and >= 0, got {g}")));
    }
    a.resolved = Some(cfg.clone());
    Ok(cfg)
}

fn generate(
    a: &GenerateArgs,
    sched: &NoiseSchedule,
    backend: &DenoiserBackend,
    cfg: &GuidanceConfig,
    targets: &[Target],
) -> Result<(), CliError> {
    if a.gamma.is_empty() {
        let out = generate_with_guidance(sched, backend, cfg, a.capture)?;
        create_out(&a.out)?;
        write_run(&a.out, &out, cfg, targets)?;
        if let Some(traj) = &out.trajectory {
            export_trajectory(traj, sched, a.out.join("trajectory"))?;
        }
        println!(
            "gamma {}: final loss {} (vi {}, sim {})",
            f6(cfg.gamma),
            f6(out.final_loss.total),
            f6(out.final_loss.vi),
            f6(out.final_loss.sim)
        );
        return Ok(());
    }
    let outs = gamma_sweep(sched, backend, cfg, &a.gamma)?;
    create_out(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("sweep.csv"))?;
    w.write_record(["run", "gamma", "total", "vi", "sim"])?;
    for (i, (gamma, out)) in a.gamma.iter().zip(&outs).enumerate() {
        let run_cfg = GuidanceConfig {
            gamma: *gamma,
            ..cfg.clone()
        };
        write_run(&a.out.join(format!("gamma_{i:02}")), out, &run_cfg, targets)?;
        let l = &out.final_loss;
        w.write_record([i.to_string(), f6(*gamma), f6(l.total), f6(l.vi), f6(l.sim)])?;
        println!("gamma {}: final loss {} (vi {}, sim {})", f6(*gamma), f6(l.total), f6(l.vi), f6(l.sim));
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn run(a: &mut GenerateArgs) -> Result<Run, CliError> {
    if a.emit_defaults {
        create_out(&a.out)?;
        let path = a.out.join(DEFAULTS_FILE);
        write_json(&path, &GuidanceConfig::default())?;
        println!("wrote {}", path.display());
        return Ok(Run::done(&a.out, vec![]));
    }
    let cfg = resolve_config(a)?;
    let targets = cfg.build_targets().map_err(usage)?;
    let backend_path = a
        .backend
        .as_mut()
        .ok_or_else(|| CliError::Usage("--backend is required".into()))?;
    let backend = load_backend(backend_path)?;
    let mut inputs = vec![backend_path.clone()];
    inputs.extend(a.config.clone());
    check_condition(&backend, cfg.condition.as_deref())?;
    let sched = a.schedule.build()?;
    generate(a, &sched, &backend, &cfg, &targets)?;
    Ok(Run::done(&a.out, inputs).seed("latent", cfg.seed))
}
