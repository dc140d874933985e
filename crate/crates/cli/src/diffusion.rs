use std::path::{Path, PathBuf};

use clap::Args;
use perceptlab_core::guidance::gaussian_latent;
use perceptlab_core::imagecore::{load_image, region_from_mask, RegionMask, DEFAULT_MASK_THRESHOLD};
use perceptlab_core::perception::region_mean_intensity;
use perceptlab_core::schedule::{export_trajectory, run_trajectory, Direction, Trajectory};
use perceptlab_core::evalreport::f6;
use serde::{Deserialize, Serialize};

use crate::{check_condition, create_out, load_backend, resolve_input, usage, CliError, Run, ScheduleArgs};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InvertArgs {
    /// PNG or PGM input, display units.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub backend: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Export every intermediate state, not just the endpoint.
    #[arg(long)]
    pub capture: bool,
    /// JSON list of `{"id", "mask"}` entries; mask paths are relative to
    /// the file. Region means are written per exported state.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub cfg_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub backend: PathBuf,
    /// Start from this image (display units) instead of a seeded latent.
    #[arg(long)]
    pub latent: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Sampling steps (default: the whole schedule).
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub capture: bool,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub cfg_scale: f64,
    #[arg(long, env = "PERCEPTLAB_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct RegionEntry {
    id: String,
    mask: PathBuf,
}

fn load_regions(path: &Path) -> Result<Vec<RegionMask>, CliError> {
    let text = std::fs::read_to_string(path).map_err(usage)?;
    let entries: Vec<RegionEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let img = load_image(base.join(&e.mask)).map_err(usage)?;
            region_from_mask(&e.id, &img, DEFAULT_MASK_THRESHOLD).map_err(usage)
        })
        .collect()
}

fn check_finite(traj: &Trajectory) -> Result<(), CliError> {
    match traj.states.iter().find(|s| !s.z.is_finite()) {
        Some(s) => Err(CliError::NonFinite(format!("state at step {}", s.t))),
        None => Ok(()),
    }
}

fn check_steps(steps: usize, n_inference: usize) -> Result<(), CliError> {
    if steps > n_inference {
        return Err(CliError::Usage(format!(
            "{steps} steps requested but the schedule has {n_inference} inference steps"
        )));
    }
    Ok(())
}

pub(crate) fn run_invert(a: &mut InvertArgs) -> Result<Run, CliError> {
    let mut inputs = vec![resolve_input(&mut a.image, "image")?];
    let backend = load_backend(&mut a.backend)?;
    inputs.push(a.backend.clone());
    check_condition(&backend, a.condition.as_deref())?;
    let sched = a.schedule.build()?;
    check_steps(a.steps, sched.n_inference())?;
    let image = load_image(&a.image).map_err(usage)?;
    let regions = match &mut a.regions {
        Some(p) => {
            inputs.push(resolve_input(p, "regions file")?);
            let regions = load_regions(p)?;
            if let Some(r) = regions.iter().find(|r| !r.fits(&image)) {
                return Err(CliError::Usage(format!(
                    "region `{}` is {}x{}, image is {}",
                    r.id(),
                    r.height(),
                    r.width(),
                    image.shape_string()
                )));
            }
            regions
        }
        None => vec![],
    };

    let model = backend.guided(a.condition.as_deref(), a.cfg_scale);
    let z0 = image.to_model_units()?;
    let traj = run_trajectory(&z0, &sched, &model, Direction::Invert, a.steps, a.capture)?;
    check_finite(&traj)?;

    create_out(&a.out)?;
    export_trajectory(&traj, &sched, &a.out)?;
    if !regions.is_empty() {
        let mut w = csv::Writer::from_path(a.out.join("region_means.csv"))?;
        w.write_record(["state", "t", "region", "channel", "mean"])?;
        for (i, state) in traj.states.iter().enumerate() {
            let display = state.z.to_display_units()?;
            for r in &regions {
                let m = region_mean_intensity(&display, r)?;
                for (c, v) in m.means.iter().enumerate() {
                    w.write_record([i.to_string(), state.t.to_string(), r.id().to_string(), c.to_string(), f6(*v)])?;
                }
            }
        }
        w.flush()?;
    }
    println!(
        "inverted {} steps; wrote {} states to {}",
        a.steps,
        traj.states.len(),
        a.out.display()
    );
    Ok(Run::done(&a.out, inputs))
}

pub(crate) fn run_sample(a: &mut SampleArgs) -> Result<Run, CliError> {
    let backend = load_backend(&mut a.backend)?;
    let mut inputs = vec![a.backend.clone()];
    check_condition(&backend, a.condition.as_deref())?;
    let sched = a.schedule.build()?;
    let steps = a.steps.unwrap_or(sched.n_inference());
    a.steps = Some(steps);
    check_steps(steps, sched.n_inference())?;
    let seed = a.seed.unwrap_or(0);
    a.seed = Some(seed);
    let z = match &mut a.latent {
        Some(p) => {
            inputs.push(resolve_input(p, "latent image")?);
            load_image(&*p).map_err(usage)?.to_model_units()?
        }
        None => gaussian_latent(a.height, a.width, a.channels, seed).map_err(usage)?,
    };

    let model = backend.guided(a.condition.as_deref(), a.cfg_scale);
    let traj = run_trajectory(&z, &sched, &model, Direction::Sample, steps, a.capture)?;
    check_finite(&traj)?;

    create_out(&a.out)?;
    export_trajectory(&traj, &sched, &a.out)?;
    println!("sampled {steps} steps; wrote {} states to {}", traj.states.len(), a.out.display());
    Ok(Run::done(&a.out, inputs).seed("latent", seed))
}
