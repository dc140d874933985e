//! Target-guided generation.
//!
//! Each target adds a source pattern `O` to the latent over its region. The
//! loss pulls the region mean of `z + O` toward a desired value `k` while
//! keeping `z` itself close to `O`:
//!
//! ```text
//! L     = gamma * L_vi + beta * L_sim
//! L_vi  = sum_p sum_c | mean_{r_p}(z + O)_c - k_c |
//! L_sim = sum_p mean_{i in r_p} (z_i - O_i)^2
//! ```
//!
//! Both terms touch `z` only through region sums, so the gradient is exact
//! and cheap. A generation run alternates `inner_steps` gradient updates with
//! one DDIM sampling step.

use std::ops::RangeInclusive;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserBackend;
use crate::error::{Error, Result};
use crate::imagecore::{ensure_disjoint, Domain, ImageGrid, RegionMask};
use crate::schedule::{ddim_sample_step, trajectory_path, Direction, NoiseSchedule, Trajectory, TrajectoryState};
use crate::seeds::rng;

/// What a target adds to the latent over its region (model units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum TargetSource {
    /// One value per channel.
    Flat(Vec<f64>),
    /// One value per region pixel and channel, pixels in row-major order.
    Field(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub region: RegionMask,
    pub source: TargetSource,
    /// Desired per-channel region mean of `z + O`.
    pub desired: Vec<f64>,
}

impl Target {
    pub fn flat(region: RegionMask, source: Vec<f64>, desired: Vec<f64>) -> Self {
        Self {
            region,
            source: TargetSource::Flat(source),
            desired,
        }
    }

    fn source_at(&self, j: usize, c: usize, channels: usize) -> f64 {
        match &self.source {
            TargetSource::Flat(v) => v[c],
            TargetSource::Field(v) => v[j * channels + c],
        }
    }

    fn validate(&self, img: &ImageGrid) -> Result<()> {
        let ch = img.channels();
        if !self.region.fits(img) {
            return Err(Error::shape(
                format!("{}x{}", img.height(), img.width()),
                format!(
                    "{}x{} (target `{}`)",
                    self.region.height(),
                    self.region.width(),
                    self.region.id()
                ),
            ));
        }
        let want = match &self.source {
            TargetSource::Flat(v) => (v.len(), ch),
            TargetSource::Field(v) => (v.len(), self.region.pixel_count() * ch),
        };
        if want.0 != want.1 || self.desired.len() != ch {
            return Err(Error::InvalidParameter(format!(
                "target `{}` needs {} source values and {ch} desired values",
                self.region.id(),
                want.1
            )));
        }
        Ok(())
    }
}

/// Serializable rectangular target used in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRect {
    pub id: String,
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
    pub source: TargetSource,
    pub desired: Vec<f64>,
}

impl TargetRect {
    pub fn to_target(&self, height: usize, width: usize) -> Result<Target> {
        Ok(Target {
            region: RegionMask::rect(&self.id, height, width, self.y, self.x, self.height, self.width)?,
            source: self.source.clone(),
            desired: self.desired.clone(),
        })
    }
}

/// How the per-channel mean mismatch enters `L_vi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptNorm {
    #[default]
    Abs,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Gradient updates at `t`, then the DDIM step away from `t`.
    #[default]
    UpdateThenStep,
    /// The DDIM step into `t`, then gradient updates at `t` (the clean
    /// endpoint included).
    StepThenUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub gamma: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub step_size: f64,
    pub cfg_scale: f64,
    pub condition: Option<String>,
    pub paste_targets: bool,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub norm: PerceptNorm,
    pub order: UpdateOrder,
    /// Only guide at diffusion steps inside this inclusive range.
    pub guide_steps: Option<[usize; 2]>,
    pub targets: Vec<TargetRect>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        let (h, w) = (32, 32);
        let square = |id: &str, x: usize, k: f64| TargetRect {
            id: id.to_string(),
            y: 13,
            x,
            height: 6,
            width: 6,
            source: TargetSource::Flat(vec![0.0]),
            desired: vec![k],
        };
        Self {
            gamma: 0.5,
            beta: 1.0,
            inner_steps: 5,
            step_size: 0.1,
            cfg_scale: 10.0,
            condition: None,
            paste_targets: false,
            seed: 0,
            height: h,
            width: w,
            channels: 1,
            norm: PerceptNorm::Abs,
            order: UpdateOrder::UpdateThenStep,
            guide_steps: None,
            targets: vec![square("dark", 6, -0.2), square("light", 20, 0.2)],
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("gamma and beta must be finite and >= 0, got {} and {}", self.gamma, self.beta));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be > 0, got {}", self.step_size));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return bad(format!("cfg scale must be >= 0, got {}", self.cfg_scale));
        }
        if self.height == 0 || self.width == 0 || !matches!(self.channels, 1 | 3) {
            return bad(format!(
                "invalid canvas {}x{}x{}",
                self.height, self.width, self.channels
            ));
        }
        if let Some([lo, hi]) = self.guide_steps {
            if lo > hi {
                return bad(format!("empty guidance step range [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    pub fn build_targets(&self) -> Result<Vec<Target>> {
        self.targets
            .iter()
            .map(|t| t.to_target(self.height, self.width))
            .collect()
    }

    fn guides_at(&self, t: usize) -> bool {
        self.guide_steps
            .map(|[lo, hi]| RangeInclusive::new(lo, hi).contains(&t))
            .unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub vi: f64,
    pub sim: f64,
    /// `[target][channel]` mismatch terms.
    pub percept: Vec<Vec<f64>>,
    /// Set when there were no targets (the loss is then zero).
    pub no_targets: bool,
}

fn check_targets(z: &ImageGrid, targets: &[Target]) -> Result<()> {
    for t in targets {
        t.validate(z)?;
    }
    ensure_disjoint(targets.iter().map(|t| &t.region))
}

/// `z + O` on every target region, `z` elsewhere.
pub fn apply_targets(z: &ImageGrid, targets: &[Target]) -> Result<ImageGrid> {
    check_targets(z, targets)?;
    let ch = z.channels();
    let mut data = z.data().to_vec();
    for t in targets {
        for (j, p) in t.region.indices().enumerate() {
            for c in 0..ch {
                data[p * ch + c] += t.source_at(j, c, ch);
            }
        }
    }
    z.with_data(data)
}

/// Per target and channel: region mean of `z + O`, and region mean of `(z - O)^2`.
fn region_stats(z: &ImageGrid, t: &Target) -> (Vec<f64>, Vec<f64>) {
    let ch = z.channels();
    let m = t.region.pixel_count() as f64;
    let (mut sum, mut sq) = (vec![0.0; ch], vec![0.0; ch]);
    for (j, p) in t.region.indices().enumerate() {
        for c in 0..ch {
            let (v, o) = (z.at(p, c), t.source_at(j, c, ch));
            sum[c] += v + o;
            sq[c] += (v - o) * (v - o);
        }
    }
    (sum.iter().map(|s| s / m).collect(), sq.iter().map(|s| s / m).collect())
}

/// `[target][channel]` region means of `z + O`.
pub fn target_means(z: &ImageGrid, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
    check_targets(z, targets)?;
    Ok(targets.iter().map(|t| region_stats(z, t).0).collect())
}

pub fn compute_loss(
    z: &ImageGrid,
    targets: &[Target],
    gamma: f64,
    beta: f64,
    norm: PerceptNorm,
) -> Result<LossBreakdown> {
    check_targets(z, targets)?;
    if targets.is_empty() {
        log::warn!("loss requested with no targets; returning zero");
    }
    let (mut vi, mut sim) = (0.0, 0.0);
    let mut percept = Vec::with_capacity(targets.len());
    for t in targets {
        let (means, sq) = region_stats(z, t);
        let terms: Vec<f64> = means
            .iter()
            .zip(&t.desired)
            .map(|(m, k)| match norm {
                PerceptNorm::Abs => (m - k).abs(),
                PerceptNorm::Square => (m - k) * (m - k),
            })
            .collect();
        vi += terms.iter().sum::<f64>();
        sim += sq.iter().sum::<f64>();
        percept.push(terms);
    }
    Ok(LossBreakdown {
        total: gamma * vi + beta * sim,
        vi,
        sim,
        percept,
        no_targets: targets.is_empty(),
    })
}

/// Exact gradient of [`compute_loss`] with respect to `z`; zero outside
/// targets, and the `L_vi` part is taken as zero where a mean hits `k`.
pub fn loss_gradient(
    z: &ImageGrid,
    targets: &[Target],
    gamma: f64,
    beta: f64,
    norm: PerceptNorm,
) -> Result<ImageGrid> {
    check_targets(z, targets)?;
    let ch = z.channels();
    let mut grad = vec![0.0; z.data().len()];
    for t in targets {
        let m = t.region.pixel_count() as f64;
        let (means, _) = region_stats(z, t);
        let vi_part: Vec<f64> = means
            .iter()
            .zip(&t.desired)
            .map(|(mean, k)| {
                let d = mean - k;
                match norm {
                    PerceptNorm::Abs if d == 0.0 => 0.0,
                    PerceptNorm::Abs => gamma * d.signum() / m,
                    PerceptNorm::Square => gamma * 2.0 * d / m,
                }
            })
            .collect();
        for (j, p) in t.region.indices().enumerate() {
            for c in 0..ch {
                let o = t.source_at(j, c, ch);
                grad[p * ch + c] = vi_part[c] + beta * 2.0 * (z.at(p, c) - o) / m;
            }
        }
    }
    z.with_data(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Diffusion step the update ran at.
    pub step: usize,
    /// Inner iteration; 0 is the loss before any update.
    pub inner: usize,
    pub total: f64,
    pub vi: f64,
    pub sim: f64,
}

/// `z <- z - step_size * grad L(z)`, `inner_steps` times. The trace holds
/// the loss before each update and after the last (length N + 1).
pub fn guided_update(
    z: &ImageGrid,
    targets: &[Target],
    cfg: &GuidanceConfig,
    step: usize,
) -> Result<(ImageGrid, Vec<TraceEntry>)> {
    let mut z = z.clone();
    let mut trace = Vec::with_capacity(cfg.inner_steps + 1);
    let record = |z: &ImageGrid, inner: usize, trace: &mut Vec<TraceEntry>| -> Result<()> {
        let l = compute_loss(z, targets, cfg.gamma, cfg.beta, cfg.norm)?;
        if !l.total.is_finite() {
            return Err(Error::NonFinite { step, inner });
        }
        trace.push(TraceEntry {
            step,
            inner,
            total: l.total,
            vi: l.vi,
            sim: l.sim,
        });
        Ok(())
    };
    record(&z, 0, &mut trace)?;
    for inner in 1..=cfg.inner_steps {
        let g = loss_gradient(&z, targets, cfg.gamma, cfg.beta, cfg.norm)?;
        let data = z
            .data()
            .iter()
            .zip(g.data())
            .map(|(v, d)| v - cfg.step_size * d)
            .collect();
        z = z.with_data(data)?;
        if !z.is_finite() {
            return Err(Error::NonFinite { step, inner });
        }
        record(&z, inner, &mut trace)?;
    }
    Ok((z, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    /// Display-domain result, targets pasted if requested.
    pub image: ImageGrid,
    /// Clean latent before pasting.
    pub latent: ImageGrid,
    pub trace: Vec<TraceEntry>,
    /// Loss of the clean latent.
    pub final_loss: LossBreakdown,
    pub trajectory: Option<Trajectory>,
}

/// Standard normal model-domain latent drawn from `seed`.
pub fn gaussian_latent(height: usize, width: usize, channels: usize, seed: u64) -> Result<ImageGrid> {
    let mut r = rng(seed);
    let data: Vec<f64> = (0..height * width * channels).map(|_| r.sample(StandardNormal)).collect();
    ImageGrid::filled(height, width, channels, 0.0, Domain::Model11)?.with_data(data)
}

/// Starting latent of a guided run, drawn from `cfg.seed`.
pub fn initial_latent(cfg: &GuidanceConfig) -> Result<ImageGrid> {
    gaussian_latent(cfg.height, cfg.width, cfg.channels, cfg.seed)
}

/// Full reverse diffusion from a seeded latent, with guidance at every
/// inference step allowed by `cfg.guide_steps`.
pub fn generate_with_guidance(
    sched: &NoiseSchedule,
    backend: &DenoiserBackend,
    cfg: &GuidanceConfig,
    capture: bool,
) -> Result<GenerationOutput> {
    cfg.validate()?;
    let targets = cfg.build_targets()?;
    let mut z = initial_latent(cfg)?;
    check_targets(&z, &targets)?;
    let path = trajectory_path(sched, Direction::Sample, sched.n_inference())?;
    let mut trace = Vec::new();
    let mut states = Vec::new();
    let guide = |z: ImageGrid, t: usize, trace: &mut Vec<TraceEntry>| -> Result<ImageGrid> {
        if cfg.inner_steps == 0 || !cfg.guides_at(t) {
            return Ok(z);
        }
        let (z, tr) = guided_update(&z, &targets, cfg, t)?;
        trace.extend(tr);
        Ok(z)
    };
    if cfg.order == UpdateOrder::StepThenUpdate {
        z = guide(z, path[0], &mut trace)?;
    }
    if capture {
        states.push(TrajectoryState { t: path[0], z: z.clone() });
    }
    let condition = cfg.condition.as_deref();
    for pair in path.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        if cfg.order == UpdateOrder::UpdateThenStep {
            z = guide(z, t, &mut trace)?;
        }
        let eps = backend
            .predict_noise(&z, t, sched, condition, cfg.cfg_scale)
            .map_err(|e| Error::Backend {
                step: t,
                source: Box::new(e),
            })?;
        z = ddim_sample_step(&z, t, t_prev, &eps, sched)?;
        if !z.is_finite() {
            return Err(Error::NonFinite { step: t, inner: 0 });
        }
        if cfg.order == UpdateOrder::StepThenUpdate {
            z = guide(z, t_prev, &mut trace)?;
        }
        if capture {
            states.push(TrajectoryState { t: t_prev, z: z.clone() });
        }
    }
    let final_loss = compute_loss(&z, &targets, cfg.gamma, cfg.beta, cfg.norm)?;
    let mut image = z.to_display_units()?;
    if cfg.paste_targets {
        image = paste_flat_targets(&image, &targets)?;
    }
    Ok(GenerationOutput {
        image,
        latent: z,
        trace,
        final_loss,
        trajectory: capture.then_some(Trajectory {
            direction: Direction::Sample,
            states,
        }),
    })
}

/// Overwrites each flat target region of a display image with its source
/// value converted to display units.
pub fn paste_flat_targets(image: &ImageGrid, targets: &[Target]) -> Result<ImageGrid> {
    let ch = image.channels();
    let mut data = image.data().to_vec();
    for t in targets {
        if let TargetSource::Flat(o) = &t.source {
            for p in t.region.indices() {
                for c in 0..ch {
                    data[p * ch + c] = ((o[c] + 1.0) / 2.0).clamp(0.0, 1.0);
                }
            }
        }
    }
    ImageGrid::new(image.height(), image.width(), ch, data, Domain::Display01)
}

/// One generation per `gamma`, run in parallel, returned in input order.
pub fn gamma_sweep(
    sched: &NoiseSchedule,
    backend: &DenoiserBackend,
    cfg: &GuidanceConfig,
    gammas: &[f64],
) -> Result<Vec<GenerationOutput>> {
    gammas
        .par_iter()
        .map(|&gamma| {
            let cfg = GuidanceConfig {
                gamma,
                ..cfg.clone()
            };
            generate_with_guidance(sched, backend, &cfg, false)
        })
        .collect()
}
