//! Noise schedules and deterministic DDIM stepping in both directions.
//!
//! `alpha_bar[t] = prod_{i <= t} (1 - beta_i)` with `alpha_bar[0] = 1`. A
//! sampling step maps `z_t` to `z_{t_prev}` through the predicted clean image
//! `x0 = (z_t - sqrt(1 - a_t) eps) / sqrt(a_t)`; an inversion step runs the
//! same recurrence upward. With a fixed noise estimate the two are exact
//! inverses of each other.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::imagecore::{save_image, Domain, ImageGrid};

pub const DEFAULT_T_TRAIN: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_N_INFERENCE: usize = 50;
/// Inversion depths used for the replication runs.
pub const STEP_PRESETS: [usize; 3] = [5, 10, 20];

/// Parameters a linear schedule was built from; carried into reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub n_inference: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            t_train: DEFAULT_T_TRAIN,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            n_inference: DEFAULT_N_INFERENCE,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.t_train, self.beta_start, self.beta_end, self.n_inference)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_train: usize,
    /// `betas[i - 1]` is `beta_i`.
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    inference_steps: Vec<usize>,
}

/// Linear beta ramp over `t_train` steps with `n_inference` evenly spaced
/// inference steps ending at `t_train`.
pub fn make_schedule(
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
    n_inference: usize,
) -> Result<NoiseSchedule> {
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    if t_train == 0 {
        return Err(Error::InvalidSchedule("t_train must be >= 1".into()));
    }
    let betas = (0..t_train)
        .map(|i| {
            if t_train == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_train - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas, n_inference)
}

impl NoiseSchedule {
    /// Schedule from explicit betas (`betas[i - 1] = beta_i`).
    pub fn from_betas(betas: Vec<f64>, n_inference: usize) -> Result<Self> {
        let t_train = betas.len();
        if t_train == 0 {
            return Err(Error::InvalidSchedule("empty beta sequence".into()));
        }
        if n_inference == 0 || n_inference > t_train {
            return Err(Error::InvalidSchedule(format!(
                "need 1 <= n_inference <= t_train, got n_inference = {n_inference}, t_train = {t_train}"
            )));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(t_train + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let inference_steps = (1..=n_inference).map(|k| k * t_train / n_inference).collect();
        Ok(Self {
            t_train,
            betas,
            alpha_bar,
            inference_steps,
        })
    }

    /// Replaces the inference subsequence.
    pub fn with_inference_steps(mut self, steps: Vec<usize>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidSchedule("empty inference subsequence".into()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(
                "inference steps must be strictly increasing".into(),
            ));
        }
        if steps[0] == 0 || *steps.last().unwrap() > self.t_train {
            return Err(Error::InvalidSchedule(format!(
                "inference steps must lie in [1, {}]",
                self.t_train
            )));
        }
        self.inference_steps = steps;
        Ok(self)
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Full table, `alpha_bar()[t]` for `t in 0..=t_train`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(Error::StepOutOfSchedule {
                step: t,
                t_train: self.t_train,
            })
    }

    pub fn inference_steps(&self) -> &[usize] {
        &self.inference_steps
    }

    pub fn n_inference(&self) -> usize {
        self.inference_steps.len()
    }
}

fn step_with(
    z: &ImageGrid,
    eps: &ImageGrid,
    a_from: f64,
    a_to: f64,
) -> Result<ImageGrid> {
    z.check_shape(eps)?;
    let (sa_from, sn_from) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (sa_to, sn_to) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    let data = z
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&zt, &e)| {
            let x0 = (zt - sn_from * e) / sa_from;
            sa_to * x0 + sn_to * e
        })
        .collect();
    Ok(ImageGrid::from_parts_unchecked(
        z.height(),
        z.width(),
        z.channels(),
        data,
        z.domain(),
    ))
}

/// One reverse step `z_t -> z_{t_prev}`.
pub fn ddim_sample_step(
    z_t: &ImageGrid,
    t: usize,
    t_prev: usize,
    eps_hat: &ImageGrid,
    sched: &NoiseSchedule,
) -> Result<ImageGrid> {
    if t_prev > t {
        return Err(Error::StepOrder(format!(
            "sampling needs t >= t_prev, got t = {t}, t_prev = {t_prev}"
        )));
    }
    let (a_t, a_prev) = (sched.alpha_bar(t)?, sched.alpha_bar(t_prev)?);
    z_t.check_shape(eps_hat)?;
    if t == t_prev {
        return Ok(z_t.clone());
    }
    step_with(z_t, eps_hat, a_t, a_prev)
}

/// One inversion step `z_t -> z_{t_next}`.
pub fn ddim_invert_step(
    z_t: &ImageGrid,
    t: usize,
    t_next: usize,
    eps_hat: &ImageGrid,
    sched: &NoiseSchedule,
) -> Result<ImageGrid> {
    if t_next < t {
        return Err(Error::StepOrder(format!(
            "inversion needs t_next >= t, got t = {t}, t_next = {t_next}"
        )));
    }
    let (a_t, a_next) = (sched.alpha_bar(t)?, sched.alpha_bar(t_next)?);
    z_t.check_shape(eps_hat)?;
    if t == t_next {
        return Ok(z_t.clone());
    }
    step_with(z_t, eps_hat, a_t, a_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Invert,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: usize,
    pub z: ImageGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub direction: Direction,
    pub states: Vec<TrajectoryState>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &TrajectoryState {
        self.states.last().expect("trajectory always holds a state")
    }
}

/// Step indices visited by a run of `steps_to_run` steps, start included.
///
/// Inversion walks `0, s_1, .., s_k`; sampling walks `s_k, .., s_1, 0`.
pub fn trajectory_path(
    sched: &NoiseSchedule,
    direction: Direction,
    steps_to_run: usize,
) -> Result<Vec<usize>> {
    if steps_to_run > sched.n_inference() {
        return Err(Error::InvalidSchedule(format!(
            "{steps_to_run} steps requested but the schedule has {} inference steps",
            sched.n_inference()
        )));
    }
    let mut path = vec![0];
    path.extend_from_slice(&sched.inference_steps()[..steps_to_run]);
    if direction == Direction::Sample {
        path.reverse();
    }
    Ok(path)
}

/// Runs `steps_to_run` DDIM steps from `z_start`.
///
/// Sampling queries the model at the current (noisier) step. Inversion
/// queries it with the current state at the step being moved to, since
/// `alpha_bar[0] = 1` leaves no noise to estimate at the clean end.
pub fn run_trajectory(
    z_start: &ImageGrid,
    sched: &NoiseSchedule,
    model: &dyn NoisePredictor,
    direction: Direction,
    steps_to_run: usize,
    capture: bool,
) -> Result<Trajectory> {
    if z_start.domain() != Domain::Model11 {
        return Err(Error::WrongDomain {
            expected: Domain::Model11,
            found: z_start.domain(),
        });
    }
    let path = trajectory_path(sched, direction, steps_to_run)?;
    let mut states = Vec::new();
    let mut z = z_start.clone();
    if capture || path.len() == 1 {
        states.push(TrajectoryState { t: path[0], z: z.clone() });
    }
    for pair in path.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        let query = match direction {
            Direction::Invert => to,
            Direction::Sample => from,
        };
        let eps = model
            .predict_noise(&z, query, sched)
            .map_err(|e| Error::Backend {
                step: query,
                source: Box::new(e),
            })?;
        z = match direction {
            Direction::Invert => ddim_invert_step(&z, from, to, &eps, sched)?,
            Direction::Sample => ddim_sample_step(&z, from, to, &eps, sched)?,
        };
        if capture {
            states.push(TrajectoryState { t: to, z: z.clone() });
        }
    }
    if !capture && path.len() > 1 {
        states.push(TrajectoryState {
            t: *path.last().unwrap(),
            z,
        });
    }
    Ok(Trajectory { direction, states })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub direction: Direction,
    pub states: Vec<TrajectoryManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifestEntry {
    pub index: usize,
    pub t: usize,
    pub alpha_bar: f64,
    pub file: String,
}

/// Writes `state_NNN.png` per state (display converted) plus `trajectory.json`.
pub fn export_trajectory(
    traj: &Trajectory,
    sched: &NoiseSchedule,
    dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(traj.states.len());
    for (index, state) in traj.states.iter().enumerate() {
        let file = format!("state_{index:03}.png");
        save_image(&state.z.to_display_units()?, dir.join(&file))?;
        entries.push(TrajectoryManifestEntry {
            index,
            t: state.t,
            alpha_bar: sched.alpha_bar(state.t)?,
            file,
        });
    }
    let manifest = TrajectoryManifest {
        direction: traj.direction,
        states: entries,
    };
    let path = dir.join("trajectory.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
