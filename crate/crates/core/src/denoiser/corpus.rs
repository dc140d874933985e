//! Procedural training corpora with natural-image-like statistics.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Domain, ImageGrid};
use crate::seeds::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    DeadLeaves,
    PinkNoise,
    IlluminationTexture,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 3] = [
        CorpusKind::DeadLeaves,
        CorpusKind::PinkNoise,
        CorpusKind::IlluminationTexture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::DeadLeaves => "dead_leaves",
            CorpusKind::PinkNoise => "pink_noise",
            CorpusKind::IlluminationTexture => "illumination_texture",
        }
    }
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorpusKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown corpus kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub kind: CorpusKind,
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub seed: u64,
}

/// Grayscale display-domain images, one independent RNG stream per sample.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<ImageGrid>> {
    if spec.count == 0 {
        return Err(Error::InvalidParameter("corpus count must be >= 1".into()));
    }
    if spec.height < 2 || spec.width < 2 {
        return Err(Error::InvalidParameter(format!(
            "corpus images must be at least 2x2, got {}x{}",
            spec.height, spec.width
        )));
    }
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(spec.seed, i as u64);
            let data = match spec.kind {
                CorpusKind::DeadLeaves => dead_leaves(spec.height, spec.width, seed),
                CorpusKind::PinkNoise => pink_noise(spec.height, spec.width, seed),
                CorpusKind::IlluminationTexture => illumination_texture(spec.height, spec.width, seed),
            };
            ImageGrid::new(spec.height, spec.width, 1, data, Domain::Display01)
        })
        .collect()
}

const MAX_DISCS: usize = 20_000;

/// Occluding discs painted front to back; radii have density `r^-3` on
/// `[1, max(h, w) / 3]`.
fn dead_leaves(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let r_min: f64 = 1.0;
    let r_max = (h.max(w) as f64 / 3.0).max(r_min + 1.0);
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    let mut out = vec![f64::NAN; h * w];
    let mut uncovered = h * w;
    for _ in 0..MAX_DISCS {
        if uncovered == 0 {
            break;
        }
        let u: f64 = rng.random();
        let r = (a - u * (a - b)).powf(-0.5);
        let cx = rng.random_range(-r..w as f64 + r);
        let cy = rng.random_range(-r..h as f64 + r);
        let gray: f64 = rng.random();
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(h);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let p = y * w + x;
                if dx * dx + dy * dy <= r * r && out[p].is_nan() {
                    out[p] = gray;
                    uncovered -= 1;
                }
            }
        }
    }
    if uncovered > 0 {
        let gray: f64 = rng.random();
        out.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = gray);
    }
    out
}

fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// White Gaussian noise shaped to a `1/f` amplitude spectrum (DC removed),
/// min-max normalized to `[0, 1]`.
fn pink_noise(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let mut buf: Vec<Complex<f64>> = (0..h * w)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    fft2(&mut buf, h, w, false);
    for y in 0..h {
        let fy = y.min(h - y) as f64 / h as f64;
        for x in 0..w {
            let fx = x.min(w - x) as f64 / w as f64;
            let f = (fx * fx + fy * fy).sqrt();
            buf[y * w + x] *= if f == 0.0 { 0.0 } else { 1.0 / f };
        }
    }
    fft2(&mut buf, h, w, true);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize01(&re)
}

fn normalize01(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON {
        return vec![0.5; v.len()];
    }
    v.iter().map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Quadratic illumination field in `[0.4, 1]` times a blocky binary
/// reflectance pattern (0.3 / 0.9).
fn illumination_texture(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let coef: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let block = rng.random_range(2..=8usize);
    let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
    let texture: Vec<bool> = (0..bh * bw).map(|_| rng.random_bool(0.5)).collect();
    let mut illum = Vec::with_capacity(h * w);
    for y in 0..h {
        let v = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
        for x in 0..w {
            let u = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
            illum.push(
                coef[0] + coef[1] * u + coef[2] * v + coef[3] * u * u + coef[4] * v * v + coef[5] * u * v,
            );
        }
    }
    let illum = normalize01(&illum);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let refl = if texture[(y / block) * bw + x / block] { 0.9 } else { 0.3 };
            out.push((0.4 + 0.6 * illum[y * w + x]) * refl);
        }
    }
    out
}
