use serde::{Deserialize, Serialize};

use super::{eps_from_x0, posterior_alpha_bar};
use crate::error::{Error, Result};
use crate::imagecore::ImageGrid;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Half-sample symmetric: `.. b a | a b c .. | c b ..`.
    #[default]
    Reflect,
    Periodic,
}

impl Padding {
    /// Maps a possibly out-of-range coordinate into `0..n`.
    #[inline]
    pub fn index(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            Padding::Periodic => i.rem_euclid(n) as usize,
            Padding::Reflect => {
                let m = i.rem_euclid(2 * n);
                (if m < n { m } else { 2 * n - 1 - m }) as usize
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnsharpParams {
    pub strength: f64,
    pub radius: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl Default for UnsharpParams {
    fn default() -> Self {
        Self {
            strength: 1.0,
            radius: 5,
            padding: Padding::Reflect,
        }
    }
}

/// Separable `(2r + 1)^2` box mean, channels independent.
pub fn box_blur(img: &ImageGrid, radius: usize, padding: Padding) -> ImageGrid {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = radius as isize;
    let norm = (2 * radius + 1) as f64;
    let src = img.data();
    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for dx in -r..=r {
                    let xx = padding.index(x as isize + dx, w);
                    acc += src[(y * w + xx) * ch + c];
                }
                horiz[(y * w + x) * ch + c] = acc / norm;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = padding.index(y as isize + dy, h);
                    acc += horiz[(yy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc / norm;
            }
        }
    }
    ImageGrid::from_parts_unchecked(h, w, ch, out, img.domain())
}

/// Reference denoiser `x0 = z - strength (z - blur(z))`.
///
/// The clean estimate is pulled toward the local surround, so the implied
/// noise `(z - sqrt(a) x0) / sqrt(1 - a)` carries the unsharp-mask term
/// `z - blur(z)`. Inversion adds that noise back: a patch on a light
/// surround drifts down and a patch on a dark surround drifts up.
pub fn unsharp_x0(img: &ImageGrid, strength: f64, radius: usize, padding: Padding) -> Vec<f64> {
    let blurred = box_blur(img, radius, padding);
    img.data()
        .iter()
        .zip(blurred.data())
        .map(|(&z, &b)| z - strength * (z - b))
        .collect()
}

pub fn unsharp_reference_eps(
    z: &ImageGrid,
    t: usize,
    sched: &NoiseSchedule,
    strength: f64,
    radius: usize,
    padding: Padding,
) -> Result<ImageGrid> {
    if !(strength >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "unsharp strength must be >= 0, got {strength}"
        )));
    }
    let a = posterior_alpha_bar(t, sched)?;
    eps_from_x0(z, &unsharp_x0(z, strength, radius, padding), a)
}
