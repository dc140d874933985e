//! Region metering and the alignment scores built on it.
//!
//! All functions are pure. Direction tests and alignment work on luminance,
//! taken as the unweighted mean over channels.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Domain, ImageGrid, RegionMask};
use crate::stimuli::Expected;

/// Means closer than this count as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeasurement {
    pub region: String,
    /// One entry per image channel.
    pub means: Vec<f64>,
    pub domain: Domain,
}

impl RegionMeasurement {
    pub fn luminance(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }
}

/// Per-channel `(1/M) Σ I(r_i)` over the pixels of `r`.
pub fn region_mean_intensity(img: &ImageGrid, r: &RegionMask) -> Result<RegionMeasurement> {
    r.check_fits(img)?;
    let m = r.pixel_count();
    if m == 0 {
        return Err(Error::EmptyRegion(r.id().to_string()));
    }
    let mut sums = vec![0.0; img.channels()];
    for p in r.indices() {
        for (c, s) in sums.iter_mut().enumerate() {
            *s += img.at(p, c);
        }
    }
    Ok(RegionMeasurement {
        region: r.id().to_string(),
        means: sums.into_iter().map(|s| s / m as f64).collect(),
        domain: img.domain(),
    })
}

fn check_pair(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    a.check_shape(b)?;
    if a.domain() != b.domain() {
        return Err(Error::WrongDomain {
            expected: a.domain(),
            found: b.domain(),
        });
    }
    Ok(())
}

/// Per-channel mean absolute difference inside `r`.
pub fn delta_intensity(input: &ImageGrid, output: &ImageGrid, r: &RegionMask) -> Result<Vec<f64>> {
    check_pair(input, output)?;
    r.check_fits(input)?;
    let m = r.pixel_count();
    if m == 0 {
        return Err(Error::EmptyRegion(r.id().to_string()));
    }
    let mut sums = vec![0.0; input.channels()];
    for p in r.indices() {
        for (c, s) in sums.iter_mut().enumerate() {
            *s += (output.at(p, c) - input.at(p, c)).abs();
        }
    }
    Ok(sums.into_iter().map(|s| s / m as f64).collect())
}

/// Sign of the luminance change inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observed {
    Darker,
    Lighter,
    Unchanged,
}

impl Observed {
    pub fn as_str(self) -> &'static str {
        match self {
            Observed::Darker => "darker",
            Observed::Lighter => "lighter",
            Observed::Unchanged => "unchanged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub region: String,
    pub delta: Vec<f64>,
    pub in_mean: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub tau: f64,
    pub aligned: bool,
    pub expected: Expected,
    pub observed: Observed,
}

impl AlignmentResult {
    pub fn in_luminance(&self) -> f64 {
        self.in_mean.iter().sum::<f64>() / self.in_mean.len() as f64
    }

    pub fn out_luminance(&self) -> f64 {
        self.out_mean.iter().sum::<f64>() / self.out_mean.len() as f64
    }
}

/// The thresholded rule on luminance means: darker targets need
/// `out < tau * in`, lighter ones `out > in / tau`. Both are strict.
pub fn is_aligned(in_mean: f64, out_mean: f64, tau: f64, expected: Expected) -> Result<bool> {
    check_tau(tau)?;
    match expected {
        Expected::Darker => Ok(out_mean < tau * in_mean),
        Expected::Lighter => Ok(out_mean > in_mean / tau),
        Expected::None => Err(Error::InvalidParameter(
            "alignment needs an expected direction of darker or lighter".into(),
        )),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tau must be in (0, 1], got {tau}")))
    }
}

pub fn alignment_check(
    input: &ImageGrid,
    output: &ImageGrid,
    r: &RegionMask,
    tau: f64,
    expected: Expected,
) -> Result<AlignmentResult> {
    check_tau(tau)?;
    let delta = delta_intensity(input, output, r)?;
    let m_in = region_mean_intensity(input, r)?;
    let m_out = region_mean_intensity(output, r)?;
    let (li, lo) = (m_in.luminance(), m_out.luminance());
    let aligned = is_aligned(li, lo, tau, expected)?;
    let observed = if (lo - li).abs() <= TIE_TOLERANCE {
        Observed::Unchanged
    } else if lo < li {
        Observed::Darker
    } else {
        Observed::Lighter
    };
    Ok(AlignmentResult {
        region: r.id().to_string(),
        delta,
        in_mean: m_in.means,
        out_mean: m_out.means,
        tau,
        aligned,
        expected,
        observed,
    })
}

/// Percentage of images whose checked regions all align. One inner slice
/// per image.
pub fn perception_accuracy_score<R: AsRef<[AlignmentResult]>>(images: &[R]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no images to score".into()));
    }
    let mut hits = 0usize;
    for (i, regions) in images.iter().enumerate() {
        let regions = regions.as_ref();
        if regions.is_empty() {
            return Err(Error::InvalidParameter(format!("image {i} has no checked regions")));
        }
        if regions.iter().all(|r| r.aligned) {
            hits += 1;
        }
    }
    Ok(pas_from_counts(hits, images.len()))
}

pub fn pas_from_counts(aligned: usize, total: usize) -> f64 {
    100.0 * aligned as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    R1Darker,
    R2Darker,
    Tie,
}

impl ShiftDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftDirection::R1Darker => "r1_darker",
            ShiftDirection::R2Darker => "r2_darker",
            ShiftDirection::Tie => "tie",
        }
    }
}

/// Which of two physically identical regions came out darker.
pub fn shift_direction(
    input: &ImageGrid,
    output: &ImageGrid,
    r1: &RegionMask,
    r2: &RegionMask,
) -> Result<ShiftDirection> {
    check_pair(input, output)?;
    let in1 = region_mean_intensity(input, r1)?.luminance();
    let in2 = region_mean_intensity(input, r2)?.luminance();
    if (in1 - in2).abs() >= TIE_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "regions `{}` and `{}` differ in the input ({in1} vs {in2}); not a paired illusion",
            r1.id(),
            r2.id()
        )));
    }
    let out1 = region_mean_intensity(output, r1)?.luminance();
    let out2 = region_mean_intensity(output, r2)?.luminance();
    Ok(if (out1 - out2).abs() <= TIE_TOLERANCE {
        ShiftDirection::Tie
    } else if out1 < out2 {
        ShiftDirection::R1Darker
    } else {
        ShiftDirection::R2Darker
    })
}

/// Pixel values along `row` for columns in `cols`, one vector per channel.
pub fn extract_profile(img: &ImageGrid, row: usize, cols: Range<usize>) -> Result<Vec<Vec<f64>>> {
    if row >= img.height() || cols.start > cols.end || cols.end > img.width() {
        return Err(Error::InvalidParameter(format!(
            "profile row {row}, columns {}..{} outside a {} image",
            cols.start,
            cols.end,
            img.shape_string()
        )));
    }
    Ok((0..img.channels())
        .map(|c| cols.clone().map(|x| img.get(row, x, c)).collect())
        .collect())
}
