//! Procedural brightness-illusion stimuli with pixel-exact target masks,
//! plus a JSON manifest format for stimulus sets on disk.
//!
//! Generated images are snapped to the 8-bit grid so that a written and
//! re-loaded set is identical to the in-memory one.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    ensure_disjoint, load_image, region_from_mask, save_image, Domain, ImageGrid, RegionMask,
    DEFAULT_MASK_THRESHOLD,
};
use crate::seeds::rng;

pub const DEFAULT_SIZE: usize = 64;

/// Direction a human observer is expected to see a target shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Darker,
    Lighter,
    None,
}

impl Expected {
    pub fn as_str(self) -> &'static str {
        match self {
            Expected::Darker => "darker",
            Expected::Lighter => "lighter",
            Expected::None => "none",
        }
    }
}

impl std::str::FromStr for Expected {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "darker" => Ok(Expected::Darker),
            "lighter" => Ok(Expected::Lighter),
            "none" => Ok(Expected::None),
            other => Err(Error::InvalidParameter(format!(
                "unknown expected label `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRegion {
    pub mask: RegionMask,
    pub expected: Expected,
    pub pair: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub id: String,
    pub image: ImageGrid,
    pub regions: Vec<LabeledRegion>,
    pub kind: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

impl Stimulus {
    pub fn region(&self, id: &str) -> Option<&LabeledRegion> {
        self.regions.iter().find(|r| r.mask.id() == id)
    }

    /// Regions sharing `pair`, in declaration order.
    pub fn paired(&self, pair: &str) -> Vec<&LabeledRegion> {
        self.regions
            .iter()
            .filter(|r| r.pair.as_deref() == Some(pair))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StimulusKind {
    /// Left half `left`, right half `right`, a `target_side` square of
    /// luminance `target` in each half.
    SimultaneousContrast {
        left: f64,
        right: f64,
        target: f64,
        target_side: usize,
        #[serde(default)]
        jitter: usize,
    },
    /// Vertical square-wave grating (`period` pixels, starting with `low`),
    /// one bar-wide target on a low bar and one on a high bar.
    Whites {
        low: f64,
        high: f64,
        target: f64,
        period: usize,
        target_height: usize,
    },
    /// Luminance `low..high` varying sinusoidally along x, crossed by a
    /// uniform horizontal stripe.
    GratingInduction {
        low: f64,
        high: f64,
        period: usize,
        phase: f64,
        stripe: f64,
        stripe_height: usize,
    },
    /// Dark squares on a light lattice of streets.
    HermannGrid {
        square: f64,
        street: f64,
        square_side: usize,
        street_width: usize,
    },
}

impl StimulusKind {
    pub fn name(&self) -> &'static str {
        match self {
            StimulusKind::SimultaneousContrast { .. } => "simultaneous_contrast",
            StimulusKind::Whites { .. } => "whites",
            StimulusKind::GratingInduction { .. } => "grating_induction",
            StimulusKind::HermannGrid { .. } => "hermann_grid",
        }
    }
}

pub const KIND_NAMES: [&str; 4] = [
    "simultaneous_contrast",
    "whites",
    "grating_induction",
    "hermann_grid",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Both targets on identical surrounds; no shift is predicted.
    #[serde(default)]
    pub control: bool,
    #[serde(flatten)]
    pub kind: StimulusKind,
}

fn q8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn lum(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    q8(rng.random_range(lo..=hi))
}

impl StimulusSpec {
    /// Draws kind-specific parameters from `seed`.
    pub fn randomized(kind: &str, size: usize, seed: u64, control: bool) -> Result<Self> {
        let mut r = rng(seed ^ 0x5EED_0F57_1A11);
        let kind = match kind {
            "simultaneous_contrast" => {
                let light = lum(&mut r, 0.8, 1.0);
                let dark = lum(&mut r, 0.0, 0.2);
                let (left, right) = if r.random_bool(0.5) { (light, dark) } else { (dark, light) };
                StimulusKind::SimultaneousContrast {
                    left,
                    right,
                    target: lum(&mut r, 0.4, 0.6),
                    target_side: r.random_range(size / 10..=size / 5).max(2),
                    jitter: size / 20,
                }
            }
            "whites" => StimulusKind::Whites {
                low: lum(&mut r, 0.0, 0.15),
                high: lum(&mut r, 0.85, 1.0),
                target: lum(&mut r, 0.4, 0.6),
                period: 2 * r.random_range((size / 16).max(1)..=(size / 10).max(2)),
                target_height: r.random_range(size / 5..=size / 3).max(2),
            },
            "grating_induction" => StimulusKind::GratingInduction {
                low: lum(&mut r, 0.05, 0.25),
                high: lum(&mut r, 0.75, 0.95),
                period: r.random_range((size / 4).max(8)..=(size / 2).max(8)),
                phase: r.random_range(0.0..std::f64::consts::TAU),
                stripe: 0.5,
                stripe_height: r.random_range(3..=(size / 8).max(3)),
            },
            "hermann_grid" => StimulusKind::HermannGrid {
                square: lum(&mut r, 0.0, 0.15),
                street: lum(&mut r, 0.85, 1.0),
                square_side: r.random_range(size / 8..=size / 5).max(3),
                street_width: r.random_range(2..=(size / 16).max(2)),
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown stimulus kind `{other}`"
                )))
            }
        };
        Ok(Self {
            height: size,
            width: size,
            seed,
            control,
            kind,
        })
    }

    pub fn default_id(&self) -> String {
        format!(
            "{}-{}{}",
            self.kind.name(),
            self.seed,
            if self.control { "-control" } else { "" }
        )
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn strictly_between(v: f64, a: f64, b: f64) -> bool {
    v > a.min(b) && v < a.max(b)
}

struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(q8(f(y, x)));
            }
        }
        Self { h, w, data }
    }

    fn fill(&mut self, mask: &RegionMask, v: f64) {
        let v = q8(v);
        for i in mask.indices() {
            self.data[i] = v;
        }
    }

    fn into_image(self) -> Result<ImageGrid> {
        ImageGrid::new(self.h, self.w, 1, self.data, Domain::Display01)
    }
}

fn region(
    id: &str,
    h: usize,
    w: usize,
    rect: (usize, usize, usize, usize),
    expected: Expected,
    pair: Option<&str>,
) -> Result<LabeledRegion> {
    Ok(LabeledRegion {
        mask: RegionMask::rect(id, h, w, rect.0, rect.1, rect.2, rect.3)?,
        expected,
        pair: pair.map(str::to_string),
    })
}

/// Builds the stimulus described by `spec`. Pure in `spec`.
pub fn gen_stimulus(spec: &StimulusSpec) -> Result<Stimulus> {
    let (h, w) = (spec.height, spec.width);
    if h < 8 || w < 8 {
        return Err(bad(format!("canvas {h}x{w} is too small (min 8x8)")));
    }
    let mut rng = rng(spec.seed);
    let label = |e: Expected| if spec.control { Expected::None } else { e };
    let (image, regions) = match spec.kind {
        StimulusKind::SimultaneousContrast {
            left,
            right,
            target,
            target_side,
            jitter,
        } => {
            let right = if spec.control { left } else { right };
            if spec.control {
                if (target - left).abs() < 1e-12 {
                    return Err(bad("target equals surround"));
                }
            } else if !strictly_between(target, left, right) {
                return Err(bad("target luminance must lie strictly between the surrounds"));
            }
            let half = w / 2;
            let s = target_side;
            if s == 0 || s + 2 + 2 * jitter > half || s + 2 + 2 * jitter > h {
                return Err(bad(format!(
                    "target side {s} with jitter {jitter} overlaps the surround boundary"
                )));
            }
            let mut place = |x_lo: usize| {
                let j = jitter as i64;
                let (dy, dx) = if jitter > 0 {
                    (rng.random_range(-j..=j), rng.random_range(-j..=j))
                } else {
                    (0, 0)
                };
                let y0 = ((h - s) / 2) as i64 + dy;
                let x0 = (x_lo + (half - s) / 2) as i64 + dx;
                (y0 as usize, x0 as usize, s, s)
            };
            let (rl, rr) = (place(0), place(half));
            let mut canvas = Canvas::new(h, w, |_, x| if x < half { left } else { right });
            let (el, er) = if left > right {
                (Expected::Darker, Expected::Lighter)
            } else {
                (Expected::Lighter, Expected::Darker)
            };
            let regions = vec![
                region("left", h, w, rl, label(el), Some("p0"))?,
                region("right", h, w, rr, label(er), Some("p0"))?,
            ];
            for r in &regions {
                canvas.fill(&r.mask, target);
            }
            (canvas.into_image()?, regions)
        }
        StimulusKind::Whites {
            low,
            high,
            target,
            period,
            target_height,
        } => {
            if !strictly_between(target, low, high) {
                return Err(bad("target must differ from and lie between the bar luminances"));
            }
            if period < 2 || period % 2 != 0 {
                return Err(bad(format!("period must be even and >= 2, got {period}")));
            }
            let bar = period / 2;
            let n_bars = w / bar;
            if n_bars < 5 || target_height == 0 || target_height + 2 > h {
                return Err(bad("grating too coarse or target too tall for the canvas"));
            }
            let is_high = |x: usize| (x / bar) % 2 == 1;
            let canvas_fn = |_: usize, x: usize| if is_high(x) { high } else { low };
            let mut canvas = Canvas::new(h, w, canvas_fn);
            // Low bars have even index; pick the one left of centre and the
            // next bar with the required phase.
            let mid = n_bars / 2;
            let first = if mid % 2 == 0 { mid - 2 } else { mid - 1 };
            let second = if spec.control { first + 2 } else { first + 1 };
            if (second + 1) * bar > w {
                return Err(bad("targets fall outside the grating"));
            }
            let y0 = (h - target_height) / 2;
            let regions = vec![
                region(
                    "on_low",
                    h,
                    w,
                    (y0, first * bar, target_height, bar),
                    label(Expected::Lighter),
                    Some("p0"),
                )?,
                region(
                    if spec.control { "on_low_2" } else { "on_high" },
                    h,
                    w,
                    (y0, second * bar, target_height, bar),
                    label(Expected::Darker),
                    Some("p0"),
                )?,
            ];
            for r in &regions {
                canvas.fill(&r.mask, target);
            }
            (canvas.into_image()?, regions)
        }
        StimulusKind::GratingInduction {
            low,
            high,
            period,
            phase,
            stripe,
            stripe_height,
        } => {
            if !strictly_between(stripe, low, high) {
                return Err(bad("stripe luminance must lie strictly between the grating extremes"));
            }
            if period < 4 || period > w {
                return Err(bad(format!("period {period} must be in [4, width]")));
            }
            if stripe_height == 0 || stripe_height + 2 > h {
                return Err(bad("stripe does not fit the canvas"));
            }
            let (mean, amp) = ((low + high) / 2.0, if spec.control { 0.0 } else { (high - low) / 2.0 });
            let tau = std::f64::consts::TAU;
            let value = |x: usize| mean + amp * ((tau * (x as f64 + 0.5) / period as f64) + phase).cos();
            let mut canvas = Canvas::new(h, w, |_, x| value(x));
            // Peak where the cosine argument is a multiple of 2 pi.
            let p = period as f64;
            let seg = (period / 4).max(1);
            let centre = w as f64 / 2.0;
            let k = ((centre + 0.5) / p + phase / tau).round();
            let mut peak = k * p - phase / tau * p - 0.5;
            let half_w = seg as f64 / 2.0;
            let fits = |c: f64| c - half_w >= 0.0 && c + half_w <= w as f64;
            let mut trough = peak + p / 2.0;
            if !fits(trough) {
                trough = peak - p / 2.0;
            }
            if !fits(peak) {
                peak = trough + p / 2.0;
                if !fits(peak) {
                    peak = trough - p / 2.0;
                }
            }
            if !fits(peak) || !fits(trough) {
                return Err(bad("grating period too large to place both segments"));
            }
            let y0 = (h - stripe_height) / 2;
            let start = |c: f64| (c - half_w).round().max(0.0) as usize;
            let (xp, xt) = (start(peak).min(w - seg), start(trough).min(w - seg));
            if xp.max(xt) < xp.min(xt) + seg {
                return Err(bad("stripe segments overlap"));
            }
            let stripe_mask = RegionMask::rect("stripe", h, w, y0, 0, stripe_height, w)?;
            canvas.fill(&stripe_mask, stripe);
            let regions = vec![
                region(
                    "on_peak",
                    h,
                    w,
                    (y0, xp, stripe_height, seg),
                    label(Expected::Darker),
                    Some("p0"),
                )?,
                region(
                    "on_trough",
                    h,
                    w,
                    (y0, xt, stripe_height, seg),
                    label(Expected::Lighter),
                    Some("p0"),
                )?,
            ];
            (canvas.into_image()?, regions)
        }
        StimulusKind::HermannGrid {
            square,
            street,
            square_side,
            street_width,
        } => {
            if (square - street).abs() < 1.0 / 255.0 {
                return Err(bad("squares and streets must differ"));
            }
            if square_side == 0 || street_width == 0 {
                return Err(bad("square side and street width must be positive"));
            }
            let cell = square_side + street_width;
            let in_square = |y: usize, x: usize| y % cell >= street_width && x % cell >= street_width;
            let control = spec.control;
            let canvas = Canvas::new(h, w, |y, x| {
                if !control && in_square(y, x) {
                    square
                } else {
                    street
                }
            });
            // Intersection nearest the centre with a full street segment to its right.
            let k = ((h.min(w) / 2) / cell).max(1);
            let (iy, ix) = (k * cell, k * cell);
            let seg_x = ix + street_width + (square_side.saturating_sub(street_width)) / 2;
            if iy + street_width > h || seg_x + street_width > w || ix + cell + street_width > w {
                return Err(bad("grid too coarse for the canvas"));
            }
            let regions = vec![
                region(
                    "intersection",
                    h,
                    w,
                    (iy, ix, street_width, street_width),
                    label(Expected::Darker),
                    Some("p0"),
                )?,
                region(
                    "street",
                    h,
                    w,
                    (iy, seg_x, street_width, street_width),
                    Expected::None,
                    Some("p0"),
                )?,
            ];
            (canvas.into_image()?, regions)
        }
    };
    ensure_disjoint(regions.iter().map(|r| &r.mask))?;
    Ok(Stimulus {
        id: spec.default_id(),
        image,
        regions,
        kind: spec.kind.name().to_string(),
        params: serde_json::to_value(spec)?,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRegion {
    pub id: String,
    pub mask: String,
    pub expected: String,
    #[serde(default)]
    pub pair: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub regions: Vec<ManifestRegion>,
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "stimuli.json";

/// Writes `<id>.png`, `<id>__<region>.png` per region, and the manifest.
pub fn write_stimulus_set(stimuli: &[Stimulus], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(stimuli.len());
    for s in stimuli {
        let image = format!("{}.png", s.id);
        save_image(&s.image, dir.join(&image))?;
        let mut regions = Vec::with_capacity(s.regions.len());
        for r in &s.regions {
            let mask = format!("{}__{}.png", s.id, r.mask.id());
            save_image(&r.mask.to_image(), dir.join(&mask))?;
            regions.push(ManifestRegion {
                id: r.mask.id().to_string(),
                mask,
                expected: r.expected.as_str().to_string(),
                pair: r.pair.clone(),
            });
        }
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            regions,
            kind: s.kind.clone(),
            params: s.params.clone(),
            seed: s.seed,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&entries)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a manifest; image and mask paths are relative to the manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Stimulus>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    entries
        .into_iter()
        .map(|entry| {
            let fail = |detail: String| Error::Manifest {
                entry: entry.id.clone(),
                detail,
            };
            let image = load_image(base.join(&entry.image)).map_err(|e| fail(e.to_string()))?;
            let mut regions = Vec::with_capacity(entry.regions.len());
            for r in &entry.regions {
                let mask_img = load_image(base.join(&r.mask)).map_err(|e| fail(e.to_string()))?;
                if mask_img.height() != image.height() || mask_img.width() != image.width() {
                    return Err(fail(format!(
                        "size mismatch: mask `{}` is {}x{}, image is {}x{}",
                        r.id,
                        mask_img.height(),
                        mask_img.width(),
                        image.height(),
                        image.width()
                    )));
                }
                let mask = region_from_mask(r.id.clone(), &mask_img, DEFAULT_MASK_THRESHOLD)
                    .map_err(|e| fail(e.to_string()))?;
                let expected = r.expected.parse().map_err(|e: Error| fail(e.to_string()))?;
                regions.push(LabeledRegion {
                    mask,
                    expected,
                    pair: r.pair.clone(),
                });
            }
            Ok(Stimulus {
                id: entry.id.clone(),
                image,
                regions,
                kind: entry.kind.clone(),
                params: entry.params.clone(),
                seed: entry.seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(left: f64, right: f64, target: f64) -> StimulusSpec {
        StimulusSpec {
            height: 64,
            width: 64,
            seed: 1,
            control: false,
            kind: StimulusKind::SimultaneousContrast {
                left,
                right,
                target,
                target_side: 10,
                jitter: 0,
            },
        }
    }

    fn max_pair_diff(s: &Stimulus) -> f64 {
        let a: Vec<f64> = s.regions[0].mask.indices().map(|i| s.image.at(i, 0)).collect();
        let b: Vec<f64> = s.regions[1].mask.indices().map(|i| s.image.at(i, 0)).collect();
        a.iter()
            .chain(&b)
            .map(|v| (v - a[0]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn simultaneous_contrast_targets_identical() {
        let s = gen_stimulus(&sc(1.0, 0.0, 0.5)).unwrap();
        for r in &s.regions {
            assert!(r.mask.indices().all(|i| s.image.at(i, 0) == 128.0 / 255.0));
        }
        assert_eq!(max_pair_diff(&s), 0.0);
        assert_eq!(s.region("left").unwrap().expected, Expected::Darker);
        assert_eq!(s.region("right").unwrap().expected, Expected::Lighter);
    }

    #[test]
    fn exact_half_target() {
        let s = gen_stimulus(&sc(0.0, 1.0, 0.4)).unwrap();
        assert_eq!(s.region("left").unwrap().expected, Expected::Lighter);
        assert_eq!(s.image.at(s.regions[0].mask.indices().next().unwrap(), 0), 102.0 / 255.0);
    }

    #[test]
    fn validation_errors() {
        assert!(gen_stimulus(&sc(0.0, 1.0, 1.0)).is_err());
        let mut big = sc(0.0, 1.0, 0.5);
        if let StimulusKind::SimultaneousContrast { target_side, .. } = &mut big.kind {
            *target_side = 31;
        }
        assert!(gen_stimulus(&big).is_err());
        let whites = StimulusSpec {
            height: 64,
            width: 64,
            seed: 0,
            control: false,
            kind: StimulusKind::Whites {
                low: 0.0,
                high: 1.0,
                target: 1.0,
                period: 8,
                target_height: 16,
            },
        };
        assert!(gen_stimulus(&whites).is_err());
    }

    #[test]
    fn every_kind_has_identical_disjoint_targets() {
        for kind in KIND_NAMES {
            for seed in 0..20 {
                for control in [false, true] {
                    let spec = StimulusSpec::randomized(kind, 64, seed, control).unwrap();
                    let s = gen_stimulus(&spec).unwrap_or_else(|e| panic!("{kind} {seed}: {e}"));
                    assert_eq!(max_pair_diff(&s), 0.0, "{kind} {seed}");
                    ensure_disjoint(s.regions.iter().map(|r| &r.mask)).unwrap();
                    if control {
                        assert!(s.regions.iter().all(|r| r.expected == Expected::None));
                    } else {
                        assert!(s.regions.iter().any(|r| r.expected == Expected::Darker));
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in KIND_NAMES {
            let spec = StimulusSpec::randomized(kind, 64, 77, false).unwrap();
            assert_eq!(gen_stimulus(&spec).unwrap(), gen_stimulus(&spec).unwrap());
            assert_eq!(spec, StimulusSpec::randomized(kind, 64, 77, false).unwrap());
        }
    }

    #[test]
    fn grating_segments_sit_on_extremes() {
        let spec = StimulusSpec::randomized("grating_induction", 64, 3, false).unwrap();
        let s = gen_stimulus(&spec).unwrap();
        let StimulusKind::GratingInduction { low, high, .. } = spec.kind else {
            unreachable!()
        };
        // Rows just above the stripe show the grating under each segment.
        let column_value = |r: &LabeledRegion| {
            let top = r.mask.indices().next().unwrap() / 64;
            let xs: Vec<usize> = r.mask.indices().map(|i| i % 64).collect();
            let cx = xs.iter().sum::<usize>() / xs.len();
            s.image.get(top - 1, cx, 0)
        };
        let mid = (low + high) / 2.0;
        assert!(column_value(s.region("on_peak").unwrap()) > mid);
        assert!(column_value(s.region("on_trough").unwrap()) < mid);
    }

    #[test]
    fn empty_set_writes_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_stimulus_set(&[], dir.path()).unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn one_stimulus_writes_three_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_stimulus(&sc(1.0, 0.0, 0.5)).unwrap();
        let p = write_stimulus_set(std::slice::from_ref(&s), dir.path()).unwrap();
        let pngs = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png")
            .count();
        assert_eq!(pngs, 3);
        assert_eq!(load_manifest(&p).unwrap(), vec![s]);
    }

    #[test]
    fn mask_size_mismatch_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_stimulus(&sc(1.0, 0.0, 0.5)).unwrap();
        let p = write_stimulus_set(std::slice::from_ref(&s), dir.path()).unwrap();
        let small = ImageGrid::filled(8, 8, 1, 1.0, Domain::Display01).unwrap();
        save_image(&small, dir.path().join(format!("{}__left.png", s.id))).unwrap();
        match load_manifest(&p) {
            Err(Error::Manifest { entry, detail }) => {
                assert_eq!(entry, s.id);
                assert!(detail.contains("size mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_empty_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_stimulus(&sc(1.0, 0.0, 0.5)).unwrap();
        let p = write_stimulus_set(std::slice::from_ref(&s), dir.path()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replacen("\"darker\"", "\"dimmer\"", 1)).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { .. })));
        fs::write(&p, text).unwrap();
        let black = ImageGrid::filled(64, 64, 1, 0.0, Domain::Display01).unwrap();
        save_image(&black, dir.path().join(format!("{}__right.png", s.id))).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { .. })));
        assert!(matches!(
            load_manifest(dir.path().join("missing.json")),
            Err(Error::MissingFile(_))
        ));
    }
}
