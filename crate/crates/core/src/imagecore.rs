//! Image grids with an explicit value domain, region masks, and PNG/PGM I/O.
//!
//! Every grid carries a [`Domain`] tag. Stimuli and reports live in
//! `Display01` (`[0, 1]`), diffusion states live in `Model11` (`[-1, 1]`
//! nominally, unbounded in practice). Conversions are explicit and clamping
//! only happens when going back to display units.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Display01,
    Model11,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Display01 => f.write_str("display01"),
            Domain::Model11 => f.write_str("model11"),
        }
    }
}

/// Row-major `height x width x channels` pixel array.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    domain: Domain,
}

impl ImageGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        domain: Domain,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-size image {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values", height * width * channels),
                format!("{} values", data.len()),
            ));
        }
        if domain == Domain::Display01 && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(
                "display01 values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            domain,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64, domain: Domain) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
            domain,
        )
    }

    /// Builds a grid from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        domain: Domain,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data, domain)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Value at flat pixel index `p` (row-major), channel `c`.
    #[inline]
    pub fn at(&self, p: usize, c: usize) -> f64 {
        self.data[p * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub(crate) fn check_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    /// New grid with the same shape and domain but different values.
    ///
    /// No range check is made; only intended for model-domain arithmetic.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::shape(
                format!("{} values", self.data.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self::from_parts_unchecked(
            self.height,
            self.width,
            self.channels,
            data,
            self.domain,
        ))
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        domain: Domain,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
            domain,
        }
    }

    /// `2 x - 1`.
    pub fn to_model_units(&self) -> Result<ImageGrid> {
        if self.domain != Domain::Display01 {
            return Err(Error::WrongDomain {
                expected: Domain::Display01,
                found: self.domain,
            });
        }
        Ok(Self::from_parts_unchecked(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|v| 2.0 * v - 1.0).collect(),
            Domain::Model11,
        ))
    }

    /// `(x + 1) / 2`, clamped to `[0, 1]`.
    pub fn to_display_units(&self) -> Result<ImageGrid> {
        if self.domain != Domain::Model11 {
            return Err(Error::WrongDomain {
                expected: Domain::Model11,
                found: self.domain,
            });
        }
        Ok(Self::from_parts_unchecked(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
                .collect(),
            Domain::Display01,
        ))
    }

    /// Rounds display values onto the 8-bit grid (`q / 255`).
    pub fn quantize_8bit(&self) -> Result<ImageGrid> {
        if self.domain != Domain::Display01 {
            return Err(Error::WrongDomain {
                expected: Domain::Display01,
                found: self.domain,
            });
        }
        Ok(Self::from_parts_unchecked(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .map(|&v| f64::from(quantize_u8(v)) / 255.0)
                .collect(),
            Domain::Display01,
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8/16-bit gray or RGB PNG/PGM into display units.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let unsupported = |detail: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        other => return Err(unsupported(format!("format {other:?}"))),
    }
    let decoded = reader.decode().map_err(|e| unsupported(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage(format!(
            "{} has zero size",
            path.display()
        )));
    }
    let (channels, data): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, scale_samples(buf.as_raw(), 255.0)),
        DynamicImage::ImageRgb8(buf) => (3, scale_samples(buf.as_raw(), 255.0)),
        DynamicImage::ImageLuma16(buf) => (1, scale_samples(buf.as_raw(), 65535.0)),
        DynamicImage::ImageRgb16(buf) => (3, scale_samples(buf.as_raw(), 65535.0)),
        other => {
            return Err(unsupported(format!(
                "color type {:?} (only gray or RGB without alpha)",
                other.color()
            )))
        }
    };
    ImageGrid::new(h, w, channels, data, Domain::Display01)
}

fn scale_samples<T: Copy + Into<f64>>(raw: &[T], max: f64) -> Vec<f64> {
    raw.iter().map(|&v| v.into() / max).collect()
}

/// Writes an 8-bit image. `.pgm` selects binary P5 (gray only); anything else is PNG.
pub fn save_image(img: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.domain() != Domain::Display01 {
        return Err(Error::WrongDomain {
            expected: Domain::Display01,
            found: img.domain(),
        });
    }
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = if img.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = BufWriter::new(file);
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let encoded = if is_pgm {
        if img.channels() != 1 {
            return Err(Error::InvalidImage("PGM output needs a single channel".into()));
        }
        PnmEncoder::new(writer)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, w, h, color)
    } else {
        image::codecs::png::PngEncoder::new(writer).write_image(&bytes, w, h, color)
    };
    encoded.map_err(|e| Error::InvalidImage(format!("encoding {}: {e}", path.display())))
}

/// Boolean pixel mask over an `height x width` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    id: String,
    height: usize,
    width: usize,
    bits: Vec<bool>,
    count: usize,
}

impl RegionMask {
    pub fn new(id: impl Into<String>, height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        let id = id.into();
        if bits.len() != height * width {
            return Err(Error::shape(
                format!("{} mask bits", height * width),
                format!("{} mask bits", bits.len()),
            ));
        }
        let count = bits.iter().filter(|b| **b).count();
        if count == 0 {
            return Err(Error::EmptyRegion(id));
        }
        Ok(Self {
            id,
            height,
            width,
            bits,
            count,
        })
    }

    /// Axis-aligned rectangle `[y0, y0 + h) x [x0, x0 + w)`.
    pub fn rect(
        id: impl Into<String>,
        height: usize,
        width: usize,
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
    ) -> Result<Self> {
        let id = id.into();
        if y0 + h > height || x0 + w > width {
            return Err(Error::InvalidParameter(format!(
                "rectangle for `{id}` exceeds the {height}x{width} canvas"
            )));
        }
        let mut bits = vec![false; height * width];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                bits[y * width + x] = true;
            }
        }
        Self::new(id, height, width, bits)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of set pixels (`M`).
    pub fn pixel_count(&self) -> usize {
        self.count
    }

    /// Flat indices of the set pixels, row-major.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn fits(&self, img: &ImageGrid) -> bool {
        self.height == img.height() && self.width == img.width()
    }

    pub(crate) fn check_fits(&self, img: &ImageGrid) -> Result<()> {
        if self.fits(img) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{} (mask `{}`)", self.height, self.width, self.id),
                format!("{}x{} (image)", img.height(), img.width()),
            ))
        }
    }

    pub fn overlaps(&self, other: &RegionMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    /// Mask as a single-channel display image (foreground = 1).
    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::from_parts_unchecked(
            self.height,
            self.width,
            1,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            Domain::Display01,
        )
    }
}

/// Thresholds a single-channel mask image; bits are set where `pixel > threshold`.
pub fn region_from_mask(id: impl Into<String>, mask: &ImageGrid, threshold: f64) -> Result<RegionMask> {
    if mask.channels() != 1 {
        return Err(Error::InvalidImage(format!(
            "mask must be single channel, got {}",
            mask.channels()
        )));
    }
    let bits = mask.data().iter().map(|&v| v > threshold).collect();
    RegionMask::new(id, mask.height(), mask.width(), bits)
}

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// Checks that no two masks share a pixel.
pub fn ensure_disjoint<'a>(masks: impl IntoIterator<Item = &'a RegionMask>) -> Result<()> {
    let masks: Vec<&RegionMask> = masks.into_iter().collect();
    for (i, a) in masks.iter().enumerate() {
        for b in &masks[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::OverlappingRegions(a.id().into(), b.id().into()));
            }
        }
    }
    Ok(())
}
