//! Linear convolutional noise predictor fit by least squares.
//!
//! For each timestep bucket and channel the model is
//! `eps(p) = sum_o K[o] z(p + o) + b`, fit to synthetic pairs
//! `z = sqrt(a) x0 + sqrt(1 - a) eps` by accumulating the normal equations
//! over every pixel of every noise draw.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::b64_f64;
use super::unsharp::Padding;
use crate::error::{Error, Result};
use crate::imagecore::{Domain, ImageGrid};
use crate::schedule::NoiseSchedule;
use crate::seeds::{derive_path, rng};

/// Ridge added to the normal matrix when it is not positive definite.
pub const RIDGE_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketFit {
    /// Inclusive timestep range covered by this bucket.
    pub first: usize,
    pub last: usize,
    /// `channels x side^2` taps, row-major per channel.
    #[serde(with = "b64_f64")]
    pub kernel: Vec<f64>,
    #[serde(with = "b64_f64")]
    pub bias: Vec<f64>,
    /// Training mean squared error per channel.
    pub residual: Vec<f64>,
    pub samples: u64,
    pub ridge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConvDenoiser {
    kernel_side: usize,
    channels: usize,
    padding: Padding,
    buckets: Vec<BucketFit>,
}

impl LinearConvDenoiser {
    pub fn new(kernel_side: usize, channels: usize, buckets: Vec<BucketFit>) -> Result<Self> {
        if kernel_side % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel side must be odd, got {kernel_side}"
            )));
        }
        let taps = kernel_side * kernel_side;
        for b in &buckets {
            if b.kernel.len() != channels * taps || b.bias.len() != channels || b.first > b.last {
                return Err(Error::InvalidParameter(format!(
                    "malformed bucket [{}, {}]",
                    b.first, b.last
                )));
            }
        }
        Ok(Self {
            kernel_side,
            channels,
            padding: Padding::Reflect,
            buckets,
        })
    }

    pub fn kernel_side(&self) -> usize {
        self.kernel_side
    }

    pub fn buckets(&self) -> &[BucketFit] {
        &self.buckets
    }

    pub fn bucket_for(&self, t: usize) -> Result<&BucketFit> {
        if t == 0 {
            return Err(Error::ZeroTimestep);
        }
        self.buckets
            .iter()
            .find(|b| (b.first..=b.last).contains(&t))
            .ok_or(Error::StepOutOfSchedule {
                step: t,
                t_train: self.buckets.last().map_or(0, |b| b.last),
            })
    }

    pub fn predict(&self, z: &ImageGrid, t: usize) -> Result<ImageGrid> {
        if z.channels() != self.channels {
            return Err(Error::shape(
                format!("{} channels", self.channels),
                format!("{} channels", z.channels()),
            ));
        }
        let bucket = self.bucket_for(t)?;
        let taps = self.kernel_side * self.kernel_side;
        let mut feat = vec![0.0; taps];
        let mut out = vec![0.0; z.data().len()];
        for y in 0..z.height() {
            for x in 0..z.width() {
                for c in 0..z.channels() {
                    neighborhood(z, y, x, c, self.kernel_side, self.padding, &mut feat);
                    let k = &bucket.kernel[c * taps..(c + 1) * taps];
                    let v: f64 = k.iter().zip(&feat).map(|(a, b)| a * b).sum();
                    out[(y * z.width() + x) * z.channels() + c] = v + bucket.bias[c];
                }
            }
        }
        z.with_data(out)
    }
}

/// Fills `out` with the `side x side` neighbourhood of `(y, x)` in channel `c`.
pub(crate) fn neighborhood(
    z: &ImageGrid,
    y: usize,
    x: usize,
    c: usize,
    side: usize,
    padding: Padding,
    out: &mut [f64],
) {
    let r = (side / 2) as isize;
    let mut k = 0;
    for dy in -r..=r {
        let yy = padding.index(y as isize + dy, z.height());
        for dx in -r..=r {
            let xx = padding.index(x as isize + dx, z.width());
            out[k] = z.get(yy, xx, c);
            k += 1;
        }
    }
}

/// One synthetic training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub t: usize,
    pub z: ImageGrid,
    pub eps: ImageGrid,
}

/// Inclusive bucket ranges splitting `1..=t_train` into `buckets` equal spans.
pub fn bucket_ranges(t_train: usize, buckets: usize) -> Result<Vec<(usize, usize)>> {
    if buckets == 0 || buckets > t_train {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= buckets <= t_train, got {buckets} buckets for {t_train} steps"
        )));
    }
    Ok((0..buckets)
        .map(|b| (1 + b * t_train / buckets, (b + 1) * t_train / buckets))
        .collect())
}

fn training_pair(
    x0: &ImageGrid,
    sched: &NoiseSchedule,
    range: (usize, usize),
    seed: u64,
) -> Result<TrainingPair> {
    let mut rng = rng(seed);
    let t = rng.random_range(range.0..=range.1);
    let a = sched.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let eps: Vec<f64> = (0..x0.data().len()).map(|_| rng.sample(StandardNormal)).collect();
    let z: Vec<f64> = x0.data().iter().zip(&eps).map(|(x, e)| sa * x + sn * e).collect();
    Ok(TrainingPair {
        t,
        z: x0.with_data(z)?,
        eps: x0.with_data(eps)?,
    })
}

/// Every training pair used for `bucket`, in accumulation order.
///
/// `corpus` is in display units; pairs are built in model units.
pub fn training_pairs(
    corpus: &[ImageGrid],
    sched: &NoiseSchedule,
    buckets: usize,
    bucket: usize,
    noise_draws: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    let range = bucket_ranges(sched.t_train(), buckets)?[bucket];
    let mut out = Vec::new();
    for (i, img) in corpus.iter().enumerate() {
        let x0 = img.to_model_units()?;
        for d in 0..noise_draws {
            let s = derive_path(seed, &[bucket as u64, i as u64, d as u64]);
            out.push(training_pair(&x0, sched, range, s)?);
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct NormalEquations {
    dim: usize,
    /// Upper triangle accumulated; mirrored before solving.
    gram: Vec<f64>,
    rhs: Vec<f64>,
    target_sq: f64,
    count: u64,
}

impl NormalEquations {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            gram: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            target_sq: 0.0,
            count: 0,
        }
    }

    #[inline]
    fn add(&mut self, feat: &[f64], target: f64) {
        let n = self.dim;
        for i in 0..n {
            let fi = feat[i];
            self.rhs[i] += fi * target;
            let row = &mut self.gram[i * n..(i + 1) * n];
            for j in i..n {
                row[j] += fi * feat[j];
            }
        }
        self.target_sq += target * target;
        self.count += 1;
    }

    fn merge(&mut self, other: &NormalEquations) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a += b;
        }
        self.target_sq += other.target_sq;
        self.count += other.count;
    }

    fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.gram[a * n + b]
        })
    }

    /// Returns `(weights, mse, ridge_used)`.
    fn solve(&self) -> Result<(Vec<f64>, f64, bool)> {
        let a = self.matrix();
        let r = DVector::from_column_slice(&self.rhs);
        let (w, ridge) = match a.clone().cholesky() {
            Some(ch) => (ch.solve(&r), false),
            None => {
                warn!("normal matrix not positive definite, adding ridge {RIDGE_LAMBDA}");
                let shifted = &a + DMatrix::identity(self.dim, self.dim) * RIDGE_LAMBDA;
                let w = match shifted.clone().cholesky() {
                    Some(ch) => ch.solve(&r),
                    None => shifted.lu().solve(&r).ok_or_else(|| {
                        Error::InvalidParameter("normal equations are singular".into())
                    })?,
                };
                (w, true)
            }
        };
        let sse = self.target_sq - 2.0 * w.dot(&r) + (&a * &w).dot(&w);
        let mse = (sse / self.count as f64).max(0.0);
        Ok((w.iter().copied().collect(), mse, ridge))
    }
}

/// Closed-form denoising-score-matching fit.
///
/// `corpus` holds display-domain images (converted to model units here). The
/// per-image partial sums are computed in parallel and merged in input order,
/// so the result does not depend on the thread count.
pub fn fit_linear_denoiser(
    corpus: &[ImageGrid],
    sched: &NoiseSchedule,
    buckets: usize,
    kernel_side: usize,
    noise_draws: usize,
    seed: u64,
) -> Result<LinearConvDenoiser> {
    if corpus.is_empty() {
        return Err(Error::InvalidParameter("corpus is empty".into()));
    }
    if kernel_side % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "kernel side must be odd, got {kernel_side}"
        )));
    }
    if noise_draws == 0 {
        return Err(Error::InvalidParameter("noise_draws must be >= 1".into()));
    }
    let channels = corpus[0].channels();
    if corpus.iter().any(|img| img.channels() != channels) {
        return Err(Error::InvalidParameter("corpus mixes channel counts".into()));
    }
    if corpus.iter().any(|img| img.domain() != Domain::Display01) {
        return Err(Error::WrongDomain {
            expected: Domain::Display01,
            found: Domain::Model11,
        });
    }
    let ranges = bucket_ranges(sched.t_train(), buckets)?;
    let model_corpus = corpus
        .iter()
        .map(ImageGrid::to_model_units)
        .collect::<Result<Vec<_>>>()?;
    let taps = kernel_side * kernel_side;
    let dim = taps + 1;
    let padding = Padding::Reflect;

    let mut fits = Vec::with_capacity(ranges.len());
    for (b, &range) in ranges.iter().enumerate() {
        let partials = model_corpus
            .par_iter()
            .enumerate()
            .map(|(i, x0)| -> Result<Vec<NormalEquations>> {
                let mut eqs = vec![NormalEquations::new(dim); channels];
                let mut feat = vec![0.0; dim];
                for d in 0..noise_draws {
                    let s = derive_path(seed, &[b as u64, i as u64, d as u64]);
                    let pair = training_pair(x0, sched, range, s)?;
                    for y in 0..x0.height() {
                        for x in 0..x0.width() {
                            for (c, eq) in eqs.iter_mut().enumerate() {
                                neighborhood(&pair.z, y, x, c, kernel_side, padding, &mut feat[..taps]);
                                feat[taps] = 1.0;
                                eq.add(&feat, pair.eps.get(y, x, c));
                            }
                        }
                    }
                }
                Ok(eqs)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut totals = vec![NormalEquations::new(dim); channels];
        for part in &partials {
            for (t, p) in totals.iter_mut().zip(part) {
                t.merge(p);
            }
        }
        let mut kernel = Vec::with_capacity(channels * taps);
        let mut bias = Vec::with_capacity(channels);
        let mut residual = Vec::with_capacity(channels);
        let mut ridge = false;
        for eq in &totals {
            let (w, mse, used_ridge) = eq.solve()?;
            kernel.extend_from_slice(&w[..taps]);
            bias.push(w[taps]);
            residual.push(mse);
            ridge |= used_ridge;
        }
        fits.push(BucketFit {
            first: range.0,
            last: range.1,
            kernel,
            bias,
            residual,
            samples: totals[0].count,
            ridge,
        });
    }
    LinearConvDenoiser::new(kernel_side, channels, fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_schedule;

    fn white_gaussian_corpus(n: usize, side: usize, sigma2: f64, seed: u64) -> Vec<ImageGrid> {
        // Display units so that model-domain values are N(0, sigma2).
        (0..n)
            .map(|i| {
                let mut r = rng(seed + i as u64);
                let data: Vec<f64> = (0..side * side)
                    .map(|_| {
                        let v: f64 = r.sample(StandardNormal);
                        (sigma2.sqrt() * v + 1.0) / 2.0
                    })
                    .collect();
                ImageGrid::from_parts_unchecked(side, side, 1, data, Domain::Display01)
            })
            .collect()
    }

    #[test]
    fn bucket_ranges_cover_steps() {
        assert_eq!(
            bucket_ranges(1000, 4).unwrap(),
            vec![(1, 250), (251, 500), (501, 750), (751, 1000)]
        );
        assert_eq!(bucket_ranges(4, 4).unwrap(), vec![(1, 1), (2, 2), (3, 3), (4, 4)]);
        assert!(bucket_ranges(3, 4).is_err());
    }

    #[test]
    fn zero_corpus_recovers_identity_gain() {
        let sched = make_schedule(4, 0.1, 0.4, 4).unwrap();
        let corpus = vec![ImageGrid::filled(12, 12, 1, 0.5, Domain::Display01).unwrap(); 3];
        let model = fit_linear_denoiser(&corpus, &sched, 4, 3, 4, 7).unwrap();
        for (t, b) in (1..=4).zip(model.buckets()) {
            // x0 = 0 so z = sqrt(1 - a) eps exactly: eps = z / sqrt(1 - a).
            let a = sched.alpha_bar(t).unwrap();
            let gain = 1.0 / (1.0 - a).sqrt();
            assert!(b.bias[0].abs() < 1e-6);
            assert!((b.kernel[4] - gain).abs() < 1e-6);
            for (k, v) in b.kernel.iter().enumerate() {
                if k != 4 {
                    assert!(v.abs() < 1e-6);
                }
            }
            assert!(b.residual[0] < 1e-6);
        }
    }

    #[test]
    fn scalar_gain_matches_wiener() {
        let sigma2 = 0.01;
        let sched = NoiseSchedule::from_betas(vec![0.5], 1).unwrap();
        let corpus = white_gaussian_corpus(40, 64, sigma2, 99);
        let model = fit_linear_denoiser(&corpus, &sched, 1, 1, 250, 3).unwrap();
        let a = 0.5;
        let wiener = (1.0 - a as f64).sqrt() / (a * sigma2 + 1.0 - a);
        let got = model.buckets()[0].kernel[0];
        assert!((got - wiener).abs() < 1e-4, "{got} vs {wiener}");
    }

    #[test]
    fn fit_is_deterministic_and_reproducible_from_pairs() {
        let sched = make_schedule(20, 1e-3, 0.2, 5).unwrap();
        let corpus = white_gaussian_corpus(3, 8, 0.2, 5);
        let a = fit_linear_denoiser(&corpus, &sched, 2, 3, 2, 11).unwrap();
        let b = fit_linear_denoiser(&corpus, &sched, 2, 3, 2, 11).unwrap();
        assert_eq!(a, b);
        let pairs = training_pairs(&corpus, &sched, 2, 1, 2, 11).unwrap();
        assert_eq!(pairs.len(), 6);
        assert!(pairs.iter().all(|p| (11..=20).contains(&p.t)));
        assert_eq!(a.buckets()[1].samples, 6 * 64);
    }

    #[test]
    fn invalid_fit_inputs() {
        let sched = make_schedule(10, 1e-3, 0.2, 5).unwrap();
        let corpus = white_gaussian_corpus(1, 4, 0.2, 5);
        assert!(fit_linear_denoiser(&[], &sched, 2, 3, 1, 0).is_err());
        assert!(fit_linear_denoiser(&corpus, &sched, 2, 2, 1, 0).is_err());
        assert!(fit_linear_denoiser(&corpus, &sched, 20, 3, 1, 0).is_err());
        assert!(fit_linear_denoiser(&corpus, &sched, 2, 3, 0, 0).is_err());
    }

    #[test]
    fn predict_checks_bucket_and_channels() {
        let sched = make_schedule(10, 1e-3, 0.2, 5).unwrap();
        let corpus = white_gaussian_corpus(2, 6, 0.2, 5);
        let model = fit_linear_denoiser(&corpus, &sched, 2, 3, 1, 0).unwrap();
        let z = ImageGrid::filled(6, 6, 1, 0.1, Domain::Model11).unwrap();
        assert!(model.predict(&z, 3).is_ok());
        assert!(matches!(model.predict(&z, 0), Err(Error::ZeroTimestep)));
        assert!(model.predict(&z, 11).is_err());
        let rgb = ImageGrid::filled(6, 6, 3, 0.1, Domain::Model11).unwrap();
        assert!(model.predict(&rgb, 3).is_err());
    }

    #[test]
    fn singular_system_uses_ridge() {
        // A constant corpus at t with beta tiny still has noise; force
        // singularity with two identical taps via a 1x1 image and side 3.
        let sched = NoiseSchedule::from_betas(vec![0.5], 1).unwrap();
        let corpus = vec![ImageGrid::filled(1, 1, 1, 0.5, Domain::Display01).unwrap()];
        let model = fit_linear_denoiser(&corpus, &sched, 1, 3, 3, 1).unwrap();
        assert!(model.buckets()[0].ridge);
        assert!(model.buckets()[0].kernel.iter().all(|v| v.is_finite()));
    }
}
