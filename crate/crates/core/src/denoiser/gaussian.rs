use serde::{Deserialize, Serialize};

use super::{b64_f64, eps_from_x0, posterior_alpha_bar};
use crate::error::{Error, Result};
use crate::imagecore::ImageGrid;
use crate::schedule::NoiseSchedule;

/// A per-pixel parameter: one value for every pixel or a full array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorField {
    Scalar(f64),
    #[serde(with = "b64_f64")]
    PerPixel(Vec<f64>),
}

impl PriorField {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            PriorField::Scalar(v) => *v,
            PriorField::PerPixel(v) => v[i],
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        match self {
            PriorField::PerPixel(v) if v.len() != len => Err(Error::shape(
                format!("{len} prior values"),
                format!("{} prior values", v.len()),
            )),
            _ => Ok(()),
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            PriorField::Scalar(v) => Box::new(std::iter::once(*v)),
            PriorField::PerPixel(v) => Box::new(v.iter().copied()),
        }
    }
}

/// Independent per-pixel Gaussian prior `x0 ~ N(mean, variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mean: PriorField,
    variance: PriorField,
}

impl GaussianPrior {
    pub fn new(mean: PriorField, variance: PriorField) -> Result<Self> {
        if variance.values().any(|v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(
                "prior variances must be positive and finite".into(),
            ));
        }
        if let (PriorField::PerPixel(m), PriorField::PerPixel(v)) = (&mean, &variance) {
            if m.len() != v.len() {
                return Err(Error::shape(
                    format!("{} variances", m.len()),
                    format!("{} variances", v.len()),
                ));
            }
        }
        Ok(Self { mean, variance })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(PriorField::Scalar(mean), PriorField::Scalar(variance))
    }

    pub fn mean(&self) -> &PriorField {
        &self.mean
    }

    pub fn variance(&self) -> &PriorField {
        &self.variance
    }
}

/// `E[x0 | z]` for `x0 ~ N(mu, var)` and `z = sqrt(a) x0 + sqrt(1 - a) eps`.
#[inline]
pub fn gaussian_posterior_mean(mu: f64, var: f64, alpha_bar: f64, z: f64) -> f64 {
    let sa = alpha_bar.sqrt();
    mu + sa * var / (alpha_bar * var + 1.0 - alpha_bar) * (z - sa * mu)
}

pub fn gaussian_posterior_eps(
    prior: &GaussianPrior,
    z: &ImageGrid,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<ImageGrid> {
    let a = posterior_alpha_bar(t, sched)?;
    let n = z.data().len();
    prior.mean.check_len(n)?;
    prior.variance.check_len(n)?;
    let x0: Vec<f64> = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &zv)| gaussian_posterior_mean(prior.mean.at(i), prior.variance.at(i), a, zv))
        .collect();
    eps_from_x0(z, &x0, a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GmmComponent {
    pub fn new(weight: f64, mean: f64, variance: f64) -> Self {
        Self {
            weight,
            mean,
            variance,
        }
    }
}

/// Pixelwise scalar Gaussian mixture prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if components
            .iter()
            .any(|c| !(c.weight > 0.0) || !(c.variance > 0.0) || !c.mean.is_finite())
        {
            return Err(Error::InvalidParameter(
                "mixture weights and variances must be positive".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }
}

/// Mixture posterior mean; `None` when every responsibility underflows.
pub fn gmm_posterior_mean(components: &[GmmComponent], alpha_bar: f64, z: f64) -> Option<f64> {
    let sa = alpha_bar.sqrt();
    let mut best = f64::NEG_INFINITY;
    let logs: Vec<f64> = components
        .iter()
        .map(|c| {
            let v = alpha_bar * c.variance + 1.0 - alpha_bar;
            let d = z - sa * c.mean;
            let l = c.weight.ln() - 0.5 * (2.0 * std::f64::consts::PI * v).ln() - d * d / (2.0 * v);
            best = best.max(l);
            l
        })
        .collect();
    if !best.is_finite() {
        return None;
    }
    let mut norm = 0.0;
    let mut acc = 0.0;
    for (c, l) in components.iter().zip(&logs) {
        let w = (l - best).exp();
        norm += w;
        acc += w * gaussian_posterior_mean(c.mean, c.variance, alpha_bar, z);
    }
    Some(acc / norm)
}

pub fn gmm_posterior_eps(
    prior: &GmmPrior,
    z: &ImageGrid,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<ImageGrid> {
    let a = posterior_alpha_bar(t, sched)?;
    let x0 = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &zv)| {
            gmm_posterior_mean(&prior.components, a, zv).ok_or(Error::DegenerateResponsibilities(i))
        })
        .collect::<Result<Vec<f64>>>()?;
    eps_from_x0(z, &x0, a)
}
