//! Noise-prediction backends `eps(z_t, t)`.
//!
//! Analytic backends compute the posterior mean `E[x0 | z_t]` under a known
//! prior and convert it to a noise estimate with
//! `eps = (z - sqrt(a) x0) / sqrt(1 - a)`. The fitted backend is a per-bucket
//! linear convolution solved in closed form. Optional categorical conditions
//! are mixed with classifier-free guidance.

mod corpus;
mod gaussian;
mod linear;
mod unsharp;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Domain, ImageGrid};
use crate::schedule::{NoiseSchedule, ScheduleParams};

pub use corpus::{generate_corpus, CorpusKind, CorpusSpec};
pub use gaussian::{
    gaussian_posterior_eps, gaussian_posterior_mean, gmm_posterior_eps, gmm_posterior_mean,
    GaussianPrior, GmmComponent, GmmPrior, PriorField,
};
pub use linear::{
    bucket_ranges, fit_linear_denoiser, training_pairs, BucketFit, LinearConvDenoiser, TrainingPair,
    RIDGE_LAMBDA,
};
pub use unsharp::{box_blur, unsharp_reference_eps, unsharp_x0, Padding, UnsharpParams};

/// Anything that can estimate the noise in a model-domain state at step `t`.
pub trait NoisePredictor: Sync {
    fn predict_noise(&self, z: &ImageGrid, t: usize, sched: &NoiseSchedule) -> Result<ImageGrid>;
}

/// Converts a posterior-mean image into the matching noise estimate.
pub(crate) fn eps_from_x0(z: &ImageGrid, x0: &[f64], alpha_bar: f64) -> Result<ImageGrid> {
    if alpha_bar >= 1.0 {
        return Err(Error::ZeroTimestep);
    }
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = z
        .data()
        .iter()
        .zip(x0)
        .map(|(&zv, &x)| (zv - sa * x) / sn)
        .collect();
    z.with_data(data)
}

/// Alpha-bar for a posterior backend, rejecting `t = 0`.
pub(crate) fn posterior_alpha_bar(t: usize, sched: &NoiseSchedule) -> Result<f64> {
    if t == 0 {
        return Err(Error::ZeroTimestep);
    }
    sched.alpha_bar(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Zero,
    /// Input-independent field `eps = value` everywhere.
    Constant { value: f64 },
    Gaussian(GaussianPrior),
    Gmm(GmmPrior),
    LinearConv(LinearConvDenoiser),
    UnsharpRef(UnsharpParams),
}

impl NoiseModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseModel::Zero => "zero",
            NoiseModel::Constant { .. } => "constant",
            NoiseModel::Gaussian(_) => "gaussian",
            NoiseModel::Gmm(_) => "gmm",
            NoiseModel::LinearConv(_) => "linear_conv",
            NoiseModel::UnsharpRef(_) => "unsharp_ref",
        }
    }
}

impl NoisePredictor for NoiseModel {
    fn predict_noise(&self, z: &ImageGrid, t: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        if z.domain() != Domain::Model11 {
            return Err(Error::WrongDomain {
                expected: Domain::Model11,
                found: z.domain(),
            });
        }
        sched.alpha_bar(t)?;
        match self {
            NoiseModel::Zero => z.with_data(vec![0.0; z.data().len()]),
            NoiseModel::Constant { value } => z.with_data(vec![*value; z.data().len()]),
            NoiseModel::Gaussian(prior) => gaussian_posterior_eps(prior, z, t, sched),
            NoiseModel::Gmm(prior) => gmm_posterior_eps(prior, z, t, sched),
            NoiseModel::LinearConv(model) => model.predict(z, t),
            NoiseModel::UnsharpRef(p) => {
                unsharp_reference_eps(z, t, sched, p.strength, p.radius, p.padding)
            }
        }
    }
}

/// Provenance of a fitted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub corpus: CorpusSpec,
    pub schedule: ScheduleParams,
    pub seed: u64,
    pub noise_draws: usize,
    /// Mean squared noise-prediction error per bucket.
    pub residuals: Vec<f64>,
}

/// Serializable backend: an unconditional model plus optional labelled
/// conditional models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserBackend {
    pub id: String,
    pub model: NoiseModel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub conditions: BTreeMap<String, NoiseModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMetadata>,
}

impl DenoiserBackend {
    pub fn new(id: impl Into<String>, model: NoiseModel) -> Self {
        Self {
            id: id.into(),
            model,
            conditions: BTreeMap::new(),
            fit: None,
        }
    }

    pub fn with_condition(mut self, label: impl Into<String>, model: NoiseModel) -> Self {
        self.conditions.insert(label.into(), model);
        self
    }

    /// `eps_u + s (eps_c - eps_u)` when a condition is given, the plain
    /// unconditional prediction otherwise. `s = 1` returns `eps_c` as is.
    pub fn predict_noise(
        &self,
        z: &ImageGrid,
        t: usize,
        sched: &NoiseSchedule,
        condition: Option<&str>,
        cfg_scale: f64,
    ) -> Result<ImageGrid> {
        if !(cfg_scale >= 0.0 && cfg_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cfg_scale must be finite and >= 0, got {cfg_scale}"
            )));
        }
        let Some(label) = condition else {
            return self.model.predict_noise(z, t, sched);
        };
        let cond_model = self
            .conditions
            .get(label)
            .ok_or_else(|| Error::UnknownCondition(label.to_string()))?;
        let cond = cond_model.predict_noise(z, t, sched)?;
        if cfg_scale == 1.0 {
            return Ok(cond);
        }
        let uncond = self.model.predict_noise(z, t, sched)?;
        let data = uncond
            .data()
            .iter()
            .zip(cond.data())
            .map(|(&u, &c)| u + cfg_scale * (c - u))
            .collect();
        z.with_data(data)
    }

    /// Binds a condition and guidance scale for use as a [`NoisePredictor`].
    pub fn guided<'a>(&'a self, condition: Option<&'a str>, cfg_scale: f64) -> Guided<'a> {
        Guided {
            backend: self,
            condition,
            cfg_scale,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl NoisePredictor for DenoiserBackend {
    fn predict_noise(&self, z: &ImageGrid, t: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        self.model.predict_noise(z, t, sched)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Guided<'a> {
    pub backend: &'a DenoiserBackend,
    pub condition: Option<&'a str>,
    pub cfg_scale: f64,
}

impl NoisePredictor for Guided<'_> {
    fn predict_noise(&self, z: &ImageGrid, t: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        self.backend
            .predict_noise(z, t, sched, self.condition, self.cfg_scale)
    }
}

/// Base64 (little-endian f64) encoding for numeric arrays in backend files.
pub(crate) mod b64_f64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn encode(values: &[f64]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(text: &str) -> Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() % 8 != 0 {
            return Err(format!("{} bytes is not a whole number of f64", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        decode(&text).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        crate::schedule::make_schedule(1000, 1e-4, 0.02, 10).unwrap()
    }

    fn random_z(seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(5, 4, 1, Domain::Model11, |_, _, _| rng.random_range(-1.5..1.5)).unwrap()
    }

    fn conditional_gmm() -> DenoiserBackend {
        let uncond = GmmPrior::new(vec![
            GmmComponent::new(0.5, -0.5, 0.1),
            GmmComponent::new(0.5, 0.5, 0.1),
        ])
        .unwrap();
        let cond = GmmPrior::new(vec![
            GmmComponent::new(0.8, -0.6, 0.05),
            GmmComponent::new(0.2, 0.4, 0.2),
        ])
        .unwrap();
        DenoiserBackend::new("gmm-cfg", NoiseModel::Gmm(uncond)).with_condition("dark", NoiseModel::Gmm(cond))
    }

    #[test]
    fn zero_backend_returns_zeros() {
        let b = DenoiserBackend::new("z", NoiseModel::Zero);
        let out = b.predict_noise(&random_z(1), 300, &sched(), None, 1.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cfg_scale_one_is_conditional() {
        let b = conditional_gmm();
        let z = random_z(2);
        let s = sched();
        let mixed = b.predict_noise(&z, 400, &s, Some("dark"), 1.0).unwrap();
        let direct = b.conditions["dark"].predict_noise(&z, 400, &s).unwrap();
        assert_eq!(mixed, direct);
        let plain = b.predict_noise(&z, 400, &s, None, 10.0).unwrap();
        assert_eq!(plain, b.model.predict_noise(&z, 400, &s).unwrap());
    }

    #[test]
    fn cfg_scale_ten_matches_scalar_oracle() {
        let b = conditional_gmm();
        let z = random_z(3);
        let s = sched();
        let t = 500;
        let a = s.alpha_bar(t).unwrap();
        let mixed = b.predict_noise(&z, t, &s, Some("dark"), 10.0).unwrap();
        let (NoiseModel::Gmm(u), NoiseModel::Gmm(c)) = (&b.model, &b.conditions["dark"]) else {
            unreachable!()
        };
        for (i, &zv) in z.data().iter().enumerate() {
            let eps = |prior: &GmmPrior| {
                let x0 = gmm_posterior_mean(prior.components(), a, zv).unwrap();
                (zv - a.sqrt() * x0) / (1.0 - a).sqrt()
            };
            let (eu, ec) = (eps(u), eps(c));
            let oracle = eu + 10.0 * (ec - eu);
            assert!((mixed.data()[i] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn condition_errors() {
        let b = conditional_gmm();
        let z = random_z(4);
        assert!(matches!(
            b.predict_noise(&z, 10, &sched(), Some("bright"), 2.0),
            Err(Error::UnknownCondition(_))
        ));
        assert!(b.predict_noise(&z, 10, &sched(), None, -1.0).is_err());
        let d = ImageGrid::filled(2, 2, 1, 0.5, Domain::Display01).unwrap();
        assert!(matches!(
            b.predict_noise(&d, 10, &sched(), None, 1.0),
            Err(Error::WrongDomain { .. })
        ));
    }

    #[test]
    fn predictions_are_deterministic() {
        let s = sched();
        let z = random_z(5);
        let backends = [
            DenoiserBackend::new("c", NoiseModel::Constant { value: 0.3 }),
            DenoiserBackend::new(
                "g",
                NoiseModel::Gaussian(GaussianPrior::scalar(0.1, 0.4).unwrap()),
            ),
            conditional_gmm(),
            DenoiserBackend::new("u", NoiseModel::UnsharpRef(UnsharpParams::default())),
        ];
        for b in &backends {
            let a1 = b.predict_noise(&z, 250, &s, None, 1.0).unwrap();
            let a2 = b.predict_noise(&z, 250, &s, None, 1.0).unwrap();
            assert_eq!(a1.data(), a2.data());
        }
    }

    #[test]
    fn backend_json_round_trip() {
        let b = conditional_gmm();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.json");
        b.save(&p).unwrap();
        assert_eq!(DenoiserBackend::load(&p).unwrap(), b);
        assert!(matches!(
            DenoiserBackend::load(dir.path().join("nope.json")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn b64_round_trip_is_bit_exact() {
        let vals = vec![0.1, -2.5e-300, f64::MAX, 1.0 / 3.0];
        assert_eq!(b64_f64::decode(&b64_f64::encode(&vals)).unwrap(), vals);
        assert!(b64_f64::decode("AAA=").is_err());
    }
}
