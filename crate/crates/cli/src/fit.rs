use std::path::PathBuf;

use clap::{Args, ValueEnum};
use perceptlab_core::denoiser::{
    fit_linear_denoiser, generate_corpus, CorpusKind, CorpusSpec, DenoiserBackend, FitMetadata, GaussianPrior,
    GmmComponent, GmmPrior, NoiseModel, Padding, UnsharpParams,
};
use perceptlab_core::seeds::derive_seed;
use serde::{Deserialize, Serialize};

use crate::{create_out, load_backend, usage, CliError, Run, ScheduleArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Zero,
    Constant,
    Gaussian,
    Gmm,
    Unsharp,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingArg {
    Reflect,
    Periodic,
}

impl From<PaddingArg> for Padding {
    fn from(p: PaddingArg) -> Self {
        match p {
            PaddingArg::Reflect => Padding::Reflect,
            PaddingArg::Periodic => Padding::Periodic,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub kind: BackendKind,
    /// Backend id carried into reports (default: the kind name).
    #[arg(long)]
    pub id: Option<String>,
    /// Noise value of the constant backend.
    #[arg(long, default_value_t = 0.0)]
    pub value: f64,
    /// Gaussian prior mean, model units.
    #[arg(long, default_value_t = 0.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 0.25)]
    pub variance: f64,
    /// Mixture components as `weight:mean:variance`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub components: Vec<String>,
    /// Unsharp strength.
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    /// Unsharp box radius.
    #[arg(long, default_value_t = 5)]
    pub radius: usize,
    #[arg(long, value_enum, default_value_t = PaddingArg::Reflect)]
    pub padding: PaddingArg,
    /// Training corpus for the linear backend.
    #[arg(long, default_value = "dead_leaves")]
    pub corpus: String,
    #[arg(long, default_value_t = 64)]
    pub corpus_count: usize,
    #[arg(long, default_value_t = 32)]
    pub corpus_size: usize,
    #[arg(long, default_value_t = 10)]
    pub buckets: usize,
    /// Odd kernel side of the linear backend.
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub noise_draws: usize,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Conditional model as `LABEL=BACKEND.json`; that backend's
    /// unconditional model is attached under LABEL.
    #[arg(long)]
    pub condition: Vec<String>,
    #[arg(long, env = "PERCEPTLAB_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_component(s: &str) -> Result<GmmComponent, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("component `{s}`: {e}")))?;
    match nums[..] {
        [w, m, v] => Ok(GmmComponent::new(w, m, v)),
        _ => Err(CliError::Usage(format!("component `{s}` must be weight:mean:variance"))),
    }
}

pub(crate) fn run(a: &mut FitArgs) -> Result<Run, CliError> {
    let master = a.seed.unwrap_or(0);
    a.seed = Some(master);
    let sched = a.schedule.build()?;
    let mut run = Run::done(&a.out, vec![]);

    let mut conditions = Vec::new();
    for spec in a.condition.iter_mut() {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("condition `{spec}` must be LABEL=FILE")))?;
        let label = label.to_string();
        let mut path = PathBuf::from(path);
        let backend = load_backend(&mut path)?;
        run.inputs.push(path.clone());
        *spec = format!("{label}={}", path.display());
        conditions.push((label, backend.model));
    }

    let mut fit = None;
    let model = match a.kind {
        BackendKind::Zero => NoiseModel::Zero,
        BackendKind::Constant => NoiseModel::Constant { value: a.value },
        BackendKind::Gaussian => NoiseModel::Gaussian(GaussianPrior::scalar(a.mean, a.variance).map_err(usage)?),
        BackendKind::Gmm => {
            if a.components.is_empty() {
                return Err(CliError::Usage("gmm needs --components".into()));
            }
            let comps = a.components.iter().map(|c| parse_component(c)).collect::<Result<_, _>>()?;
            NoiseModel::Gmm(GmmPrior::new(comps).map_err(usage)?)
        }
        BackendKind::Unsharp => {
            if !(a.strength >= 0.0) {
                return Err(CliError::Usage(format!("strength must be >= 0, got {}", a.strength)));
            }
            NoiseModel::UnsharpRef(UnsharpParams {
                strength: a.strength,
                radius: a.radius,
                padding: a.padding.into(),
            })
        }
        BackendKind::Linear => {
            let kind: CorpusKind = a.corpus.parse().map_err(usage)?;
            let corpus_seed = derive_seed(master, 0);
            let noise_seed = derive_seed(master, 1);
            run = run.seed("corpus", corpus_seed).seed("noise", noise_seed);
            let spec = CorpusSpec {
                kind,
                height: a.corpus_size,
                width: a.corpus_size,
                count: a.corpus_count,
                seed: corpus_seed,
            };
            let corpus = generate_corpus(&spec).map_err(usage)?;
            let model = fit_linear_denoiser(&corpus, &sched, a.buckets, a.kernel, a.noise_draws, noise_seed)
                .map_err(usage)?;
            fit = Some(FitMetadata {
                corpus: spec,
                schedule: a.schedule.params(),
                seed: noise_seed,
                noise_draws: a.noise_draws,
                residuals: model
                    .buckets()
                    .iter()
                    .map(|b| b.residual.iter().sum::<f64>() / b.residual.len() as f64)
                    .collect(),
            });
            NoiseModel::LinearConv(model)
        }
    };
    let id = a.id.clone().unwrap_or_else(|| model.kind_name().to_string());
    a.id = Some(id.clone());
    let mut backend = DenoiserBackend::new(id, model);
    backend.fit = fit;
    for (label, m) in conditions {
        backend = backend.with_condition(label, m);
    }

    create_out(&a.out)?;
    let path = a.out.join("backend.json");
    backend.save(&path)?;
    if let Some(f) = &backend.fit {
        for (b, r) in f.residuals.iter().enumerate() {
            println!("bucket {b}: residual {r:.6}");
        }
    }
    println!("wrote {}", path.display());
    Ok(run.seed("master", master))
}
