use std::path::PathBuf;

use clap::Args;
use perceptlab_core::seeds::derive_path;
use perceptlab_core::stimuli::{gen_stimulus, write_stimulus_set, StimulusSpec, DEFAULT_SIZE, KIND_NAMES};
use perceptlab_core::study::{StudyEntry, StudyLabel, StudySet};
use serde::{Deserialize, Serialize};

use crate::{create_out, usage, write_json, CliError, Run};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MakeStimuliArgs {
    /// Comma-separated stimulus kinds, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "simultaneous_contrast")]
    pub kinds: Vec<String>,
    /// Stimuli per kind.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    pub size: usize,
    /// Also emit a control stimulus (equal surrounds) for every illusion.
    #[arg(long)]
    pub controls: bool,
    /// Write `sets/<ID>.json` listing the stimuli for the study server.
    #[arg(long)]
    pub study_set: Option<String>,
    #[arg(long, env = "PERCEPTLAB_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn run(a: &mut MakeStimuliArgs) -> Result<Run, CliError> {
    if a.kinds.iter().any(|k| k == "all") {
        a.kinds = KIND_NAMES.map(String::from).to_vec();
    }
    if let Some(bad) = a.kinds.iter().find(|k| !KIND_NAMES.contains(&k.as_str())) {
        return Err(CliError::Usage(format!(
            "unknown stimulus kind `{bad}` (expected one of {})",
            KIND_NAMES.join(", ")
        )));
    }
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let master = a.seed.unwrap_or(0);
    a.seed = Some(master);

    let mut run = Run::done(&a.out, vec![]).seed("master", master);
    let mut stimuli = Vec::new();
    let mut entries = Vec::new();
    for (k, kind) in a.kinds.iter().enumerate() {
        for i in 0..a.count {
            let seed = derive_path(master, &[k as u64, i as u64]);
            run.seeds.insert(format!("{kind}/{i}"), seed);
            for control in [false, true] {
                if control && !a.controls {
                    continue;
                }
                let spec = StimulusSpec::randomized(kind, a.size, seed, control).map_err(usage)?;
                let stim = gen_stimulus(&spec).map_err(usage)?;
                entries.push(StudyEntry {
                    image: format!("{}.png", stim.id),
                    label: if control { StudyLabel::Control } else { StudyLabel::Illusion },
                });
                stimuli.push(stim);
            }
        }
    }

    let set = match &a.study_set {
        Some(id) => {
            let set = StudySet {
                id: id.clone(),
                stimuli: entries,
            };
            set.validate().map_err(usage)?;
            Some(set)
        }
        None => None,
    };

    create_out(&a.out)?;
    write_stimulus_set(&stimuli, &a.out)?;
    if let Some(set) = set {
        let dir = a.out.join("sets");
        create_out(&dir)?;
        write_json(&dir.join(format!("{}.json", set.id)), &set)?;
    }
    println!("wrote {} stimuli to {}", stimuli.len(), a.out.display());
    Ok(run)
}
