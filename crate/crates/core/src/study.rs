//! Same/different psychophysics data: study sets, session records and
//! per-session rates.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyLabel {
    Illusion,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyEntry {
    /// Image path relative to the stimulus root.
    pub image: String,
    pub label: StudyLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySet {
    pub id: String,
    pub stimuli: Vec<StudyEntry>,
}

impl StudySet {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.stimuli.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "study set `{}` needs an id and at least one stimulus",
                self.id
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: StudySet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn count(&self, label: StudyLabel) -> usize {
        self.stimuli.iter().filter(|s| s.label == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Same,
    Different,
}

impl std::str::FromStr for Judgment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Judgment::Same),
            "different" => Ok(Judgment::Different),
            other => Err(Error::InvalidParameter(format!("invalid judgment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    /// Position in the presentation order, not the stimulus index.
    pub trial_index: usize,
    pub judgment: Judgment,
    pub rt_ms: u64,
    /// Unix milliseconds.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub observer: String,
    pub set: String,
    pub seed: u64,
    /// `order[i]` is the stimulus shown at trial `i`.
    pub order: Vec<usize>,
    pub responses: Vec<Response>,
    pub status: SessionStatus,
}

impl SessionRecord {
    pub fn next_trial(&self) -> Option<usize> {
        (self.responses.len() < self.order.len()).then_some(self.responses.len())
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.responses.len()
    }

    /// Checks sequencing and appends; marks the session complete after the
    /// final trial.
    pub fn push_response(&mut self, response: Response) -> Result<()> {
        match self.next_trial() {
            None => Err(Error::InvalidParameter(format!(
                "session `{}` is already complete",
                self.id
            ))),
            Some(next) if response.trial_index != next => Err(Error::InvalidParameter(format!(
                "expected trial {next}, got {}",
                response.trial_index
            ))),
            Some(_) => {
                self.responses.push(response);
                if self.next_trial().is_none() {
                    self.status = SessionStatus::Complete;
                }
                Ok(())
            }
        }
    }
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn trial_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub observer: String,
    pub illusion_trials: usize,
    pub illusion_different: usize,
    pub control_trials: usize,
    pub control_different: usize,
    /// Percent "different"; `None` when no trial of that label was answered.
    pub illusion_rate: Option<f64>,
    pub control_rate: Option<f64>,
}

fn rate(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| 100.0 * hits as f64 / n as f64)
}

/// Tallies answered trials by label.
pub fn session_summary(session: &SessionRecord, set: &StudySet) -> Result<SessionSummary> {
    if session.set != set.id {
        return Err(Error::InvalidParameter(format!(
            "session `{}` belongs to set `{}`, not `{}`",
            session.id, session.set, set.id
        )));
    }
    let mut counts = [[0usize; 2]; 2];
    for r in &session.responses {
        let stim = session
            .order
            .get(r.trial_index)
            .and_then(|&i| set.stimuli.get(i))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "session `{}` answers unknown trial {}",
                    session.id, r.trial_index
                ))
            })?;
        let row = &mut counts[(stim.label == StudyLabel::Control) as usize];
        row[0] += 1;
        row[1] += (r.judgment == Judgment::Different) as usize;
    }
    Ok(SessionSummary {
        session: session.id.clone(),
        observer: session.observer.clone(),
        illusion_trials: counts[0][0],
        illusion_different: counts[0][1],
        control_trials: counts[1][0],
        control_different: counts[1][1],
        illusion_rate: rate(counts[0][1], counts[0][0]),
        control_rate: rate(counts[1][1], counts[1][0]),
    })
}
