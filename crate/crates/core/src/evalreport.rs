//! Batch replication runs, psychophysics statistics, and report files.
//!
//! CSV files use fixed 6-decimal floats so reruns are byte-identical; JSON
//! keeps full precision and parses back to the same report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::imagecore::{Domain, ImageGrid};
use crate::perception::{
    alignment_check, extract_profile, pas_from_counts, shift_direction, AlignmentResult, ShiftDirection,
};
use crate::schedule::{run_trajectory, Direction, ScheduleParams};
use crate::stimuli::{Expected, Stimulus};
use crate::study::{session_summary, SessionRecord, StudySet};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TAUS: [f64; 3] = [0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShift {
    pub pair: String,
    pub r1: String,
    pub r2: String,
    pub observed: ShiftDirection,
    /// Implied by the region labels; `None` when neither label says.
    pub expected: Option<ShiftDirection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub row: usize,
    /// Channel-mean values along the full row.
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusResult {
    pub stimulus: String,
    pub seed: u64,
    /// Set when the run failed; the stimulus then has no results.
    pub error: Option<String>,
    /// One entry per tau level, each holding one result per checked region.
    pub by_tau: Vec<Vec<AlignmentResult>>,
    pub pairs: Vec<PairShift>,
    pub profile: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasEntry {
    pub tau: f64,
    pub aligned: usize,
    pub total: usize,
    /// `None` when every stimulus failed.
    pub pas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub schema_version: u32,
    pub dataset: String,
    pub backend: String,
    pub schedule: ScheduleParams,
    pub steps: usize,
    pub metering_domain: Domain,
    pub taus: Vec<f64>,
    pub pas: Vec<PasEntry>,
    pub stimuli: Vec<StimulusResult>,
    pub failures: Vec<String>,
}

impl ReplicationReport {
    /// Recomputes the PAS table from the stored per-region results.
    pub fn recompute_pas(&self) -> Vec<PasEntry> {
        pas_table(&self.taus, &self.stimuli)
    }
}

fn pas_table(taus: &[f64], stimuli: &[StimulusResult]) -> Vec<PasEntry> {
    taus.iter()
        .enumerate()
        .map(|(k, &tau)| {
            let ok: Vec<&Vec<AlignmentResult>> = stimuli
                .iter()
                .filter(|s| s.error.is_none())
                .map(|s| &s.by_tau[k])
                .collect();
            let aligned = ok.iter().filter(|r| r.iter().all(|a| a.aligned)).count();
            PasEntry {
                tau,
                aligned,
                total: ok.len(),
                pas: (!ok.is_empty()).then(|| pas_from_counts(aligned, ok.len())),
            }
        })
        .collect()
}

fn expected_shift(a: Expected, b: Expected) -> Option<ShiftDirection> {
    match (a, b) {
        (Expected::Darker, _) | (_, Expected::Lighter) => Some(ShiftDirection::R1Darker),
        (Expected::Lighter, _) | (_, Expected::Darker) => Some(ShiftDirection::R2Darker),
        _ => None,
    }
}

fn channel_mean_profile(img: &ImageGrid, row: usize) -> Result<Vec<f64>> {
    let p = extract_profile(img, row, 0..img.width())?;
    let n = p.len() as f64;
    Ok((0..img.width())
        .map(|x| p.iter().map(|c| c[x]).sum::<f64>() / n)
        .collect())
}

fn replicate_one(
    stim: &Stimulus,
    sched: &crate::schedule::NoiseSchedule,
    model: &dyn NoisePredictor,
    steps: usize,
    taus: &[f64],
) -> Result<StimulusResult> {
    let z0 = stim.image.to_model_units()?;
    let traj = run_trajectory(&z0, sched, model, Direction::Invert, steps, false)?;
    let out = traj.endpoint().z.to_display_units()?;
    let checked: Vec<_> = stim
        .regions
        .iter()
        .filter(|r| r.expected != Expected::None)
        .collect();
    let by_tau = taus
        .iter()
        .map(|&tau| {
            checked
                .iter()
                .map(|r| alignment_check(&stim.image, &out, &r.mask, tau, r.expected))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pair_ids = BTreeSet::new();
    let mut pairs = Vec::new();
    for r in &stim.regions {
        let Some(pair) = &r.pair else { continue };
        if !pair_ids.insert(pair.clone()) {
            continue;
        }
        let members = stim.paired(pair);
        if let [a, b] = members[..] {
            pairs.push(PairShift {
                pair: pair.clone(),
                r1: a.mask.id().to_string(),
                r2: b.mask.id().to_string(),
                observed: shift_direction(&stim.image, &out, &a.mask, &b.mask)?,
                expected: expected_shift(a.expected, b.expected),
            });
        }
    }
    // Row through the first labelled region.
    let first = checked.first().map(|r| &r.mask).or(stim.regions.first().map(|r| &r.mask));
    let profile = match first {
        Some(mask) => {
            let idx: Vec<usize> = mask.indices().collect();
            let row = idx[idx.len() / 2] / mask.width();
            Some(Profile {
                row,
                input: channel_mean_profile(&stim.image, row)?,
                output: channel_mean_profile(&out, row)?,
            })
        }
        None => None,
    };
    Ok(StimulusResult {
        stimulus: stim.id.clone(),
        seed: stim.seed,
        error: None,
        by_tau,
        pairs,
        profile,
    })
}

/// Inverts every stimulus `steps` DDIM steps and meters its labelled regions
/// in display units. Per-stimulus failures are recorded, not raised.
pub fn run_replication(
    dataset: &str,
    stimuli: &[Stimulus],
    schedule: &ScheduleParams,
    backend_id: &str,
    model: &dyn NoisePredictor,
    steps: usize,
    taus: &[f64],
) -> Result<ReplicationReport> {
    if stimuli.is_empty() {
        return Err(Error::InvalidParameter("no stimuli to replicate".into()));
    }
    if taus.is_empty() {
        return Err(Error::InvalidParameter("no tau levels given".into()));
    }
    for s in stimuli {
        if s.regions.iter().all(|r| r.expected == Expected::None) {
            return Err(Error::InvalidParameter(format!(
                "stimulus `{}` has no labelled region",
                s.id
            )));
        }
    }
    let sched = schedule.build()?;
    let results: Vec<StimulusResult> = stimuli
        .par_iter()
        .map(|s| {
            replicate_one(s, &sched, model, steps, taus).unwrap_or_else(|e| {
                log::warn!("stimulus `{}` failed: {e}", s.id);
                StimulusResult {
                    stimulus: s.id.clone(),
                    seed: s.seed,
                    error: Some(e.to_string()),
                    by_tau: vec![],
                    pairs: vec![],
                    profile: None,
                }
            })
        })
        .collect();
    let failures = results
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.stimulus.clone())
        .collect();
    Ok(ReplicationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: dataset.to_string(),
        backend: backend_id.to_string(),
        schedule: *schedule,
        steps,
        metering_domain: Domain::Display01,
        taus: taus.to_vec(),
        pas: pas_table(taus, &results),
        stimuli: results,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt6(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_default()
}

pub const ROWS_HEADER: [&str; 11] = [
    "stimulus", "region", "channel", "tau", "in_mean", "out_mean", "delta", "aligned", "expected",
    "observed", "seed",
];

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Flat per-region rows: one per stimulus, tau, region and channel.
pub fn replication_rows(report: &ReplicationReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for s in report.stimuli.iter().filter(|s| s.error.is_none()) {
        for results in &s.by_tau {
            for r in results {
                for c in 0..r.in_mean.len() {
                    rows.push(vec![
                        s.stimulus.clone(),
                        r.region.clone(),
                        c.to_string(),
                        f6(r.tau),
                        f6(r.in_mean[c]),
                        f6(r.out_mean[c]),
                        f6(r.delta[c]),
                        r.aligned.to_string(),
                        r.expected.as_str().to_string(),
                        r.observed.as_str().to_string(),
                        s.seed.to_string(),
                    ]);
                }
            }
        }
    }
    rows
}

/// Writes `replication.json`, `replication_rows.csv`, `replication_pas.csv`
/// and, when requested, `profiles.csv`.
pub fn emit_report(
    report: &ReplicationReport,
    formats: &[ReportFormat],
    dir: impl AsRef<Path>,
    profiles: bool,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let p = dir.join("replication.json");
        write_json(&p, report)?;
        files.push(p);
    }
    if formats.contains(&ReportFormat::Csv) {
        let p = dir.join("replication_rows.csv");
        write_csv(&p, &ROWS_HEADER, &replication_rows(report))?;
        files.push(p);

        let mut header: Vec<String> = [
            "dataset", "backend", "steps", "t_train", "beta_start", "beta_end", "n_inference",
            "metering_domain", "stimuli_ok", "stimuli_failed",
        ]
        .map(String::from)
        .to_vec();
        header.extend(report.taus.iter().map(|t| format!("pas_tau_{}", f6(*t))));
        let sc = &report.schedule;
        let mut row = vec![
            report.dataset.clone(),
            report.backend.clone(),
            report.steps.to_string(),
            sc.t_train.to_string(),
            f6(sc.beta_start),
            f6(sc.beta_end),
            sc.n_inference.to_string(),
            report.metering_domain.to_string(),
            (report.stimuli.len() - report.failures.len()).to_string(),
            report.failures.len().to_string(),
        ];
        row.extend(report.pas.iter().map(|p| opt6(p.pas)));
        let p = dir.join("replication_pas.csv");
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&p, &header, &[row])?;
        files.push(p);

        if profiles {
            let mut rows = Vec::new();
            for s in &report.stimuli {
                if let Some(pr) = &s.profile {
                    for (x, (i, o)) in pr.input.iter().zip(&pr.output).enumerate() {
                        rows.push(vec![
                            s.stimulus.clone(),
                            pr.row.to_string(),
                            x.to_string(),
                            f6(*i),
                            f6(*o),
                        ]);
                    }
                }
            }
            let p = dir.join("profiles.csv");
            write_csv(&p, &["stimulus", "row", "x", "input", "output"], &rows)?;
            files.push(p);
        }
    }
    Ok(files)
}

/// Image-level PAS per tau recomputed from emitted row tuples
/// `(stimulus, tau, aligned)`.
pub fn pas_from_rows<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, bool)>) -> BTreeMap<String, f64> {
    let mut per: BTreeMap<&str, BTreeMap<&str, bool>> = BTreeMap::new();
    for (stim, tau, ok) in rows {
        let e = per.entry(tau).or_default().entry(stim).or_insert(true);
        *e &= ok;
    }
    per.into_iter()
        .map(|(tau, imgs)| {
            let hits = imgs.values().filter(|v| **v).count();
            (tau.to_string(), pas_from_counts(hits, imgs.len()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverRates {
    pub observer: String,
    pub trials: usize,
    pub illusion_rate: Option<f64>,
    pub control_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Sample (n - 1) standard deviation.
    pub std: Option<f64>,
}

impl RateStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: None,
                median: None,
                std: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self {
            n,
            mean: Some(mean),
            median: Some(median),
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychSummary {
    pub schema_version: u32,
    pub observers: Vec<ObserverRates>,
    pub illusion: RateStats,
    pub control: RateStats,
    /// Observers with no answered trial.
    pub excluded: Vec<String>,
}

/// Per-observer "different" rates pooled over that observer's sessions,
/// then mean, median and sample standard deviation across observers.
pub fn summarize_psychophysics(sessions: &[SessionRecord], sets: &[StudySet]) -> Result<PsychSummary> {
    let sets: BTreeMap<&str, &StudySet> = sets.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut tallies: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    for s in sessions {
        let set = sets
            .get(s.set.as_str())
            .ok_or_else(|| Error::InvalidParameter(format!("session `{}` uses unknown set `{}`", s.id, s.set)))?;
        let sum = session_summary(s, set)?;
        let t = tallies.entry(s.observer.as_str()).or_default();
        t[0] += sum.illusion_trials;
        t[1] += sum.illusion_different;
        t[2] += sum.control_trials;
        t[3] += sum.control_different;
    }
    let rate = |hits: usize, n: usize| (n > 0).then(|| 100.0 * hits as f64 / n as f64);
    let mut observers = Vec::new();
    let mut excluded = Vec::new();
    for (obs, t) in tallies {
        if t[0] + t[2] == 0 {
            log::warn!("observer `{obs}` has no answered trials; excluded");
            excluded.push(obs.to_string());
            continue;
        }
        observers.push(ObserverRates {
            observer: obs.to_string(),
            trials: t[0] + t[2],
            illusion_rate: rate(t[1], t[0]),
            control_rate: rate(t[3], t[2]),
        });
    }
    let ill: Vec<f64> = observers.iter().filter_map(|o| o.illusion_rate).collect();
    let ctl: Vec<f64> = observers.iter().filter_map(|o| o.control_rate).collect();
    Ok(PsychSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        observers,
        illusion: RateStats::from_values(&ill),
        control: RateStats::from_values(&ctl),
        excluded,
    })
}

pub const PSYCH_STATS_HEADER: [&str; 7] = [
    "n_observers",
    "illusion_mean",
    "illusion_median",
    "illusion_std",
    "control_mean",
    "control_median",
    "control_std",
];

pub fn psych_stats_row(s: &PsychSummary) -> Vec<String> {
    vec![
        s.observers.len().to_string(),
        opt6(s.illusion.mean),
        opt6(s.illusion.median),
        opt6(s.illusion.std),
        opt6(s.control.mean),
        opt6(s.control.median),
        opt6(s.control.std),
    ]
}

/// Writes `psych_summary.json`, `psych_summary.csv` (the six statistics)
/// and `psych_observers.csv`.
pub fn emit_psych_summary(summary: &PsychSummary, formats: &[ReportFormat], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let p = dir.join("psych_summary.json");
        write_json(&p, summary)?;
        files.push(p);
    }
    if formats.contains(&ReportFormat::Csv) {
        let p = dir.join("psych_summary.csv");
        write_csv(&p, &PSYCH_STATS_HEADER, &[psych_stats_row(summary)])?;
        files.push(p);
        let rows: Vec<Vec<String>> = summary
            .observers
            .iter()
            .map(|o| {
                vec![
                    o.observer.clone(),
                    o.trials.to_string(),
                    opt6(o.illusion_rate),
                    opt6(o.control_rate),
                ]
            })
            .collect();
        let p = dir.join("psych_observers.csv");
        write_csv(&p, &["observer", "trials", "illusion_rate", "control_rate"], &rows)?;
        files.push(p);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserBackend, NoiseModel};
    use crate::stimuli::{gen_stimulus, StimulusSpec};
    use crate::study::{trial_order, Judgment, Response, SessionStatus, StudyEntry, StudyLabel};

    fn sc_stimuli(n: u64) -> Vec<Stimulus> {
        (0..n)
            .map(|s| gen_stimulus(&StimulusSpec::randomized("simultaneous_contrast", 32, s, false).unwrap()).unwrap())
            .collect()
    }

    #[test]
    fn identity_backend_is_never_aligned() {
        let zero = DenoiserBackend::new("zero", NoiseModel::Zero);
        let stim = sc_stimuli(1);
        let rep = run_replication("d", &stim, &ScheduleParams::default(), "zero", &zero, 0, &DEFAULT_TAUS).unwrap();
        for p in &rep.pas {
            assert_eq!(p.pas, Some(0.0));
        }
        assert_eq!(rep.stimuli[0].pairs[0].observed, ShiftDirection::Tie);
        assert_eq!(rep.taus, vec![0.8, 0.9, 1.0]);
    }

    #[test]
    fn failures_are_listed_and_excluded() {
        let zero = DenoiserBackend::new("zero", NoiseModel::Zero);
        let mut stim = sc_stimuli(2);
        stim[1].image = stim[1].image.to_model_units().unwrap();
        let rep = run_replication("d", &stim, &ScheduleParams::default(), "zero", &zero, 1, &[1.0]).unwrap();
        assert_eq!(rep.failures, vec![stim[1].id.clone()]);
        assert_eq!(rep.pas[0].total, 1);
        assert_eq!(rep.recompute_pas(), rep.pas);
    }

    #[test]
    fn unlabelled_stimulus_rejected() {
        let zero = DenoiserBackend::new("zero", NoiseModel::Zero);
        let ctl = gen_stimulus(&StimulusSpec::randomized("whites", 32, 1, true).unwrap()).unwrap();
        assert!(run_replication("d", &[ctl], &ScheduleParams::default(), "zero", &zero, 1, &[1.0]).is_err());
    }

    #[test]
    fn emitted_rows_reproduce_pas() {
        let zero = DenoiserBackend::new("zero", NoiseModel::Constant { value: 0.3 });
        let rep = run_replication("d", &sc_stimuli(4), &ScheduleParams::default(), "c", &zero, 3, &DEFAULT_TAUS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rep, &[ReportFormat::Csv, ReportFormat::Json], dir.path(), true).unwrap();
        assert_eq!(files.len(), 4);
        let mut rd = csv::Reader::from_path(dir.path().join("replication_rows.csv")).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4 * 2 * 3);
        let pas = pas_from_rows(rows.iter().map(|r| (&r[0], &r[3], &r[7] == "true")));
        for p in &rep.pas {
            assert_eq!(pas[&f6(p.tau)], p.pas.unwrap());
        }
        let text = fs::read_to_string(dir.path().join("replication.json")).unwrap();
        assert_eq!(serde_json::from_str::<ReplicationReport>(&text).unwrap(), rep);
        let before = fs::read(dir.path().join("replication_rows.csv")).unwrap();
        emit_report(&rep, &[ReportFormat::Csv], dir.path(), true).unwrap();
        assert_eq!(fs::read(dir.path().join("replication_rows.csv")).unwrap(), before);
    }

    #[test]
    fn empty_report_gives_header_only_csv() {
        let rep = ReplicationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            dataset: "d".into(),
            backend: "b".into(),
            schedule: ScheduleParams::default(),
            steps: 0,
            metering_domain: Domain::Display01,
            taus: DEFAULT_TAUS.to_vec(),
            pas: pas_table(&DEFAULT_TAUS, &[]),
            stimuli: vec![],
            failures: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&rep, &[ReportFormat::Csv], dir.path(), false).unwrap();
        let text = fs::read_to_string(dir.path().join("replication_rows.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    fn crafted_session(observer: &str, set: &StudySet, ill_diff: usize, ctl_diff: usize) -> SessionRecord {
        let order = trial_order(set.stimuli.len(), 5);
        let (mut seen_i, mut seen_c) = (0, 0);
        let responses = order
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let diff = match set.stimuli[s].label {
                    StudyLabel::Illusion => {
                        seen_i += 1;
                        seen_i <= ill_diff
                    }
                    StudyLabel::Control => {
                        seen_c += 1;
                        seen_c <= ctl_diff
                    }
                };
                Response {
                    trial_index: i,
                    judgment: if diff { Judgment::Different } else { Judgment::Same },
                    rt_ms: 700,
                    timestamp_ms: 0,
                }
            })
            .collect();
        SessionRecord {
            id: format!("s-{observer}"),
            observer: observer.into(),
            set: set.id.clone(),
            seed: 5,
            order,
            responses,
            status: SessionStatus::Complete,
        }
    }

    fn study(n: usize) -> StudySet {
        let mut stimuli = Vec::new();
        for label in [StudyLabel::Illusion, StudyLabel::Control] {
            for i in 0..n {
                stimuli.push(StudyEntry {
                    image: format!("{label:?}{i}.png"),
                    label,
                });
            }
        }
        StudySet { id: "st".into(), stimuli }
    }

    #[test]
    fn psych_hand_values() {
        let set = study(10);
        let sessions = vec![
            crafted_session("a", &set, 5, 0),
            crafted_session("b", &set, 6, 1),
            crafted_session("c", &set, 7, 2),
        ];
        let s = summarize_psychophysics(&sessions, std::slice::from_ref(&set)).unwrap();
        assert_eq!(psych_stats_row(&s)[1..4], ["60.000000", "60.000000", "10.000000"]);
        assert_eq!(psych_stats_row(&s)[4..], ["10.000000", "10.000000", "10.000000"]);

        let all = vec![crafted_session("x", &set, 10, 0)];
        let s = summarize_psychophysics(&all, std::slice::from_ref(&set)).unwrap();
        assert_eq!(s.observers[0].illusion_rate, Some(100.0));
        assert_eq!(s.observers[0].control_rate, Some(0.0));
        assert_eq!(s.illusion.std, None);
    }

    #[test]
    fn silent_observer_excluded() {
        let set = study(2);
        let mut quiet = crafted_session("q", &set, 0, 0);
        quiet.responses.clear();
        let s = summarize_psychophysics(&[quiet, crafted_session("a", &set, 1, 1)], &[set]).unwrap();
        assert_eq!(s.excluded, vec!["q".to_string()]);
        assert_eq!(s.observers.len(), 1);
    }

    #[test]
    fn rate_stats_even_median() {
        let s = RateStats::from_values(&[70.0, 50.0, 60.0, 80.0]);
        assert_eq!(s.median, Some(65.0));
        assert_eq!(s.mean, Some(65.0));
    }
}
