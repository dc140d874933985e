//! Session storage: one append-only JSONL log per session.
//!
//! The first line of a log creates the session, every further line is one
//! response. A response is fsynced before it is acknowledged, so replaying
//! the logs rebuilds exactly the acknowledged state. A torn final line
//! (crash mid-write, never acknowledged) is dropped on replay.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use perceptlab_core::study::{
    session_summary, trial_order, Judgment, Response, SessionRecord, SessionStatus, SessionSummary, StudySet,
};
use serde::{Deserialize, Serialize};

use crate::error::StoreError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Created {
        id: String,
        observer: String,
        set: String,
        seed: u64,
        order: Vec<usize>,
    },
    Response(Response),
}

struct Session {
    record: SessionRecord,
    log: File,
}

pub struct Store {
    sessions_dir: PathBuf,
    stimuli_dir: PathBuf,
    sets: BTreeMap<String, StudySet>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    /// Serializes session creation so the duplicate check is race-free.
    create_lock: Mutex<()>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub observer: String,
    pub set: String,
    pub seed: u64,
    pub trials: usize,
    pub remaining: usize,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTrial {
    pub trial_index: Option<usize>,
    pub image_url: Option<String>,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetInfo {
    pub id: String,
    pub trials: usize,
}

fn info(r: &SessionRecord) -> SessionInfo {
    SessionInfo {
        id: r.id.clone(),
        observer: r.observer.clone(),
        set: r.set.clone(),
        seed: r.seed,
        trials: r.order.len(),
        remaining: r.remaining(),
        status: r.status,
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn append(log: &mut File, line: &LogLine) -> Result<(), StoreError> {
    let mut text = serde_json::to_string(line)?;
    text.push('\n');
    log.write_all(text.as_bytes())?;
    log.sync_data()?;
    Ok(())
}

/// Reads every `*.json` study set in `dir`.
pub fn load_sets(dir: &Path) -> Result<BTreeMap<String, StudySet>, StoreError> {
    let mut sets = BTreeMap::new();
    if !dir.exists() {
        return Ok(sets);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let set = StudySet::load(&p)?;
        sets.insert(set.id.clone(), set);
    }
    Ok(sets)
}

/// Rebuilds one session from its log.
pub fn replay_log(path: &Path) -> Result<SessionRecord, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().peekable();
    let first = lines
        .next()
        .ok_or_else(|| StoreError::Corrupt(format!("{} is empty", path.display())))??;
    let LogLine::Created {
        id,
        observer,
        set,
        seed,
        order,
    } = serde_json::from_str(&first)?
    else {
        return Err(StoreError::Corrupt(format!("{} does not start with a session", path.display())));
    };
    let mut record = SessionRecord {
        id,
        observer,
        set,
        seed,
        order,
        responses: vec![],
        status: SessionStatus::Open,
    };
    if record.order.is_empty() {
        record.status = SessionStatus::Complete;
    }
    while let Some(line) = lines.next() {
        let line = line?;
        match serde_json::from_str::<LogLine>(&line) {
            Ok(LogLine::Response(r)) => record
                .push_response(r)
                .map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))?,
            Ok(LogLine::Created { .. }) => {
                return Err(StoreError::Corrupt(format!("{}: second session header", path.display())))
            }
            Err(e) if lines.peek().is_none() => {
                log::warn!("{}: dropping torn final line ({e})", path.display());
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(record)
}

/// Replays every session log in `dir`.
pub fn load_sessions(dir: &Path) -> Result<Vec<SessionRecord>, StoreError> {
    if !dir.exists() {
        return Ok(vec![]);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| replay_log(p)).collect()
}

impl Store {
    /// Loads study sets from `sets_dir` and replays logs in `sessions_dir`.
    pub fn open(
        sets_dir: impl AsRef<Path>,
        sessions_dir: impl AsRef<Path>,
        stimuli_dir: impl AsRef<Path>,
    ) -> Result<Self, StoreError> {
        let sessions_dir = sessions_dir.as_ref().to_path_buf();
        fs::create_dir_all(&sessions_dir)?;
        let sets = load_sets(sets_dir.as_ref())?;
        let mut sessions = HashMap::new();
        for record in load_sessions(&sessions_dir)? {
            let path = sessions_dir.join(format!("{}.jsonl", record.id));
            let log = OpenOptions::new().append(true).open(&path)?;
            sessions.insert(record.id.clone(), Arc::new(Mutex::new(Session { record, log })));
        }
        log::info!("loaded {} sets and {} sessions", sets.len(), sessions.len());
        Ok(Self {
            sessions_dir,
            stimuli_dir: stimuli_dir.as_ref().to_path_buf(),
            sets,
            sessions: RwLock::new(sessions),
            create_lock: Mutex::new(()),
        })
    }

    pub fn stimuli_dir(&self) -> &Path {
        &self.stimuli_dir
    }

    pub fn sets(&self) -> Vec<SetInfo> {
        self.sets
            .values()
            .map(|s| SetInfo {
                id: s.id.clone(),
                trials: s.stimuli.len(),
            })
            .collect()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, StoreError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))
    }

    /// Starts a session with a seeded trial order. The log is written
    /// before the session becomes visible.
    pub fn create_session(&self, set: &str, observer: &str, seed: u64) -> Result<SessionInfo, StoreError> {
        let study = self.sets.get(set).ok_or_else(|| StoreError::UnknownSet(set.to_string()))?;
        if observer.is_empty() {
            return Err(StoreError::BadRequest("observer id must not be empty".into()));
        }
        let _guard = self.create_lock.lock().expect("create lock poisoned");
        let open_dup = self
            .sessions
            .read()
            .expect("session map poisoned")
            .values()
            .any(|s| {
                let s = s.lock().expect("session poisoned");
                s.record.observer == observer && s.record.set == set && s.record.status == SessionStatus::Open
            });
        if open_dup {
            return Err(StoreError::Conflict(format!(
                "observer `{observer}` already has an open session on set `{set}`"
            )));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let order = trial_order(study.stimuli.len(), seed);
        let path = self.sessions_dir.join(format!("{id}.jsonl"));
        let mut log = OpenOptions::new().create_new(true).append(true).open(&path)?;
        append(
            &mut log,
            &LogLine::Created {
                id: id.clone(),
                observer: observer.to_string(),
                set: set.to_string(),
                seed,
                order: order.clone(),
            },
        )?;
        let record = SessionRecord {
            id: id.clone(),
            observer: observer.to_string(),
            set: set.to_string(),
            seed,
            order,
            responses: vec![],
            status: SessionStatus::Open,
        };
        let out = info(&record);
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(Session { record, log })));
        Ok(out)
    }

    pub fn session_info(&self, id: &str) -> Result<SessionInfo, StoreError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session poisoned");
        Ok(info(&s.record))
    }

    pub fn next_trial(&self, id: &str) -> Result<NextTrial, StoreError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session poisoned");
        let r = &s.record;
        let image_url = r.next_trial().map(|i| {
            let entry = &self.sets[&r.set].stimuli[r.order[i]];
            format!("/static/stimuli/{}", entry.image)
        });
        Ok(NextTrial {
            trial_index: r.next_trial(),
            image_url,
            remaining: r.remaining(),
        })
    }

    /// Appends a response after checking it is the next trial; returns the
    /// number of trials left.
    pub fn record_response(&self, id: &str, trial_index: usize, judgment: Judgment, rt_ms: u64) -> Result<usize, StoreError> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session poisoned");
        match s.record.next_trial() {
            None => return Err(StoreError::Conflict(format!("session `{id}` is complete"))),
            Some(next) if trial_index < next => {
                return Err(StoreError::Conflict(format!("trial {trial_index} already answered")))
            }
            Some(next) if trial_index > next => {
                return Err(StoreError::Conflict(format!(
                    "trial {trial_index} is out of order; next is {next}"
                )))
            }
            Some(_) => {}
        }
        let response = Response {
            trial_index,
            judgment,
            rt_ms,
            timestamp_ms: now_ms(),
        };
        append(&mut s.log, &LogLine::Response(response.clone()))?;
        s.record
            .push_response(response)
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        Ok(s.record.remaining())
    }

    /// Per-session rates. Works for open sessions too; the HTTP layer only
    /// exposes it once a session is complete.
    pub fn session_summary(&self, id: &str) -> Result<SessionSummary, StoreError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session poisoned");
        Ok(session_summary(&s.record, &self.sets[&s.record.set])?)
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord, StoreError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session poisoned");
        Ok(s.record.clone())
    }

    pub fn study_sets(&self) -> Vec<StudySet> {
        self.sets.values().cloned().collect()
    }
}
