//! Interactive sessions: each session runs the era loop on its own thread
//! and parks at every era end until a decision arrives.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::dominates;
use crate::genotype::{decode, TourPlan};
use crate::instance::{Instance, InstanceError};
use crate::orchestrator::{
    d_strategy_index, run_demoa, DecisionError, DecisionMaker, DmPolicy, EraRecord, EraView, RunConfig, RunError,
};

pub const SNAPSHOT_VERSION: u32 = 1;
/// d values whose picks are shown as hints next to the front.
pub const GHOST_D_VALUES: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("session is {status}; {action} not allowed")]
    Conflict { status: String, action: &'static str },
    #[error("index {index} outside the valid range {min}..={max}")]
    Rejected { index: usize, min: usize, max: usize },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionStatus {
    Created,
    Computing { era: usize },
    AwaitingDecision { era: usize },
    Finished,
    Aborted,
    Failed { message: String },
}

impl SessionStatus {
    fn label(&self) -> String {
        match self {
            SessionStatus::Created => "created".into(),
            SessionStatus::Computing { era } => format!("computing era {era}"),
            SessionStatus::AwaitingDecision { era } => format!("awaiting decision for era {era}"),
            SessionStatus::Finished => "finished".into(),
            SessionStatus::Aborted => "aborted".into(),
            SessionStatus::Failed { .. } => "failed".into(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, SessionStatus::Finished | SessionStatus::Aborted | SessionStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    /// 1-based customer id.
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Already driven; cannot change any more.
    pub realized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberView {
    /// 1-based, the value to send back in a decision.
    pub index: usize,
    pub f1: f64,
    pub f2: usize,
    pub dominated: bool,
    pub tours: Vec<Vec<Stop>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhostPick {
    pub d: f64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingDecision {
    pub era: usize,
    pub t: f64,
    pub delta: f64,
    pub upper_bound_f2: usize,
    pub unrevealed_dynamic: usize,
    pub members: Vec<MemberView>,
    pub prefixes: Vec<Vec<Stop>>,
    pub ghosts: Vec<GhostPick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub era: usize,
    pub t: f64,
    pub chosen_index: usize,
    pub chosen_f1: f64,
    pub chosen_f2: usize,
    pub upper_bound_f2: usize,
    pub fixed_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub instance: String,
    pub status: SessionStatus,
    pub n_eras: usize,
    pub mu: usize,
    pub n_vehicles: usize,
    pub start_depot: Location,
    pub end_depot: Location,
    pub pending: Option<PendingDecision>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub instance: String,
    pub status: SessionStatus,
    pub eras_done: usize,
    pub n_eras: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub version: u32,
    pub id: String,
    pub instance: serde_json::Value,
    pub config: RunConfig,
    pub choices: Vec<usize>,
    pub aborted: bool,
}

enum Command {
    Decide(usize),
    Abort,
}

struct Inner {
    status: SessionStatus,
    pending: Option<PendingDecision>,
    history: Vec<EraRecord>,
    choices: Vec<usize>,
    abort_requested: bool,
}

struct Session {
    id: String,
    instance: Arc<Instance>,
    config: RunConfig,
    inner: Mutex<Inner>,
    changed: Condvar,
    commands: Mutex<Sender<Command>>,
}

impl Session {
    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn set_status(&self, status: SessionStatus) {
        let mut inner = self.lock();
        if inner.status != SessionStatus::Aborted {
            inner.status = status;
        }
        drop(inner);
        self.changed.notify_all();
    }
}

fn stops(inst: &Instance, tour: &[usize], realized: usize) -> Vec<Stop> {
    tour.iter()
        .enumerate()
        .map(|(pos, &c)| {
            let cust = inst.customer(c);
            Stop {
                id: c + 1,
                x: cust.x,
                y: cust.y,
                realized: pos < realized,
            }
        })
        .collect()
}

/// Owned snapshot of an era end as the service presents it.
pub fn pending_view(view: &EraView<'_>) -> PendingDecision {
    let inst = view.instance;
    let prefix = &view.context.prefix;
    let points: Vec<(f64, f64)> = view.population.iter().map(|x| x.fitness().as_point()).collect();
    let n_v = view.context.n_vehicles;
    let members = view
        .population
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let o = x.fitness();
            let plan: TourPlan = decode(x, n_v);
            MemberView {
                index: i + 1,
                f1: o.f1,
                f2: o.f2,
                dominated: points.iter().any(|&p| dominates(p, o.as_point())),
                tours: plan
                    .tours
                    .iter()
                    .zip(&prefix.prefixes)
                    .map(|(tour, pre)| stops(inst, tour, pre.len()))
                    .collect(),
            }
        })
        .collect();
    let mu = view.population.len();
    PendingDecision {
        era: view.era,
        t: view.t,
        delta: view.delta,
        upper_bound_f2: view.upper_bound_f2,
        unrevealed_dynamic: view.context.unrevealed_dynamic(inst),
        members,
        prefixes: prefix.prefixes.iter().map(|p| stops(inst, p, p.len())).collect(),
        ghosts: GHOST_D_VALUES
            .iter()
            .map(|&d| GhostPick {
                d,
                index: d_strategy_index(d, mu),
            })
            .collect(),
    }
}

/// Replays recorded choices, then waits on the session's command channel.
struct ChannelDecision {
    session: Arc<Session>,
    replay: VecDeque<usize>,
    commands: Receiver<Command>,
    persist: Option<PathBuf>,
}

impl DecisionMaker for ChannelDecision {
    fn choose(&mut self, view: &EraView<'_>) -> Result<usize, DecisionError> {
        if let Some(k) = self.replay.pop_front() {
            self.session.lock().choices.push(k);
            return Ok(k);
        }
        {
            let mut inner = self.session.lock();
            if inner.abort_requested {
                return Err(DecisionError::Aborted);
            }
            inner.pending = Some(pending_view(view));
            inner.status = SessionStatus::AwaitingDecision { era: view.era };
        }
        self.session.changed.notify_all();
        match self.commands.recv() {
            Ok(Command::Decide(k)) => Ok(k),
            Ok(Command::Abort) | Err(_) => Err(DecisionError::Aborted),
        }
    }

    fn observe(&mut self, record: &EraRecord) {
        {
            let mut inner = self.session.lock();
            inner.history.push(record.clone());
        }
        if let Some(dir) = &self.persist {
            if let Err(e) = write_snapshot(&self.session, dir) {
                log::warn!("session {}: snapshot failed: {e}", self.session.id);
            }
        }
    }
}

fn snapshot_of(session: &Session) -> SessionSnapshot {
    let inner = session.lock();
    SessionSnapshot {
        version: SNAPSHOT_VERSION,
        id: session.id.clone(),
        instance: serde_json::from_str(&session.instance.to_json()).expect("instance json"),
        config: session.config.clone(),
        choices: inner.choices.clone(),
        aborted: inner.status == SessionStatus::Aborted,
    }
}

fn write_snapshot(session: &Session, dir: &Path) -> std::io::Result<()> {
    let snapshot = snapshot_of(session);
    let text = serde_json::to_string_pretty(&snapshot).map_err(std::io::Error::other)?;
    crate::experiment::write_atomic(&dir.join(format!("{}.json", session.id)), text.as_bytes())
}

#[derive(Default)]
pub struct SessionManager {
    instances: RwLock<BTreeMap<String, Arc<Instance>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    counter: Mutex<u64>,
    snapshot_dir: Option<PathBuf>,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_snapshots(dir: impl Into<PathBuf>) -> Self {
        Self {
            snapshot_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn register_instance(&self, inst: Instance) -> String {
        let name = inst.name().to_string();
        self.instances
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(name.clone(), Arc::new(inst));
        name
    }

    pub fn instance_names(&self) -> Vec<String> {
        self.instances.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    fn next_id(&self) -> String {
        let mut c = self.counter.lock().unwrap_or_else(|e| e.into_inner());
        *c += 1;
        format!("s{:06}", *c)
    }

    pub fn create_session(&self, instance_id: &str, config: RunConfig) -> Result<String, SessionError> {
        let inst = self
            .instances
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(instance_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownInstance(instance_id.to_string()))?;
        let id = self.next_id();
        self.start(id.clone(), inst, config, Vec::new(), false)?;
        Ok(id)
    }

    fn start(
        &self,
        id: String,
        instance: Arc<Instance>,
        config: RunConfig,
        replay: Vec<usize>,
        aborted: bool,
    ) -> Result<(), SessionError> {
        if config.dm_policy != DmPolicy::Interactive {
            return Err(SessionError::Invalid("sessions require dm_policy interactive".into()));
        }
        config.validate().map_err(|e| SessionError::Invalid(e.to_string()))?;
        config
            .era_length(&instance)
            .map_err(|e| SessionError::Invalid(e.to_string()))?;
        let (tx, rx) = channel();
        let session = Arc::new(Session {
            id: id.clone(),
            instance,
            config,
            inner: Mutex::new(Inner {
                status: SessionStatus::Created,
                pending: None,
                history: Vec::new(),
                choices: Vec::new(),
                abort_requested: aborted,
            }),
            changed: Condvar::new(),
            commands: Mutex::new(tx),
        });
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), session.clone());
        let mut dm = ChannelDecision {
            session: session.clone(),
            replay: replay.into(),
            commands: rx,
            persist: self.snapshot_dir.clone(),
        };
        thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || {
                let s = dm.session.clone();
                s.set_status(SessionStatus::Computing { era: 1 });
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    run_demoa(&s.instance, &s.config, &mut dm)
                }));
                let status = match outcome {
                    Ok(Ok(_)) => SessionStatus::Finished,
                    Ok(Err(RunError::Aborted)) => SessionStatus::Aborted,
                    Ok(Err(e)) => SessionStatus::Failed { message: e.to_string() },
                    Err(_) => SessionStatus::Failed {
                        message: "optimizer panicked".into(),
                    },
                };
                s.lock().pending = None;
                s.set_status(status);
                if let Some(dir) = &dm.persist {
                    if let Err(e) = write_snapshot(&s, dir) {
                        log::warn!("session {}: snapshot failed: {e}", s.id);
                    }
                }
            })
            .map_err(|e| SessionError::Invalid(format!("cannot start worker: {e}")))?;
        Ok(())
    }

    pub fn get_state(&self, id: &str) -> Result<SessionView, SessionError> {
        let s = self.session(id)?;
        let inner = s.lock();
        let inst = &s.instance;
        let depot = |n: usize| Location {
            x: inst.customer(n).x,
            y: inst.customer(n).y,
        };
        Ok(SessionView {
            id: s.id.clone(),
            instance: inst.name().to_string(),
            status: inner.status.clone(),
            n_eras: s.config.n_eras,
            mu: s.config.evo.mu,
            n_vehicles: s.config.n_vehicles,
            start_depot: depot(inst.start_depot()),
            end_depot: depot(inst.end_depot()),
            pending: inner.pending.clone(),
            history: inner
                .history
                .iter()
                .map(|r| HistoryEntry {
                    era: r.era,
                    t: r.t,
                    chosen_index: r.chosen_index,
                    chosen_f1: r.chosen_objectives.f1,
                    chosen_f2: r.chosen_objectives.f2,
                    upper_bound_f2: r.upper_bound_f2,
                    fixed_count: r.fixed_count(),
                })
                .collect(),
        })
    }

    /// Full era records committed so far.
    pub fn history(&self, id: &str) -> Result<Vec<EraRecord>, SessionError> {
        Ok(self.session(id)?.lock().history.clone())
    }

    /// `era`, when given, must match the pending era.
    pub fn decide(&self, id: &str, era: Option<usize>, index: usize) -> Result<(), SessionError> {
        let s = self.session(id)?;
        let mut inner = s.lock();
        let pending_era = match inner.status {
            SessionStatus::AwaitingDecision { era } => era,
            ref other => {
                return Err(SessionError::Conflict {
                    status: other.label(),
                    action: "decide",
                })
            }
        };
        if era.is_some_and(|e| e != pending_era) {
            return Err(SessionError::Conflict {
                status: inner.status.label(),
                action: "deciding another era",
            });
        }
        let mu = inner.pending.as_ref().map_or(s.config.evo.mu, |p| p.members.len());
        if index < 1 || index > mu {
            return Err(SessionError::Rejected { index, min: 1, max: mu });
        }
        inner.choices.push(index);
        inner.pending = None;
        inner.status = SessionStatus::Computing {
            era: (pending_era + 1).min(s.config.n_eras),
        };
        s.commands
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .send(Command::Decide(index))
            .map_err(|_| SessionError::Invalid("session worker has stopped".into()))?;
        drop(inner);
        s.changed.notify_all();
        Ok(())
    }

    pub fn abort(&self, id: &str) -> Result<(), SessionError> {
        let s = self.session(id)?;
        let mut inner = s.lock();
        if inner.status.is_terminal() {
            return Err(SessionError::Conflict {
                status: inner.status.label(),
                action: "abort",
            });
        }
        inner.abort_requested = true;
        inner.pending = None;
        inner.status = SessionStatus::Aborted;
        let _ = s.commands.lock().unwrap_or_else(|e| e.into_inner()).send(Command::Abort);
        drop(inner);
        s.changed.notify_all();
        Ok(())
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let sessions = self.sessions.read().unwrap_or_else(|e| e.into_inner());
        let mut out: Vec<SessionSummary> = sessions
            .values()
            .map(|s| {
                let inner = s.lock();
                SessionSummary {
                    id: s.id.clone(),
                    instance: s.instance.name().to_string(),
                    status: inner.status.clone(),
                    eras_done: inner.history.len(),
                    n_eras: s.config.n_eras,
                }
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Blocks until the session leaves Created/Computing or `timeout` passes.
    pub fn wait_until_settled(&self, id: &str, timeout: Duration) -> Result<SessionStatus, SessionError> {
        let s = self.session(id)?;
        let deadline = Instant::now() + timeout;
        let mut inner = s.lock();
        loop {
            if !matches!(inner.status, SessionStatus::Created | SessionStatus::Computing { .. }) {
                return Ok(inner.status.clone());
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(inner.status.clone());
            }
            inner = s
                .changed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionSnapshot, SessionError> {
        Ok(snapshot_of(&*self.session(id)?))
    }

    /// Recreates a session by replaying its recorded choices.
    pub fn restore(&self, snapshot: SessionSnapshot) -> Result<String, SessionError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(SessionError::Snapshot(format!("unsupported version {}", snapshot.version)));
        }
        let inst = Instance::from_json(&snapshot.instance.to_string())
            .map_err(|e: InstanceError| SessionError::Snapshot(e.to_string()))?;
        let inst = Arc::new(inst);
        self.instances
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(inst.name().to_string())
            .or_insert_with(|| inst.clone());
        if self.sessions.read().unwrap_or_else(|e| e.into_inner()).contains_key(&snapshot.id) {
            return Err(SessionError::Snapshot(format!("session {} already exists", snapshot.id)));
        }
        if let Some(n) = snapshot.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
            let mut c = self.counter.lock().unwrap_or_else(|e| e.into_inner());
            *c = (*c).max(n);
        }
        self.start(snapshot.id.clone(), inst, snapshot.config, snapshot.choices, snapshot.aborted)?;
        Ok(snapshot.id)
    }

    /// Restores every snapshot file found in the snapshot directory.
    pub fn restore_all(&self) -> Result<Vec<String>, SessionError> {
        let Some(dir) = &self.snapshot_dir else {
            return Ok(Vec::new());
        };
        let mut ids = Vec::new();
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(SessionError::Snapshot(e.to_string())),
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| SessionError::Snapshot(e.to_string()))?;
            let snap: SessionSnapshot =
                serde_json::from_str(&text).map_err(|e| SessionError::Snapshot(format!("{}: {e}", path.display())))?;
            ids.push(self.restore(snap)?);
        }
        Ok(ids)
    }
}
