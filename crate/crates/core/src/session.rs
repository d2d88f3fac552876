//! Per-host session registry: request filtering, capacity, the FIFO launch
//! queue and deadline reaping. Pure state; the caller supplies the clock.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;

/// Monotonic milliseconds.
pub type Millis = u64;

pub const DEFAULT_MAX_SESSIONS: usize = 10;
/// Five minutes.
pub const DEFAULT_TIME_LIMIT_S: f64 = 300.0;
pub const DEFAULT_LAUNCH_LANES: usize = 2;
pub const MAX_USER_ID_LEN: usize = 64;

/// Query parameters a session request may carry. Anything else is refused.
pub const ALLOWED_PARAMS: &[&str] = &[
    "user_id",
    "scenario",
    "trial",
    "avatar_start",
    "avatar_goal",
    "robot_start",
    "robot_goal",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("parameter {0:?} is not allowed")]
    Disallowed(String),
    #[error("parameter {0:?} is required")]
    Missing(&'static str),
    #[error("parameter {0:?} given twice")]
    Repeated(String),
    #[error("parameter {name:?} has an invalid value")]
    Invalid { name: &'static str },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseOverrides {
    pub avatar_start: Option<Pose2D>,
    pub avatar_goal: Option<Pose2D>,
    pub robot_start: Option<Pose2D>,
    pub robot_goal: Option<Pose2D>,
}

impl PoseOverrides {
    pub fn is_empty(&self) -> bool {
        *self == PoseOverrides::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchRequest {
    pub user_id: String,
    pub scenario_id: String,
    pub trial: u32,
    pub overrides: PoseOverrides,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && s.len() <= MAX_USER_ID_LEN && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.') && !s.starts_with('.')
}

/// Parses `x,y` or `x,y,theta`.
pub fn parse_pose(s: &str) -> Option<Pose2D> {
    let mut parts = [0.0f64; 3];
    let mut n = 0;
    for field in s.split(',') {
        if n == 3 {
            return None;
        }
        parts[n] = field.trim().parse().ok()?;
        n += 1;
    }
    let pose = Pose2D::new(parts[0], parts[1], parts[2]);
    (n >= 2 && pose.is_finite()).then_some(pose)
}

impl LaunchRequest {
    /// Builds a request from raw query pairs, refusing unknown names so
    /// nothing unexpected reaches a worker.
    pub fn from_params<'a>(params: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, RequestError> {
        let mut seen: BTreeMap<&'static str, &'a str> = BTreeMap::new();
        for (name, value) in params {
            let Some(&known) = ALLOWED_PARAMS.iter().find(|p| **p == name) else {
                return Err(RequestError::Disallowed(name.to_string()));
            };
            if seen.insert(known, value).is_some() {
                return Err(RequestError::Repeated(name.to_string()));
            }
        }
        let user_id = *seen.get("user_id").ok_or(RequestError::Missing("user_id"))?;
        if !valid_token(user_id) {
            return Err(RequestError::Invalid { name: "user_id" });
        }
        let scenario_id = *seen.get("scenario").ok_or(RequestError::Missing("scenario"))?;
        if !valid_token(scenario_id) {
            return Err(RequestError::Invalid { name: "scenario" });
        }
        let trial = match seen.get("trial") {
            Some(v) => v.parse().map_err(|_| RequestError::Invalid { name: "trial" })?,
            None => 1,
        };
        let pose = |name: &'static str| -> Result<Option<Pose2D>, RequestError> {
            seen.get(name)
                .map(|v| parse_pose(v).ok_or(RequestError::Invalid { name }))
                .transpose()
        };
        Ok(Self {
            user_id: user_id.into(),
            scenario_id: scenario_id.into(),
            trial,
            overrides: PoseOverrides {
                avatar_start: pose("avatar_start")?,
                avatar_goal: pose("avatar_goal")?,
                robot_start: pose("robot_start")?,
                robot_goal: pose("robot_goal")?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Queued,
    Launching,
    Running,
    Expired,
    Closed,
}

impl SessionPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionPhase::Expired | SessionPhase::Closed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum CloseReason {
    Completed,
    LaunchFailed(String),
    IoFailure(String),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub user_id: String,
    pub host_id: String,
    pub request: LaunchRequest,
    pub state: SessionPhase,
    pub created_at: Millis,
    pub deadline: Millis,
    /// When the record became terminal.
    pub ended_at: Option<Millis>,
    pub close_reason: Option<CloseReason>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostConfig {
    pub host_id: String,
    pub max_sessions: usize,
    /// seconds
    pub time_limit: f64,
    pub launch_lanes: usize,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            host_id: "host-1".into(),
            max_sessions: DEFAULT_MAX_SESSIONS,
            time_limit: DEFAULT_TIME_LIMIT_S,
            launch_lanes: DEFAULT_LAUNCH_LANES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("max_sessions must be at least 1")]
    NoCapacity,
    #[error("launch_lanes must be at least 1")]
    NoLanes,
    #[error("time_limit must be positive")]
    TimeLimit,
    #[error("host_id {0:?} must be a short token of letters, digits, '-', '_' or '.'")]
    HostId(String),
}

impl HostConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_sessions < 1 {
            return Err(ConfigError::NoCapacity);
        }
        if self.launch_lanes < 1 {
            return Err(ConfigError::NoLanes);
        }
        if !(self.time_limit > 0.0 && self.time_limit.is_finite()) {
            return Err(ConfigError::TimeLimit);
        }
        if !valid_token(&self.host_id) {
            return Err(ConfigError::HostId(self.host_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RequestOutcome {
    /// The user already has a live session. `ready` once it is running.
    Attach { session_id: String, ready: bool },
    /// A new session was queued for launch.
    Pending { session_id: String },
    /// Host full; try again after the hint.
    Capacity { retry_after_s: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("no session {0:?}")]
    Unknown(String),
    #[error("session {id:?} cannot go from {from:?} to {to:?}")]
    Illegal { id: String, from: SessionPhase, to: SessionPhase },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub user_id: String,
    pub scenario_id: String,
    pub state: SessionPhase,
    pub created_at: Millis,
    pub deadline: Millis,
    pub ended_at: Option<Millis>,
    pub close_reason: Option<CloseReason>,
}

impl From<&SessionRecord> for SessionInfo {
    fn from(r: &SessionRecord) -> Self {
        Self {
            session_id: r.session_id.clone(),
            user_id: r.user_id.clone(),
            scenario_id: r.request.scenario_id.clone(),
            state: r.state,
            created_at: r.created_at,
            deadline: r.deadline,
            ended_at: r.ended_at,
            close_reason: r.close_reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostStatus {
    pub host_id: String,
    pub capacity: usize,
    pub running: usize,
    pub launching: usize,
    pub queued: usize,
    pub expired: usize,
    pub closed: usize,
    /// Non-terminal sessions, oldest first; terminal ones too on request.
    pub sessions: Vec<SessionInfo>,
}

/// The single lifecycle authority for one host.
#[derive(Debug)]
pub struct SessionRegistry {
    config: HostConfig,
    records: BTreeMap<String, SessionRecord>,
    /// user id → their non-terminal session
    live_by_user: BTreeMap<String, String>,
    queue: VecDeque<String>,
    counter: u64,
}

impl SessionRegistry {
    pub fn new(config: HostConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            records: BTreeMap::new(),
            live_by_user: BTreeMap::new(),
            queue: VecDeque::new(),
            counter: 0,
        })
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    pub fn get(&self, session_id: &str) -> Option<&SessionRecord> {
        self.records.get(session_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SessionRecord> {
        self.records.values()
    }

    pub fn live_session_of(&self, user_id: &str) -> Option<&SessionRecord> {
        self.live_by_user.get(user_id).and_then(|id| self.records.get(id))
    }

    fn count(&self, phase: SessionPhase) -> usize {
        self.live_by_user.values().filter(|id| self.records[*id].state == phase).count()
    }

    pub fn non_terminal(&self) -> usize {
        self.live_by_user.len()
    }

    /// Attach, queue or refuse. The request is assumed already filtered and
    /// checked against its scenario.
    pub fn request(&mut self, req: LaunchRequest, now: Millis) -> RequestOutcome {
        self.request_with_limit(req, now, self.config.time_limit)
    }

    /// Like [`request`](Self::request) with a per-scenario time limit; the
    /// shorter of it and the host limit applies.
    pub fn request_with_limit(&mut self, req: LaunchRequest, now: Millis, time_limit: f64) -> RequestOutcome {
        if let Some(rec) = self.live_session_of(&req.user_id) {
            return RequestOutcome::Attach {
                session_id: rec.session_id.clone(),
                ready: rec.state == SessionPhase::Running,
            };
        }
        if self.non_terminal() >= self.config.max_sessions {
            let soonest = self
                .live_by_user
                .values()
                .map(|id| self.records[id].deadline)
                .min()
                .unwrap_or(now);
            let wait_ms = soonest.saturating_sub(now);
            return RequestOutcome::Capacity {
                retry_after_s: wait_ms.div_ceil(1000).max(1),
            };
        }
        self.counter += 1;
        let session_id = format!("{}-{}-{}", self.config.host_id, req.user_id, self.counter);
        let record = SessionRecord {
            session_id: session_id.clone(),
            user_id: req.user_id.clone(),
            host_id: self.config.host_id.clone(),
            request: req,
            state: SessionPhase::Queued,
            created_at: now,
            deadline: now + libm::ceil(self.config.time_limit.min(time_limit) * 1000.0) as Millis,
            ended_at: None,
            close_reason: None,
        };
        self.live_by_user.insert(record.user_id.clone(), session_id.clone());
        self.records.insert(session_id.clone(), record);
        self.queue.push_back(session_id.clone());
        RequestOutcome::Pending { session_id }
    }

    /// Takes the oldest queued record if a launch lane is free.
    pub fn next_launch(&mut self) -> Option<SessionRecord> {
        if self.count(SessionPhase::Launching) >= self.config.launch_lanes {
            return None;
        }
        let id = self.queue.pop_front()?;
        let rec = self.records.get_mut(&id).expect("queued id has a record");
        rec.state = SessionPhase::Launching;
        Some(rec.clone())
    }

    fn transition(
        &mut self,
        id: &str,
        allowed: &[SessionPhase],
        to: SessionPhase,
        now: Millis,
    ) -> Result<&mut SessionRecord, TransitionError> {
        let rec = self.records.get_mut(id).ok_or_else(|| TransitionError::Unknown(id.into()))?;
        if !allowed.contains(&rec.state) {
            return Err(TransitionError::Illegal {
                id: id.into(),
                from: rec.state,
                to,
            });
        }
        rec.state = to;
        if to.is_terminal() {
            rec.ended_at = Some(now);
            self.live_by_user.remove(&rec.user_id);
            self.queue.retain(|q| q != id);
        }
        Ok(rec)
    }

    pub fn mark_running(&mut self, session_id: &str) -> Result<(), TransitionError> {
        self.transition(session_id, &[SessionPhase::Launching], SessionPhase::Running, 0).map(|_| ())
    }

    pub fn fail_launch(&mut self, session_id: &str, why: String, now: Millis) -> Result<(), TransitionError> {
        let rec = self.transition(session_id, &[SessionPhase::Launching], SessionPhase::Closed, now)?;
        rec.close_reason = Some(CloseReason::LaunchFailed(why));
        Ok(())
    }

    pub fn close(&mut self, session_id: &str, reason: CloseReason, now: Millis) -> Result<(), TransitionError> {
        let rec = self.transition(
            session_id,
            &[SessionPhase::Queued, SessionPhase::Launching, SessionPhase::Running],
            SessionPhase::Closed,
            now,
        )?;
        rec.close_reason = Some(reason);
        Ok(())
    }

    /// Expires one session ahead of the wall clock, for workers that end
    /// on simulated time.
    pub fn expire(&mut self, session_id: &str, now: Millis) -> Result<(), TransitionError> {
        self.transition(
            session_id,
            &[SessionPhase::Queued, SessionPhase::Launching, SessionPhase::Running],
            SessionPhase::Expired,
            now,
        )
        .map(|_| ())
    }

    /// Expires every non-terminal session whose deadline has passed.
    pub fn reap_expired(&mut self, now: Millis) -> Vec<String> {
        let due: Vec<String> = self
            .live_by_user
            .values()
            .filter(|id| self.records[*id].deadline <= now)
            .cloned()
            .collect();
        for id in &due {
            self.expire(id, now).expect("live session can expire");
        }
        due
    }

    pub fn status(&self) -> HostStatus {
        self.status_with(false)
    }

    pub fn status_with(&self, include_terminal: bool) -> HostStatus {
        let mut sessions: Vec<SessionInfo> = self
            .records
            .values()
            .filter(|r| include_terminal || !r.state.is_terminal())
            .map(SessionInfo::from)
            .collect();
        sessions.sort_by(|a, b| (a.created_at, &a.session_id).cmp(&(b.created_at, &b.session_id)));
        let terminal = |p| self.records.values().filter(|r| r.state == p).count();
        HostStatus {
            host_id: self.config.host_id.clone(),
            capacity: self.config.max_sessions,
            running: self.count(SessionPhase::Running),
            launching: self.count(SessionPhase::Launching),
            queued: self.count(SessionPhase::Queued),
            expired: terminal(SessionPhase::Expired),
            closed: terminal(SessionPhase::Closed),
            sessions,
        }
    }
}
