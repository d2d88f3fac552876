//! Session log records and the proxemics and completion metrics derived
//! from them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentKind, AgentState};
use crate::collision::{CollisionEvent, ContactKind, PairKind};
use crate::geometry::Vec2;
use crate::task::{Phase, TaskEvent};
use crate::world::WorldState;

/// Upper bound (exclusive) of the intimate zone, meters.
pub const INTIMATE_DISTANCE: f64 = 0.45;
/// Upper bound (exclusive) of the personal zone, meters.
pub const PERSONAL_DISTANCE: f64 = 1.2;
/// Displacement from the start pose above which the avatar counts as moved.
pub const MOVE_EPSILON: f64 = 0.5;

pub const LOG_SCHEMA: &str = "crowdnav.log/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Intimate,
    Personal,
    None,
}

pub fn classify_zone(distance: f64) -> Zone {
    if distance < INTIMATE_DISTANCE {
        Zone::Intimate
    } else if distance < PERSONAL_DISTANCE {
        Zone::Personal
    } else {
        Zone::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub id: u32,
    pub kind: AgentKind,
    pub x: f64,
    pub y: f64,
    pub th: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
}

impl AgentSample {
    pub fn of(agent: &AgentState) -> Self {
        Self {
            id: agent.id.0,
            kind: agent.kind,
            x: agent.pose.x,
            y: agent.pose.y,
            th: agent.pose.theta,
            vx: agent.velocity.x,
            vy: agent.velocity.y,
            r: agent.radius,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Gap between the two discs, floored at zero.
    pub fn surface_distance(&self, other: &AgentSample) -> f64 {
        let d = (self.position() - other.position()).norm() - self.r - other.r;
        if d > 0.0 {
            d
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// simulated seconds
    pub t: f64,
    pub phase: Phase,
    pub agents: Vec<AgentSample>,
}

impl TickRecord {
    pub fn capture(world: &WorldState, phase: Phase) -> Self {
        Self {
            tick: world.tick(),
            t: world.sim_time(),
            phase,
            agents: world.agents().iter().map(AgentSample::of).collect(),
        }
    }

    pub fn avatar(&self) -> Option<&AgentSample> {
        self.agents.iter().find(|a| a.kind == AgentKind::Avatar)
    }

    pub fn robot(&self) -> Option<&AgentSample> {
        self.agents.iter().find(|a| a.kind == AgentKind::Robot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Collision {
        a: u32,
        b: u32,
        pair: PairKind,
        contact: ContactKind,
    },
    Task {
        completed: Phase,
        next: Phase,
    },
    RobotGoalReached,
    RobotNavFailed {
        explored: usize,
    },
}

impl From<&CollisionEvent> for SessionEvent {
    fn from(e: &CollisionEvent) -> Self {
        SessionEvent::Collision {
            a: e.a.0,
            b: e.b.0,
            pair: e.pair,
            contact: e.kind,
        }
    }
}

impl From<&TaskEvent> for SessionEvent {
    fn from(e: &TaskEvent) -> Self {
        SessionEvent::Task {
            completed: e.completed,
            next: e.next,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: u64,
    pub t: f64,
    pub event: SessionEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub session_id: String,
    pub user_id: String,
    pub host_id: String,
    pub scenario_id: String,
    pub environment: String,
    pub trial: u32,
    pub dt: f64,
    pub decimation: u32,
    pub time_limit: f64,
    /// Reference point for the moved flag; the first avatar sample otherwise.
    #[serde(default)]
    pub avatar_start: Option<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// All three tasks finished.
    Completed,
    /// The deadline passed first.
    Expired,
    /// Closed by the operator or a shutdown.
    Closed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub reason: EndReason,
    pub tick: u64,
    pub t: f64,
    /// Some records could not be written.
    #[serde(default)]
    pub degraded: bool,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "r", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Tick(TickRecord),
    Event(EventRecord),
    End(SessionOutcome),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionCounts {
    pub avatar_npc: u64,
    pub avatar_robot: u64,
    pub npc_npc: u64,
    pub npc_robot: u64,
}

impl CollisionCounts {
    pub fn add(&mut self, pair: PairKind) {
        match pair {
            PairKind::AvatarNpc => self.avatar_npc += 1,
            PairKind::AvatarRobot => self.avatar_robot += 1,
            PairKind::NpcNpc => self.npc_npc += 1,
            PairKind::NpcRobot => self.npc_robot += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.avatar_npc + self.avatar_robot + self.npc_npc + self.npc_robot
    }
}

/// Simulated completion time of each phase, seconds from session start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub find_robot: Option<f64>,
    pub follow_robot: Option<f64>,
    pub reach_landmark: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub session_id: String,
    pub user_id: String,
    pub scenario_id: String,
    pub environment: String,
    pub trial: u32,
    pub ticks: u64,
    /// Closest robot-avatar surface distance; absent without a robot sample.
    pub min_distance: Option<f64>,
    pub intimate_incursion: bool,
    pub personal_incursion: bool,
    pub collisions: CollisionCounts,
    pub pushes: u64,
    pub max_displacement: f64,
    pub moved: bool,
    pub timed_out: bool,
    pub robot_found: bool,
    pub completed: bool,
    pub phase_times: PhaseTimes,
    pub end_reason: Option<EndReason>,
    pub corrupt_lines: u64,
    /// Log lacks its end record, had unreadable lines, or was degraded.
    pub partial: bool,
}

/// Folds a parsed log into its summary. `corrupt_lines` counts lines the
/// reader had to skip.
pub fn summarize(records: &[LogRecord], corrupt_lines: u64) -> MetricsSummary {
    let mut s = Summarizer::default();
    for r in records {
        s.push(r);
    }
    s.finish(corrupt_lines)
}

/// Incremental form of [`summarize`], fed one record at a time.
#[derive(Debug, Clone, Default)]
pub struct Summarizer {
    header: Option<LogHeader>,
    outcome: Option<SessionOutcome>,
    ticks: u64,
    min_distance: Option<f64>,
    start: Option<Vec2>,
    max_displacement: f64,
    collisions: CollisionCounts,
    pushes: u64,
    times: PhaseTimes,
}

impl Summarizer {
    pub fn push(&mut self, record: &LogRecord) {
        match record {
            LogRecord::Header(h) => {
                if self.start.is_none() {
                    self.start = h.avatar_start;
                }
                self.header = Some(h.clone());
            }
            LogRecord::End(o) => self.outcome = Some(o.clone()),
            LogRecord::Tick(t) => {
                self.ticks += 1;
                let Some(avatar) = t.avatar() else { return };
                let origin = *self.start.get_or_insert(avatar.position());
                self.max_displacement = self.max_displacement.max((avatar.position() - origin).norm());
                if let Some(robot) = t.robot() {
                    let d = avatar.surface_distance(robot);
                    self.min_distance = Some(self.min_distance.map_or(d, |m| m.min(d)));
                }
            }
            LogRecord::Event(e) => match &e.event {
                SessionEvent::Collision { pair, contact, .. } => {
                    self.collisions.add(*pair);
                    if *contact == ContactKind::Push {
                        self.pushes += 1;
                    }
                }
                SessionEvent::Task { completed, .. } => {
                    let slot = match completed {
                        Phase::FindRobot => &mut self.times.find_robot,
                        Phase::FollowRobot => &mut self.times.follow_robot,
                        Phase::ReachLandmark => &mut self.times.reach_landmark,
                        _ => return,
                    };
                    slot.get_or_insert(e.t);
                }
                SessionEvent::RobotGoalReached | SessionEvent::RobotNavFailed { .. } => {}
            },
        }
    }

    pub fn finish(&self, corrupt_lines: u64) -> MetricsSummary {
        let header = self.header.as_ref();
        let outcome = self.outcome.as_ref();
        let zone = self.min_distance.map_or(Zone::None, classify_zone);
        let field = |f: fn(&LogHeader) -> &String| header.map(|h| f(h).clone()).unwrap_or_default();
        MetricsSummary {
            session_id: field(|h| &h.session_id),
            user_id: field(|h| &h.user_id),
            scenario_id: field(|h| &h.scenario_id),
            environment: field(|h| &h.environment),
            trial: header.map_or(0, |h| h.trial),
            ticks: self.ticks,
            min_distance: self.min_distance,
            intimate_incursion: zone == Zone::Intimate,
            personal_incursion: zone != Zone::None,
            collisions: self.collisions,
            pushes: self.pushes,
            max_displacement: self.max_displacement,
            moved: self.max_displacement > MOVE_EPSILON,
            timed_out: outcome.is_some_and(|o| o.reason == EndReason::Expired),
            robot_found: self.times.find_robot.is_some(),
            completed: self.times.reach_landmark.is_some(),
            phase_times: self.times,
            end_reason: outcome.map(|o| o.reason),
            corrupt_lines,
            partial: corrupt_lines > 0 || header.is_none() || outcome.is_none_or(|o| o.degraded),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn percent(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            100.0 * self.num as f64 / self.den as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortRates {
    pub sessions: u64,
    pub timeout: Rate,
    pub no_movement: Rate,
    pub intimate: Rate,
    pub personal: Rate,
    pub robot_found: Rate,
    pub completed: Rate,
    pub partial: Rate,
}

impl CohortRates {
    fn add(&mut self, s: &MetricsSummary) {
        self.sessions += 1;
        for (rate, hit) in [
            (&mut self.timeout, s.timed_out),
            (&mut self.no_movement, !s.moved),
            (&mut self.intimate, s.intimate_incursion),
            (&mut self.personal, s.personal_incursion),
            (&mut self.robot_found, s.robot_found),
            (&mut self.completed, s.completed),
            (&mut self.partial, s.partial),
        ] {
            rate.den += 1;
            rate.num += u64::from(hit);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub overall: CohortRates,
    pub by_scenario: BTreeMap<String, CohortRates>,
    pub by_environment: BTreeMap<String, CohortRates>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("no summaries to aggregate")]
    Empty,
    #[error("duplicate session ids: {0:?}")]
    Duplicate(Vec<String>),
}

pub fn aggregate(summaries: &[MetricsSummary]) -> Result<CohortReport, AggregateError> {
    if summaries.is_empty() {
        return Err(AggregateError::Empty);
    }
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for s in summaries {
        if !seen.insert(s.session_id.as_str()) {
            dups.insert(s.session_id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(AggregateError::Duplicate(dups.into_iter().collect()));
    }
    let mut report = CohortReport::default();
    for s in summaries {
        report.overall.add(s);
        report.by_scenario.entry(s.scenario_id.clone()).or_default().add(s);
        report.by_environment.entry(s.environment.clone()).or_default().add(s);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn sample(id: u32, kind: AgentKind, x: f64, r: f64) -> AgentSample {
        AgentSample {
            id,
            kind,
            x,
            y: 0.0,
            th: 0.0,
            vx: 0.0,
            vy: 0.0,
            r,
        }
    }

    fn tick(n: u64, avatar_x: f64, robot_x: f64) -> LogRecord {
        LogRecord::Tick(TickRecord {
            tick: n,
            t: n as f64 * 0.05,
            phase: Phase::FindRobot,
            agents: vec![
                sample(0, AgentKind::Avatar, avatar_x, 0.3),
                sample(1, AgentKind::Robot, robot_x, 0.25),
            ],
        })
    }

    fn header(id: &str) -> LogRecord {
        LogRecord::Header(LogHeader {
            schema: LOG_SCHEMA.into(),
            session_id: id.into(),
            user_id: "u".into(),
            host_id: "h".into(),
            scenario_id: "lab_a".into(),
            environment: "lab".into(),
            trial: 1,
            dt: 0.05,
            decimation: 1,
            time_limit: 300.0,
            avatar_start: None,
        })
    }

    fn end(reason: EndReason) -> LogRecord {
        LogRecord::End(SessionOutcome {
            reason,
            tick: 10,
            t: 0.5,
            degraded: false,
        })
    }

    #[test]
    fn zones_are_half_open() {
        assert_eq!(classify_zone(0.30), Zone::Intimate);
        assert_eq!(classify_zone(0.80), Zone::Personal);
        assert_eq!(classify_zone(0.45), Zone::Personal);
        assert_eq!(classify_zone(1.20), Zone::None);
    }

    #[test]
    fn close_approach_sets_both_flags() {
        // centers 0.99 apart, radii 0.55 in total: 0.44 m gap
        let log = vec![header("s"), tick(0, 0.0, 3.0), tick(1, 0.0, 0.99), end(EndReason::Completed)];
        let s = summarize(&log, 0);
        assert!((s.min_distance.unwrap() - 0.44).abs() < 1e-12);
        assert!(s.intimate_incursion && s.personal_incursion);
        assert!(!s.partial);
    }

    #[test]
    fn still_avatar_did_not_move() {
        let log = vec![header("s"), tick(0, 1.0, 5.0), tick(1, 1.0, 4.0), end(EndReason::Expired)];
        let s = summarize(&log, 0);
        assert!(!s.moved);
        assert!(s.timed_out);
        assert!(!s.personal_incursion);
    }

    #[test]
    fn missing_end_is_partial() {
        let s = summarize(&[header("s"), tick(0, 0.0, 2.0)], 0);
        assert!(s.partial && !s.timed_out);
        assert!(summarize(&[header("s"), end(EndReason::Closed)], 2).partial);
    }

    #[test]
    fn events_are_counted() {
        let ev = |t, event| LogRecord::Event(EventRecord { tick: 0, t, event });
        let log = vec![
            header("s"),
            ev(1.0, SessionEvent::Collision {
                a: 0,
                b: 1,
                pair: PairKind::AvatarRobot,
                contact: ContactKind::Push,
            }),
            ev(1.5, SessionEvent::Collision {
                a: 2,
                b: 3,
                pair: PairKind::NpcNpc,
                contact: ContactKind::Collision,
            }),
            ev(2.0, SessionEvent::Task {
                completed: Phase::FindRobot,
                next: Phase::FollowRobot,
            }),
            end(EndReason::Closed),
        ];
        let s = summarize(&log, 0);
        assert_eq!(s.collisions.total(), 2);
        assert_eq!(s.collisions.avatar_robot, 1);
        assert_eq!(s.pushes, 1);
        assert!(s.robot_found && !s.completed);
        assert_eq!(s.phase_times.find_robot, Some(2.0));
    }

    fn summary(id: usize, timed_out: bool, moved: bool, intimate: bool, personal: bool) -> MetricsSummary {
        let mut s = summarize(&[header(&format!("s{id}")), end(EndReason::Closed)], 0);
        s.timed_out = timed_out;
        s.moved = moved;
        s.intimate_incursion = intimate;
        s.personal_incursion = personal;
        s
    }

    #[test]
    fn published_cohort_rates() {
        let all: Vec<_> = (0..372).map(|i| summary(i, i < 23, i >= 8, i < 195, i < 316)).collect();
        let r = aggregate(&all).unwrap().overall;
        assert_eq!(r.timeout, Rate { num: 23, den: 372 });
        assert!((r.timeout.percent() - 6.18).abs() < 0.05);
        assert!((r.no_movement.percent() - 2.15).abs() < 0.05);
        assert!((r.intimate.percent() - 52.4).abs() < 0.05);
        assert!((r.personal.percent() - 84.9).abs() < 0.05);
    }

    #[test]
    fn duplicates_are_rejected() {
        let all = vec![summary(1, false, true, false, false), summary(1, false, true, false, false)];
        assert_eq!(aggregate(&all), Err(AggregateError::Duplicate(vec!["s1".into()])));
        assert_eq!(aggregate(&[]), Err(AggregateError::Empty));
    }

    #[test]
    fn single_summary_rates_are_extreme() {
        let r = aggregate(&[summary(0, true, false, false, true)]).unwrap().overall;
        for rate in [r.timeout, r.no_movement, r.intimate, r.personal, r.robot_found] {
            assert!(rate.percent() == 0.0 || rate.percent() == 100.0);
        }
    }
}
