//! Scripted participants for load tests and reproducible runs.
//!
//! A bot asks for a session, polls while it is pending, then plays it over
//! the websocket: after every new snapshot it answers with the keys its
//! policy picks. Against a lockstep host that makes the whole session a
//! pure function of the scenario and the policy.

use std::sync::Arc;
use std::time::Duration;

use crowdnav_core::avatar::KeySet;
use crowdnav_core::metrics::EndReason;
use crowdnav_core::nav::{Costmap, InflationParams, Planner};
use crowdnav_core::scenario::{Scenario, AVATAR_RADIUS};
use crowdnav_core::task::{Phase, TaskParams};
use crowdnav_core::{AgentKind, AvatarCommand, Key, OccupancyGrid, Pose2D, Vec2};
use futures_util::{SinkExt, StreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio_tungstenite::tungstenite::Message;

use crate::assets::MapFile;
use crate::host::SessionReply;
use crate::protocol::{ClientMsg, ServerMsg, SnapAgent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Does what the instructions say.
    Compliant,
    /// Never touches the keyboard.
    Idle,
    /// Random key changes every second or so.
    Wanderer,
}

/// The 8 headings reachable with WASD, with the keys for each.
fn headings() -> [(Vec2, KeySet); 8] {
    let one = |k: Key| KeySet::EMPTY.with(k);
    let two = |a: Key, b: Key| KeySet::EMPTY.with(a).with(b);
    let ks = [
        one(Key::D),
        two(Key::W, Key::D),
        one(Key::W),
        two(Key::W, Key::A),
        one(Key::A),
        two(Key::S, Key::A),
        one(Key::S),
        two(Key::S, Key::D),
    ];
    ks.map(|k| {
        (
            AvatarCommand {
                keys_down: k,
                ..Default::default()
            }
            .direction(),
            k,
        )
    })
}

/// Keys whose heading is closest to `dir`; none for a zero vector.
pub fn keys_toward(dir: Vec2) -> KeySet {
    if dir.norm() < 1e-9 {
        return KeySet::EMPTY;
    }
    headings()
        .into_iter()
        .max_by(|a, b| a.0.dot(dir).total_cmp(&b.0.dot(dir)))
        .map(|(_, k)| k)
        .unwrap_or_default()
}

/// Turns snapshots into keys.
pub struct Pilot {
    policy: Policy,
    rng: ChaCha8Rng,
    held: KeySet,
    costmap: Option<Costmap>,
    planner: Planner,
    landmark: Vec2,
    tasks: TaskParams,
    path: Vec<Vec2>,
    path_target: Option<Vec2>,
    planned_at: u64,
}

impl Pilot {
    pub fn new(policy: Policy, seed: u64, scene: Option<(&OccupancyGrid, &Scenario)>, tasks: TaskParams) -> Self {
        let (costmap, landmark) = match scene {
            Some((grid, s)) => (
                Some(Costmap::from_grid(grid, &InflationParams::for_disc(AVATAR_RADIUS, grid.resolution()))),
                s.landmark.pose.position(),
            ),
            None => (None, Vec2::ZERO),
        };
        Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            held: KeySet::EMPTY,
            costmap,
            planner: Planner::new(),
            landmark,
            tasks,
            path: Vec::new(),
            path_target: None,
            planned_at: 0,
        }
    }

    pub fn keys(&mut self, tick: u64, agents: &[SnapAgent], phase: Phase) -> KeySet {
        match self.policy {
            Policy::Idle => KeySet::EMPTY,
            Policy::Wanderer => {
                if tick.is_multiple_of(20) {
                    self.held = if self.rng.random_bool(0.2) {
                        KeySet::EMPTY
                    } else {
                        headings()[self.rng.random_range(0..8)].1
                    };
                }
                self.held
            }
            Policy::Compliant => self.compliant(tick, agents, phase),
        }
    }

    fn compliant(&mut self, tick: u64, agents: &[SnapAgent], phase: Phase) -> KeySet {
        let find = |k: AgentKind| agents.iter().find(|a| a.kind == k).map(|a| Vec2::new(a.x, a.y));
        let (Some(me), robot) = (find(AgentKind::Avatar), find(AgentKind::Robot)) else {
            return KeySet::EMPTY;
        };
        let (target, stop_within) = match (phase, robot) {
            (Phase::FindRobot, Some(r)) => (r, 0.5 * self.tasks.find_radius.min(3.0)),
            // stay inside the follow radius without crowding the robot
            (Phase::FollowRobot, Some(r)) => (r, 0.5 * self.tasks.follow_radius),
            (Phase::ReachLandmark, _) => (self.landmark, 0.25 * self.tasks.goal_radius),
            _ => return KeySet::EMPTY,
        };
        if me.distance(target) <= stop_within {
            return KeySet::EMPTY;
        }
        keys_toward(self.heading(tick, me, target))
    }

    /// Direction along a planned path, replanned twice a second or when
    /// the target moved. Falls back to a straight line.
    fn heading(&mut self, tick: u64, me: Vec2, target: Vec2) -> Vec2 {
        let Some(map) = &self.costmap else {
            return target - me;
        };
        let stale = self.path_target.is_none_or(|t| t.distance(target) > 0.5) || tick >= self.planned_at + 10;
        if stale || self.path.is_empty() {
            self.path = match self.planner.plan(map, Pose2D::new(me.x, me.y, 0.0), Pose2D::new(target.x, target.y, 0.0)) {
                Ok(p) => p.waypoints.iter().map(|w| w.position()).collect(),
                Err(_) => Vec::new(),
            };
            self.path_target = Some(target);
            self.planned_at = tick;
        }
        // drop waypoints already reached, then aim a little ahead
        while self.path.len() > 1 && me.distance(self.path[0]) < 0.35 {
            self.path.remove(0);
        }
        match self.path.first() {
            Some(p) if me.distance(*p) > 1e-6 => *p - me,
            _ => target - me,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BotConfig {
    /// `http://host:port` of a gateway or a single host.
    pub base: String,
    pub user_id: String,
    pub scenario: String,
    pub trial: u32,
    pub policy: Policy,
    pub seed: u64,
    pub poll: Duration,
    /// Give up waiting for a pending session after this long.
    pub max_wait: Duration,
    pub tasks: TaskParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum BotResult {
    /// The host was full.
    Rejected { retry_after_s: u64 },
    Played {
        session_id: String,
        host_id: String,
        reason: Option<EndReason>,
        code: Option<String>,
        snapshots: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BotRun {
    pub user_id: String,
    pub result: BotResult,
}

#[derive(Debug, Deserialize)]
struct Scene {
    scenario: Scenario,
    map: MapFile,
}

fn ws_url(base: &str, path: &str, user_id: &str) -> String {
    let b = base.replacen("http://", "ws://", 1).replacen("https://", "wss://", 1);
    format!("{b}{path}&user_id={user_id}")
}

/// Sends one session request and returns the parsed reply and status.
pub async fn request_session(http: &reqwest::Client, cfg: &BotConfig) -> anyhow::Result<(u16, SessionReply)> {
    let url = format!(
        "{}/session?user_id={}&scenario={}&trial={}",
        cfg.base, cfg.user_id, cfg.scenario, cfg.trial
    );
    let r = http.get(&url).send().await?;
    let status = r.status().as_u16();
    let body: SessionReply = r.json().await?;
    Ok((status, body))
}

/// Runs one bot from request to end of session.
pub async fn run_bot(http: &reqwest::Client, cfg: &BotConfig) -> anyhow::Result<BotRun> {
    let first = request_session(http, cfg).await?;
    play_from(http, cfg, first).await
}

/// Continues a bot after its first `/session` answer.
pub async fn play_from(http: &reqwest::Client, cfg: &BotConfig, first: (u16, SessionReply)) -> anyhow::Result<BotRun> {
    let started = tokio::time::Instant::now();
    let mut reply = first.1;
    let (session_id, host_id, realtime) = loop {
        match reply {
            SessionReply::Ready {
                session_id,
                host_id,
                realtime,
            } => break (session_id, host_id, realtime),
            SessionReply::Full { retry_after_s } => {
                return Ok(BotRun {
                    user_id: cfg.user_id.clone(),
                    result: BotResult::Rejected { retry_after_s },
                })
            }
            SessionReply::Rejected { error } => anyhow::bail!("request refused: {error}"),
            SessionReply::Pending { .. } => {
                anyhow::ensure!(started.elapsed() < cfg.max_wait, "session still pending after {:?}", cfg.max_wait);
                tokio::time::sleep(cfg.poll).await;
                reply = request_session(http, cfg).await?.1;
            }
        }
    };

    let scene = if cfg.policy == Policy::Compliant {
        let url = format!("{}/scene?session_id={session_id}&user_id={}", cfg.base, cfg.user_id);
        let s: Scene = http.get(&url).send().await?.error_for_status()?.json().await?;
        let grid = s.map.grid()?;
        Some((Arc::new(grid), s.scenario))
    } else {
        None
    };
    let mut pilot = Pilot::new(
        cfg.policy,
        cfg.seed,
        scene.as_ref().map(|(g, s)| (g.as_ref(), s)),
        cfg.tasks,
    );

    let (mut ws, _) = tokio_tungstenite::connect_async(ws_url(&cfg.base, &realtime, &cfg.user_id)).await?;
    let mut last_tick: Option<u64> = None;
    let mut snapshots = 0;
    let mut end = None;
    while let Some(msg) = ws.next().await {
        let text = match msg? {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        match ServerMsg::parse(&text) {
            Some(ServerMsg::Snap { tick, agents, phase }) => {
                // the first snapshot can repeat one already broadcast
                if last_tick.is_some_and(|t| tick <= t) {
                    continue;
                }
                last_tick = Some(tick);
                snapshots += 1;
                let down = pilot.keys(tick, &agents, phase);
                ws.send(Message::Text(ClientMsg::Keys { down }.to_text().into())).await?;
            }
            Some(ServerMsg::End { code, reason }) => {
                end = Some((code, reason));
                break;
            }
            _ => {}
        }
    }
    let _ = ws.close(None).await;
    Ok(BotRun {
        user_id: cfg.user_id.clone(),
        result: BotResult::Played {
            session_id,
            host_id,
            reason: end.as_ref().map(|e| e.1),
            code: end.map(|e| e.0),
            snapshots,
        },
    })
}
