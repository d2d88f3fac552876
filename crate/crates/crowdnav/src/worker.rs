//! One running session: the simulation loop, its log, and the fan-out of
//! snapshots to connected clients.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use crowdnav_core::avatar::KeySet;
use crowdnav_core::metrics::{EndReason, LogHeader, MetricsSummary, SessionEvent, TickRecord, LOG_SCHEMA};
use crowdnav_core::nav::{robot_tick, NavEvent, NavParams, NavState};
use crowdnav_core::scenario::{build_world, BuildError, Scenario};
use crowdnav_core::session::PoseOverrides;
use crowdnav_core::task::{update_tasks, Phase, TaskParams, TaskState};
use crowdnav_core::{AvatarCommand, OccupancyGrid, Pose2D, WorldConfig, WorldEvent, WorldState};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;

use crate::config::Pacing;
use crate::protocol::{completion_code, ServerMsg};
use crate::telemetry::{write_summary, DataLayout, LogSink};

/// Scenario with the request's pose overrides applied.
pub fn apply_overrides(scenario: &Scenario, o: &PoseOverrides) -> Scenario {
    let mut s = scenario.clone();
    let set = |slot: &mut Pose2D, v: Option<Pose2D>| {
        if let Some(p) = v {
            *slot = p;
        }
    };
    set(&mut s.avatar.start, o.avatar_start);
    set(&mut s.avatar.goal, o.avatar_goal);
    set(&mut s.robot.start, o.robot_start);
    set(&mut s.robot.goal, o.robot_goal);
    s
}

/// Deterministic part of a session: world, robot and task script.
#[derive(Debug, Clone)]
pub struct SessionSim {
    world: WorldState,
    nav: NavState,
    tasks: TaskState,
    task_params: TaskParams,
    landmark: Pose2D,
    time_limit: f64,
}

/// Something a client should hear about, with the tick it happened on.
#[derive(Debug, Clone, PartialEq)]
pub struct Happening {
    pub event: SessionEvent,
    pub instruction: Option<&'static str>,
}

impl SessionSim {
    /// `time_limit` is in simulated seconds.
    pub fn new(
        scenario: &Scenario,
        grid: Arc<OccupancyGrid>,
        world: WorldConfig,
        nav: NavParams,
        tasks: TaskParams,
        time_limit: f64,
    ) -> Result<Self, BuildError> {
        let (world, nav) = build_world(scenario, grid, world, nav)?;
        Ok(Self {
            world,
            nav,
            tasks: TaskState::default(),
            task_params: tasks,
            landmark: scenario.landmark.pose,
            time_limit,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn phase(&self) -> Phase {
        self.tasks.phase
    }

    pub fn is_done(&self) -> bool {
        self.tasks.is_done()
    }

    pub fn out_of_time(&self) -> bool {
        self.world.sim_time() >= self.time_limit - 1e-9
    }

    pub fn step(&mut self, keys: KeySet) -> Vec<Happening> {
        let mut out = Vec::new();
        let (robot_cmd, nav_events) = match self.world.robot() {
            Some(robot) => robot_tick(&mut self.nav, robot, self.world.agents(), self.world.sim_time()),
            None => (Default::default(), Vec::new()),
        };
        for ev in nav_events {
            let event = match ev {
                NavEvent::GoalReached => SessionEvent::RobotGoalReached,
                NavEvent::NavFailed { explored } => SessionEvent::RobotNavFailed { explored },
                NavEvent::Replanned { .. } => continue,
            };
            out.push(Happening { event, instruction: None });
        }
        let cmd = AvatarCommand {
            keys_down: keys,
            ..Default::default()
        };
        for ev in self.world.step(&cmd, robot_cmd) {
            if let WorldEvent::CollisionStart(c) = ev {
                out.push(Happening {
                    event: SessionEvent::from(&c),
                    instruction: None,
                });
            }
        }
        let dt = self.world.dt();
        for te in update_tasks(&mut self.tasks, &self.world, dt, &self.landmark, &self.task_params) {
            out.push(Happening {
                event: SessionEvent::from(&te),
                instruction: Some(te.next.instruction()),
            });
        }
        out
    }

    pub fn snapshot(&self) -> ServerMsg {
        ServerMsg::snap(&self.world, self.tasks.phase)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerParams {
    pub pacing: Pacing,
    pub snapshot_every: u32,
}

/// Live handle on a worker. Dropping it does not stop the worker.
#[derive(Debug, Clone)]
pub struct WorkerHandle {
    pub session_id: String,
    keys: mpsc::UnboundedSender<KeySet>,
    out: broadcast::Sender<ServerMsg>,
    latest: Arc<Mutex<ServerMsg>>,
    stop: Arc<watch::Sender<Option<EndReason>>>,
}

impl WorkerHandle {
    pub fn send_keys(&self, keys: KeySet) {
        let _ = self.keys.send(keys);
    }

    /// The latest snapshot, or the end message once finished, plus a
    /// receiver for everything after it.
    pub fn subscribe(&self) -> (ServerMsg, broadcast::Receiver<ServerMsg>) {
        let latest = self.latest.lock().expect("latest lock");
        (latest.clone(), self.out.subscribe())
    }

    pub fn stop(&self, reason: EndReason) {
        self.stop.send_if_modified(|r| {
            if r.is_none() {
                *r = Some(reason);
                true
            } else {
                false
            }
        });
    }
}

#[derive(Debug, Clone)]
pub struct WorkerOutcome {
    pub session_id: String,
    pub reason: EndReason,
    pub summary: MetricsSummary,
    /// The log lost records or the summary could not be saved.
    pub io_error: Option<String>,
}

pub struct Launch {
    pub sim: SessionSim,
    pub sink: LogSink,
}

impl Launch {
    /// Builds the world and opens the log. Blocking.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        layout: &DataLayout,
        session_id: &str,
        user_id: &str,
        host_id: &str,
        trial: u32,
        scenario: &Scenario,
        grid: Arc<OccupancyGrid>,
        world: WorldConfig,
        nav: NavParams,
        tasks: TaskParams,
        time_limit: f64,
        decimation: u32,
    ) -> anyhow::Result<Self> {
        let sim = SessionSim::new(scenario, grid, world, nav, tasks, time_limit)?;
        let header = LogHeader {
            schema: LOG_SCHEMA.into(),
            session_id: session_id.into(),
            user_id: user_id.into(),
            host_id: host_id.into(),
            scenario_id: scenario.id.clone(),
            environment: scenario.environment.as_str().into(),
            trial,
            dt: sim.world.dt(),
            decimation,
            time_limit,
            avatar_start: Some(sim.world.avatar().position()),
        };
        let sink = LogSink::create(layout.log_path(session_id), header)?;
        Ok(Self { sim, sink })
    }
}

pub fn spawn(
    session_id: String,
    launch: Launch,
    params: WorkerParams,
    layout: DataLayout,
) -> (WorkerHandle, JoinHandle<WorkerOutcome>) {
    let (keys_tx, keys_rx) = mpsc::unbounded_channel();
    let (out, _) = broadcast::channel(1024);
    let latest = Arc::new(Mutex::new(launch.sim.snapshot()));
    let (stop_tx, stop_rx) = watch::channel(None);
    let handle = WorkerHandle {
        session_id: session_id.clone(),
        keys: keys_tx,
        out: out.clone(),
        latest: latest.clone(),
        stop: Arc::new(stop_tx),
    };
    let join = tokio::spawn(run(session_id, launch, params, layout, keys_rx, out, latest, stop_rx));
    (handle, join)
}

#[allow(clippy::too_many_arguments)]
async fn run(
    session_id: String,
    launch: Launch,
    params: WorkerParams,
    layout: DataLayout,
    mut keys_rx: mpsc::UnboundedReceiver<KeySet>,
    out: broadcast::Sender<ServerMsg>,
    latest: Arc<Mutex<ServerMsg>>,
    mut stop: watch::Receiver<Option<EndReason>>,
) -> WorkerOutcome {
    let Launch { mut sim, mut sink } = launch;
    let snap_every = match params.pacing {
        Pacing::Realtime => u64::from(params.snapshot_every.max(1)),
        Pacing::Lockstep => 1,
    };
    let mut interval = tokio::time::interval(Duration::from_secs_f64(sim.world.dt()));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut held = KeySet::EMPTY;

    let reason = loop {
        if let Some(r) = *stop.borrow() {
            break r;
        }
        let keys = match params.pacing {
            Pacing::Realtime => tokio::select! {
                _ = interval.tick() => {
                    while let Ok(k) = keys_rx.try_recv() {
                        held = k;
                    }
                    held
                }
                _ = stop.changed() => continue,
            },
            Pacing::Lockstep => tokio::select! {
                k = keys_rx.recv() => match k {
                    Some(k) => k,
                    None => break EndReason::Closed,
                },
                _ = stop.changed() => continue,
            },
        };
        let happenings = sim.step(keys);
        let tick = sim.world.tick();
        let t = sim.world.sim_time();
        for h in happenings {
            sink.event(tick, t, h.event.clone());
            let _ = out.send(ServerMsg::Event {
                tick,
                event: h.event,
                instruction: h.instruction.map(str::to_owned),
            });
        }
        sink.tick(TickRecord::capture(&sim.world, sim.phase()));
        if tick % snap_every == 0 || sim.is_done() {
            let snap = sim.snapshot();
            *latest.lock().expect("latest lock") = snap.clone();
            let _ = out.send(snap);
        }
        if sim.is_done() {
            break EndReason::Completed;
        }
        if params.pacing == Pacing::Lockstep && sim.out_of_time() {
            break EndReason::Expired;
        }
        // realtime steps are cheap; this keeps a busy host fair
        tokio::task::yield_now().await;
    };

    let degraded = sink.is_degraded();
    let summary = sink.finish(reason, sim.world.tick(), sim.world.sim_time());
    let mut io_error = degraded.then(|| "log writes failed".to_owned());
    if let Err(e) = write_summary(&layout, &summary) {
        io_error = Some(format!("summary not saved: {e}"));
    }
    let end = ServerMsg::End {
        code: completion_code(&session_id),
        reason,
    };
    *latest.lock().expect("latest lock") = end.clone();
    let _ = out.send(end);
    WorkerOutcome {
        session_id,
        reason,
        summary,
        io_error,
    }
}
