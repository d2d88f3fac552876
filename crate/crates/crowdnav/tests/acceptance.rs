//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p crowdnav --test acceptance` runs them all; extra
//! arguments are substring filters on the criterion names.

mod common;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use common::{host_settings, wait_for, HostProc, InProcGateway, InProcHost};
use crowdnav::assets::AssetStore;
use crowdnav::batch::{run_batch, BatchPlan};
use crowdnav::bots::{Pilot, Policy};
use crowdnav::config::Pacing;
use crowdnav::host::{SessionReply, StatusReply};
use crowdnav::protocol::ServerMsg;
use crowdnav::telemetry::{load_summaries, read_log, recover_dir, write_json_atomic, aggregate_dir, DataLayout};
use crowdnav::worker::{apply_overrides, Launch};
use crowdnav_core::metrics::{EndReason, LogHeader, MetricsSummary, TickRecord, LOG_SCHEMA};
use crowdnav_core::nav::{robot_tick, Costmap, GridGeometry, NavParams, NavState, PlanError, Planner, RobotCommand};
use crowdnav_core::routing::Router;
use crowdnav_core::scenario::ROBOT_RADIUS;
use crowdnav_core::session::{PoseOverrides, SessionPhase};
use crowdnav_core::social_force::{pair_repulsion, social_force};
use crowdnav_core::task::TaskParams;
use crowdnav_core::{
    AgentId, AgentKind, AgentState, AvatarCommand, Cell, CellIndex, OccupancyGrid, Pose2D, SocialForceParams, Vec2,
    WorldConfig, WorldState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Result<String>);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: &[Criterion] = &[
        ("capacity cap", capacity_cap),
        ("timeout semantics", timeout_semantics),
        ("sticky round robin", sticky_round_robin),
        ("batch reproduction", batch_reproduction),
        ("proxemics oracle", proxemics_oracle),
        ("planner optimality", planner_optimality),
        ("social force properties", social_force_properties),
        ("local control safety", local_control_safety),
        ("determinism", determinism),
        ("crash tolerance", crash_tolerance),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(anyhow::anyhow!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

async fn status(http: &reqwest::Client, base: &str, all: bool) -> Result<StatusReply> {
    let url = format!("{base}/status{}", if all { "?all=1" } else { "" });
    Ok(http.get(url).send().await?.json().await?)
}

// ---------------------------------------------------------------- capacity

fn capacity_cap() -> Result<String> {
    runtime().block_on(async {
        let dir = tempfile::tempdir()?;
        let host = InProcHost::start(host_settings("cap", dir.path(), Pacing::Realtime)).await;
        let base = host.url();
        let http = reqwest::Client::new();
        let started = Instant::now();

        let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let max_running = Arc::new(AtomicUsize::new(0));
        let max_live = Arc::new(AtomicUsize::new(0));
        let samples = Arc::new(AtomicUsize::new(0));
        let sampler = {
            let (done, max_running, max_live, samples, http, base) =
                (done.clone(), max_running.clone(), max_live.clone(), samples.clone(), http.clone(), base.clone());
            tokio::spawn(async move {
                while !done.load(AtomicOrdering::Relaxed) {
                    if let Ok(s) = status(&http, &base, false).await {
                        max_running.fetch_max(s.status.running, AtomicOrdering::Relaxed);
                        max_live.fetch_max(s.status.running + s.status.launching + s.status.queued, AtomicOrdering::Relaxed);
                        samples.fetch_add(1, AtomicOrdering::Relaxed);
                    }
                    tokio::time::sleep(Duration::from_millis(2)).await;
                }
            })
        };

        let storm: Vec<_> = (0..50)
            .map(|i| {
                let http = http.clone();
                let url = format!("{base}/session?user_id=storm-{i:02}&scenario=lab_a");
                tokio::spawn(async move { http.get(url).send().await.map(|r| r.status().as_u16()) })
            })
            .collect();
        let mut codes = BTreeMap::new();
        for t in storm {
            *codes.entry(t.await??).or_insert(0usize) += 1;
        }
        let running = wait_for(Duration::from_secs(8), || {
            let (http, base) = (http.clone(), base.clone());
            async move { status(&http, &base, false).await.ok().filter(|s| s.status.running == 10) }
        })
        .await;
        // keep sampling a little after everything launched
        tokio::time::sleep(Duration::from_millis(200)).await;
        done.store(true, AtomicOrdering::Relaxed);
        sampler.await?;
        let elapsed = started.elapsed();
        host.shutdown().await;

        let admitted = codes.get(&202).copied().unwrap_or(0) + codes.get(&200).copied().unwrap_or(0);
        let rejected = codes.get(&429).copied().unwrap_or(0);
        ensure!(admitted == 10 && rejected == 40, "status codes {codes:?}");
        ensure!(running.is_some(), "never reached 10 running sessions");
        let (mr, ml) = (max_running.load(AtomicOrdering::Relaxed), max_live.load(AtomicOrdering::Relaxed));
        ensure!(mr <= 10 && ml <= 10, "sampled running {mr}, live {ml}");
        ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
        Ok(format!(
            "10 admitted, 40 rejected with 429, 10 running; max sampled running {mr} over {} samples; {:.2}s",
            samples.load(AtomicOrdering::Relaxed),
            elapsed.as_secs_f64()
        ))
    })
}

// ----------------------------------------------------------------- timeout

fn timeout_semantics() -> Result<String> {
    runtime().block_on(async {
        let dir = tempfile::tempdir()?;
        let mut settings = host_settings("tmo", dir.path(), Pacing::Realtime);
        settings.time_limit = 5.0;
        settings.reap_period_ms = 500;
        let host = InProcHost::start(settings).await;
        let base = host.url();
        let http = reqwest::Client::new();
        let scenarios = ["lab_a", "lab_b", "warehouse_a", "warehouse_c"];
        for (i, s) in scenarios.iter().enumerate() {
            let r = http.get(format!("{base}/session?user_id=t{i}&scenario={s}")).send().await?;
            ensure!(r.status() == 202, "request {i}: {}", r.status());
        }
        let all_done = wait_for(Duration::from_secs(9), || {
            let (http, base) = (http.clone(), base.clone());
            async move {
                status(&http, &base, true)
                    .await
                    .ok()
                    .filter(|s| s.status.sessions.len() == 4 && s.status.sessions.iter().all(|x| x.state.is_terminal()))
            }
        })
        .await
        .context("sessions did not all end within 9 s")?;
        let mut worst = 0;
        for s in &all_done.status.sessions {
            ensure!(s.state == SessionPhase::Expired, "{} ended as {:?}", s.session_id, s.state);
            let lived = s.ended_at.unwrap() - s.created_at;
            worst = worst.max(lived);
            ensure!(lived <= 5500, "{} lived {lived} ms", s.session_id);
        }
        let idle = wait_for(Duration::from_secs(1), || {
            let (http, base) = (http.clone(), base.clone());
            async move { status(&http, &base, false).await.ok().filter(|s| s.live_workers == 0) }
        })
        .await;
        ensure!(idle.is_some(), "workers still alive after expiry");
        let mut flagged = 0;
        for s in &all_done.status.sessions {
            let m: MetricsSummary = http
                .get(format!("{base}/summary?session_id={}", s.session_id))
                .send()
                .await?
                .error_for_status()?
                .json()
                .await?;
            ensure!(m.timed_out, "{} summary not timed out", s.session_id);
            flagged += 1;
        }
        host.shutdown().await;
        Ok(format!(
            "4 sessions expired, longest lifetime {worst} ms (bound 5500), {flagged}/4 summaries timed_out, 0 live workers"
        ))
    })
}

// ------------------------------------------------------------------ sticky

fn sticky_round_robin() -> Result<String> {
    const HOSTS: usize = 4;
    const USERS: usize = 50;
    const WINDOW: u64 = 7_200_000;
    let mut rebinds = 0usize;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut router = Router::new((0..HOSTS).map(|i| (format!("h{i}"), format!("http://h{i}"))).collect(), WINDOW);
        let mut last: Vec<Option<(u64, usize)>> = vec![None; USERS];
        let mut fresh = [0usize; HOSTS];
        let mut now = 0u64;
        let requests = rng.random_range(50..400);
        for _ in 0..requests {
            // mostly short gaps, sometimes long enough to let bindings lapse
            now += if rng.random_bool(0.02) { rng.random_range(WINDOW / 2..WINDOW * 2) } else { rng.random_range(0..60_000) };
            let u = rng.random_range(0..USERS);
            let a = router.assign(&format!("user-{u}"), now).map_err(|e| anyhow::anyhow!("{e}"))?;
            if let Some((t, h)) = last[u] {
                if now - t < WINDOW {
                    ensure!(a.host == h && !a.fresh, "seed {seed}: user {u} moved from {h} to {} inside the window", a.host);
                } else {
                    rebinds += 1;
                }
            }
            if a.fresh {
                fresh[a.host] += 1;
            }
            let (lo, hi) = (fresh.iter().min().unwrap(), fresh.iter().max().unwrap());
            ensure!(hi - lo <= 1, "seed {seed}: fresh counts {fresh:?}");
            last[u] = Some((now, a.host));
        }
    }

    // the same through a live gateway and four hosts
    let e2e = runtime().block_on(async {
        let dir = tempfile::tempdir()?;
        let mut hosts = Vec::new();
        for i in 0..HOSTS {
            let mut s = host_settings(&format!("sticky-{i}"), &dir.path().join(format!("h{i}")), Pacing::Lockstep);
            s.max_sessions = 20;
            hosts.push(InProcHost::start(s).await);
        }
        let list: Vec<(String, String)> = hosts.iter().map(|h| (h.state.settings().host_id.clone(), h.url())).collect();
        let gw = InProcGateway::start(&list, 1000).await;
        let http = reqwest::Client::new();
        let mut order: Vec<usize> = (0..USERS).flat_map(|u| [u, u, u]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut seen: BTreeMap<usize, String> = BTreeMap::new();
        for u in order {
            let r: SessionReply = http
                .get(format!("{}/session?user_id=s{u:02}&scenario=lab_b", gw.url()))
                .send()
                .await?
                .json()
                .await?;
            let host = match r {
                SessionReply::Ready { host_id, .. } | SessionReply::Pending { host_id, .. } => host_id,
                other => bail!("user {u}: {other:?}"),
            };
            if let Some(prev) = seen.insert(u, host.clone()) {
                ensure!(prev == host, "user {u} moved from {prev} to {host}");
            }
        }
        let mut per_host: BTreeMap<String, usize> = BTreeMap::new();
        for h in seen.values() {
            *per_host.entry(h.clone()).or_default() += 1;
        }
        let counts: Vec<usize> = per_host.values().copied().collect();
        ensure!(
            counts.len() == HOSTS && counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
            "gateway spread {per_host:?}"
        );
        gw.shutdown().await;
        for h in hosts {
            h.shutdown().await;
        }
        Ok::<_, anyhow::Error>(counts)
    })?;
    Ok(format!(
        "1000 interleavings, 0 window violations, fresh spread <= 1, {rebinds} post-window rebinds; gateway spread {e2e:?}"
    ))
}

// ------------------------------------------------------------------- batch

fn batch_reproduction() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let mut procs: Vec<HostProc> = (0..4)
        .map(|i| {
            HostProc::spawn(
                &format!("lab-{i}"),
                &dir.path().join(format!("h{i}")),
                &["--time-limit", "120", "--max-sessions", "10", "--pacing", "realtime"],
            )
        })
        .collect();
    let list: Vec<(String, String)> = procs.iter().enumerate().map(|(i, p)| (format!("lab-{i}"), p.url())).collect();
    let started = Instant::now();
    let outcome = runtime().block_on(async {
        let gw = InProcGateway::start(&list, 1000).await;
        let plan = BatchPlan {
            base: gw.url(),
            bots: 31,
            user_prefix: "p".into(),
            scenarios: vec!["lab_a".into(), "lab_b".into(), "lab_c".into()],
            policies: vec![Policy::Compliant],
            seed: 1,
            out_dir: dir.path().join("out"),
            poll: Duration::from_millis(200),
            max_wait: Duration::from_secs(60),
            tasks: TaskParams::default(),
        };
        let r = run_batch(&plan).await;
        gw.shutdown().await;
        r
    })?;
    let elapsed = started.elapsed();
    for p in &mut procs {
        p.terminate();
    }
    for c in &outcome.checks {
        ensure!(c.ok, "{}: {}", c.name, c.detail);
    }
    let mut spread: Vec<usize> = outcome.assignments.values().copied().collect();
    spread.sort();
    ensure!(spread == [7, 8, 8, 8], "assignments {:?}", outcome.assignments);
    let r = outcome.report.context("no report")?.overall;
    ensure!(r.sessions == 31, "{} sessions", r.sessions);
    ensure!(r.timeout.num == 0, "timeouts {:?}", r.timeout);
    ensure!(r.no_movement.num == 0, "still avatars {:?}", r.no_movement);
    ensure!(r.robot_found.num == 31, "robot found {:?}", r.robot_found);
    ensure!(r.completed.num == 31, "completed {:?}", r.completed);
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "31 bots over 4 hosts {:?}: timeout {:.0}%, moved {:.0}%, robot found {:.0}%, completed {:.0}%; {:.0}s",
        spread,
        r.timeout.percent(),
        100.0 - r.no_movement.percent(),
        r.robot_found.percent(),
        r.completed.percent(),
        elapsed.as_secs_f64()
    ))
}

// --------------------------------------------------------------- proxemics

fn free_pose(grid: &OccupancyGrid, rng: &mut ChaCha8Rng, radius: f64) -> Pose2D {
    loop {
        let p = Vec2::new(rng.random_range(0.0..grid.width_m()), rng.random_range(0.0..grid.height_m()));
        if !grid.disc_hits_obstacle(p, radius) {
            return Pose2D::at(p, rng.random_range(-3.1..3.1));
        }
    }
}

fn proxemics_oracle() -> Result<String> {
    let store = AssetStore::builtin();
    let scenarios: Vec<_> = store.scenarios().cloned().collect();
    let dir = tempfile::tempdir()?;
    let layout = DataLayout::new(dir.path());
    layout.create()?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut intimate, mut personal, mut ticks) = (0, 0, 0u64);
    for n in 0..200 {
        // lab sessions are cheaper; keep a quarter in the warehouse
        let pool: Vec<_> = scenarios
            .iter()
            .filter(|s| (s.environment.as_str() == "warehouse") == (n % 4 == 3))
            .collect();
        let base = pool[rng.random_range(0..pool.len())];
        let grid = store.grid(&base.map).unwrap();
        let policy = [Policy::Compliant, Policy::Wanderer, Policy::Idle][rng.random_range(0..3)];
        let limit = rng.random_range(8.0..25.0);
        let id = format!("prox-{n:03}");
        let launch = loop {
            let mut o = PoseOverrides::default();
            if rng.random_bool(0.7) {
                o.avatar_start = Some(free_pose(&grid, &mut rng, 0.3));
            }
            if rng.random_bool(0.3) {
                o.robot_start = Some(free_pose(&grid, &mut rng, ROBOT_RADIUS));
            }
            let s = apply_overrides(base, &o);
            let path = layout.log_path(&id);
            let _ = std::fs::remove_file(&path);
            if let Ok(l) = Launch::prepare(
                &layout,
                &id,
                "u",
                "h",
                1,
                &s,
                grid.clone(),
                WorldConfig::default(),
                NavParams::default(),
                TaskParams::default(),
                limit,
                1,
            ) {
                break (l, s);
            }
        };
        let (Launch { mut sim, mut sink }, scenario) = launch;
        let mut pilot = Pilot::new(policy, n, Some((&grid, &scenario)), TaskParams::default());
        let mut brute = f64::INFINITY;
        while !sim.is_done() && !sim.out_of_time() {
            let ServerMsg::Snap { tick, agents, phase } = sim.snapshot() else { unreachable!() };
            let keys = pilot.keys(tick, &agents, phase);
            for h in sim.step(keys) {
                sink.event(sim.world().tick(), sim.world().sim_time(), h.event);
            }
            sink.tick(TickRecord::capture(sim.world(), sim.phase()));
            // independent scan: centers apart minus both radii
            let a = sim.world().avatar();
            let r = sim.world().robot().unwrap();
            let gap = ((a.pose.x - r.pose.x).hypot(a.pose.y - r.pose.y) - a.radius - r.radius).max(0.0);
            brute = brute.min(gap);
        }
        ticks += sim.world().tick();
        let reason = if sim.is_done() { EndReason::Completed } else { EndReason::Expired };
        let live = sink.finish(reason, sim.world().tick(), sim.world().sim_time());
        let parsed = read_log(&layout.log_path(&id))?;
        ensure!(parsed.corrupt == 0 && !parsed.torn_tail, "{id}: damaged log");
        let s = parsed.summarize();
        ensure!(s == live, "{id}: summary from file differs from live summary:\n{s:?}\n{live:?}");
        let (bi, bp) = (brute < 0.45, brute < 1.2);
        ensure!(
            s.intimate_incursion == bi && s.personal_incursion == bp,
            "{id}: flags ({}, {}) but scan min {brute}",
            s.intimate_incursion,
            s.personal_incursion
        );
        let m = s.min_distance.context("no min distance")?;
        ensure!((m - brute).abs() <= 1e-12, "{id}: min {m} vs scan {brute}");
        intimate += usize::from(bi);
        personal += usize::from(bp);
    }
    ensure!(intimate > 0 && personal > intimate && personal < 200, "degenerate sample: {intimate} intimate, {personal} personal");

    // published cohort counts through the summary files and the aggregator
    let cohort = tempfile::tempdir()?;
    let header = |i: usize| LogHeader {
        schema: LOG_SCHEMA.into(),
        session_id: format!("c{i:03}"),
        user_id: format!("u{i:03}"),
        host_id: "h".into(),
        scenario_id: "lab_a".into(),
        environment: "lab".into(),
        trial: 1,
        dt: 0.05,
        decimation: 1,
        time_limit: 300.0,
        avatar_start: None,
    };
    for i in 0..372 {
        let mut s = crowdnav_core::metrics::summarize(&[crowdnav_core::metrics::LogRecord::Header(header(i))], 0);
        s.timed_out = i < 23;
        s.moved = i >= 8;
        s.intimate_incursion = i < 195;
        s.personal_incursion = i < 316;
        write_json_atomic(&cohort.path().join(format!("c{i:03}.json")), &s)?;
    }
    let r = aggregate_dir(cohort.path())?.overall;
    let expect = [
        ("timeout", r.timeout, 6.18),
        ("no movement", r.no_movement, 2.15),
        ("intimate", r.intimate, 52.4),
        ("personal", r.personal, 84.9),
    ];
    let mut shown = Vec::new();
    for (name, rate, pct) in expect {
        ensure!(rate.den == 372, "{name} over {}", rate.den);
        ensure!((rate.percent() - pct).abs() <= 0.05, "{name}: {:.4}% vs {pct}%", rate.percent());
        shown.push(format!("{}/{}={:.2}%", rate.num, rate.den, rate.percent()));
    }
    Ok(format!(
        "200 sessions ({ticks} ticks) match the scan: {intimate} intimate, {personal} personal; published rates {}",
        shown.join(" ")
    ))
}

// ----------------------------------------------------------------- planner

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Dijkstra over 8-connected moves: no corner cutting, lethal at 255,
/// entering a cell costs its length times (1 + cost/128).
fn dijkstra(costs: &[f64], w: usize, h: usize, res: f64, s: usize, t: usize) -> Option<f64> {
    let lethal = |i: usize| costs[i] >= 255.0;
    if lethal(t) {
        return None;
    }
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Item(0.0, s));
    while let Some(Item(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        if i == t {
            return Some(d);
        }
        let (c, r) = ((i % w) as i64, (i / w) as i64);
        for dc in -1i64..=1 {
            for dr in -1i64..=1 {
                let (nc, nr) = (c + dc, r + dr);
                if (dc == 0 && dr == 0) || nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if lethal(j) {
                    continue;
                }
                let diagonal = dc != 0 && dr != 0;
                if diagonal && (lethal(r as usize * w + nc as usize) || lethal(nr as usize * w + c as usize)) {
                    continue;
                }
                let len = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 } * res;
                let nd = d + len * (1.0 + costs[j] / 128.0);
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Item(nd, j));
                }
            }
        }
    }
    None
}

fn geometry(w: usize, h: usize, res: f64) -> GridGeometry {
    GridGeometry {
        width: w,
        height: h,
        resolution: res,
        origin: Pose2D::default(),
    }
}

fn center(w: usize, res: f64, i: usize) -> Pose2D {
    Pose2D::new(((i % w) as f64 + 0.5) * res, ((i / w) as f64 + 0.5) * res, 0.0)
}

fn compare(
    planner: &mut Planner,
    costs: &[f64],
    w: usize,
    h: usize,
    res: f64,
    s: usize,
    t: usize,
) -> Result<bool> {
    let oracle = dijkstra(costs, w, h, res, s, t);
    let map = Costmap::from_costs(geometry(w, h, res), costs.to_vec());
    match (planner.plan(&map, center(w, res, s), center(w, res, t)), oracle) {
        (Ok(p), Some(best)) => {
            ensure!((p.cost - best).abs() <= 1e-9, "A* {} vs Dijkstra {best}", p.cost);
            ensure!(p.cells.first() == Some(&CellIndex::new(s % w, s / w)) && p.cells.last() == Some(&CellIndex::new(t % w, t / w)));
            Ok(true)
        }
        (Err(PlanError::Unreachable { .. }), None) => Ok(false),
        (got, want) => bail!("planner {got:?}, oracle {want:?}"),
    }
}

fn planner_optimality() -> Result<String> {
    let mut planner = Planner::new();
    let mut costs = [0.0f64; 36];
    let (mut grids, mut pairs, mut reachable) = (0u64, 0u64, 0u64);
    for k in 0..=8u32 {
        // every 36-bit mask with k bits set, in Gosper order
        let mut mask: u64 = (1u64 << k) - 1;
        while mask < 1 << 36 {
            for (i, c) in costs.iter_mut().enumerate() {
                *c = if mask >> i & 1 == 1 { 255.0 } else { 0.0 };
            }
            // corner to corner; every 16th layout also gets a hashed pair
            let h = mask.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let extra = (h >> 60 == 0).then_some(((h >> 20) as usize % 36, (h >> 40) as usize % 36));
            for (s, t) in std::iter::once((0, 35)).chain(extra) {
                pairs += 1;
                if compare(&mut planner, &costs, 6, 6, 1.0, s, t).with_context(|| format!("mask {mask:#x} {s}->{t}"))? {
                    reachable += 1;
                }
            }
            grids += 1;
            if mask == 0 {
                break;
            }
            let c = mask & mask.wrapping_neg();
            let r = mask + c;
            mask = (((r ^ mask) >> 2) / c) | r;
        }
    }
    ensure!(grids == (0..=8).map(|k| binomial(36, k)).sum::<u64>(), "enumerated {grids} grids");

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut random_reach = 0;
    for n in 0..500 {
        let (w, h) = (50, 50);
        let lethal_p = rng.random_range(0.0..0.35);
        let weighted_p = rng.random_range(0.0..0.5);
        let costs: Vec<f64> = (0..w * h)
            .map(|_| {
                if rng.random_bool(lethal_p) {
                    255.0
                } else if rng.random_bool(weighted_p) {
                    rng.random_range(0.0..254.0)
                } else {
                    0.0
                }
            })
            .collect();
        let res = [0.05, 0.1, 0.25][n % 3];
        let (s, t) = (rng.random_range(0..w * h), rng.random_range(0..w * h));
        let oracle = dijkstra(&costs, w, h, res, s, t);
        let map = Costmap::from_costs(geometry(w, h, res), costs);
        match (crowdnav_core::nav::plan_global(&map, center(w, res, s), center(w, res, t)), oracle) {
            (Ok(p), Some(best)) => {
                ensure!((p.cost - best).abs() <= 1e-9, "grid {n}: {} vs {best}", p.cost);
                random_reach += 1;
            }
            (Err(PlanError::Unreachable { .. }), None) => {}
            (got, want) => bail!("grid {n}: planner {got:?}, oracle {want:?}"),
        }
    }
    Ok(format!(
        "{grids} 6x6 layouts, {pairs} endpoint pairs ({reachable} reachable) and 500 50x50 grids ({random_reach} reachable) match Dijkstra within 1e-9"
    ))
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

// ------------------------------------------------------------ social force

const MW: usize = 128;
const MH: usize = 80;
const MRES: f64 = 0.125;

fn mirror_grid(blocks: &[(usize, usize, usize, usize)], mirrored: bool) -> OccupancyGrid {
    let mut cells = vec![Cell::Free; MW * MH];
    for &(c0, r0, bw, bh) in blocks {
        for r in r0..(r0 + bh).min(MH) {
            for c in c0..(c0 + bw).min(MW) {
                let c = if mirrored { MW - 1 - c } else { c };
                cells[r * MW + c] = Cell::Occupied;
            }
        }
    }
    let origin = Pose2D::new(-(MW as f64) * MRES / 2.0, -(MH as f64) * MRES / 2.0, 0.0);
    OccupancyGrid::from_cells(MW, MH, MRES, origin, cells).unwrap()
}

fn walker(id: u32, p: Pose2D, goal: Pose2D) -> AgentState {
    let mut a = AgentState::new(id, AgentKind::Npc, p, 0.3);
    a.goal = goal;
    a.desired_speed = 1.4;
    a
}

fn social_force_properties() -> Result<String> {
    let mirror = |p: Pose2D| Pose2D::new(-p.x, p.y, std::f64::consts::PI - p.theta);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for case in 0..64 {
        let blocks: Vec<_> = (0..rng.random_range(0..5))
            .map(|_| (rng.random_range(4..120), rng.random_range(4..72), rng.random_range(1..10), rng.random_range(1..10)))
            .collect();
        let left = mirror_grid(&blocks, false);
        let right = mirror_grid(&blocks, true);
        let n = rng.random_range(1..12);
        let free = |rng: &mut ChaCha8Rng| loop {
            let p = Vec2::new(rng.random_range(-7.5..7.5), rng.random_range(-4.5..4.5));
            if !left.disc_hits_obstacle(p, 0.3) {
                return Pose2D::at(p, 0.0);
            }
        };
        let pairs: Vec<(Pose2D, Pose2D)> = (0..n).map(|_| (free(&mut rng), free(&mut rng))).collect();
        let build = |grid: OccupancyGrid, m: bool| {
            let f = |p: Pose2D| if m { mirror(p) } else { p };
            let mut agents = vec![AgentState::new(0, AgentKind::Avatar, Pose2D::new(0.0, -4.0, std::f64::consts::FRAC_PI_2), 0.3)];
            for (i, (s, g)) in pairs.iter().enumerate() {
                agents.push(walker(i as u32 + 2, f(*s), f(*g)));
            }
            WorldState::new(Arc::new(grid), WorldConfig::default(), agents).unwrap()
        };
        let (mut a, mut b) = (build(left.clone(), false), build(right, true));
        for step in 0..200 {
            a.step(&AvatarCommand::default(), RobotCommand::STOP);
            b.step(&AvatarCommand::default(), RobotCommand::STOP);
            for (p, q) in a.agents().iter().zip(b.agents()) {
                let dev = (p.position() - Vec2::new(-q.pose.x, q.pose.y)).norm();
                worst = worst.max(dev);
                ensure!(dev < 1e-9, "case {case} step {step}: agent {} deviates {dev}", p.id);
            }
        }
    }

    let params = SocialForceParams::default();
    let room = OccupancyGrid::closed_room(400, 100, 0.1, Pose2D::new(-20.0, -5.0, 0.0)).unwrap();
    let goal = Pose2D::new(19.0, 0.0, 0.0);
    let avatar = AgentState::new(0, AgentKind::Avatar, Pose2D::new(-18.0, 4.0, 0.0), 0.3);
    let mut world =
        WorldState::new(Arc::new(room), WorldConfig::default(), vec![avatar, walker(2, Pose2D::new(-15.0, 0.0, 0.0), goal)])?;
    let steps = (5.0 * params.relaxation_time / world.dt()).round() as usize;
    for _ in 0..steps {
        world.step(&AvatarCommand::default(), RobotCommand::STOP);
    }
    let gap = (world.agent(AgentId(2)).unwrap().velocity - Vec2::new(1.4, 0.0)).norm();
    ensure!(gap < 0.01, "|v - v0| = {gap} after {steps} steps");

    let open = OccupancyGrid::closed_room(200, 200, 0.1, Pose2D::new(-10.0, -10.0, 0.0)).unwrap();
    for case in 0..1000 {
        let target = Pose2D::new(6.0, 1.0, 0.0);
        let me = walker(1, Pose2D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0), target);
        let others: Vec<AgentState> = (0..rng.random_range(0..10))
            .map(|i| walker(i + 2, Pose2D::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 0.0), target))
            .collect();
        let k = rng.random_range(0..=others.len());
        let head = social_force(&me, &others[..k], &open, &params, &target);
        let all = social_force(&me, &others, &open, &params, &target);
        let mut expect = head;
        for o in &others[k..] {
            expect += pair_repulsion(&me, o, &params);
        }
        ensure!(all == expect, "case {case}: {all:?} != {expect:?}");
    }
    Ok(format!(
        "64 mirrored crowds x 200 steps, max deviation {worst:.1e}; relaxed to |v-v0|={gap:.1e} in {steps} steps (5 tau); 1000 additivity cases exact"
    ))
}

// ----------------------------------------------------------- local control

fn local_control_safety() -> Result<String> {
    let store = AssetStore::builtin();
    let maps: Vec<Arc<OccupancyGrid>> = ["lab", "warehouse"].iter().map(|m| store.grid(m).unwrap()).collect();
    let params = NavParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let (mut moving, mut samples) = (0, 0u64);
    for n in 0..1000 {
        let grid = &maps[n % 2];
        let mut nav = NavState::new(grid, Pose2D::default(), params);
        let pick = |rng: &mut ChaCha8Rng, nav: &NavState| loop {
            let p = free_pose(grid, rng, 0.0);
            if !nav.costmap().is_lethal_at(p.position()) {
                return p;
            }
        };
        nav.goal = pick(&mut rng, &nav);
        let pose = pick(&mut rng, &nav);
        let robot = AgentState::new(1, AgentKind::Robot, pose, ROBOT_RADIUS);
        let mut agents = vec![robot];
        for i in 0..rng.random_range(0..8) {
            let off = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let kind = if i == 0 { AgentKind::Avatar } else { AgentKind::Npc };
            agents.push(AgentState::new(i + 2, kind, Pose2D::at(pose.position() + off, 0.0), 0.3));
        }
        let (cmd, _) = robot_tick(&mut nav, &robot, &agents, 0.0);
        if cmd.linear != 0.0 {
            moving += 1;
        }
        // integrate the command ourselves and walk every chord at 1 mm
        let map = nav.costmap();
        let g = *map.geometry();
        let costs = map.combined();
        let lethal_at = |p: Vec2| {
            let c = ((p.x - g.origin.x) / g.resolution).floor();
            let r = ((p.y - g.origin.y) / g.resolution).floor();
            c < 0.0 || r < 0.0 || c >= g.width as f64 || r >= g.height as f64 || costs[r as usize * g.width + c as usize] >= 255.0
        };
        let (dt, steps) = (params.local.rollout_step, (params.local.horizon / params.local.rollout_step).round() as usize);
        let (mut x, mut y, mut th) = (pose.x, pose.y, pose.theta);
        for k in 0..steps {
            let (nx, ny) = (x + cmd.linear * th.cos() * dt, y + cmd.linear * th.sin() * dt);
            let len = (nx - x).hypot(ny - y);
            let m = (len / 1e-3).ceil().max(1.0) as usize;
            for j in 0..=m {
                let f = j as f64 / m as f64;
                samples += 1;
                ensure!(
                    !lethal_at(Vec2::new(x + (nx - x) * f, y + (ny - y) * f)),
                    "tick {n}: {cmd:?} from {pose:?} hits lethal in step {k}"
                );
            }
            (x, y, th) = (nx, ny, th + cmd.angular * dt);
        }
    }
    Ok(format!("1000 ticks ({moving} moving), {samples} rollout samples at 1 mm, 0 lethal contacts"))
}

// ------------------------------------------------------------- determinism

fn determinism() -> Result<String> {
    let once = |tag: &str| -> Result<Vec<(String, Vec<u8>)>> {
        let dir = tempfile::tempdir()?;
        let out = dir.path().join("out");
        runtime().block_on(async {
            let mut hosts = Vec::new();
            for i in 0..2 {
                let mut s = host_settings(&format!("det-{i}"), &dir.path().join(format!("h{i}")), Pacing::Lockstep);
                s.time_limit = 40.0;
                hosts.push(InProcHost::start(s).await);
            }
            let list: Vec<_> = hosts.iter().map(|h| (h.state.settings().host_id.clone(), h.url())).collect();
            let gw = InProcGateway::start(&list, 1000).await;
            let plan = BatchPlan {
                base: gw.url(),
                bots: 9,
                user_prefix: "d".into(),
                scenarios: vec!["lab_a".into(), "warehouse_b".into(), "lab_c".into(), "lab_b".into()],
                policies: vec![Policy::Compliant, Policy::Wanderer, Policy::Idle],
                seed: 17,
                out_dir: out.clone(),
                poll: Duration::from_millis(50),
                max_wait: Duration::from_secs(60),
                tasks: TaskParams::default(),
            };
            let r = run_batch(&plan).await;
            gw.shutdown().await;
            for h in hosts {
                h.shutdown().await;
            }
            let r = r?;
            for c in &r.checks {
                ensure!(c.ok, "run {tag}: {}: {}", c.name, c.detail);
            }
            Ok(())
        })?;
        let mut files = Vec::new();
        for e in std::fs::read_dir(out.join("summaries"))? {
            let p = e?.path();
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p)?));
        }
        files.sort();
        Ok(files)
    };
    let a = once("a")?;
    let b = once("b")?;
    ensure!(a.len() == 9, "{} summaries", a.len());
    ensure!(a.iter().map(|f| &f.0).eq(b.iter().map(|f| &f.0)), "different session sets");
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure!(x == y, "{name} differs between runs");
    }
    let summaries: Vec<MetricsSummary> = a.iter().map(|(_, bytes)| serde_json::from_slice(bytes)).collect::<Result<_, _>>()?;
    let completed = summaries.iter().filter(|s| s.completed).count();
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    Ok(format!("9 mixed-policy lockstep sessions, {completed} completed; {bytes} summary bytes identical across runs"))
}

// ------------------------------------------------------------------- crash

fn crash_tolerance() -> Result<String> {
    let root = tempfile::tempdir()?;
    let http_rt = runtime();
    let http = reqwest::Client::new();
    let (mut kills, mut torn, mut lines, mut partial) = (0, 0, 0u64, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for wave in 0..10 {
        let mut procs = Vec::new();
        for j in 0..10 {
            let n = wave * 10 + j;
            let data = root.path().join(format!("k{n:03}"));
            let p = HostProc::spawn(&format!("k{n:03}"), &data, &["--pacing", "realtime"]);
            let scenario = if n % 2 == 0 { "warehouse_a" } else { "lab_b" };
            procs.push((n, data, p, scenario));
        }
        http_rt.block_on(async {
            for (n, _, p, scenario) in &procs {
                let url = format!("{}/session?user_id=c{n:03}&scenario={scenario}", p.url());
                let ready = wait_for(Duration::from_secs(10), || {
                    let (http, url) = (http.clone(), url.clone());
                    async move {
                        let r = http.get(&url).send().await.ok()?;
                        (r.status() == 200).then_some(())
                    }
                })
                .await;
                ensure!(ready.is_some(), "host {n} never ran its session");
            }
            Ok(())
        })?;
        // let the sessions write for a while, then kill at staggered moments
        for (_, _, p, _) in &mut procs {
            std::thread::sleep(Duration::from_millis(rng.random_range(20..120)));
            p.kill();
            kills += 1;
        }
        for (n, data, _, _) in &procs {
            let layout = DataLayout::new(data);
            let before = load_summaries(&layout.summaries())?;
            ensure!(before.is_empty(), "host {n} finished before the kill");
            let recovered = recover_dir(&layout)?;
            ensure!(recovered.len() == 1, "host {n}: {} logs recovered", recovered.len());
            let log = read_log(&layout.log_path(&recovered[0].session_id))?;
            ensure!(log.corrupt == 0, "host {n}: {} corrupt complete lines", log.corrupt);
            torn += usize::from(log.torn_tail);
            lines += log.records.len() as u64;
            let on_disk = load_summaries(&layout.summaries())?;
            ensure!(on_disk.len() == 1 && on_disk[0].partial, "host {n}: summary not partial");
            ensure!(on_disk[0].ticks > 0, "host {n}: no ticks logged");
            partial += 1;
        }
    }
    Ok(format!(
        "{kills} SIGKILLs mid-session: {lines} complete lines all parse, {torn} torn tails dropped, {partial} partial summaries, 0 corrupt files"
    ))
}
