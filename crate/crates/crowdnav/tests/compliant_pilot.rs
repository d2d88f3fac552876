//! The scripted compliant participant finishes every shipped scenario when
//! driven straight through the simulator.

use std::time::Instant;

use crowdnav::assets::AssetStore;
use crowdnav::bots::{Pilot, Policy};
use crowdnav::protocol::ServerMsg;
use crowdnav::worker::SessionSim;
use crowdnav_core::nav::NavParams;
use crowdnav_core::task::{Phase, TaskParams};
use crowdnav_core::WorldConfig;

#[test]
fn compliant_pilot_completes_every_scenario() {
    let store = AssetStore::builtin();
    for s in store.scenarios() {
        let grid = store.grid(&s.map).unwrap();
        let mut sim = SessionSim::new(s, grid.clone(), WorldConfig::default(), NavParams::default(), TaskParams::default(), 120.0).unwrap();
        let mut pilot = Pilot::new(Policy::Compliant, 1, Some((&grid, s)), TaskParams::default());
        let started = Instant::now();
        let mut found = None;
        while !sim.is_done() && !sim.out_of_time() {
            let ServerMsg::Snap { tick, agents, phase } = sim.snapshot() else { unreachable!() };
            let keys = pilot.keys(tick, &agents, phase);
            sim.step(keys);
            if found.is_none() && sim.phase() != Phase::FindRobot {
                found = Some(sim.world().sim_time());
            }
        }
        let ticks = sim.world().tick();
        println!(
            "{}: phase {:?} at t={:.1}s, found at {:?}, {:.3} ms/tick",
            s.id,
            sim.phase(),
            sim.world().sim_time(),
            found,
            started.elapsed().as_secs_f64() * 1e3 / ticks as f64
        );
        assert!(sim.is_done(), "{} did not finish", s.id);
    }
}
