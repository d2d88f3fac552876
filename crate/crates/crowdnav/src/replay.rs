//! Text re-rendering of a session log, for looking at a run without the
//! browser client.

use std::fmt::Write as _;

use crowdnav_core::metrics::{LogRecord, TickRecord};
use crowdnav_core::{AgentKind, OccupancyGrid};

use crate::telemetry::ParsedLog;

/// Draws one frame: `#` walls, `A` avatar, `R` robot, `n` NPCs, `L` the
/// landmark. One character covers `scale` meters.
pub fn render_frame(grid: &OccupancyGrid, tick: &TickRecord, landmark: Option<(f64, f64)>, scale: f64) -> String {
    let w = (grid.width() as f64 * grid.resolution() / scale).ceil() as usize;
    let h = (grid.height() as f64 * grid.resolution() / scale).ceil() as usize;
    let mut rows = vec![vec![' '; w]; h];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, ch) in row.iter_mut().enumerate() {
            let x = (c as f64 + 0.5) * scale;
            let y = (r as f64 + 0.5) * scale;
            if grid.is_occupied_at(crowdnav_core::Vec2::new(x, y)) {
                *ch = '#';
            }
        }
    }
    let mut put = |x: f64, y: f64, ch: char| {
        let c = (x / scale).floor();
        let r = (y / scale).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
            rows[r as usize][c as usize] = ch;
        }
    };
    if let Some((x, y)) = landmark {
        put(x, y, 'L');
    }
    for a in &tick.agents {
        let ch = match a.kind {
            AgentKind::Avatar => 'A',
            AgentKind::Robot => 'R',
            AgentKind::Npc => 'n',
        };
        put(a.x, a.y, ch);
    }
    let mut out = String::new();
    // north up
    for row in rows.iter().rev() {
        out.extend(row.iter());
        out.push('\n');
    }
    out
}

/// Header, every `every`-th logged tick as a frame, events inline, and the
/// summary at the end.
pub fn render_log(log: &ParsedLog, grid: Option<&OccupancyGrid>, landmark: Option<(f64, f64)>, every: u64) -> String {
    let mut out = String::new();
    let mut logged = 0u64;
    for r in &log.records {
        match r {
            LogRecord::Header(h) => {
                let _ = writeln!(
                    out,
                    "session {} user {} on {} scenario {} ({}) trial {}",
                    h.session_id, h.user_id, h.host_id, h.scenario_id, h.environment, h.trial
                );
            }
            LogRecord::Tick(t) => {
                logged += 1;
                if !(logged - 1).is_multiple_of(every.max(1)) {
                    continue;
                }
                let _ = writeln!(out, "-- tick {} t={:.2}s phase {}", t.tick, t.t, t.phase.as_str());
                match grid {
                    Some(g) => out += &render_frame(g, t, landmark, 0.5),
                    None => {
                        for a in &t.agents {
                            let _ = writeln!(out, "   {:>3} {:<6} {:>7.2} {:>7.2} {:>6.2}", a.id, a.kind.as_str(), a.x, a.y, a.th);
                        }
                    }
                }
            }
            LogRecord::Event(e) => {
                let _ = writeln!(out, "   event at tick {}: {}", e.tick, serde_json::to_string(&e.event).unwrap_or_default());
            }
            LogRecord::End(o) => {
                let _ = writeln!(out, "end: {:?} at tick {} t={:.2}s{}", o.reason, o.tick, o.t, if o.degraded { " (degraded)" } else { "" });
            }
        }
    }
    if log.corrupt > 0 || log.torn_tail {
        let _ = writeln!(out, "log damage: {} unreadable lines, torn tail {}", log.corrupt, log.torn_tail);
    }
    let s = log.summarize();
    let _ = writeln!(
        out,
        "summary: min distance {:?}, intimate {}, personal {}, moved {}, robot found {}, completed {}, partial {}",
        s.min_distance, s.intimate_incursion, s.personal_incursion, s.moved, s.robot_found, s.completed, s.partial
    );
    out
}
