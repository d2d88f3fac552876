//! Keyboard-driven avatar kinematics and blocked disc motion.

use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::agent::AgentState;
use crate::geometry::Vec2;
use crate::grid::OccupancyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Key {
    W,
    A,
    S,
    D,
}

impl Key {
    pub const ALL: [Key; 4] = [Key::W, Key::A, Key::S, Key::D];

    fn bit(self) -> u8 {
        match self {
            Key::W => 1,
            Key::A => 2,
            Key::S => 4,
            Key::D => 8,
        }
    }

    pub fn parse(s: &str) -> Option<Key> {
        match s {
            "W" | "w" => Some(Key::W),
            "A" | "a" => Some(Key::A),
            "S" | "s" => Some(Key::S),
            "D" | "d" => Some(Key::D),
            _ => None,
        }
    }
}

/// Set of held movement keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Key>", into = "Vec<Key>")]
pub struct KeySet(u8);

impl KeySet {
    pub const EMPTY: KeySet = KeySet(0);

    pub fn contains(self, key: Key) -> bool {
        self.0 & key.bit() != 0
    }

    pub fn insert(&mut self, key: Key) {
        self.0 |= key.bit();
    }

    pub fn with(mut self, key: Key) -> Self {
        self.insert(key);
        self
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Key> {
        Key::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl FromIterator<Key> for KeySet {
    fn from_iter<I: IntoIterator<Item = Key>>(iter: I) -> Self {
        let mut set = KeySet::EMPTY;
        for k in iter {
            set.insert(k);
        }
        set
    }
}

impl From<Vec<Key>> for KeySet {
    fn from(keys: Vec<Key>) -> Self {
        keys.into_iter().collect()
    }
}

impl From<KeySet> for Vec<Key> {
    fn from(set: KeySet) -> Self {
        set.iter().collect()
    }
}

/// Camera requests only change the client's zoom; the simulation ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Camera {
    Raise,
    Lower,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AvatarCommand {
    pub keys_down: KeySet,
    #[serde(default)]
    pub camera: Camera,
}

impl AvatarCommand {
    pub fn keys(keys: &[Key]) -> Self {
        Self {
            keys_down: keys.iter().copied().collect(),
            camera: Camera::None,
        }
    }

    /// World-frame unit direction: W is +y, D is +x. Opposing keys cancel
    /// and diagonals are normalized.
    pub fn direction(&self) -> Vec2 {
        let k = self.keys_down;
        let axis = |pos: Key, neg: Key| (k.contains(pos) as i8 - k.contains(neg) as i8) as f64;
        let (x, y) = (axis(Key::D, Key::A), axis(Key::W, Key::S));
        if x != 0.0 && y != 0.0 {
            Vec2::new(x * FRAC_1_SQRT_2, y * FRAC_1_SQRT_2)
        } else {
            Vec2::new(x, y)
        }
    }
}

/// Largest fraction of `step` the disc can travel before touching `other`.
/// Already-overlapping pairs may only separate.
fn agent_fraction(p: Vec2, radius: f64, step: Vec2, other: &AgentState) -> f64 {
    let rel = p - other.position();
    let reach = radius + other.radius;
    let c = rel.norm_squared() - reach * reach;
    let b = rel.dot(step);
    if c <= 0.0 {
        return if b < 0.0 { 0.0 } else { 1.0 };
    }
    let a = step.norm_squared();
    if a == 0.0 || b >= 0.0 {
        return 1.0;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return 1.0;
    }
    let t = (-b - libm::sqrt(disc)) / a;
    t.clamp(0.0, 1.0)
}

fn wall_fraction(grid: &OccupancyGrid, p: Vec2, radius: f64, step: Vec2, upper: f64) -> f64 {
    if upper <= 0.0 {
        return 0.0;
    }
    if grid.disc_hits_obstacle(p, radius) {
        let clearance = |q: Vec2| grid.nearest_obstacle(q, radius + 1.0).map_or(f64::INFINITY, |(_, d)| d);
        return if clearance(p + step * upper) >= clearance(p) { upper } else { 0.0 };
    }
    if !grid.disc_hits_obstacle(p + step * upper, radius) {
        return upper;
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if grid.disc_hits_obstacle(p + step * mid, radius) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn allowed_fraction(grid: &OccupancyGrid, others: &[AgentState], agent: &AgentState, step: Vec2) -> f64 {
    let p = agent.position();
    let mut s: f64 = 1.0;
    for other in others.iter().filter(|o| o.id != agent.id) {
        s = s.min(agent_fraction(p, agent.radius, step, other));
    }
    wall_fraction(grid, p, agent.radius, step, s)
}

/// Moves a disc by `step`, stopping at walls and other agents. If the full
/// move is blocked, the axis-aligned components are tried so the disc
/// slides along whatever blocks it. Returns the displacement applied.
pub fn move_disc(grid: &OccupancyGrid, others: &[AgentState], agent: &AgentState, step: Vec2) -> Vec2 {
    if step == Vec2::ZERO {
        return Vec2::ZERO;
    }
    let candidates = [step, Vec2::new(step.x, 0.0), Vec2::new(0.0, step.y)];
    let mut best = Vec2::ZERO;
    for candidate in candidates {
        if candidate == Vec2::ZERO {
            continue;
        }
        let s = allowed_fraction(grid, others, agent, candidate);
        if s >= 1.0 {
            return candidate;
        }
        let moved = candidate * s;
        if moved.norm_squared() > best.norm_squared() {
            best = moved;
        }
    }
    best
}

/// Advances the avatar by `walk_speed · dt` along the command direction,
/// blocked by walls and `others`.
pub fn apply_avatar_command(
    avatar: &AgentState,
    cmd: &AvatarCommand,
    dt: f64,
    walk_speed: f64,
    grid: &OccupancyGrid,
    others: &[AgentState],
) -> AgentState {
    let mut next = *avatar;
    let dir = cmd.direction();
    if dir == Vec2::ZERO {
        next.velocity = Vec2::ZERO;
        return next;
    }
    let moved = move_disc(grid, others, avatar, dir * (walk_speed * dt));
    let pos = avatar.position() + moved;
    next.pose = crate::geometry::Pose2D::at(pos, dir.angle());
    next.velocity = moved * (1.0 / dt);
    next
}
