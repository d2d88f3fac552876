//! Sticky user-to-host routing with round-robin assignment of new users.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::Millis;

/// Two hours.
pub const DEFAULT_STICKY_WINDOW_MS: Millis = 7_200_000;
/// Consecutive failed probes before a host is taken out of rotation.
pub const FAILURES_TO_DOWN: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostEntry {
    pub host_id: String,
    /// Base URL, e.g. `http://127.0.0.1:7101`.
    pub endpoint: String,
    pub health: Health,
    pub consecutive_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StickyBinding {
    pub user_id: String,
    pub host: usize,
    pub bound_at: Millis,
    pub expiry: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("no healthy host available")]
    NoHealthyHost,
    #[error("bound host {host_id} is down")]
    BoundHostDown { host: usize, host_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub host: usize,
    /// A new binding was created by this call.
    pub fresh: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolStatus {
    pub hosts: Vec<HostEntry>,
    pub next: usize,
    pub live_bindings: usize,
    pub sticky_window_s: u64,
}

#[derive(Debug, Clone)]
pub struct Router {
    hosts: Vec<HostEntry>,
    next: usize,
    bindings: BTreeMap<String, StickyBinding>,
    window: Millis,
}

impl Router {
    /// Hosts start up; `(host_id, endpoint)` pairs in rotation order.
    pub fn new(hosts: Vec<(String, String)>, window: Millis) -> Self {
        Self {
            hosts: hosts
                .into_iter()
                .map(|(host_id, endpoint)| HostEntry {
                    host_id,
                    endpoint,
                    health: Health::Up,
                    consecutive_failures: 0,
                })
                .collect(),
            next: 0,
            bindings: BTreeMap::new(),
            window,
        }
    }

    pub fn hosts(&self) -> &[HostEntry] {
        &self.hosts
    }

    pub fn host(&self, index: usize) -> &HostEntry {
        &self.hosts[index]
    }

    pub fn binding(&self, user_id: &str, now: Millis) -> Option<&StickyBinding> {
        self.bindings.get(user_id).filter(|b| now < b.expiry)
    }

    /// Routes one request. A live binding wins and has its expiry slid
    /// forward; a binding to a down host is kept and reported.
    pub fn assign(&mut self, user_id: &str, now: Millis) -> Result<Assignment, RouteError> {
        if let Some(b) = self.bindings.get_mut(user_id).filter(|b| now < b.expiry) {
            b.expiry = now + self.window;
            let host = b.host;
            if self.hosts[host].health == Health::Down {
                return Err(RouteError::BoundHostDown {
                    host,
                    host_id: self.hosts[host].host_id.clone(),
                });
            }
            return Ok(Assignment { host, fresh: false });
        }
        let n = self.hosts.len();
        let host = (0..n)
            .map(|k| (self.next + k) % n)
            .find(|&i| self.hosts[i].health == Health::Up)
            .ok_or(RouteError::NoHealthyHost)?;
        self.next = (host + 1) % n;
        self.bindings.insert(
            user_id.into(),
            StickyBinding {
                user_id: user_id.into(),
                host,
                bound_at: now,
                expiry: now + self.window,
            },
        );
        Ok(Assignment { host, fresh: true })
    }

    /// Feeds one health probe result. Returns true when the host's health
    /// changed.
    pub fn record_probe(&mut self, host: usize, ok: bool) -> bool {
        let h = &mut self.hosts[host];
        let before = h.health;
        if ok {
            h.consecutive_failures = 0;
            h.health = Health::Up;
        } else {
            h.consecutive_failures = h.consecutive_failures.saturating_add(1);
            if h.consecutive_failures >= FAILURES_TO_DOWN {
                h.health = Health::Down;
            }
        }
        before != h.health
    }

    /// Drops bindings that can no longer match.
    pub fn purge(&mut self, now: Millis) -> usize {
        let before = self.bindings.len();
        self.bindings.retain(|_, b| now < b.expiry);
        before - self.bindings.len()
    }

    pub fn status(&self, now: Millis) -> PoolStatus {
        PoolStatus {
            hosts: self.hosts.clone(),
            next: self.next,
            live_bindings: self.bindings.values().filter(|b| now < b.expiry).count(),
            sticky_window_s: self.window / 1000,
        }
    }
}
