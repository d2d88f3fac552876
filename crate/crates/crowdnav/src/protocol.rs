//! Realtime wire protocol. Every message is one text frame holding a JSON
//! object whose `t` field names the message type. Unknown fields are
//! ignored and unknown types are skipped, so either side can grow.
//!
//! Client to server:
//! - `{"t":"keys","down":["W","D"]}` replaces the set of held keys
//! - `{"t":"ping","id":7}` asks for a `pong` with the same id
//!
//! Server to client:
//! - `{"t":"snap","tick":n,"agents":[{"id","kind","x","y","th"}],"phase":p}`
//! - `{"t":"event","tick":n,"type":...}` for collisions and task changes
//! - `{"t":"pong","id":7}`
//! - `{"t":"end","code":"...","reason":"completed"}`, then the server closes

use crowdnav_core::avatar::KeySet;
use crowdnav_core::metrics::{EndReason, SessionEvent};
use crowdnav_core::task::Phase;
use crowdnav_core::{AgentKind, WorldState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum ClientMsg {
    Keys {
        down: KeySet,
    },
    Ping {
        id: u64,
    },
    #[serde(other)]
    Unknown,
}

impl ClientMsg {
    /// `None` for frames that are not a well-formed message.
    pub fn parse(text: &str) -> Option<ClientMsg> {
        serde_json::from_str(text).ok()
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("client message serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapAgent {
    pub id: u32,
    pub kind: AgentKind,
    pub x: f64,
    pub y: f64,
    pub th: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum ServerMsg {
    Snap {
        tick: u64,
        agents: Vec<SnapAgent>,
        phase: Phase,
    },
    Event {
        tick: u64,
        #[serde(flatten)]
        event: SessionEvent,
        /// Present on task changes: what the participant should do now.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instruction: Option<String>,
    },
    Pong {
        id: u64,
    },
    End {
        code: String,
        reason: EndReason,
    },
    #[serde(other)]
    Unknown,
}

impl ServerMsg {
    pub fn snap(world: &WorldState, phase: Phase) -> Self {
        ServerMsg::Snap {
            tick: world.tick(),
            agents: world
                .agents()
                .iter()
                .map(|a| SnapAgent {
                    id: a.id.0,
                    kind: a.kind,
                    x: a.pose.x,
                    y: a.pose.y,
                    th: a.pose.theta,
                })
                .collect(),
            phase,
        }
    }

    pub fn parse(text: &str) -> Option<ServerMsg> {
        serde_json::from_str(text).ok()
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Token shown when a session ends, for the participant to paste back into
/// the survey. Derived from the session id so it can be checked offline.
pub fn completion_code(session_id: &str) -> String {
    // FNV-1a, 64 bit
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in session_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{:08X}", (h ^ (h >> 32)) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crowdnav_core::collision::{ContactKind, PairKind};
    use crowdnav_core::Key;

    #[test]
    fn key_message_layout() {
        let msg = ClientMsg::Keys {
            down: [Key::W, Key::D].into_iter().collect(),
        };
        assert_eq!(msg.to_text(), r#"{"t":"keys","down":["W","D"]}"#);
        assert_eq!(ClientMsg::parse(r#"{"t":"keys","down":["W","D"],"seq":4}"#), Some(msg));
        assert_eq!(ClientMsg::parse(r#"{"t":"keys","down":[]}"#), Some(ClientMsg::Keys { down: KeySet::EMPTY }));
    }

    #[test]
    fn ping_and_unknown() {
        assert_eq!(ClientMsg::parse(r#"{"t":"ping","id":9}"#), Some(ClientMsg::Ping { id: 9 }));
        assert_eq!(ClientMsg::parse(r#"{"t":"zoom","level":2}"#), Some(ClientMsg::Unknown));
        assert_eq!(ClientMsg::parse(r#"{"down":["W"]}"#), None);
        assert_eq!(ClientMsg::parse("not json"), None);
    }

    #[test]
    fn snap_layout() {
        let msg = ServerMsg::Snap {
            tick: 3,
            agents: vec![SnapAgent {
                id: 0,
                kind: AgentKind::Avatar,
                x: 1.5,
                y: 2.0,
                th: 0.0,
            }],
            phase: Phase::ReachLandmark,
        };
        let text = msg.to_text();
        assert_eq!(
            text,
            r#"{"t":"snap","tick":3,"agents":[{"id":0,"kind":"avatar","x":1.5,"y":2.0,"th":0.0}],"phase":"reach_landmark"}"#
        );
        assert_eq!(ServerMsg::parse(&text), Some(msg));
    }

    #[test]
    fn event_and_end_layout() {
        let ev = ServerMsg::Event {
            tick: 8,
            event: SessionEvent::Collision {
                a: 0,
                b: 1,
                pair: PairKind::AvatarRobot,
                contact: ContactKind::Push,
            },
            instruction: None,
        };
        let text = ev.to_text();
        assert_eq!(text, r#"{"t":"event","tick":8,"type":"collision","a":0,"b":1,"pair":"avatar_robot","contact":"push"}"#);
        assert_eq!(ServerMsg::parse(&text), Some(ev));
        let end = ServerMsg::End {
            code: "AB12CD34".into(),
            reason: EndReason::Completed,
        };
        assert_eq!(end.to_text(), r#"{"t":"end","code":"AB12CD34","reason":"completed"}"#);
    }

    #[test]
    fn codes_are_stable() {
        assert_eq!(completion_code("h1-u1-1"), completion_code("h1-u1-1"));
        assert_ne!(completion_code("h1-u1-1"), completion_code("h1-u1-2"));
        assert_eq!(completion_code("x").len(), 8);
    }
}
