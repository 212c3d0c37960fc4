//! `teleop/1` wire messages. Every message is one JSON object on one line,
//! tagged by `"type"`; unknown fields are ignored.

use serde::{Deserialize, Serialize};

use crate::phantom::{Contact, PhantomMap};

pub const PROTOCOL: &str = "teleop/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

/// Operator input. Units: mm/s, rad, A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub client_id: String,
    pub sequence_number: u64,
    /// Insertion speed through the entry port, mm/s (negative retracts).
    #[serde(default)]
    pub insert_velocity: f64,
    /// Commanded bend magnitude, rad; negative bends the opposite way.
    #[serde(default)]
    pub target_bend: f64,
    /// Bend plane, rad from the base x axis (0 keeps the rod in the slice).
    #[serde(default)]
    pub bend_azimuth: f64,
    #[serde(default = "yes")]
    pub coils_enabled: bool,
    #[serde(default)]
    pub grasper_current: f64,
}

fn yes() -> bool {
    true
}

impl Command {
    pub fn new(client_id: impl Into<String>, sequence_number: u64) -> Self {
        Self {
            client_id: client_id.into(),
            sequence_number,
            insert_velocity: 0.0,
            target_bend: 0.0,
            bend_azimuth: 0.0,
            coils_enabled: true,
            grasper_current: 0.0,
        }
    }
}

/// Values in effect after clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedCommand {
    pub insert_velocity: f64,
    pub target_bend: f64,
    pub bend_azimuth: f64,
    pub coils_enabled: bool,
    pub grasper_current: f64,
}

impl Default for AppliedCommand {
    fn default() -> Self {
        Self { insert_velocity: 0.0, target_bend: 0.0, bend_azimuth: 0.0, coils_enabled: true, grasper_current: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Accepted,
    Clamped,
    Stale,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub client_id: String,
    pub sequence_number: u64,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Command in effect after this message (unchanged for stale or rejected).
    pub applied: AppliedCommand,
    /// Names of the fields that were clamped.
    #[serde(default)]
    pub clamped: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Steering,
    Imaging,
    Grasping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipPose {
    pub position_m: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`, `w >= 0`.
    pub quaternion: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub tick: u64,
    pub sim_time: f64,
    pub mode: Mode,
    pub inserted_length_mm: f64,
    /// Bend currently realised by the slew limiter, rad.
    pub bend: f64,
    pub target_bend: f64,
    pub bend_azimuth: f64,
    /// Rod in slice coordinates, base to tip, N + 1 points, mm.
    pub polyline_mm: Vec<[f64; 2]>,
    /// Largest distance of the rod from the slice plane, mm.
    pub out_of_plane_mm: f64,
    pub tip_mm: [f64; 2],
    /// Tip heading in the slice, rad from the v axis toward u.
    pub tip_heading: f64,
    pub tip_pose: TipPose,
    /// Steering coil currents, A, in configuration order.
    pub currents: Vec<f64>,
    pub grasper_current: f64,
    pub total_power_w: f64,
    pub power_cap_w: f64,
    pub imaging_distorted: bool,
    pub collision: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<Contact>,
    pub tumor_reached: bool,
    pub grasper_force_n: f64,
    pub saturated: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub sim_time: f64,
    pub kind: String,
    pub detail: String,
}

/// Limits a client needs to render and validate commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub power_cap_w: f64,
    pub current_caps_a: Vec<f64>,
    pub coil_names: Vec<String>,
    pub grasper_cap_a: f64,
    pub max_bend: f64,
    pub max_insert_speed_mm_s: f64,
    pub max_insertion_mm: f64,
    pub tick_rate_hz: f64,
    pub publish_every_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        schema: Option<String>,
        client_id: String,
        #[serde(default = "operator")]
        role: Role,
    },
    Cmd(Command),
    /// Gives up the operator lock.
    Release { client_id: String },
}

fn operator() -> Role {
    Role::Operator
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        schema: String,
        client_id: String,
        role: Role,
        caps: Caps,
        phantom: Box<PhantomMap>,
    },
    Telemetry(Box<Telemetry>),
    Ack(Ack),
    Event(Event),
    Error { message: String },
}

impl ServerMessage {
    /// One line of the wire format, without the newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialise")
    }
}

impl ClientMessage {
    pub fn parse(line: &str) -> Result<Self, String> {
        serde_json::from_str(line.trim()).map_err(|e| format!("malformed {PROTOCOL} message: {e}"))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("client messages serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_round_trip() {
        let line = r#"{"type":"cmd","client_id":"a","sequence_number":3,"target_bend":0.5,"extra":1}"#;
        let ClientMessage::Cmd(c) = ClientMessage::parse(line).unwrap() else { panic!() };
        assert_eq!(c.target_bend, 0.5);
        assert!(c.coils_enabled);
        let back = ClientMessage::parse(&ClientMessage::Cmd(c.clone()).to_line()).unwrap();
        assert_eq!(back, ClientMessage::Cmd(c));
    }

    #[test]
    fn hello_defaults_to_operator() {
        let m = ClientMessage::parse(r#"{"type":"hello","client_id":"ui"}"#).unwrap();
        assert_eq!(m, ClientMessage::Hello { schema: None, client_id: "ui".into(), role: Role::Operator });
        assert!(ClientMessage::parse("{\"type\":\"warp\"}").is_err());
    }

    #[test]
    fn server_messages_are_tagged() {
        let e = ServerMessage::Event(Event { tick: 1, sim_time: 0.02, kind: "k".into(), detail: "d".into() });
        assert!(e.to_line().starts_with("{\"type\":\"event\""));
    }
}
