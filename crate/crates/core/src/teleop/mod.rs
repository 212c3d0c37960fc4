//! Fixed-tick teleoperation: session state, the `teleop/1` protocol and scripted replays.

mod protocol;
mod scenario;
mod session;

pub use protocol::{
    Ack, AckStatus, AppliedCommand, Caps, ClientMessage, Command, Event, Mode, Role, ServerMessage, Telemetry, TipPose,
    PROTOCOL,
};
pub use scenario::{
    replay, replay_with, scripted_scenario, Checkpoint, Replay, ReplaySummary, Scenario, ScriptedCommand,
    BUNDLED_SCENARIOS, SCENARIO_SCHEMA,
};
pub use session::{SessionStats, SimSession};
