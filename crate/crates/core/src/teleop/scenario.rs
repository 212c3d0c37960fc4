use serde::{Deserialize, Serialize};

use super::protocol::{Command, Event, Mode, Telemetry};
use super::session::SimSession;
use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::phantom::PhantomMap;

pub const SCENARIO_SCHEMA: &str = "teleop-scenario/1";

const FIG8_NAVIGATION: &str = include_str!("../../data/scenarios/fig8_navigation.json");
const EMPTY: &str = include_str!("../../data/scenarios/empty.json");

/// Names of the bundled scenarios.
pub const BUNDLED_SCENARIOS: [&str; 2] = ["fig8-navigation", "empty"];

/// Operator input issued just before tick `tick + 1` is simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedCommand {
    pub tick: u64,
    #[serde(default)]
    pub insert_velocity: f64,
    #[serde(default)]
    pub target_bend: f64,
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

fn default_tolerance() -> f64 {
    0.05
}

/// Expected telemetry at a tick; absent fields are not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_length_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imaging_distorted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tumor_reached: Option<bool>,
    /// Tolerance on lengths and tip coordinates, mm.
    #[serde(default = "default_tolerance")]
    pub tolerance_mm: f64,
}

impl Checkpoint {
    /// Differences from `t`, one message per mismatching field.
    pub fn check(&self, t: &Telemetry) -> Vec<String> {
        let mut out = Vec::new();
        let tick = self.tick;
        if let Some(m) = self.mode {
            if m != t.mode {
                out.push(format!("tick {tick}: mode {:?}, expected {m:?}", t.mode));
            }
        }
        if let Some(l) = self.inserted_length_mm {
            if (l - t.inserted_length_mm).abs() > self.tolerance_mm {
                out.push(format!("tick {tick}: inserted {:.4} mm, expected {l:.4}", t.inserted_length_mm));
            }
        }
        if let Some(p) = self.tip_mm {
            let d = (p[0] - t.tip_mm[0]).hypot(p[1] - t.tip_mm[1]);
            if d > self.tolerance_mm {
                out.push(format!("tick {tick}: tip {:?} mm is {d:.4} mm from expected {p:?}", t.tip_mm));
            }
        }
        let flags = [
            ("imaging_distorted", self.imaging_distorted, t.imaging_distorted),
            ("collision", self.collision, t.collision),
            ("tumor_reached", self.tumor_reached, t.tumor_reached),
        ];
        for (name, want, got) in flags {
            if want.is_some_and(|w| w != got) {
                out.push(format!("tick {tick}: {name} = {got}, expected {}", !got));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Number of ticks to simulate.
    pub ticks: u64,
    #[serde(default = "script_client")]
    pub client_id: String,
    /// Sorted by tick.
    pub commands: Vec<ScriptedCommand>,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
    /// Require the tumor to be reached on the last tick.
    #[serde(default)]
    pub expect_tumor_reached: bool,
    /// Require no wall contact on any tick.
    #[serde(default)]
    pub expect_no_collision: bool,
}

fn script_client() -> String {
    "script".into()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(invalid(format!("scenario schema {:?}, expected {SCENARIO_SCHEMA:?}", self.schema)));
        }
        if self.commands.windows(2).any(|w| w[1].tick < w[0].tick) {
            return Err(invalid("scenario commands must be sorted by tick"));
        }
        if let Some(c) = self.commands.iter().find(|c| c.tick >= self.ticks.max(1)) {
            return Err(invalid(format!("command at tick {} is past the end ({})", c.tick, self.ticks)));
        }
        if let Some(c) = self.checkpoints.iter().find(|c| c.tick > self.ticks) {
            return Err(invalid(format!("checkpoint at tick {} is past the end ({})", c.tick, self.ticks)));
        }
        Ok(())
    }

    /// Protocol commands issued before tick `tick + 1`, numbered from `first_sequence`.
    pub fn commands_at(&self, tick: u64, first_sequence: u64) -> Vec<Command> {
        self.commands
            .iter()
            .filter(|c| c.tick == tick)
            .enumerate()
            .map(|(k, c)| Command {
                insert_velocity: c.insert_velocity,
                target_bend: c.target_bend,
                bend_azimuth: c.bend_azimuth,
                coils_enabled: c.coils_enabled,
                grasper_current: c.grasper_current,
                ..Command::new(self.client_id.clone(), first_sequence + k as u64)
            })
            .collect()
    }
}

/// Looks up a bundled scenario by name.
pub fn scripted_scenario(name: &str) -> Result<Scenario> {
    let text = match name {
        "fig8-navigation" => FIG8_NAVIGATION,
        "empty" => EMPTY,
        _ => return Err(Error::UnknownScenario(name.to_string())),
    };
    Scenario::from_json(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub scenario: String,
    pub ticks: u64,
    pub tumor_reached: bool,
    pub first_tumor_tick: Option<u64>,
    pub collision_ticks: u64,
    pub max_power_w: f64,
    pub power_cap_w: f64,
    pub warning_ticks: u64,
    pub final_tip_mm: [f64; 2],
    pub checkpoint_failures: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Initial telemetry followed by one record per tick.
    pub telemetry: Vec<Telemetry>,
    pub events: Vec<Event>,
    pub summary: ReplaySummary,
}

impl Replay {
    /// Telemetry as `teleop/1` lines.
    pub fn telemetry_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.telemetry {
            out.push_str(&super::protocol::ServerMessage::Telemetry(Box::new(t.clone())).to_line());
            out.push('\n');
        }
        out
    }
}

/// Runs `scenario` from a fresh session and checks its expectations.
pub fn replay(cfg: &Config, map: PhantomMap, scenario: &Scenario) -> Result<Replay> {
    replay_with(cfg, map, scenario, |_| {})
}

/// [`replay`] that also hands every telemetry record to `sink` as it is produced.
pub fn replay_with(
    cfg: &Config,
    map: PhantomMap,
    scenario: &Scenario,
    mut sink: impl FnMut(&Telemetry),
) -> Result<Replay> {
    scenario.validate()?;
    let mut session = SimSession::new(cfg, map)?;
    let mut telemetry = Vec::with_capacity(scenario.ticks as usize + 1);
    let mut failures = Vec::new();
    let first = session.telemetry();
    sink(&first);
    telemetry.push(first);
    let mut sequence = 1;
    for tick in 0..scenario.ticks {
        for cmd in scenario.commands_at(tick, sequence) {
            sequence += 1;
            let ack = session.handle_command(&cmd);
            if ack.status != super::protocol::AckStatus::Accepted {
                failures.push(format!("tick {tick}: command {} {:?}: {:?}", cmd.sequence_number, ack.status, ack.clamped));
            }
        }
        let t = session.step();
        sink(&t);
        telemetry.push(t);
    }
    for c in &scenario.checkpoints {
        failures.extend(c.check(&telemetry[c.tick as usize]));
    }
    let last = telemetry.last().expect("initial telemetry present");
    let stats = session.stats().clone();
    if scenario.expect_tumor_reached && !last.tumor_reached {
        failures.push("tumor not reached at the end".into());
    }
    if scenario.expect_no_collision && stats.collision_ticks > 0 {
        failures.push(format!("{} ticks in wall contact", stats.collision_ticks));
    }
    let summary = ReplaySummary {
        scenario: scenario.name.clone(),
        ticks: scenario.ticks,
        tumor_reached: last.tumor_reached,
        first_tumor_tick: telemetry.iter().find(|t| t.tumor_reached).map(|t| t.tick),
        collision_ticks: stats.collision_ticks,
        max_power_w: telemetry.iter().map(|t| t.total_power_w).fold(0.0, f64::max),
        power_cap_w: cfg.safety.power_cap_w,
        warning_ticks: stats.warning_ticks,
        final_tip_mm: last.tip_mm,
        passed: failures.is_empty(),
        checkpoint_failures: failures,
    };
    Ok(Replay { telemetry, events: session.events().to_vec(), summary })
}
