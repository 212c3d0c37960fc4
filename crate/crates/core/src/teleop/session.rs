use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::protocol::{Ack, AckStatus, AppliedCommand, Caps, Command, Event, Mode, Telemetry, TipPose};
use crate::actuation::{coil_resistance, CoilSpec, MagneticEnvironment};
use crate::config::Config;
use crate::design::{blocking_force, GrasperModel};
use crate::error::{invalid, Result};
use crate::ik::{steer_to_from, AllocationLimits, IkOptions, IkWeights, SteerSetup, SteerTarget};
use crate::phantom::{collide, tumor_reached, InsertionState, PhantomMap};
use crate::rod::{rotation_to_quaternion, FramePose, RodParams};
use crate::{Mat3, Vec3};

/// Below this inserted length the rod is treated as not yet out of the port, m.
const MIN_BENDING_LENGTH: f64 = 1e-4;

/// Inputs that determine the quasi-static solution of a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SolveKey {
    length: u64,
    bend: u64,
    azimuth: u64,
    coils_enabled: bool,
    budget: u64,
}

#[derive(Debug, Clone)]
struct Solution {
    key: Option<SolveKey>,
    currents: Vec<f64>,
    positions: Vec<Vec3>,
    tip_rotation: Mat3,
    guess: Option<(Vec3, Vec3)>,
    saturated: bool,
    warnings: Vec<String>,
}

/// Running totals over a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionStats {
    pub max_power_w: f64,
    pub collision_ticks: u64,
    pub tumor_reached_ever: bool,
    pub warning_ticks: u64,
}

/// One teleoperated endoscope in the phantom, advanced in fixed ticks.
///
/// Each tick is quasi-static: the rod is re-solved for the current
/// insertion and the slew-limited bend, then currents are clamped so the
/// published power never exceeds the cap.
#[derive(Debug, Clone)]
pub struct SimSession {
    rod: RodParams,
    coils: Vec<CoilSpec>,
    resistance: Vec<f64>,
    current_caps: Vec<f64>,
    grasper: Option<(GrasperModel, f64)>,
    grasper_cap: f64,
    env: MagneticEnvironment,
    map: PhantomMap,
    base: FramePose,
    ik: IkOptions,
    weights: IkWeights,
    power_cap: f64,
    tick_rate: f64,
    slew: f64,
    max_bend: f64,
    max_speed: f64,
    capture: f64,
    publish_every: u64,

    tick: u64,
    insertion: InsertionState,
    applied: AppliedCommand,
    bend: f64,
    at_stop: bool,
    operator: Option<String>,
    last_sequence: BTreeMap<String, u64>,
    solution: Solution,
    prev: Option<(Mode, bool, bool, bool)>,
    events: Vec<Event>,
    pending: Vec<Event>,
    stats: SessionStats,
}

impl SimSession {
    pub fn new(cfg: &Config, map: PhantomMap) -> Result<Self> {
        cfg.validate()?;
        map.validate()?;
        let t = &cfg.teleop;
        let rod = cfg.rod.with_segment_count(t.segment_count)?;
        let resistance = cfg.coils.iter().map(coil_resistance).collect::<Result<Vec<_>>>()?;
        let limits = cfg.allocation_limits();
        let current_caps: Vec<f64> =
            limits.current_caps.iter().zip(&cfg.coils).map(|(c, coil)| c.min(coil.current_limit)).collect();
        let power_cap = cfg.safety.power_cap_w;
        let (grasper, grasper_cap) = match &cfg.grasper {
            Some(_) => {
                let model = cfg.grasper_model()?;
                let r = coil_resistance(&model.coil)?;
                let mut cap = model.coil.current_limit.min((power_cap / r).sqrt());
                while cap * cap * r > power_cap {
                    cap = cap.next_down();
                }
                (Some((model, r)), cap)
            }
            None => (None, 0.0),
        };
        let base = map.entry_frame();
        let n = rod.segment_count();
        let solution = Solution {
            key: None,
            currents: vec![0.0; cfg.coils.len()],
            positions: vec![base.origin; n + 1],
            tip_rotation: base.rotation,
            guess: None,
            saturated: false,
            warnings: Vec::new(),
        };
        Ok(Self {
            rod,
            coils: cfg.coils.clone(),
            resistance,
            current_caps,
            grasper,
            grasper_cap,
            env: cfg.env(),
            base,
            map,
            ik: cfg.ik_options(),
            weights: cfg.ik.weights,
            power_cap,
            tick_rate: t.tick_rate_hz,
            slew: t.slew_deg_per_s.to_radians(),
            max_bend: t.max_bend_deg.to_radians(),
            max_speed: t.max_insert_speed_mm_s,
            capture: t.capture_distance_mm,
            publish_every: t.publish_every_ticks,
            tick: 0,
            insertion: InsertionState::new(0.0, t.max_insertion_m)?,
            applied: AppliedCommand::default(),
            bend: 0.0,
            at_stop: false,
            operator: None,
            last_sequence: BTreeMap::new(),
            solution,
            prev: None,
            events: Vec::new(),
            pending: Vec::new(),
            stats: SessionStats::default(),
        })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn sim_time(&self) -> f64 {
        self.tick as f64 / self.tick_rate
    }

    pub fn map(&self) -> &PhantomMap {
        &self.map
    }

    pub fn applied(&self) -> AppliedCommand {
        self.applied
    }

    pub fn operator(&self) -> Option<&str> {
        self.operator.as_deref()
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn publish_every(&self) -> u64 {
        self.publish_every
    }

    /// Complete event log.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events logged since the last call.
    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.pending)
    }

    pub fn caps(&self) -> Caps {
        Caps {
            power_cap_w: self.power_cap,
            current_caps_a: self.current_caps.clone(),
            coil_names: self.coils.iter().map(|c| c.name.clone()).collect(),
            grasper_cap_a: self.grasper_cap,
            max_bend: self.max_bend,
            max_insert_speed_mm_s: self.max_speed,
            max_insertion_mm: self.insertion.max_insertion() * 1e3,
            tick_rate_hz: self.tick_rate,
            publish_every_ticks: self.publish_every,
        }
    }

    fn log(&mut self, kind: &str, detail: impl Into<String>) {
        let e = Event { tick: self.tick, sim_time: self.sim_time(), kind: kind.into(), detail: detail.into() };
        self.events.push(e.clone());
        self.pending.push(e);
    }

    /// Takes the operator lock for `client_id`; fails if someone else holds it.
    pub fn acquire_operator(&mut self, client_id: &str) -> bool {
        match &self.operator {
            Some(op) if op != client_id => false,
            Some(_) => true,
            None => {
                self.operator = Some(client_id.to_string());
                self.log("operator", format!("{client_id} acquired the operator lock"));
                true
            }
        }
    }

    pub fn release_operator(&mut self, client_id: &str) -> bool {
        if self.operator.as_deref() == Some(client_id) {
            self.operator = None;
            self.log("operator", format!("{client_id} released the operator lock"));
            true
        } else {
            false
        }
    }

    /// Applies an operator command. The first commanding client takes the
    /// operator lock; others are rejected while it is held. Sequence
    /// numbers must increase per client; out-of-range values are clamped
    /// and listed in the acknowledgement.
    pub fn handle_command(&mut self, cmd: &Command) -> Ack {
        let reply = |status, reason: Option<&str>, applied, clamped| Ack {
            client_id: cmd.client_id.clone(),
            sequence_number: cmd.sequence_number,
            status,
            reason: reason.map(str::to_string),
            applied,
            clamped,
        };
        if !self.acquire_operator(&cmd.client_id) {
            return reply(AckStatus::Rejected, Some("operator lock held"), self.applied, Vec::new());
        }
        if let Some(&last) = self.last_sequence.get(&cmd.client_id) {
            if cmd.sequence_number <= last {
                return reply(AckStatus::Stale, Some("stale"), self.applied, Vec::new());
            }
        }
        let fields =
            [("insert_velocity", cmd.insert_velocity), ("target_bend", cmd.target_bend), ("bend_azimuth", cmd.bend_azimuth), ("grasper_current", cmd.grasper_current)];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return reply(AckStatus::Rejected, Some(&format!("{name} must be finite")), self.applied, Vec::new());
        }
        self.last_sequence.insert(cmd.client_id.clone(), cmd.sequence_number);

        let mut clamped = Vec::new();
        let mut clamp = |name: &str, v: f64, limit: f64| {
            let c = v.clamp(-limit, limit);
            if c != v {
                clamped.push(name.to_string());
            }
            c
        };
        let applied = AppliedCommand {
            insert_velocity: clamp("insert_velocity", cmd.insert_velocity, self.max_speed),
            target_bend: clamp("target_bend", cmd.target_bend, self.max_bend),
            bend_azimuth: cmd.bend_azimuth,
            coils_enabled: cmd.coils_enabled,
            grasper_current: clamp("grasper_current", cmd.grasper_current, self.grasper_cap),
        };
        let mut applied = applied;
        // Imaging needs every coil quiet, the grasper included.
        if !applied.coils_enabled && applied.grasper_current != 0.0 {
            applied.grasper_current = 0.0;
            clamped.push("grasper_current".to_string());
        }
        self.applied = applied;
        let status = if clamped.is_empty() { AckStatus::Accepted } else { AckStatus::Clamped };
        reply(status, None, applied, clamped)
    }

    fn grasper_power(&self) -> f64 {
        self.grasper.as_ref().map_or(0.0, |(_, r)| self.applied.grasper_current.powi(2) * r)
    }

    fn steering_power(&self, currents: &[f64]) -> f64 {
        currents.iter().zip(&self.resistance).map(|(i, r)| i * i * r).sum()
    }

    /// Clamps each current to its cap and scales the set down until the
    /// total with the grasper fits the power cap. Returns whether anything changed.
    fn enforce_caps(&self, currents: &mut [f64]) -> bool {
        let mut changed = false;
        for (i, cap) in currents.iter_mut().zip(&self.current_caps) {
            let c = i.clamp(-cap, *cap);
            changed |= c != *i;
            *i = c;
        }
        let pg = self.grasper_power();
        let ps = self.steering_power(currents);
        if ps + pg > self.power_cap {
            let mut s = ((self.power_cap - pg).max(0.0) / ps).sqrt();
            loop {
                let scaled: Vec<f64> = currents.iter().map(|i| i * s).collect();
                if self.steering_power(&scaled) + pg <= self.power_cap || s == 0.0 {
                    currents.copy_from_slice(&scaled);
                    break;
                }
                s = s.next_down().max(0.0);
            }
            changed = true;
        }
        changed
    }

    fn straight(&self, length: f64) -> Vec<Vec3> {
        let n = self.rod.segment_count();
        let t = self.base.rotation.column(2).into_owned();
        (0..=n).map(|i| self.base.origin + t * (length * i as f64 / n as f64)).collect()
    }

    fn solve(&mut self) {
        let length = self.insertion.inserted_length();
        let budget = (self.power_cap - self.grasper_power()).max(0.0);
        let key = SolveKey {
            length: length.to_bits(),
            bend: self.bend.to_bits(),
            azimuth: self.applied.bend_azimuth.to_bits(),
            coils_enabled: self.applied.coils_enabled,
            budget: budget.to_bits(),
        };
        if self.solution.key == Some(key) {
            return;
        }
        let mut warnings = Vec::new();
        let mut saturated = false;
        if length < MIN_BENDING_LENGTH || self.bend == 0.0 || !self.applied.coils_enabled {
            self.solution = Solution {
                key: Some(key),
                currents: vec![0.0; self.coils.len()],
                positions: self.straight(length),
                tip_rotation: self.base.rotation,
                guess: None,
                saturated: false,
                warnings,
            };
            return;
        }
        let azimuth = self.applied.bend_azimuth + if self.bend < 0.0 { PI } else { 0.0 };
        let target = SteerTarget { bend: self.bend.abs(), azimuth };
        let outcome = self.rod.with_free_length(length).and_then(|rod| {
            let mut setup = SteerSetup::new(rod, self.base, self.coils.clone(), self.env);
            setup.limits = AllocationLimits { current_caps: self.current_caps.clone(), power_cap: budget };
            setup.ik = self.ik;
            setup.weights = self.weights;
            steer_to_from(&setup, target, self.solution.guess)
        });
        let (mut currents, positions, tip_rotation, guess) = match outcome {
            Ok(r) => {
                saturated = r.allocation.saturated;
                if !r.ik.converged {
                    warnings.push("ik_not_converged".to_string());
                }
                if !r.consistent && !saturated {
                    warnings.push("no_fixed_point".to_string());
                }
                let tip_rotation = r.realized.tip().rotation;
                let positions: Vec<Vec3> = r.realized.positions().collect();
                (r.allocation.currents, positions, tip_rotation, Some((r.ik.base_force, r.ik.base_moment)))
            }
            Err(e) => {
                warnings.push(format!("solver_failed: {e}; holding previous pose"));
                let s = &self.solution;
                (s.currents.clone(), s.positions.clone(), s.tip_rotation, None)
            }
        };
        if self.enforce_caps(&mut currents) {
            saturated = true;
        }
        for w in &warnings {
            self.log("warning", w.clone());
        }
        self.solution = Solution { key: Some(key), currents, positions, tip_rotation, guess, saturated, warnings };
    }

    /// Advances one tick of `1 / tick_rate` seconds and returns the telemetry.
    pub fn step(&mut self) -> Telemetry {
        self.tick += 1;
        let moving = self.applied.insert_velocity != 0.0;
        let stopped = self.insertion.advance(self.applied.insert_velocity * 1e-3, self.dt());
        if stopped && moving && !self.at_stop {
            self.log("insertion_limit", format!("insertion stopped at {:.3} mm", self.insertion.inserted_length() * 1e3));
        }
        self.at_stop = stopped && moving;

        if self.applied.coils_enabled {
            let step = self.slew * self.dt();
            self.bend += (self.applied.target_bend - self.bend).clamp(-step, step);
        } else {
            self.bend = 0.0;
        }
        self.solve();
        if self.grasper.is_none() {
            self.applied.grasper_current = 0.0;
        }
        // The grasper share may have changed without a re-solve.
        let mut currents = self.solution.currents.clone();
        if self.enforce_caps(&mut currents) {
            self.solution.currents = currents;
            self.solution.saturated = true;
        }
        let t = self.telemetry();
        self.track(&t);
        t
    }

    /// Telemetry for the present state (no time advance).
    pub fn telemetry(&self) -> Telemetry {
        let s = &self.solution;
        let frame = &self.map.slice_frame;
        let polyline: Vec<[f64; 2]> = s.positions.iter().map(|p| frame.project(p)).collect();
        let out_of_plane = s.positions.iter().map(|p| frame.offset_mm(p).abs()).fold(0.0, f64::max);
        let tip = *s.positions.last().expect("rod has nodes");
        let tip_mm = frame.project(&tip);
        let tangent = s.tip_rotation.column(2).into_owned();
        let tip_heading = tangent.dot(&Vec3::from(frame.u_axis)).atan2(tangent.dot(&Vec3::from(frame.v_axis)));
        let q = rotation_to_quaternion(&s.tip_rotation);
        let currents = s.currents.clone();
        let ig = self.applied.grasper_current;
        let total_power_w = self.steering_power(&currents) + self.grasper_power();
        let imaging_distorted = ig != 0.0 || currents.iter().any(|i| *i != 0.0);
        let report = collide(&polyline, &self.map).expect("polyline has N + 1 >= 3 points");
        let reached = tumor_reached(tip_mm, &self.map, self.capture).expect("capture distance validated");
        let grasper_force_n = self
            .grasper
            .as_ref()
            .map_or(0.0, |(m, _)| blocking_force(m, ig, &self.env).unwrap_or(0.0));
        let mode = if !self.applied.coils_enabled {
            Mode::Imaging
        } else if ig != 0.0 {
            Mode::Grasping
        } else {
            Mode::Steering
        };
        let saturated = s.saturated;
        let warnings = s.warnings.clone();
        Telemetry {
            tick: self.tick,
            sim_time: self.sim_time(),
            mode,
            inserted_length_mm: self.insertion.inserted_length() * 1e3,
            bend: self.bend,
            target_bend: self.applied.target_bend,
            bend_azimuth: self.applied.bend_azimuth,
            polyline_mm: polyline,
            out_of_plane_mm: out_of_plane,
            tip_mm,
            tip_heading,
            tip_pose: TipPose { position_m: tip.into(), quaternion: [q.w, q.i, q.j, q.k] },
            currents,
            grasper_current: ig,
            total_power_w,
            power_cap_w: self.power_cap,
            imaging_distorted,
            collision: report.collided,
            contact: report.first_contact,
            tumor_reached: reached,
            grasper_force_n,
            saturated,
            warnings,
        }
    }

    fn track(&mut self, t: &Telemetry) {
        let now = (t.mode, t.collision, t.tumor_reached, t.saturated);
        let (mode, collision, reached, saturated) = self.prev.unwrap_or((Mode::Steering, false, false, false));
        if self.prev.is_some_and(|_| mode != t.mode) || (self.prev.is_none() && t.mode != Mode::Steering) {
            self.log("mode", format!("{:?}", t.mode).to_lowercase());
        }
        if t.collision && !collision {
            let at = t.contact.map(|c| format!(" at ({:.3}, {:.3}) mm", c.point_mm[0], c.point_mm[1])).unwrap_or_default();
            self.log("collision", format!("wall contact{at}"));
        }
        if t.tumor_reached && !reached {
            self.log("tumor_reached", format!("tip at ({:.3}, {:.3}) mm", t.tip_mm[0], t.tip_mm[1]));
        }
        if t.saturated && !saturated {
            self.log("saturation", format!("limits active, power {:.4} W", t.total_power_w));
        }
        self.prev = Some(now);
        self.stats.max_power_w = self.stats.max_power_w.max(t.total_power_w);
        self.stats.collision_ticks += u64::from(t.collision);
        self.stats.tumor_reached_ever |= t.tumor_reached;
        self.stats.warning_ticks += u64::from(!t.warnings.is_empty());
    }

    /// Steps with an explicit `dt`, which must equal the tick period.
    pub fn step_dt(&mut self, dt: f64) -> Result<Telemetry> {
        if (dt - self.dt()).abs() > 1e-12 * self.dt() {
            return Err(invalid(format!("dt {dt} must equal 1 / tick_rate = {}", self.dt())));
        }
        Ok(self.step())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> SimSession {
        SimSession::new(&Config::table1(), PhantomMap::bundled()).unwrap()
    }

    fn cmd(seq: u64) -> Command {
        Command::new("op", seq)
    }

    fn inserted(s: &mut SimSession, ticks: u64) {
        s.handle_command(&Command { insert_velocity: 10.0, ..cmd(1) });
        for _ in 0..ticks {
            s.step();
        }
    }

    #[test]
    fn idle_session_only_advances_time() {
        let mut s = session();
        let a = s.telemetry();
        let b = s.step();
        assert_eq!(b.sim_time, 0.02);
        assert_eq!(Telemetry { tick: 0, sim_time: 0.0, ..b }, a);
        assert_eq!(a.polyline_mm.len(), 41);
    }

    #[test]
    fn over_demand_is_clamped_to_the_power_cap() {
        let mut s = session();
        inserted(&mut s, 150);
        s.handle_command(&Command { target_bend: 110f64.to_radians(), grasper_current: 0.3, ..cmd(2) });
        let mut last = None;
        for _ in 0..250 {
            let t = s.step();
            assert!(t.total_power_w <= 1.2);
            last = Some(t);
        }
        let t = last.unwrap();
        assert!(t.saturated, "{:?} {} {} {:?}", t.currents, t.total_power_w, t.bend.to_degrees(), t.warnings);
        assert!((t.total_power_w - 1.2).abs() < 1e-9, "{}", t.total_power_w);
        assert!(s.events().iter().any(|e| e.kind == "saturation"));
    }

    #[test]
    fn coils_off_means_undistorted_imaging() {
        let mut s = session();
        inserted(&mut s, 100);
        s.handle_command(&Command { target_bend: 0.3, ..cmd(2) });
        for _ in 0..20 {
            s.step();
        }
        assert!(s.telemetry().imaging_distorted);
        s.handle_command(&Command { target_bend: 0.3, coils_enabled: false, ..cmd(3) });
        let t = s.step();
        assert_eq!(t.mode, Mode::Imaging);
        assert!(!t.imaging_distorted);
        assert!(t.currents.iter().all(|i| *i == 0.0));
        assert_eq!(t.bend, 0.0);
    }

    #[test]
    fn command_handling() {
        let mut s = session();
        let ack = s.handle_command(&Command { target_bend: 0.5, ..cmd(5) });
        assert_eq!(ack.status, AckStatus::Accepted);
        assert_eq!(ack.applied.target_bend, 0.5);

        let dup = s.handle_command(&Command { target_bend: 0.1, ..cmd(5) });
        assert_eq!(dup.status, AckStatus::Stale);
        assert_eq!(s.applied().target_bend, 0.5);

        let big = s.handle_command(&Command { target_bend: 150f64.to_radians(), ..cmd(6) });
        assert_eq!(big.status, AckStatus::Clamped);
        assert_eq!(big.clamped, vec!["target_bend".to_string()]);
        assert!((big.applied.target_bend - 120f64.to_radians()).abs() < 1e-15);

        let other = s.handle_command(&Command::new("second", 1));
        assert_eq!(other.status, AckStatus::Rejected);
        assert_eq!(other.reason.as_deref(), Some("operator lock held"));

        assert!(s.release_operator("op"));
        assert_eq!(s.handle_command(&Command::new("second", 1)).status, AckStatus::Accepted);
    }

    #[test]
    fn rejects_non_finite_and_wrong_dt() {
        let mut s = session();
        let ack = s.handle_command(&Command { insert_velocity: f64::NAN, ..cmd(1) });
        assert_eq!(ack.status, AckStatus::Rejected);
        assert!(s.step_dt(0.01).is_err());
        assert!(s.step_dt(0.02).is_ok());
    }

    #[test]
    fn negative_bend_mirrors() {
        let run = |bend: f64| {
            let mut s = session();
            inserted(&mut s, 100);
            s.handle_command(&Command { target_bend: bend, ..cmd(2) });
            (0..40).map(|_| s.step()).last().unwrap().tip_mm
        };
        let (a, b) = (run(0.4), run(-0.4));
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] + b[1]).abs() < 1e-9, "{a:?} {b:?}");
    }
}
