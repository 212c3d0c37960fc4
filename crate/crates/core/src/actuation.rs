//! Lorentz-force actuation: microcoil geometry, magnetic moment, torque,
//! resistance and Joule power.
//!
//! Coil moments are expressed in the tip frame; torques are inertial.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::{Mat3, Vec3};

/// Resistivity of copper at 20 °C, Ω·m.
pub const COPPER_RESISTIVITY: f64 = 1.68e-8;

/// Field strength of the 7 T preclinical scanner.
pub const DEFAULT_B0_TESLA: f64 = 7.0;

/// Uniform static field of the scanner, inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct MagneticEnvironment {
    b0: Vec3,
}

impl MagneticEnvironment {
    pub fn new(b0: Vec3) -> Result<Self> {
        if !b0.iter().all(|x| x.is_finite()) || b0.norm() <= 0.0 {
            return Err(invalid(format!("B0 must be finite and nonzero, got {b0:?}")));
        }
        Ok(Self { b0 })
    }

    pub fn b0(&self) -> Vec3 {
        self.b0
    }

    /// Unit field direction.
    pub fn direction(&self) -> Vec3 {
        self.b0.normalize()
    }
}

impl Default for MagneticEnvironment {
    fn default() -> Self {
        Self { b0: Vec3::new(0.0, 0.0, DEFAULT_B0_TESLA) }
    }
}

impl TryFrom<[f64; 3]> for MagneticEnvironment {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(Vec3::from(v))
    }
}

impl From<MagneticEnvironment> for [f64; 3] {
    fn from(env: MagneticEnvironment) -> Self {
        env.b0.into()
    }
}

/// Force on a straight wire segment, `F = i L x B0`.
pub fn wire_lorentz_force(current: f64, wire_vector: &Vec3, env: &MagneticEnvironment) -> Vec3 {
    (wire_vector * current).cross(&env.b0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum WireShape {
    /// Rectangular trace, `width` x `thickness`.
    Flat { width: f64, thickness: f64 },
    Round { diameter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireSpec {
    #[serde(flatten)]
    pub shape: WireShape,
    /// Spacing between adjacent turns.
    pub gap: f64,
    #[serde(default = "copper")]
    pub resistivity: f64,
}

fn copper() -> f64 {
    COPPER_RESISTIVITY
}

impl WireSpec {
    pub fn flat(width: f64, thickness: f64, gap: f64) -> Self {
        Self { shape: WireShape::Flat { width, thickness }, gap, resistivity: COPPER_RESISTIVITY }
    }

    pub fn round(diameter: f64, gap: f64) -> Self {
        Self { shape: WireShape::Round { diameter }, gap, resistivity: COPPER_RESISTIVITY }
    }

    pub fn cross_section_area(&self) -> f64 {
        match self.shape {
            WireShape::Flat { width, thickness } => width * thickness,
            WireShape::Round { diameter } => PI * diameter * diameter / 4.0,
        }
    }

    /// In-plane width of one turn (trace width or wire diameter).
    pub fn width(&self) -> f64 {
        match self.shape {
            WireShape::Flat { width, .. } => width,
            WireShape::Round { diameter } => diameter,
        }
    }

    /// Centre-to-centre spacing of adjacent turns.
    pub fn pitch(&self) -> f64 {
        self.width() + self.gap
    }

    fn validate(&self) -> Result<()> {
        let dims: &[f64] = match &self.shape {
            WireShape::Flat { width, thickness } => &[*width, *thickness],
            WireShape::Round { diameter } => std::slice::from_ref(diameter),
        };
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid("wire dimensions must be > 0"));
        }
        if !(self.gap.is_finite() && self.gap >= 0.0) {
            return Err(invalid("wire gap must be >= 0"));
        }
        if !(self.resistivity.is_finite() && self.resistivity > 0.0) {
            return Err(invalid("wire resistivity must be > 0"));
        }
        Ok(())
    }
}

/// Winding geometry of one coil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoilGeometry {
    /// Solenoid wound on the endoscope tube; moment along the tube axis.
    Axial { tube_diameter: f64, length: f64 },
    /// Identical curved rectangular loops on the tube surface, spanning
    /// `arc_angle` of the circumference over `length`.
    Saddle { tube_diameter: f64, length: f64, arc_angle: f64, width: f64, core_width: f64 },
    /// Planar rectangular spiral on a grasper jaw. Turn `k` has outer
    /// dimensions shrunk by `2 k turn_pitch`; `None` uses the wire pitch,
    /// `Some(0.0)` means stacked identical turns.
    Grasper {
        width: f64,
        length: f64,
        gap: f64,
        core_width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        turn_pitch: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilKind {
    Axial,
    Saddle,
    Grasper,
}

/// One microcoil channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoilSpec {
    pub name: String,
    pub turns: u32,
    pub geometry: CoilGeometry,
    pub wire: WireSpec,
    /// Unit moment direction for positive current, tip frame.
    pub moment_axis: [f64; 3],
    /// Overrides the resistance computed from the winding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resistance_override: Option<f64>,
    pub current_limit: f64,
}

impl CoilSpec {
    pub fn kind(&self) -> CoilKind {
        match self.geometry {
            CoilGeometry::Axial { .. } => CoilKind::Axial,
            CoilGeometry::Saddle { .. } => CoilKind::Saddle,
            CoilGeometry::Grasper { .. } => CoilKind::Grasper,
        }
    }

    pub fn axis(&self) -> Vec3 {
        Vec3::from(self.moment_axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns == 0 {
            return Err(invalid(format!("coil {}: turns must be >= 1", self.name)));
        }
        if (self.axis().norm() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("coil {}: moment axis must be a unit vector", self.name)));
        }
        if !(self.current_limit.is_finite() && self.current_limit >= 0.0) {
            return Err(invalid(format!("coil {}: current limit must be >= 0", self.name)));
        }
        self.wire.validate()?;
        if let Some(r) = self.resistance_override {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid(format!("coil {}: resistance override must be > 0", self.name)));
            }
        }
        let dims: Vec<f64> = match self.geometry {
            CoilGeometry::Axial { tube_diameter, length } => vec![tube_diameter, length],
            CoilGeometry::Saddle { tube_diameter, length, arc_angle, .. } => {
                if !(arc_angle > 0.0 && arc_angle <= 2.0 * PI) {
                    return Err(invalid(format!("coil {}: arc angle outside (0, 2 pi]", self.name)));
                }
                vec![tube_diameter, length]
            }
            CoilGeometry::Grasper { width, length, .. } => vec![width, length],
        };
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid(format!("coil {}: geometry dimensions must be > 0", self.name)));
        }
        self.area_turns().map(|_| ())
    }

    /// Moment per ampere, `sum over turns of the loop area`, m².
    pub fn area_turns(&self) -> Result<f64> {
        let n = f64::from(self.turns);
        match self.geometry {
            CoilGeometry::Axial { tube_diameter, .. } => Ok(n * PI * tube_diameter * tube_diameter / 4.0),
            CoilGeometry::Saddle { tube_diameter, length, arc_angle, .. } => {
                Ok(n * tube_diameter * (arc_angle / 2.0).sin() * length)
            }
            CoilGeometry::Grasper { .. } => {
                let mut total = 0.0;
                for (k, (w, l)) in self.grasper_turns()?.into_iter().enumerate() {
                    debug_assert!(w > 0.0 && l > 0.0, "turn {k}");
                    total += w * l;
                }
                Ok(total)
            }
        }
    }

    fn grasper_turns(&self) -> Result<Vec<(f64, f64)>> {
        let CoilGeometry::Grasper { width, length, gap, turn_pitch, .. } = self.geometry else {
            unreachable!("grasper_turns on non-grasper coil")
        };
        let pitch = turn_pitch.unwrap_or(self.wire.width() + gap);
        (0..self.turns as usize)
            .map(|k| {
                let shrink = 2.0 * k as f64 * pitch;
                let (w, l) = (width - shrink, length - shrink);
                if w <= 0.0 || l <= 0.0 {
                    Err(Error::Geometry { turn: k, detail: format!("{w:.3e} m x {l:.3e} m") })
                } else {
                    Ok((w, l))
                }
            })
            .collect()
    }

    /// Total conductor length of the winding.
    pub fn wire_length(&self) -> Result<f64> {
        let n = f64::from(self.turns);
        match self.geometry {
            CoilGeometry::Axial { tube_diameter, .. } => Ok(n * PI * tube_diameter),
            CoilGeometry::Saddle { tube_diameter, length, arc_angle, .. } => {
                Ok(n * (2.0 * length + arc_angle * tube_diameter))
            }
            CoilGeometry::Grasper { .. } => {
                Ok(self.grasper_turns()?.iter().map(|(w, l)| 2.0 * (w + l)).sum())
            }
        }
    }
}

/// Magnetic moment in the tip frame, A·m². Sign follows the current.
pub fn coil_moment(coil: &CoilSpec, current: f64) -> Result<Vec3> {
    Ok(coil.axis() * (coil.area_turns()? * current))
}

/// Lorentz torque on the tip, `T = (R_tip sum m_j) x B0`, inertial frame.
/// Always orthogonal to B0.
pub fn lorentz_torque(moments: &[Vec3], tip_rotation: &Mat3, env: &MagneticEnvironment) -> Vec3 {
    let total: Vec3 = moments.iter().sum();
    (tip_rotation * total).cross(&env.b0)
}

/// Coil resistance `rho l / A`, or the configured override.
pub fn coil_resistance(coil: &CoilSpec) -> Result<f64> {
    if let Some(r) = coil.resistance_override {
        return Ok(r);
    }
    let area = coil.wire.cross_section_area();
    if !(area > 0.0) {
        return Err(invalid(format!("coil {}: zero wire cross-section", coil.name)));
    }
    Ok(coil.wire.resistivity * coil.wire_length()? / area)
}

/// Per-coil currents at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub currents: Vec<f64>,
    #[serde(default)]
    pub timestamp: f64,
}

impl ActuationCommand {
    pub fn new(currents: Vec<f64>, timestamp: f64) -> Self {
        Self { currents, timestamp }
    }

    /// Checks the command length and every current against its coil limit.
    pub fn check_limits(&self, coils: &[CoilSpec]) -> Result<()> {
        if self.currents.len() != coils.len() {
            return Err(invalid(format!(
                "{} currents for {} coils",
                self.currents.len(),
                coils.len()
            )));
        }
        for (j, (i, c)) in self.currents.iter().zip(coils).enumerate() {
            if !i.is_finite() || i.abs() > c.current_limit {
                return Err(Error::CurrentLimit { coil: j, current: *i, limit: c.current_limit });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub per_coil: Vec<f64>,
    pub total: f64,
}

/// Joule dissipation `P_j = I_j^2 R_j` and its sum.
pub fn joule_power(cmd: &ActuationCommand, coils: &[CoilSpec]) -> Result<PowerReport> {
    if cmd.currents.len() != coils.len() {
        return Err(invalid(format!("{} currents for {} coils", cmd.currents.len(), coils.len())));
    }
    let per_coil = cmd
        .currents
        .iter()
        .zip(coils)
        .map(|(i, c)| Ok(i * i * coil_resistance(c)?))
        .collect::<Result<Vec<_>>>()?;
    let total = per_coil.iter().sum();
    Ok(PowerReport { per_coil, total })
}

/// Tip-frame moment of all coils at the given currents.
pub fn total_moment(coils: &[CoilSpec], currents: &[f64]) -> Result<Vec3> {
    coils.iter().zip(currents).map(|(c, i)| coil_moment(c, *i)).sum()
}

/// Table I flat trace: 40 µm x 18 µm with 40 µm gaps.
pub fn table1_flat_wire() -> WireSpec {
    WireSpec::flat(40e-6, 18e-6, 40e-6)
}

/// Steering tri-coil of Table I: an axial coil of 250 turns of the 80 µm
/// power wire on the 3.5 mm cap, and a quad coil of two orthogonal 7-turn
/// saddle pairs (moment axes x and y of the tip frame), all 10 mm long.
pub fn table1_tri_coil() -> Vec<CoilSpec> {
    let tube = 3.5e-3;
    let length = 10e-3;
    let saddle = |name: &str, axis: [f64; 3]| CoilSpec {
        name: name.to_string(),
        turns: 7,
        geometry: CoilGeometry::Saddle {
            tube_diameter: tube,
            length,
            arc_angle: PI,
            width: 0.76e-3,
            core_width: 150e-6,
        },
        wire: table1_flat_wire(),
        moment_axis: axis,
        resistance_override: None,
        current_limit: 0.3,
    };
    vec![
        saddle("saddle_x", [1.0, 0.0, 0.0]),
        saddle("saddle_y", [0.0, 1.0, 0.0]),
        CoilSpec {
            name: "axial".to_string(),
            turns: 250,
            geometry: CoilGeometry::Axial { tube_diameter: tube, length },
            wire: WireSpec::round(80e-6, 40e-6),
            moment_axis: [0.0, 0.0, 1.0],
            resistance_override: None,
            current_limit: 0.3,
        },
    ]
}

/// Table I grasper coil: 20 stacked turns of the flat trace on a
/// 3.1 mm x 10 mm jaw, rated to 0.5 A.
pub fn table1_grasper() -> CoilSpec {
    CoilSpec {
        name: "grasper".to_string(),
        turns: 20,
        geometry: CoilGeometry::Grasper {
            width: 3.1e-3,
            length: 10e-3,
            gap: 15e-6,
            core_width: 100e-6,
            turn_pitch: Some(0.0),
        },
        wire: WireSpec::flat(40e-6, 18e-6, 15e-6),
        moment_axis: [1.0, 0.0, 0.0],
        resistance_override: None,
        current_limit: 0.5,
    }
}
