//! The JSON configuration document: rod, coils, field, entry pose, safety
//! caps and per-tool settings, with a bundled Table I default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuation::{CoilKind, CoilSpec, MagneticEnvironment};
use crate::design::{DesignOptions, GrasperModel};
use crate::error::{Error, Result};
use crate::ik::{AllocationLimits, IkOptions, IkWeights, LmOptions, SteerSetup};
use crate::phantom::{InsertionState, PhantomMap, WorkspaceProblem, DEFAULT_CAPTURE_DISTANCE_MM};
use crate::rod::{FramePose, RodParams};
use crate::Vec3;

pub const CONFIG_SCHEMA: &str = "endoscope-config/1";

const TABLE1_JSON: &str = include_str!("../data/table1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseConfig {
    pub origin_m: [f64; 3],
    /// Angle between the base tangent and B0; the frame tilts about the inertial y axis.
    pub entry_angle_to_b0_deg: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self { origin_m: [0.0; 3], entry_angle_to_b0_deg: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    pub power_cap_w: f64,
    /// Per steering coil; defaults to each coil's rated current.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_caps_a: Option<Vec<f64>>,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self { power_cap_w: 1.2, current_caps_a: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkConfig {
    pub weights: IkWeights,
    pub tolerance: f64,
    pub max_iter: usize,
    pub residual_tolerance: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        let d = IkOptions::default();
        Self {
            weights: IkWeights::default(),
            tolerance: d.lm.tolerance,
            max_iter: d.lm.max_iter,
            residual_tolerance: d.residual_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub total_length_m: f64,
    pub target_angle_deg: f64,
    pub ratio_grid: Vec<f64>,
    pub current_ceiling_a: f64,
    /// Name of the steering coil used as the winding template.
    pub template_coil: String,
}

impl Default for DesignConfig {
    fn default() -> Self {
        let d = DesignOptions::default();
        Self {
            total_length_m: 0.03,
            target_angle_deg: 90.0,
            ratio_grid: d.ratio_grid,
            current_ceiling_a: d.current_ceiling,
            template_coil: "axial".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrasperConfig {
    /// Defaults to the jaw length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lever_arm_m: Option<f64>,
    pub rest_angle_to_b0_deg: f64,
    pub calibration_factor: f64,
    /// Bench measurement the calibration factor can be fitted to, N.
    pub measured_max_force_n: f64,
}

impl Default for GrasperConfig {
    fn default() -> Self {
        Self { lever_arm_m: None, rest_angle_to_b0_deg: 90.0, calibration_factor: 1.0, measured_max_force_n: 0.031 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkspaceConfig {
    pub current_cap_a: f64,
    pub power_cap_w: f64,
    pub grid: usize,
    /// Bending length; defaults to the rod's free length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub insertion_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice_max_a: Option<f64>,
    /// Overrides the rod's segment count for the sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_count: Option<usize>,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self { current_cap_a: 0.3, power_cap_w: 1.2, grid: 20, insertion_m: None, lattice_max_a: None, segment_count: Some(50) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeleopConfig {
    pub tick_rate_hz: f64,
    pub slew_deg_per_s: f64,
    /// Telemetry is published every this many ticks.
    pub publish_every_ticks: u64,
    pub max_insertion_m: f64,
    pub max_insert_speed_mm_s: f64,
    pub max_bend_deg: f64,
    pub capture_distance_mm: f64,
    /// Rod discretisation used by the live loop.
    pub segment_count: usize,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            tick_rate_hz: 50.0,
            slew_deg_per_s: 30.0,
            publish_every_ticks: 5,
            max_insertion_m: 0.03,
            max_insert_speed_mm_s: 10.0,
            max_bend_deg: 120.0,
            capture_distance_mm: DEFAULT_CAPTURE_DISTANCE_MM,
            segment_count: 40,
        }
    }
}

/// Complete configuration. Only `schema`, `rod` and `coils` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub rod: RodParams,
    /// Rigid coil section between the free length and the tip, m.
    #[serde(default)]
    pub coil_section_length_m: f64,
    /// Steering coils.
    pub coils: Vec<CoilSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasper: Option<CoilSpec>,
    #[serde(default)]
    pub b0_tesla: MagneticEnvironment,
    #[serde(default)]
    pub base: BaseConfig,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub ik: IkConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub grasper_model: GrasperConfig,
    #[serde(default)]
    pub workspace: WorkspaceConfig,
    #[serde(default)]
    pub teleop: TeleopConfig,
    /// Inline phantom map; the bundled synthetic map when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomMap>,
}

impl Config {
    /// The bundled Table I configuration.
    pub fn table1() -> Self {
        Self::from_json(TABLE1_JSON).expect("bundled table1.json is valid")
    }

    pub fn table1_json() -> &'static str {
        TABLE1_JSON
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("schema must be {CONFIG_SCHEMA:?}, got {:?}", self.schema));
        }
        if self.coils.is_empty() {
            return bad("coils: at least one steering coil required".into());
        }
        for c in self.coils.iter().chain(self.grasper.iter()) {
            c.validate().map_err(|e| Error::Config(format!("coil {}: {e}", c.name)))?;
        }
        if self.coils.iter().any(|c| c.kind() == CoilKind::Grasper) {
            return bad("coils: grasper coils belong in `grasper`".into());
        }
        if let Some(g) = &self.grasper {
            if g.kind() != CoilKind::Grasper {
                return bad("grasper: coil geometry must be a grasper".into());
            }
        }
        if !(self.coil_section_length_m >= 0.0) {
            return bad("coil_section_length_m must be >= 0".into());
        }
        let s = &self.safety;
        if !(s.power_cap_w.is_finite() && s.power_cap_w > 0.0) {
            return bad("safety.power_cap_w must be > 0".into());
        }
        if let Some(caps) = &s.current_caps_a {
            if caps.len() != self.coils.len() || caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return bad("safety.current_caps_a needs one finite cap >= 0 per steering coil".into());
            }
        }
        if !self.base.entry_angle_to_b0_deg.is_finite() || self.base.origin_m.iter().any(|x| !x.is_finite()) {
            return bad("base must be finite".into());
        }
        let t = &self.teleop;
        if !(t.tick_rate_hz > 0.0 && t.slew_deg_per_s > 0.0 && t.max_insertion_m > 0.0 && t.max_insert_speed_mm_s >= 0.0) {
            return bad("teleop: rates and lengths must be > 0".into());
        }
        if !(t.max_bend_deg > 0.0 && t.max_bend_deg <= 120.0) {
            return bad("teleop.max_bend_deg must be in (0, 120]".into());
        }
        if t.segment_count < 2 || t.publish_every_ticks == 0 || !(t.capture_distance_mm > 0.0) {
            return bad("teleop: segment_count >= 2, publish_every_ticks >= 1, capture_distance_mm > 0".into());
        }
        if !(self.ik.tolerance > 0.0 && self.ik.residual_tolerance > 0.0 && self.ik.max_iter > 0) {
            return bad("ik: tolerances and max_iter must be > 0".into());
        }
        if let Some(p) = &self.phantom {
            p.validate()?;
        }
        Ok(())
    }

    pub fn base_frame(&self) -> FramePose {
        FramePose::control_at_angle_to_field(
            Vec3::from(self.base.origin_m),
            self.base.entry_angle_to_b0_deg.to_radians(),
        )
    }

    pub fn env(&self) -> MagneticEnvironment {
        self.b0_tesla
    }

    pub fn allocation_limits(&self) -> AllocationLimits {
        let mut limits = AllocationLimits::rated(&self.coils).with_power_cap(self.safety.power_cap_w);
        if let Some(caps) = &self.safety.current_caps_a {
            limits.current_caps = caps.clone();
        }
        limits
    }

    pub fn ik_options(&self) -> IkOptions {
        IkOptions {
            lm: LmOptions { tolerance: self.ik.tolerance, max_iter: self.ik.max_iter, ..LmOptions::default() },
            residual_tolerance: self.ik.residual_tolerance,
        }
    }

    pub fn steer_setup(&self) -> SteerSetup {
        let mut s = SteerSetup::new(self.rod.clone(), self.base_frame(), self.coils.clone(), self.env());
        s.limits = self.allocation_limits();
        s.ik = self.ik_options();
        s.weights = self.ik.weights;
        s
    }

    pub fn coil_index(&self, name: &str) -> Option<usize> {
        self.coils.iter().position(|c| c.name == name)
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions {
            ratio_grid: self.design.ratio_grid.clone(),
            current_ceiling: self.design.current_ceiling_a,
            entry_angle_to_b0: self.base.entry_angle_to_b0_deg.to_radians(),
        }
    }

    pub fn grasper_model(&self) -> Result<GrasperModel> {
        let coil = self.grasper.clone().ok_or_else(|| Error::Config("no grasper coil configured".into()))?;
        let ideal = GrasperModel::ideal(coil)?;
        let g = &self.grasper_model;
        GrasperModel::new(
            ideal.coil,
            g.lever_arm_m.unwrap_or(ideal.lever_arm),
            g.rest_angle_to_b0_deg.to_radians(),
            g.calibration_factor,
        )
    }

    /// Workspace sweep from the `workspace` section, with the configured base and coils.
    pub fn workspace_problem(&self) -> Result<WorkspaceProblem> {
        let w = &self.workspace;
        let rod = match w.segment_count {
            Some(n) => self.rod.with_segment_count(n)?,
            None => self.rod.clone(),
        };
        let length = w.insertion_m.unwrap_or(rod.free_length());
        Ok(WorkspaceProblem {
            insertion: InsertionState::new(length, length.max(self.teleop.max_insertion_m))?,
            rod,
            base: self.base_frame(),
            coils: self.coils.clone(),
            env: self.env(),
            current_cap: w.current_cap_a,
            power_cap: w.power_cap_w,
            grid: w.grid,
            lattice_max: w.lattice_max_a,
        })
    }

    pub fn phantom_map(&self) -> PhantomMap {
        self.phantom.clone().unwrap_or_else(PhantomMap::bundled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::{table1_grasper, table1_tri_coil};

    #[test]
    fn bundled_table1_matches_catalog() {
        let cfg = Config::table1();
        assert_eq!(cfg.coils, table1_tri_coil());
        assert_eq!(cfg.grasper, Some(table1_grasper()));
        let rod = RodParams::table1();
        assert!((cfg.rod.flexural_rigidity() - rod.flexural_rigidity()).abs() < 1e-18);
        assert_eq!(cfg.rod.free_length(), 0.02);
        assert_eq!(cfg.coil_section_length_m, 0.01);
        assert_eq!(cfg.env(), MagneticEnvironment::default());
    }

    #[test]
    fn round_trips() {
        let cfg = Config::table1();
        assert_eq!(Config::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let mut v: serde_json::Value = serde_json::from_str(Config::table1_json()).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.retain(|k, _| ["schema", "rod", "coils"].contains(&k.as_str()));
        let cfg = Config::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.safety.power_cap_w, 1.2);
        assert_eq!(cfg.teleop.tick_rate_hz, 50.0);
        assert!(cfg.grasper.is_none());
    }

    #[test]
    fn errors_name_the_problem() {
        let e = Config::from_json("{\"schema\":\"endoscope-config/1\",\"rod\":{}}").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let mut cfg = Config::table1();
        cfg.safety.power_cap_w = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("power_cap_w"));
        let text = Config::table1_json().replace("\"schema\"", "\"bogus\": 1, \"schema\"");
        assert!(Config::from_json(&text).unwrap_err().to_string().contains("bogus"));
    }
}
