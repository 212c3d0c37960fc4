use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::{Mat3, Vec3};

/// Poisson ratio assumed for the thermoplastic polyurethane tube when no
/// shear modulus is given.
pub const DEFAULT_POISSON_RATIO: f64 = 0.4;

/// Measured flexural rigidity of the endoscope body, N·m².
pub const MEASURED_FLEXURAL_RIGIDITY: f64 = 4.45e-5;

/// Geometry and material constants of the steerable segment.
///
/// Stiffness enters the rod equations through
/// `K1 = diag(GA, GA, EA)` (shear/extension) and `K2 = diag(EI, EI, GJ)`
/// (bending/torsion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RodParamsDoc", into = "RodParamsDoc")]
pub struct RodParams {
    elastic_modulus: f64,
    shear_modulus: f64,
    cross_section_area: f64,
    area_moment: f64,
    polar_moment: f64,
    linear_density: f64,
    gravity: Vec3,
    free_length: f64,
    segment_count: usize,
    flexural_rigidity: f64,
}

impl RodParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        elastic_modulus: f64,
        shear_modulus: f64,
        cross_section_area: f64,
        area_moment: f64,
        polar_moment: f64,
        linear_density: f64,
        gravity: Vec3,
        free_length: f64,
        segment_count: usize,
    ) -> Result<Self> {
        let positive = [
            ("elastic_modulus", elastic_modulus),
            ("shear_modulus", shear_modulus),
            ("cross_section_area", cross_section_area),
            ("area_moment", area_moment),
            ("polar_moment", polar_moment),
            ("free_length", free_length),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        if !(linear_density.is_finite() && linear_density >= 0.0) {
            return Err(invalid(format!("linear_density must be >= 0, got {linear_density}")));
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(invalid("gravity must be finite"));
        }
        if segment_count < 2 {
            return Err(invalid(format!("segment_count must be >= 2, got {segment_count}")));
        }
        Ok(Self {
            elastic_modulus,
            shear_modulus,
            cross_section_area,
            area_moment,
            polar_moment,
            linear_density,
            gravity,
            free_length,
            segment_count,
            flexural_rigidity: elastic_modulus * area_moment,
        })
    }

    /// Hollow circular tube with the elastic modulus chosen so that `E * I`
    /// equals `flexural_rigidity`. Shear modulus follows from the Poisson ratio.
    pub fn tube(
        outer_diameter: f64,
        inner_diameter: f64,
        flexural_rigidity: f64,
        poisson_ratio: f64,
        density: f64,
        free_length: f64,
        segment_count: usize,
    ) -> Result<Self> {
        if !(outer_diameter > inner_diameter && inner_diameter >= 0.0) {
            return Err(invalid("tube needs outer_diameter > inner_diameter >= 0"));
        }
        if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(invalid(format!("poisson_ratio {poisson_ratio} outside (-1, 0.5)")));
        }
        let (d_o, d_i) = (outer_diameter, inner_diameter);
        let area = std::f64::consts::PI / 4.0 * (d_o * d_o - d_i * d_i);
        let inertia = std::f64::consts::PI / 64.0 * (d_o.powi(4) - d_i.powi(4));
        let e = flexural_rigidity / inertia;
        Self::new(
            e,
            e / (2.0 * (1.0 + poisson_ratio)),
            area,
            inertia,
            2.0 * inertia,
            density * area,
            Vec3::zeros(),
            free_length,
            segment_count,
        )
    }

    /// The Table I endoscope body: a 3.5 mm tube (2.5 mm lumen) with the
    /// measured rigidity, 20 mm steerable length, neutrally buoyant.
    pub fn table1() -> Self {
        Self::tube(3.5e-3, 2.5e-3, MEASURED_FLEXURAL_RIGIDITY, DEFAULT_POISSON_RATIO, 1200.0, 0.02, 100)
            .expect("bundled rod parameters are valid")
    }

    pub fn elastic_modulus(&self) -> f64 {
        self.elastic_modulus
    }
    pub fn shear_modulus(&self) -> f64 {
        self.shear_modulus
    }
    pub fn cross_section_area(&self) -> f64 {
        self.cross_section_area
    }
    pub fn area_moment(&self) -> f64 {
        self.area_moment
    }
    pub fn polar_moment(&self) -> f64 {
        self.polar_moment
    }
    pub fn linear_density(&self) -> f64 {
        self.linear_density
    }
    pub fn gravity(&self) -> Vec3 {
        self.gravity
    }
    pub fn free_length(&self) -> f64 {
        self.free_length
    }
    pub fn segment_count(&self) -> usize {
        self.segment_count
    }
    pub fn flexural_rigidity(&self) -> f64 {
        self.flexural_rigidity
    }

    pub fn with_free_length(&self, free_length: f64) -> Result<Self> {
        let mut p = self.clone();
        p.free_length = free_length;
        p.revalidate()
    }

    pub fn with_segment_count(&self, segment_count: usize) -> Result<Self> {
        let mut p = self.clone();
        p.segment_count = segment_count;
        p.revalidate()
    }

    pub fn with_gravity(&self, gravity: Vec3) -> Result<Self> {
        let mut p = self.clone();
        p.gravity = gravity;
        p.revalidate()
    }

    fn revalidate(self) -> Result<Self> {
        Self::new(
            self.elastic_modulus,
            self.shear_modulus,
            self.cross_section_area,
            self.area_moment,
            self.polar_moment,
            self.linear_density,
            self.gravity,
            self.free_length,
            self.segment_count,
        )
    }

    /// Shear/extension stiffness `diag(GA, GA, EA)`.
    pub fn k1(&self) -> Mat3 {
        let ga = self.shear_modulus * self.cross_section_area;
        Mat3::from_diagonal(&Vec3::new(ga, ga, self.elastic_modulus * self.cross_section_area))
    }

    /// Bending/torsion stiffness `diag(EI, EI, GJ)`.
    pub fn k2(&self) -> Mat3 {
        let ei = self.flexural_rigidity;
        Mat3::from_diagonal(&Vec3::new(ei, ei, self.shear_modulus * self.polar_moment))
    }

    pub(crate) fn k1_inv_diag(&self) -> Vec3 {
        self.k1().diagonal().map(|k| 1.0 / k)
    }

    pub(crate) fn k2_inv_diag(&self) -> Vec3 {
        self.k2().diagonal().map(|k| 1.0 / k)
    }

    /// Step size of the uniform integration grid.
    pub fn step(&self) -> f64 {
        self.free_length / self.segment_count as f64
    }
}

/// On-disk form of [`RodParams`] (SI units).
///
/// Either `elastic_modulus_pa` or `flexural_rigidity_nm2` must be given;
/// `shear_modulus_pa` defaults to `E / (2 (1 + poisson_ratio))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodParamsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elastic_modulus_pa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flexural_rigidity_nm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear_modulus_pa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_ratio: Option<f64>,
    pub cross_section_area_m2: f64,
    pub area_moment_m4: f64,
    pub polar_moment_m4: f64,
    #[serde(default)]
    pub linear_density_kg_per_m: f64,
    #[serde(default)]
    pub gravity_m_per_s2: [f64; 3],
    pub free_length_m: f64,
    #[serde(default = "default_segments")]
    pub segment_count: usize,
}

fn default_segments() -> usize {
    100
}

impl TryFrom<RodParamsDoc> for RodParams {
    type Error = crate::Error;

    fn try_from(doc: RodParamsDoc) -> Result<Self> {
        let e = match (doc.elastic_modulus_pa, doc.flexural_rigidity_nm2) {
            (Some(e), None) => e,
            (None, Some(ei)) => ei / doc.area_moment_m4,
            (Some(_), Some(_)) => {
                return Err(invalid("give elastic_modulus_pa or flexural_rigidity_nm2, not both"))
            }
            (None, None) => {
                return Err(invalid("missing elastic_modulus_pa or flexural_rigidity_nm2"))
            }
        };
        let g = match doc.shear_modulus_pa {
            Some(g) => g,
            None => e / (2.0 * (1.0 + doc.poisson_ratio.unwrap_or(DEFAULT_POISSON_RATIO))),
        };
        RodParams::new(
            e,
            g,
            doc.cross_section_area_m2,
            doc.area_moment_m4,
            doc.polar_moment_m4,
            doc.linear_density_kg_per_m,
            Vec3::from(doc.gravity_m_per_s2),
            doc.free_length_m,
            doc.segment_count,
        )
    }
}

impl From<RodParams> for RodParamsDoc {
    fn from(p: RodParams) -> Self {
        Self {
            elastic_modulus_pa: Some(p.elastic_modulus),
            flexural_rigidity_nm2: None,
            shear_modulus_pa: Some(p.shear_modulus),
            poisson_ratio: None,
            cross_section_area_m2: p.cross_section_area,
            area_moment_m4: p.area_moment,
            polar_moment_m4: p.polar_moment,
            linear_density_kg_per_m: p.linear_density,
            gravity_m_per_s2: p.gravity.into(),
            free_length_m: p.free_length,
            segment_count: p.segment_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_rigidity_matches_measurement() {
        let p = RodParams::table1();
        let rel = (p.flexural_rigidity() - MEASURED_FLEXURAL_RIGIDITY).abs() / MEASURED_FLEXURAL_RIGIDITY;
        assert!(rel < 1e-12);
        assert!((p.shear_modulus() - p.elastic_modulus() / 2.8).abs() < 1e-9 * p.elastic_modulus());
    }

    #[test]
    fn rejects_bad_values() {
        let p = RodParams::table1();
        assert!(p.with_segment_count(1).is_err());
        assert!(p.with_free_length(0.0).is_err());
        assert!(p.with_free_length(f64::NAN).is_err());
        assert!(RodParams::new(1.0, 0.0, 1.0, 1.0, 1.0, 0.0, Vec3::zeros(), 1.0, 4).is_err());
    }

    #[test]
    fn json_accepts_rigidity_instead_of_modulus() {
        let json = r#"{
            "flexural_rigidity_nm2": 4.45e-5,
            "cross_section_area_m2": 4.712e-6,
            "area_moment_m4": 5.449e-12,
            "polar_moment_m4": 1.0898e-11,
            "free_length_m": 0.03,
            "segment_count": 50
        }"#;
        let p: RodParams = serde_json::from_str(json).unwrap();
        assert!((p.flexural_rigidity() - 4.45e-5).abs() < 1e-17);
        assert_eq!(p.segment_count(), 50);
        assert_eq!(p.gravity(), Vec3::zeros());

        let back: RodParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn json_rejects_both_moduli() {
        let json = r#"{
            "elastic_modulus_pa": 1e7, "flexural_rigidity_nm2": 4.45e-5,
            "cross_section_area_m2": 1e-6, "area_moment_m4": 1e-12,
            "polar_moment_m4": 2e-12, "free_length_m": 0.03
        }"#;
        assert!(serde_json::from_str::<RodParams>(json).is_err());
    }
}
