use serde::{Deserialize, Serialize};

use super::geometry::{edges, first_contact, is_simple, lerp, point_in_polygon, P2};
use crate::error::{invalid, Error, Result};
use crate::rod::FramePose;
use crate::{Mat3, Vec3};

pub const PHANTOM_SCHEMA: &str = "phantom/1";

/// Default capture distance for tumor contact, mm.
pub const DEFAULT_CAPTURE_DISTANCE_MM: f64 = 2.0;

const BUNDLED_PHANTOM: &str = include_str!("../../data/two_ventricle_phantom.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryPose {
    pub position_mm: P2,
    /// Heading of the insertion axis measured from B0 toward the slice u axis.
    #[serde(default = "default_heading")]
    pub heading_deg: f64,
}

fn default_heading() -> f64 {
    90.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tumor {
    pub center_mm: P2,
    pub radius_mm: f64,
}

/// Placement of the slice plane in the inertial frame. Slice coordinates
/// `(u, v)` in mm map to `origin + (u * u_axis + v * v_axis) / 1000` m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceFrame {
    pub origin_m: [f64; 3],
    pub u_axis: [f64; 3],
    /// Usually the B0 direction.
    pub v_axis: [f64; 3],
}

impl Default for SliceFrame {
    fn default() -> Self {
        Self { origin_m: [0.0; 3], u_axis: [1.0, 0.0, 0.0], v_axis: [0.0, 0.0, 1.0] }
    }
}

impl SliceFrame {
    fn axes(&self) -> (Vec3, Vec3, Vec3) {
        (Vec3::from(self.origin_m), Vec3::from(self.u_axis), Vec3::from(self.v_axis))
    }

    /// Inertial point (m) to slice coordinates (mm); the out-of-plane part is dropped.
    pub fn project(&self, p: &Vec3) -> P2 {
        let (o, u, v) = self.axes();
        let d = p - o;
        [d.dot(&u) * 1e3, d.dot(&v) * 1e3]
    }

    pub fn lift(&self, q: P2) -> Vec3 {
        let (o, u, v) = self.axes();
        o + (u * q[0] + v * q[1]) * 1e-3
    }

    /// Signed distance from the slice plane, mm.
    pub fn offset_mm(&self, p: &Vec3) -> f64 {
        let (o, u, v) = self.axes();
        (p - o).dot(&v.cross(&u)) * 1e3
    }
}

/// A 2D ventricle slice: wall polygons, the entry port and the tumor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomMap {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    /// Synthetic maps are hand-drawn, not patient data.
    #[serde(default)]
    pub synthetic: bool,
    pub wall_polygons: Vec<Vec<P2>>,
    pub entry: EntryPose,
    pub tumor: Tumor,
    #[serde(default)]
    pub slice_frame: SliceFrame,
}

impl PhantomMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: Self = serde_json::from_str(text).map_err(|e| Error::Phantom(format!("{PHANTOM_SCHEMA}: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("phantom map serialises")
    }

    /// The bundled synthetic two-ventricle slice.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_PHANTOM).expect("bundled phantom is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Phantom(msg));
        if self.schema != PHANTOM_SCHEMA {
            return bad(format!("schema must be {PHANTOM_SCHEMA:?}, got {:?}", self.schema));
        }
        if self.wall_polygons.is_empty() {
            return bad("wall_polygons: at least one polygon required".into());
        }
        for (i, poly) in self.wall_polygons.iter().enumerate() {
            if poly.len() < 3 || poly.iter().flatten().any(|x| !x.is_finite()) {
                return bad(format!("wall_polygons[{i}]: need >= 3 finite vertices"));
            }
            if !is_simple(poly) {
                return bad(format!("wall_polygons[{i}]: polygon is self-intersecting"));
            }
        }
        let t = &self.tumor;
        if !(t.radius_mm.is_finite() && t.radius_mm > 0.0) {
            return bad("tumor.radius_mm must be > 0".into());
        }
        if !self.wall_polygons.iter().any(|p| point_in_polygon(t.center_mm, p)) {
            return bad("tumor.center_mm must lie inside a wall polygon".into());
        }
        if !self.entry.heading_deg.is_finite() || self.entry.position_mm.iter().any(|x| !x.is_finite()) {
            return bad("entry must be finite".into());
        }
        let (_, u, v) = self.slice_frame.axes();
        if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 || u.dot(&v).abs() > 1e-9 {
            return bad("slice_frame axes must be orthonormal".into());
        }
        Ok(())
    }

    /// Base frame at the entry port: tangent along the entry heading, frame
    /// y axis normal to the slice so that bending about it stays in the slice.
    pub fn entry_frame(&self) -> FramePose {
        let (_, u, v) = self.slice_frame.axes();
        let a = self.entry.heading_deg.to_radians();
        let t = u * a.sin() + v * a.cos();
        let n = v.cross(&u);
        let rotation = Mat3::from_columns(&[n.cross(&t), n, t]);
        FramePose::new(self.slice_frame.lift(self.entry.position_mm), rotation, crate::rod::FrameLabel::Control)
            .expect("orthonormal slice axes give a rotation")
    }

    pub fn inside_any(&self, p: P2) -> bool {
        self.wall_polygons.iter().any(|poly| point_in_polygon(p, poly))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    /// Index of the rod segment (between polyline points `i` and `i + 1`).
    pub segment: usize,
    pub polygon: usize,
    pub edge: usize,
    pub point_mm: P2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub collided: bool,
    pub first_contact: Option<Contact>,
}

/// First wall contact along the rod, walking from its base. Touching counts
/// as contact; zero-length segments are skipped.
pub fn collide(rod_polyline: &[P2], map: &PhantomMap) -> Result<CollisionReport> {
    if rod_polyline.len() < 2 {
        return Err(invalid("polyline needs at least 2 points"));
    }
    for (s, w) in rod_polyline.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let mut best: Option<(f64, Contact)> = None;
        for (pi, poly) in map.wall_polygons.iter().enumerate() {
            for (ei, (c, d)) in edges(poly).enumerate() {
                if let Some(t) = first_contact(a, b, c, d) {
                    if best.as_ref().is_none_or(|(bt, _)| t < *bt) {
                        best = Some((t, Contact { segment: s, polygon: pi, edge: ei, point_mm: lerp(a, b, t) }));
                    }
                }
            }
        }
        if let Some((_, contact)) = best {
            return Ok(CollisionReport { collided: true, first_contact: Some(contact) });
        }
    }
    Ok(CollisionReport { collided: false, first_contact: None })
}

/// Whether the tip is within `capture_distance` (mm) of the tumor surface.
pub fn tumor_reached(tip_mm: P2, map: &PhantomMap, capture_distance: f64) -> Result<bool> {
    if !(capture_distance > 0.0) {
        return Err(invalid("capture distance must be > 0"));
    }
    let c = map.tumor.center_mm;
    let d = (tip_mm[0] - c[0]).hypot(tip_mm[1] - c[1]);
    Ok(d <= map.tumor.radius_mm + capture_distance)
}

/// How far the endoscope has been pushed through the entry port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionState {
    inserted_length: f64,
    max_insertion: f64,
}

impl InsertionState {
    pub fn new(inserted_length: f64, max_insertion: f64) -> Result<Self> {
        if !(max_insertion.is_finite() && max_insertion > 0.0) {
            return Err(invalid("max insertion must be > 0"));
        }
        if !(inserted_length >= 0.0 && inserted_length <= max_insertion) {
            return Err(invalid(format!("inserted length {inserted_length} outside [0, {max_insertion}]")));
        }
        Ok(Self { inserted_length, max_insertion })
    }

    pub fn inserted_length(&self) -> f64 {
        self.inserted_length
    }

    pub fn max_insertion(&self) -> f64 {
        self.max_insertion
    }

    /// Moves by `velocity * dt`, clamped to the travel; returns whether it hit a stop.
    pub fn advance(&mut self, velocity: f64, dt: f64) -> bool {
        let target = self.inserted_length + velocity * dt;
        self.inserted_length = target.clamp(0.0, self.max_insertion);
        self.inserted_length != target
    }
}
