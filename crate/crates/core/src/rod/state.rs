use std::fmt::Write as _;

use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::so3;
use crate::error::{invalid, Result};
use crate::{Mat3, Vec3};

/// Tolerance on `||R^T R - I||_F` and `|det R - 1|` accepted for rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

pub(crate) fn check_rotation(r: &Mat3, what: &str) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(invalid(format!("{what}: non-finite rotation")));
    }
    let ortho = so3::orthonormality_error(r);
    let det = (r.determinant() - 1.0).abs();
    if ortho > ROTATION_TOLERANCE || det > ROTATION_TOLERANCE {
        return Err(invalid(format!(
            "{what}: not a rotation (orthonormality error {ortho:.3e}, det error {det:.3e})"
        )));
    }
    Ok(())
}

/// One node of the discretised rod: position, orientation, internal force
/// and internal moment, all in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentState {
    pub position: Vec3,
    pub rotation: Mat3,
    pub force: Vec3,
    pub moment: Vec3,
}

impl SegmentState {
    /// Unit tangent (local z axis).
    pub fn tangent(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.rotation.iter().all(|x| x.is_finite())
            && self.force.iter().all(|x| x.is_finite())
            && self.moment.iter().all(|x| x.is_finite())
    }
}

/// The full rod: `N + 1` nodes at arc coordinates `0 = s_0 < ... < s_N = L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodState {
    segments: Vec<SegmentState>,
    arc: Vec<f64>,
}

impl RodState {
    pub(crate) fn from_parts(segments: Vec<SegmentState>, arc: Vec<f64>) -> Self {
        debug_assert_eq!(segments.len(), arc.len());
        debug_assert!(arc.windows(2).all(|w| w[1] > w[0]));
        Self { segments, arc }
    }

    pub fn segments(&self) -> &[SegmentState] {
        &self.segments
    }

    pub fn arc_coordinates(&self) -> &[f64] {
        &self.arc
    }

    pub fn base(&self) -> &SegmentState {
        &self.segments[0]
    }

    pub fn tip(&self) -> &SegmentState {
        self.segments.last().expect("rod state has at least three nodes")
    }

    pub fn tip_pose(&self) -> FramePose {
        let tip = self.tip();
        FramePose { origin: tip.position, rotation: tip.rotation, label: FrameLabel::Tip }
    }

    /// Angle between base and tip tangents, radians in `[0, pi]`.
    pub fn bend_angle(&self) -> f64 {
        so3::tangent_angle(&self.base().rotation, &self.tip().rotation)
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.segments.iter().map(|s| s.position)
    }

    /// CSV export, one row per node. Orientation is written as a unit
    /// quaternion with non-negative scalar part.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# rodstate/1\n");
        out.push_str("s_m,px_m,py_m,pz_m,qw,qx,qy,qz,nx_n,ny_n,nz_n,mx_nm,my_nm,mz_nm\n");
        for (s, seg) in self.arc.iter().zip(&self.segments) {
            let q = rotation_to_quaternion(&seg.rotation);
            let (p, n, m) = (seg.position, seg.force, seg.moment);
            let _ = writeln!(
                out,
                "{s},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.x, p.y, p.z, q.w, q.i, q.j, q.k, n.x, n.y, n.z, m.x, m.y, m.z
            );
        }
        out
    }
}

pub(crate) fn rotation_to_quaternion(r: &Mat3) -> nalgebra::Quaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let q = q.into_inner();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLabel {
    Inertial,
    Control,
    Tip,
}

/// A labelled rigid frame: the inertial (scanner) frame, the control frame
/// at the base of the free length, or the tip frame at the start of the coils.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub origin: Vec3,
    pub rotation: Mat3,
    pub label: FrameLabel,
}

impl FramePose {
    pub fn new(origin: Vec3, rotation: Mat3, label: FrameLabel) -> Result<Self> {
        if !origin.iter().all(|x| x.is_finite()) {
            return Err(invalid("frame origin must be finite"));
        }
        check_rotation(&rotation, "frame")?;
        Ok(Self { origin, rotation, label })
    }

    /// Control frame whose tangent makes `angle` with the field direction
    /// `+z`, tilted about the inertial y axis. Bending about the frame's y
    /// axis stays in the x-z plane, which contains the field.
    pub fn control_at_angle_to_field(origin: Vec3, angle: f64) -> Self {
        Self {
            origin,
            rotation: so3::axis_angle(&Vec3::y(), angle),
            label: FrameLabel::Control,
        }
    }

    /// Orientation as a unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = rotation_to_quaternion(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    pub fn identity(label: FrameLabel) -> Self {
        Self { origin: Vec3::zeros(), rotation: Mat3::identity(), label }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_rotation() {
        let mut r = Mat3::identity();
        r[(0, 0)] = 1.01;
        assert!(FramePose::new(Vec3::zeros(), r, FrameLabel::Control).is_err());
        assert!(FramePose::new(Vec3::zeros(), -Mat3::identity(), FrameLabel::Control).is_err());
    }

    #[test]
    fn angle_to_field_frame() {
        let f = FramePose::control_at_angle_to_field(Vec3::zeros(), std::f64::consts::FRAC_PI_2);
        assert!((f.rotation.column(2) - Vec3::x()).norm() < 1e-15);
        assert!((f.rotation.column(1) - Vec3::y()).norm() < 1e-15);
    }
}
