//! Static Cosserat rod equations and their RK4 integration along arc length.

use super::params::RodParams;
use super::so3;
use super::state::{check_rotation, FramePose, RodState, SegmentState};
use crate::error::{invalid, Error, Result};
use crate::{Mat3, Vec3};

/// Arc-length derivative of a [`SegmentState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRate {
    pub position: Vec3,
    pub rotation: Mat3,
    pub force: Vec3,
    pub moment: Vec3,
}

/// Right-hand side of the static rod equations:
///
/// ```text
/// p' = R v         v = e_z + K1^-1 R^T n
/// R' = R [u]x      u = K2^-1 R^T m
/// n' = -rho A g
/// m' = -p' x n
/// ```
///
/// Stiffness is validated when `params` is built, so the compliance
/// matrices always exist.
pub fn rod_rhs(state: &SegmentState, params: &RodParams) -> SegmentRate {
    let r = &state.rotation;
    let rt = r.transpose();
    let v = Vec3::z() + (rt * state.force).component_mul(&params.k1_inv_diag());
    let u = (rt * state.moment).component_mul(&params.k2_inv_diag());
    let dp = r * v;
    SegmentRate {
        position: dp,
        rotation: r * so3::skew(&u),
        force: -params.linear_density() * params.gravity(),
        moment: -dp.cross(&state.force),
    }
}

fn advance(y: &SegmentState, k: &SegmentRate, h: f64) -> SegmentState {
    SegmentState {
        position: y.position + k.position * h,
        rotation: y.rotation + k.rotation * h,
        force: y.force + k.force * h,
        moment: y.moment + k.moment * h,
    }
}

/// Integrates the rod from its base with classical RK4 on the uniform grid
/// `h = L / N`, projecting orientation back onto SO(3) after every step.
///
/// `n0` and `m0` are the internal force and moment at the base, inertial
/// frame. The last node is the tip frame.
pub fn integrate_forward(base: &FramePose, n0: &Vec3, m0: &Vec3, params: &RodParams) -> Result<RodState> {
    check_rotation(&base.rotation, "base pose")?;
    if !(n0.iter().chain(m0.iter()).all(|x| x.is_finite())) {
        return Err(invalid("base force and moment must be finite"));
    }
    let n = params.segment_count();
    let h = params.step();

    let mut segments = Vec::with_capacity(n + 1);
    let mut arc = Vec::with_capacity(n + 1);
    let mut y = SegmentState { position: base.origin, rotation: base.rotation, force: *n0, moment: *m0 };
    segments.push(y);
    arc.push(0.0);

    for i in 0..n {
        let k1 = rod_rhs(&y, params);
        let k2 = rod_rhs(&advance(&y, &k1, 0.5 * h), params);
        let k3 = rod_rhs(&advance(&y, &k2, 0.5 * h), params);
        let k4 = rod_rhs(&advance(&y, &k3, h), params);
        let w = h / 6.0;
        y = SegmentState {
            position: y.position + (k1.position + (k2.position + k3.position) * 2.0 + k4.position) * w,
            rotation: y.rotation + (k1.rotation + (k2.rotation + k3.rotation) * 2.0 + k4.rotation) * w,
            force: y.force + (k1.force + (k2.force + k3.force) * 2.0 + k4.force) * w,
            moment: y.moment + (k1.moment + (k2.moment + k3.moment) * 2.0 + k4.moment) * w,
        };
        let s = if i + 1 == n { params.free_length() } else { (i + 1) as f64 * h };
        if !y.is_finite() {
            return Err(Error::Divergence { arc: s });
        }
        y.rotation = so3::orthonormalize(&y.rotation);
        segments.push(y);
        arc.push(s);
    }
    Ok(RodState::from_parts(segments, arc))
}
