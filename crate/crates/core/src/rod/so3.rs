//! Rotation helpers on SO(3): hat/vee, exponential and logarithm maps,
//! and projection back onto the group.

use crate::{Mat3, Vec3};

/// Skew-symmetric matrix with `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; takes the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues' formula.
pub fn exp(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Logarithm map returning the rotation vector (axis times angle, angle in
/// `[0, pi]`).
///
/// Uses the antisymmetric part away from pi and the symmetric part near pi,
/// where the antisymmetric part vanishes.
pub fn log(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(r);
    let sin = w.norm();
    let theta = sin.atan2(cos);

    if theta < 1e-6 {
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-3 {
        return w * (theta / sin);
    }

    // Near pi: (R + R^T)/2 = cos(t) I + (1 - cos(t)) a a^T.
    let sym = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
    let i = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vec3 = sym.column(i).into_owned();
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Relative rotation error `log(ra^T rb)`, expressed in the frame of `ra`.
///
/// Zero iff the rotations coincide; the norm is the geodesic angle and never
/// exceeds pi.
pub fn so3_log_distance(ra: &Mat3, rb: &Mat3) -> Vec3 {
    log(&(ra.transpose() * rb))
}

/// Frobenius norm of `R^T R - I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

/// Projects a nearly orthonormal matrix onto SO(3) (the orthogonal polar
/// factor), using Newton-Schulz iterations `R <- R (3I - R^T R) / 2`.
///
/// Falls back to an SVD when the input is far from orthonormal.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let mut q = *r;
    if orthonormality_error(&q) > 0.5 {
        let svd = q.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return q;
        };
        let mut out = u * v_t;
        if out.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            out = u * v_t;
        }
        return out;
    }
    for _ in 0..4 {
        let e = q.transpose() * q - Mat3::identity();
        if e.norm() < 1e-15 {
            break;
        }
        q -= q * e * 0.5;
    }
    q
}

/// Rotation of `angle` about a unit `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    exp(&(axis.normalize() * angle))
}

/// Angle in radians between the local z axes of two frames.
pub fn tangent_angle(ra: &Mat3, rb: &Mat3) -> f64 {
    let a = ra.column(2);
    let b = rb.column(2);
    a.cross(&b).norm().atan2(a.dot(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn log_of_identity_is_zero() {
        let r = axis_angle(&Vec3::new(0.3, -0.2, 0.9), 0.7);
        assert_eq!(so3_log_distance(&r, &r).norm(), 0.0);
    }

    #[test]
    fn quarter_turn_about_x() {
        let rx = axis_angle(&Vec3::x(), FRAC_PI_2);
        let d = so3_log_distance(&Mat3::identity(), &rx);
        assert!((d - Vec3::new(FRAC_PI_2, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn log_exp_round_trip_near_pi() {
        for angle in [PI, PI - 1e-9, PI - 1e-5, PI - 2e-3] {
            let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
            let phi = log(&axis_angle(&axis, angle));
            assert!(phi.iter().all(|c| c.is_finite()));
            assert!((phi.norm() - angle).abs() < 1e-9, "{angle}");
            // At exactly pi the sign of the axis is ambiguous.
            let err = (phi - axis * angle).norm().min((phi + axis * angle).norm());
            assert!(err < 1e-7, "{angle}: {err}");
        }
    }

    #[test]
    fn small_angles_are_accurate() {
        let phi = Vec3::new(1e-9, -3e-10, 2e-9);
        assert!((log(&exp(&phi)) - phi).norm() < 1e-20);
    }

    #[test]
    fn orthonormalize_restores_group() {
        let mut r = axis_angle(&Vec3::new(0.2, 0.4, 0.1), 1.2);
        r[(0, 1)] += 1e-6;
        r[(2, 2)] -= 3e-7;
        let q = orthonormalize(&r);
        assert!(orthonormality_error(&q) < 1e-14);
        assert!((q.determinant() - 1.0).abs() < 1e-14);
        assert!((q - r).norm() < 1e-5);
    }
}
