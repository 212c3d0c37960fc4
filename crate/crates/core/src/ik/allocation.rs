//! Current allocation: coil currents producing a desired tip torque at
//! minimum Joule power, within per-coil current limits and a power cap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actuation::{coil_resistance, lorentz_torque, CoilSpec, MagneticEnvironment};
use crate::error::{invalid, Result};
use crate::rod::check_rotation;
use crate::rod::so3::skew;
use crate::{Mat3, Vec3};

/// Largest coil count handled by the exact active-set search (`3^n` sets).
pub const MAX_ALLOCATION_COILS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationLimits {
    /// Per-coil current magnitude limits, A.
    pub current_caps: Vec<f64>,
    /// Total Joule power limit, W.
    pub power_cap: f64,
}

impl AllocationLimits {
    /// Each coil's rated current and no power limit.
    pub fn rated(coils: &[CoilSpec]) -> Self {
        Self { current_caps: coils.iter().map(|c| c.current_limit).collect(), power_cap: f64::INFINITY }
    }

    pub fn with_power_cap(mut self, power_cap: f64) -> Self {
        self.power_cap = power_cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub currents: Vec<f64>,
    pub power: f64,
    /// Torque the currents produce at the given tip orientation.
    pub achieved_torque: Vec3,
    /// Magnitude of the requested torque along B0, which no coil can produce.
    pub torque_residual: f64,
    /// Fraction of the producible torque that was delivered (1 unless saturated).
    pub scale: f64,
    /// Limits prevented the full producible torque.
    pub saturated: bool,
}

/// Linear current-to-torque map at a fixed tip orientation.
struct TorqueMap {
    /// 3 x n, column j is the torque per ampere of coil j.
    matrix: DMatrix<f64>,
    resistance: Vec<f64>,
}

impl TorqueMap {
    fn new(coils: &[CoilSpec], tip_rotation: &Mat3, env: &MagneticEnvironment) -> Result<Self> {
        let b = -skew(&env.b0()) * tip_rotation;
        let mut matrix = DMatrix::zeros(3, coils.len());
        let mut resistance = Vec::with_capacity(coils.len());
        for (j, c) in coils.iter().enumerate() {
            matrix.set_column(j, &(b * c.axis() * c.area_turns()?));
            resistance.push(coil_resistance(c)?);
        }
        Ok(Self { matrix, resistance })
    }

    fn power(&self, currents: &[f64]) -> f64 {
        currents.iter().zip(&self.resistance).map(|(i, r)| i * i * r).sum()
    }

    /// Minimum-power currents for `target` among those within the box, or
    /// `None` if the box admits no exact solution. Every active set
    /// (each coil free, at `+cap` or at `-cap`) is tried; for a convex
    /// problem the optimum is the box-feasible stationary point of its own
    /// active set.
    fn solve(&self, target: &Vec3, caps: &[f64]) -> Option<Vec<f64>> {
        let n = caps.len();
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE) * caps.iter().fold(0.0f64, |a, c| a.max(*c));
        let tol = 1e-10 * (target.norm() + scale * 1e-6);
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut pattern = vec![0u8; n];
        loop {
            if let Some(currents) = self.solve_pattern(&pattern, target, caps, tol) {
                let p = self.power(&currents);
                let better = match &best {
                    None => true,
                    Some((bp, bc)) => {
                        p < bp - 1e-15 * bp.max(1e-30) || (p <= bp + 1e-15 * bp.max(1e-30) && currents < *bc)
                    }
                };
                if better {
                    best = Some((p, currents));
                }
                // With nothing clamped the stationary point is the global optimum.
                if pattern.iter().all(|s| *s == 0) {
                    break;
                }
            }
            if !next_pattern(&mut pattern) {
                break;
            }
        }
        best.map(|(_, c)| c)
    }

    fn solve_pattern(&self, pattern: &[u8], target: &Vec3, caps: &[f64], tol: f64) -> Option<Vec<f64>> {
        let mut currents = vec![0.0; pattern.len()];
        let mut rhs = DVector::from_column_slice(target.as_slice());
        let mut free = Vec::new();
        for (j, s) in pattern.iter().enumerate() {
            match s {
                0 => free.push(j),
                1 => currents[j] = caps[j],
                _ => currents[j] = -caps[j],
            }
            if *s != 0 {
                if caps[j] == 0.0 && *s == 2 {
                    return None;
                }
                rhs -= self.matrix.column(j) * currents[j];
            }
        }
        if !free.is_empty() {
            // Substitute y = sqrt(R) I so the objective is |y|^2.
            let mut a = DMatrix::zeros(3, free.len());
            for (k, &j) in free.iter().enumerate() {
                a.set_column(k, &(self.matrix.column(j) / self.resistance[j].sqrt()));
            }
            let y = a.clone().pseudo_inverse(1e-12 * a.amax().max(f64::MIN_POSITIVE)).ok()? * &rhs;
            for (k, &j) in free.iter().enumerate() {
                currents[j] = y[k] / self.resistance[j].sqrt();
            }
            rhs -= a * y;
        }
        let within = free.iter().all(|&j| currents[j].abs() <= caps[j] * (1.0 + 1e-12));
        (rhs.norm() <= tol && within).then(|| {
            for &j in &free {
                currents[j] = currents[j].clamp(-caps[j], caps[j]);
            }
            currents
        })
    }

    fn feasible(&self, target: &Vec3, caps: &[f64], power_cap: f64) -> Option<Vec<f64>> {
        self.solve(target, caps).filter(|c| self.power(c) <= power_cap)
    }
}

/// Advances a base-3 counter; false once every pattern has been visited.
fn next_pattern(p: &mut [u8]) -> bool {
    for s in p.iter_mut() {
        if *s < 2 {
            *s += 1;
            return true;
        }
        *s = 0;
    }
    false
}

/// Minimum-power currents delivering `desired_torque` at `tip_rotation`.
///
/// The component of the torque along B0 cannot be produced; it is dropped
/// and reported as `torque_residual`. If the rest is out of reach within
/// `limits`, the largest feasible fraction of it is delivered instead and
/// the result is marked saturated.
pub fn allocate_currents(
    desired_torque: &Vec3,
    tip_rotation: &Mat3,
    coils: &[CoilSpec],
    env: &MagneticEnvironment,
    limits: &AllocationLimits,
) -> Result<AllocationResult> {
    check_rotation(tip_rotation, "tip rotation")?;
    if !desired_torque.iter().all(|t| t.is_finite()) {
        return Err(invalid("desired torque must be finite"));
    }
    if coils.is_empty() || coils.len() > MAX_ALLOCATION_COILS {
        return Err(invalid(format!("allocation needs 1 to {MAX_ALLOCATION_COILS} coils, got {}", coils.len())));
    }
    if limits.current_caps.len() != coils.len() {
        return Err(invalid(format!("{} current caps for {} coils", limits.current_caps.len(), coils.len())));
    }
    if limits.current_caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(invalid("current caps must be finite and >= 0"));
    }
    if !(limits.power_cap >= 0.0) {
        return Err(invalid("power cap must be >= 0"));
    }
    let caps: Vec<f64> = limits
        .current_caps
        .iter()
        .zip(coils)
        .map(|(cap, coil)| cap.min(coil.current_limit))
        .collect();

    let map = TorqueMap::new(coils, tip_rotation, env)?;
    let dir = env.direction();
    let along = desired_torque.dot(&dir);
    let target = desired_torque - dir * along;

    let (currents, scale, saturated) = match map.feasible(&target, &caps, limits.power_cap) {
        Some(c) => (c, 1.0, false),
        None => {
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = vec![0.0; coils.len()];
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                match map.feasible(&(target * mid), &caps, limits.power_cap) {
                    Some(c) => {
                        lo = mid;
                        best = c;
                    }
                    None => hi = mid,
                }
            }
            (best, lo, true)
        }
    };

    let moments: Vec<Vec3> = coils.iter().zip(&currents).map(|(c, i)| c.axis() * (c.area_turns().unwrap_or(0.0) * i)).collect();
    Ok(AllocationResult {
        power: map.power(&currents),
        achieved_torque: lorentz_torque(&moments, tip_rotation, env),
        currents,
        torque_residual: along.abs(),
        scale,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::{table1_tri_coil, total_moment};
    use crate::rod::so3::axis_angle;

    fn env() -> MagneticEnvironment {
        MagneticEnvironment::default()
    }

    #[test]
    fn quarter_bend_uses_axial_coil_only() {
        let coils = table1_tri_coil();
        let tip = axis_angle(&Vec3::y(), std::f64::consts::FRAC_PI_2);
        let tau = Vec3::new(0.0, 3.4950e-3, 0.0);
        let out = allocate_currents(&tau, &tip, &coils, &env(), &AllocationLimits::rated(&coils)).unwrap();
        assert!(!out.saturated);
        assert!(out.currents[0].abs() < 1e-12 && out.currents[1].abs() < 1e-12);
        assert!((out.currents[2] + 0.20758).abs() < 1e-4, "{:?}", out.currents);
        assert!((out.power - 0.39589).abs() < 1e-3);
        assert!((out.achieved_torque - tau).norm() < 1e-12);
    }

    #[test]
    fn field_component_is_reported_not_produced() {
        let coils = table1_tri_coil();
        let tau = Vec3::new(1e-4, 0.0, 5e-4);
        let out = allocate_currents(&tau, &Mat3::identity(), &coils, &env(), &AllocationLimits::rated(&coils)).unwrap();
        assert!((out.torque_residual - 5e-4).abs() < 1e-15);
        assert!(out.achieved_torque.z.abs() < 1e-18);
        assert!((out.achieved_torque.x - 1e-4).abs() < 1e-14);
    }

    #[test]
    fn saturation_scales_toward_the_target() {
        let coils = table1_tri_coil();
        let tip = axis_angle(&Vec3::y(), std::f64::consts::FRAC_PI_2);
        let tau = Vec3::new(0.0, 1e-2, 0.0);
        let out = allocate_currents(&tau, &tip, &coils, &env(), &AllocationLimits::rated(&coils)).unwrap();
        assert!(out.saturated);
        assert!((out.currents[2] + 0.3).abs() < 1e-9);
        let dir = out.achieved_torque.normalize();
        assert!((dir - Vec3::y()).norm() < 1e-9);

        let capped = AllocationLimits::rated(&coils).with_power_cap(0.2);
        let out = allocate_currents(&tau, &tip, &coils, &env(), &capped).unwrap();
        assert!(out.saturated && out.power <= 0.2);
        assert!(out.power > 0.2 * (1.0 - 1e-9));
    }

    #[test]
    fn matches_closed_form_when_unconstrained() {
        let coils = table1_tri_coil();
        let tip = axis_angle(&Vec3::new(0.3, -0.5, 0.2), 0.7);
        let tau = Vec3::new(2e-4, -1e-4, 0.0);
        let out = allocate_currents(&tau, &tip, &coils, &env(), &AllocationLimits::rated(&coils)).unwrap();
        // Closed form I = W^-1 A^T (A W^-1 A^T)^+ tau on the two producible directions.
        let map = TorqueMap::new(&coils, &tip, &env()).unwrap();
        let winv = DMatrix::from_diagonal(&DVector::from_iterator(3, map.resistance.iter().map(|r| 1.0 / r)));
        let a = &map.matrix;
        let g = (a * &winv * a.transpose()).pseudo_inverse(1e-20).unwrap();
        let i = &winv * a.transpose() * g * DVector::from_column_slice(tau.as_slice());
        for j in 0..3 {
            assert!((out.currents[j] - i[j]).abs() < 1e-10, "{:?} vs {i}", out.currents);
        }
        let m = total_moment(&coils, &out.currents).unwrap();
        assert!(((tip * m).cross(&env().b0()) - tau).norm() < 1e-12);
    }

    #[test]
    fn grid_search_never_beats_active_set() {
        let coils = table1_tri_coil();
        let tip = axis_angle(&Vec3::new(1.0, 0.2, 0.0), 1.1);
        let caps = AllocationLimits { current_caps: vec![0.05, 0.3, 0.1], power_cap: f64::INFINITY };
        let tau = Vec3::new(0.0, 1.5e-4, 1e-4);
        let out = allocate_currents(&tau, &tip, &coils, &env(), &caps).unwrap();
        let map = TorqueMap::new(&coils, &tip, &env()).unwrap();
        let target = tau - env().direction() * tau.dot(&env().direction());
        // Exact solutions form a line (3 coils, rank 2): parametrise by I_0.
        let mut best = f64::INFINITY;
        for k in 0..=20_000 {
            let i0 = -0.05 + 0.1 * k as f64 / 20_000.0;
            let rhs = DVector::from_column_slice(target.as_slice()) - map.matrix.column(0) * i0;
            let sub = map.matrix.columns(1, 2).into_owned();
            let y = sub.clone().pseudo_inverse(1e-20).unwrap() * &rhs;
            if (sub * &y - rhs).norm() > 1e-12 || y[0].abs() > 0.3 || y[1].abs() > 0.1 {
                continue;
            }
            best = best.min(map.power(&[i0, y[0], y[1]]));
        }
        assert!(!out.saturated);
        assert!(out.currents[0].abs() == 0.05, "a cap should be active: {:?}", out.currents);
        assert!(out.power <= best + 1e-12, "{} vs {best}", out.power);
        assert!(out.power >= best * (1.0 - 1e-5));
    }

    #[test]
    fn rejects_mismatched_caps() {
        let coils = table1_tri_coil();
        let limits = AllocationLimits { current_caps: vec![0.1], power_cap: 1.0 };
        assert!(allocate_currents(&Vec3::x(), &Mat3::identity(), &coils, &env(), &limits).is_err());
    }
}
