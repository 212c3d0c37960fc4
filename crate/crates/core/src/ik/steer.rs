//! Steering to a commanded bend: inverse kinematics, current allocation and
//! a consistency loop against the equilibrium the currents actually produce.

use serde::{Deserialize, Serialize};

use super::allocation::{allocate_currents, AllocationLimits, AllocationResult};
use super::lm::LmOptions;
use super::shooting::{solve_equilibrium, solve_ik_with, EquilibriumProblem, IkOptions, IkProblem, IkSolution, IkWeights};
use crate::actuation::{CoilSpec, MagneticEnvironment};
use crate::error::{invalid, Result};
use crate::rod::{so3, FramePose, RodParams, RodState};
use crate::{Mat3, Vec3};

/// Largest commanded bend accepted, radians.
pub const MAX_STEER_BEND: f64 = 120.0 * std::f64::consts::PI / 180.0;

/// Torque mismatch under which allocation at the IK tip is accepted as is, N·m.
pub const TORQUE_MATCH_TOLERANCE: f64 = 1e-6;

const MAX_ROUNDS: usize = 20;

/// Desired tip direction relative to the control frame: tilt `bend` away
/// from the base tangent toward `azimuth` (from the base x axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerTarget {
    pub bend: f64,
    pub azimuth: f64,
}

impl SteerTarget {
    pub fn in_plane(bend: f64) -> Self {
        Self { bend, azimuth: 0.0 }
    }

    pub fn rotation(&self, base: &FramePose) -> Mat3 {
        let axis = Vec3::new(-self.azimuth.sin(), self.azimuth.cos(), 0.0);
        base.rotation * so3::axis_angle(&axis, self.bend)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerSetup {
    pub rod: RodParams,
    pub base: FramePose,
    pub coils: Vec<CoilSpec>,
    pub env: MagneticEnvironment,
    pub limits: AllocationLimits,
    pub ik: IkOptions,
    pub weights: IkWeights,
}

impl SteerSetup {
    pub fn new(rod: RodParams, base: FramePose, coils: Vec<CoilSpec>, env: MagneticEnvironment) -> Self {
        let limits = AllocationLimits::rated(&coils);
        Self { rod, base, coils, env, limits, ik: IkOptions::default(), weights: IkWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerResult {
    pub ik: IkSolution,
    pub allocation: AllocationResult,
    /// Rod shape under the allocated currents.
    pub realized: RodState,
    pub rounds: usize,
    /// Allocation reproduces the IK torque at the realised tip and no limit was hit.
    pub consistent: bool,
}

/// Solves IK for `target`, allocates currents for the IK tip torque and
/// checks them against the shape they produce. When they disagree (limits,
/// or a torque that depends on the unknown tip orientation) the allocation
/// is repeated at the realised tip until the currents stop changing.
pub fn steer_to(setup: &SteerSetup, target: SteerTarget) -> Result<SteerResult> {
    steer_to_from(setup, target, None)
}

/// [`steer_to`] with a starting base wrench `(n0, m0)` for the IK solve,
/// typically the previous solution when tracking a slowly moving target.
pub fn steer_to_from(setup: &SteerSetup, target: SteerTarget, guess: Option<(Vec3, Vec3)>) -> Result<SteerResult> {
    if !(target.bend.is_finite() && target.azimuth.is_finite()) {
        return Err(invalid("steer target must be finite"));
    }
    if target.bend.abs() > MAX_STEER_BEND {
        return Err(invalid(format!("bend {:.1} deg exceeds 120 deg", target.bend.to_degrees())));
    }
    let mut problem = IkProblem::new(target.rotation(&setup.base), setup.rod.clone(), setup.base)?;
    problem.weights = setup.weights;
    let ik = solve_ik_with(&problem, &setup.ik, guess)?;
    let tau = ik.tip_torque;
    let tip = ik.rod_state.tip().rotation;
    let allocation = allocate_currents(&tau, &tip, &setup.coils, &setup.env, &setup.limits)?;
    if !allocation.saturated && (allocation.achieved_torque - tau).norm() <= TORQUE_MATCH_TOLERANCE {
        let realized = ik.rod_state.clone();
        return Ok(SteerResult { ik, allocation, realized, rounds: 0, consistent: true });
    }

    let opts = LmOptions { tolerance: 1e-12, residual_floor: 1e-12, max_iter: 60, ..LmOptions::default() };
    let mut allocation = allocation;
    let mut guess = (ik.base_force, ik.base_moment);
    let mut realized = ik.rod_state.clone();
    let mut rounds = 0;
    let mut settled = false;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        let eq = solve_equilibrium(
            &EquilibriumProblem {
                rod: &setup.rod,
                base: &setup.base,
                coils: &setup.coils,
                currents: &allocation.currents,
                env: &setup.env,
                external_tip_force: problem.external_tip_force,
            },
            guess,
            &opts,
        )?;
        guess = (eq.base_force, eq.base_moment);
        realized = eq.rod_state;
        let next = allocate_currents(&tau, &realized.tip().rotation, &setup.coils, &setup.env, &setup.limits)?;
        let change = next
            .currents
            .iter()
            .zip(&allocation.currents)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        allocation = next;
        if change <= 1e-9 {
            settled = true;
            break;
        }
    }
    let matched = (allocation.achieved_torque - tau).norm() <= TORQUE_MATCH_TOLERANCE;
    Ok(SteerResult {
        consistent: settled && matched && !allocation.saturated,
        ik,
        allocation,
        realized,
        rounds,
    })
}
