//! Shooting-method boundary value solvers over the base wrench `(n0, m0)`.
//!
//! Two tip boundary conditions are supported:
//! * inverse kinematics: reach a desired tip orientation with the smallest
//!   tip torque ([`solve_ik`]);
//! * coil-loaded equilibrium: the tip moment equals the Lorentz torque of
//!   given coil currents at the tip's own orientation ([`solve_equilibrium`]).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use crate::actuation::{lorentz_torque, total_moment, CoilSpec, MagneticEnvironment};
use crate::error::{invalid, Error, Result};
use crate::rod::{check_rotation, integrate_forward, so3, FramePose, RodParams, RodState};
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkWeights {
    pub orientation: f64,
    pub torque: f64,
    pub tip_force: f64,
}

impl Default for IkWeights {
    fn default() -> Self {
        Self { orientation: 1.0, torque: 1.0, tip_force: 1e3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkProblem {
    pub desired_tip_rotation: Mat3,
    pub external_tip_force: Vec3,
    pub weights: IkWeights,
    pub rod: RodParams,
    pub base: FramePose,
}

impl IkProblem {
    pub fn new(desired_tip_rotation: Mat3, rod: RodParams, base: FramePose) -> Result<Self> {
        let p = Self {
            desired_tip_rotation,
            external_tip_force: Vec3::zeros(),
            weights: IkWeights::default(),
            rod,
            base,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_rotation(&self.desired_tip_rotation, "desired tip rotation")?;
        check_rotation(&self.base.rotation, "base pose")?;
        let w = self.weights;
        if !(w.orientation > 0.0 && w.torque > 0.0 && w.tip_force > 0.0) {
            return Err(invalid("IK weights must be > 0"));
        }
        if !self.external_tip_force.iter().all(|f| f.is_finite()) {
            return Err(invalid("external tip force must be finite"));
        }
        Ok(())
    }

    /// Weighted residual `[w_R log(R_des^T R_N), w_tau m_N, w_F (n_N - F_ext)]`.
    fn residual(&self, state: &RodState) -> DVector<f64> {
        let tip = state.tip();
        let w = self.weights;
        let e = so3::so3_log_distance(&self.desired_tip_rotation, &tip.rotation) * w.orientation;
        let t = tip.moment * w.torque;
        let f = (tip.force - self.external_tip_force) * w.tip_force;
        DVector::from_iterator(9, e.iter().chain(t.iter()).chain(f.iter()).copied())
    }

    /// Constant-curvature arc from the base to the desired orientation.
    fn arc_guess(&self) -> (Vec3, Vec3) {
        let rel = so3::so3_log_distance(&self.base.rotation, &self.desired_tip_rotation);
        let curvature = rel / self.rod.free_length();
        let m0 = self.base.rotation * (self.rod.k2() * curvature);
        (self.external_tip_force, m0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub lm: LmOptions,
    /// Largest boundary-condition residual (orientation plus tip force, weighted)
    /// still reported as converged.
    pub residual_tolerance: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { lm: LmOptions::default(), residual_tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub rod_state: RodState,
    /// Tip torque `m_N`, inertial frame.
    pub tip_torque: Vec3,
    /// Weighted orientation and tip-force mismatch at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub base_force: Vec3,
    pub base_moment: Vec3,
}

fn pack(n0: &Vec3, m0: &Vec3) -> DVector<f64> {
    DVector::from_iterator(6, n0.iter().chain(m0.iter()).copied())
}

fn unpack(x: &DVector<f64>) -> (Vec3, Vec3) {
    (Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]))
}

fn wrench_scale(rod: &RodParams) -> DVector<f64> {
    let l = rod.free_length();
    let ei = rod.flexural_rigidity();
    let mut s = DVector::from_element(6, ei / l);
    s.rows_mut(0, 3).fill(ei / (l * l));
    s
}

/// Inverse kinematics with the default options (`tol` is the LM stopping
/// tolerance on the relative change of the residual norm).
pub fn solve_ik(problem: &IkProblem, tol: f64, max_iter: usize) -> Result<IkSolution> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be > 0"));
    }
    let mut opts = IkOptions::default();
    opts.lm.tolerance = tol;
    opts.lm.max_iter = max_iter;
    solve_ik_with(problem, &opts, None)
}

/// Inverse kinematics by shooting: Levenberg-Marquardt over `(n0, m0)` with
/// forward integration as the shooting function. Starts from `guess` or
/// from the constant-curvature arc. The best iterate is returned even when
/// not converged.
pub fn solve_ik_with(problem: &IkProblem, opts: &IkOptions, guess: Option<(Vec3, Vec3)>) -> Result<IkSolution> {
    problem.validate()?;
    let (n0, m0) = guess.unwrap_or_else(|| problem.arc_guess());
    let shoot = |x: &DVector<f64>| {
        let (n, m) = unpack(x);
        integrate_forward(&problem.base, &n, &m, &problem.rod).ok().map(|s| problem.residual(&s))
    };
    let out = levenberg_marquardt(shoot, pack(&n0, &m0), &wrench_scale(&problem.rod), &opts.lm)
        .ok_or_else(|| initial_divergence(problem, &n0, &m0))?;

    let (n0, m0) = unpack(&out.x);
    let rod_state = integrate_forward(&problem.base, &n0, &m0, &problem.rod)?;
    let r = &out.residual;
    let residual_norm = (r.rows(0, 3).norm_squared() + r.rows(6, 3).norm_squared()).sqrt();
    Ok(IkSolution {
        tip_torque: rod_state.tip().moment,
        rod_state,
        residual_norm,
        iterations: out.iterations,
        converged: out.converged && residual_norm <= opts.residual_tolerance,
        base_force: n0,
        base_moment: m0,
    })
}

fn initial_divergence(problem: &IkProblem, n0: &Vec3, m0: &Vec3) -> Error {
    match integrate_forward(&problem.base, n0, m0, &problem.rod) {
        Err(e) => e,
        Ok(_) => Error::Divergence { arc: 0.0 },
    }
}

/// Rod loaded at the tip by the Lorentz torque of fixed coil currents.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumProblem<'a> {
    pub rod: &'a RodParams,
    pub base: &'a FramePose,
    pub coils: &'a [CoilSpec],
    pub currents: &'a [f64],
    pub env: &'a MagneticEnvironment,
    pub external_tip_force: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub rod_state: RodState,
    pub base_force: Vec3,
    pub base_moment: Vec3,
    /// Total potential energy (elastic + magnetic + load), J.
    pub energy: f64,
    /// Scaled tip wrench mismatch.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Equilibrium {
    pub fn tip_rotation(&self) -> Mat3 {
        self.rod_state.tip().rotation
    }
}

/// Initial guesses for the equilibrium search: the straight rod plus arcs of
/// each `bend` toward each `azimuth` (measured from the base x axis).
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSearch {
    pub bends: Vec<f64>,
    pub azimuths: Vec<f64>,
}

impl Default for EquilibriumSearch {
    fn default() -> Self {
        let azimuths = (0..8).map(|k| k as f64 * std::f64::consts::FRAC_PI_4).collect();
        Self { bends: vec![60f64.to_radians(), 120f64.to_radians()], azimuths }
    }
}

impl EquilibriumSearch {
    /// Starts confined to the base x-z plane, for in-plane actuation.
    pub fn in_plane() -> Self {
        Self {
            bends: vec![50f64.to_radians(), 100f64.to_radians(), 140f64.to_radians()],
            azimuths: vec![0.0, std::f64::consts::PI],
        }
    }
}

/// Base moment of a constant-curvature arc bending by `bend` toward `azimuth`.
pub fn arc_moment(rod: &RodParams, base: &FramePose, bend: f64, azimuth: f64) -> Vec3 {
    let axis = Vec3::new(-azimuth.sin(), azimuth.cos(), 0.0);
    base.rotation * (rod.k2() * (axis * (bend / rod.free_length())))
}

impl EquilibriumProblem<'_> {
    fn validate(&self) -> Result<()> {
        if self.coils.len() != self.currents.len() {
            return Err(invalid(format!("{} currents for {} coils", self.currents.len(), self.coils.len())));
        }
        check_rotation(&self.base.rotation, "base pose")
    }

    fn scales(&self) -> (f64, f64) {
        let l = self.rod.free_length();
        let ei = self.rod.flexural_rigidity();
        (ei / l, ei / (l * l))
    }

    fn residual(&self, state: &RodState, moment: &Vec3) -> DVector<f64> {
        let tip = state.tip();
        let (torque_scale, force_scale) = self.scales();
        let t = (tip.moment - lorentz_torque(&[*moment], &tip.rotation, self.env)) / torque_scale;
        let f = (tip.force - self.external_tip_force) / force_scale;
        DVector::from_iterator(6, t.iter().chain(f.iter()).copied())
    }

    /// Potential energy whose stationary points are the equilibria.
    pub fn energy(&self, state: &RodState) -> Result<f64> {
        let c1 = self.rod.k1_inv_diag();
        let c2 = self.rod.k2_inv_diag();
        let f_dist = self.rod.gravity() * self.rod.linear_density();
        let density = |i: usize| {
            let s = &state.segments()[i];
            let rt = s.rotation.transpose();
            let m = rt * s.moment;
            let n = rt * s.force;
            0.5 * (m.component_mul(&c2).dot(&m) + n.component_mul(&c1).dot(&n)) - f_dist.dot(&s.position)
        };
        let arc = state.arc_coordinates();
        let stored: f64 = (1..arc.len()).map(|i| 0.5 * (density(i - 1) + density(i)) * (arc[i] - arc[i - 1])).sum();
        let tip = state.tip();
        let moment = total_moment(self.coils, self.currents)?;
        let magnetic = -(tip.rotation * moment).dot(&self.env.b0());
        Ok(stored + magnetic - self.external_tip_force.dot(&tip.position))
    }
}

/// Newton-type shooting solve for a coil-loaded equilibrium from one start.
pub fn solve_equilibrium(problem: &EquilibriumProblem<'_>, guess: (Vec3, Vec3), opts: &LmOptions) -> Result<Equilibrium> {
    problem.validate()?;
    let moment = total_moment(problem.coils, problem.currents)?;
    let shoot = |x: &DVector<f64>| {
        let (n, m) = unpack(x);
        integrate_forward(problem.base, &n, &m, problem.rod).ok().map(|s| problem.residual(&s, &moment))
    };
    let out = levenberg_marquardt(shoot, pack(&guess.0, &guess.1), &wrench_scale(problem.rod), opts)
        .ok_or(Error::Divergence { arc: 0.0 })?;
    let (n0, m0) = unpack(&out.x);
    let rod_state = integrate_forward(problem.base, &n0, &m0, problem.rod)?;
    let residual_norm = out.residual.norm();
    Ok(Equilibrium {
        energy: problem.energy(&rod_state)?,
        rod_state,
        base_force: n0,
        base_moment: m0,
        residual_norm,
        iterations: out.iterations,
        converged: residual_norm <= EQUILIBRIUM_TOLERANCE,
    })
}

/// Largest scaled tip wrench mismatch accepted as an equilibrium.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-9;

fn equilibrium_options() -> LmOptions {
    LmOptions { tolerance: 1e-12, residual_floor: 1e-12, max_iter: 60, ..LmOptions::default() }
}

/// Every distinct converged equilibrium reached from the search starts,
/// sorted by energy (ties keep start order).
pub fn equilibrium_candidates(problem: &EquilibriumProblem<'_>, search: &EquilibriumSearch) -> Result<Vec<Equilibrium>> {
    problem.validate()?;
    let opts = equilibrium_options();
    let f = problem.external_tip_force;
    let mut starts = vec![(f, Vec3::zeros())];
    for &bend in &search.bends {
        for &az in &search.azimuths {
            starts.push((f, arc_moment(problem.rod, problem.base, bend, az)));
        }
    }
    let same_tol = 1e-7 * problem.rod.free_length();
    let mut found: Vec<Equilibrium> = Vec::new();
    for start in starts {
        let Ok(eq) = solve_equilibrium(problem, start, &opts) else { continue };
        if !eq.converged {
            continue;
        }
        let duplicate = found
            .iter()
            .any(|e| (e.rod_state.tip().position - eq.rod_state.tip().position).norm() < same_tol);
        if !duplicate {
            found.push(eq);
        }
    }
    found.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(found)
}

/// Relative energy difference under which two equilibria count as equally stable.
pub fn energy_tie_tolerance(rod: &RodParams) -> f64 {
    1e-9 * rod.flexural_rigidity() / rod.free_length()
}

/// The lowest-energy equilibrium reachable from the search starts.
pub fn find_equilibrium(problem: &EquilibriumProblem<'_>, search: &EquilibriumSearch) -> Result<Equilibrium> {
    let mut all = equilibrium_candidates(problem, search)?;
    if all.is_empty() {
        return Err(Error::Divergence { arc: problem.rod.free_length() });
    }
    let best = all[0].energy;
    let tie = energy_tie_tolerance(problem.rod);
    // Among ties, keep the earliest start for determinism.
    let idx = all.iter().position(|e| e.energy - best <= tie).unwrap_or(0);
    Ok(all.swap_remove(idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::table1_tri_coil;
    use crate::rod::FrameLabel;
    use std::f64::consts::FRAC_PI_2;

    fn rod(length: f64) -> RodParams {
        RodParams::table1().with_free_length(length).unwrap()
    }

    #[test]
    fn identity_target_gives_straight_rod() {
        let p = IkProblem::new(Mat3::identity(), rod(0.03), FramePose::identity(FrameLabel::Control)).unwrap();
        let sol = solve_ik(&p, 1e-8, 100).unwrap();
        assert!(sol.converged);
        assert!(sol.tip_torque.norm() < 1e-12);
        assert!(sol.residual_norm < 1e-8);
        assert!((sol.rod_state.tip().position - Vec3::new(0.0, 0.0, 0.03)).norm() < 1e-12);
    }

    #[test]
    fn quarter_bend_torque_matches_arc() {
        let target = so3::axis_angle(&Vec3::y(), FRAC_PI_2);
        let p = IkProblem::new(target, rod(0.03), FramePose::identity(FrameLabel::Control)).unwrap();
        let sol = solve_ik(&p, 1e-8, 100).unwrap();
        assert!(sol.converged, "{sol:?}");
        let expected = FRAC_PI_2 * 4.45e-5 / 0.03;
        assert!((sol.tip_torque.norm() - 2.33e-3).abs() / 2.33e-3 < 0.02);
        assert!((sol.tip_torque.norm() - expected).abs() / expected < 1e-3);
    }

    #[test]
    fn mirrored_targets_have_equal_torque() {
        let base = FramePose::identity(FrameLabel::Control);
        let solve = |angle: f64| {
            let p = IkProblem::new(so3::axis_angle(&Vec3::y(), angle), rod(0.02), base).unwrap();
            solve_ik(&p, 1e-8, 100).unwrap()
        };
        let (a, b) = (solve(1.0), solve(-1.0));
        assert!((a.tip_torque.norm() - b.tip_torque.norm()).abs() < 1e-6);
        let (pa, pb) = (a.rod_state.tip().position, b.rod_state.tip().position);
        assert!((pa.x + pb.x).abs() < 1e-9 && (pa.z - pb.z).abs() < 1e-9);
    }

    #[test]
    fn recovers_from_poor_guess() {
        let target = so3::axis_angle(&Vec3::new(1.0, 1.0, 0.0), 1.2);
        let mut p = IkProblem::new(target, rod(0.02), FramePose::identity(FrameLabel::Control)).unwrap();
        p.external_tip_force = Vec3::new(0.0, 0.0, -2e-3);
        let sol = solve_ik_with(&p, &IkOptions::default(), Some((Vec3::zeros(), Vec3::zeros()))).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!((sol.rod_state.tip().force - p.external_tip_force).norm() < 1e-7);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut p = IkProblem::new(Mat3::identity(), rod(0.02), FramePose::identity(FrameLabel::Control)).unwrap();
        p.weights.torque = 0.0;
        assert!(solve_ik(&p, 1e-8, 10).is_err());
    }

    #[test]
    fn anti_aligned_axial_moment_buckles_to_the_lower_energy_branch() {
        let coils = table1_tri_coil();
        let rod = rod(0.02).with_segment_count(50).unwrap();
        let base = FramePose::identity(FrameLabel::Control);
        let env = MagneticEnvironment::default();
        let currents = [0.0, 0.0, -0.213];
        let problem = EquilibriumProblem {
            rod: &rod,
            base: &base,
            coils: &coils,
            currents: &currents,
            env: &env,
            external_tip_force: Vec3::zeros(),
        };
        let eq = find_equilibrium(&problem, &EquilibriumSearch::in_plane()).unwrap();
        // theta / sin(theta) = |m| B L / EI = 1.6118 -> theta = 92.28 deg (bisection in the notes).
        let bend = eq.rod_state.bend_angle().to_degrees();
        assert!((bend - 92.277).abs() < 0.05, "{bend}");

        // Same current with the moment along B0 is stable straight.
        let currents = [0.0, 0.0, 0.213];
        let problem = EquilibriumProblem { currents: &currents, ..problem };
        let eq = find_equilibrium(&problem, &EquilibriumSearch::in_plane()).unwrap();
        assert!(eq.rod_state.bend_angle() < 1e-9);
    }
}
