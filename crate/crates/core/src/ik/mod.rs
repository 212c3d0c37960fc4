//! Inverse kinematics, coil-loaded equilibria and current allocation.

pub mod allocation;
pub mod lm;
pub mod shooting;
pub mod steer;

pub use allocation::{allocate_currents, AllocationLimits, AllocationResult, MAX_ALLOCATION_COILS};
pub use lm::{fd_jacobian, levenberg_marquardt, LmOptions, LmOutcome};
pub use shooting::{
    arc_moment, energy_tie_tolerance, equilibrium_candidates, find_equilibrium, solve_equilibrium, solve_ik,
    solve_ik_with, Equilibrium, EquilibriumProblem, EquilibriumSearch, IkOptions, IkProblem, IkSolution, IkWeights,
    EQUILIBRIUM_TOLERANCE,
};
pub use steer::{steer_to, steer_to_from, SteerResult, SteerSetup, SteerTarget, MAX_STEER_BEND, TORQUE_MATCH_TOLERANCE};
