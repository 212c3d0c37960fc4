//! Simulation and control library for a Lorentz-force actuated, MRI-driven
//! continuum endoscope.
//!
//! The crate is organised bottom-up:
//!
//! * [`rod`]: Cosserat rod state, static rod equations and RK4 forward kinematics.
//! * [`actuation`]: microcoil geometry, magnetic moment, Lorentz torque and Joule power.
//! * [`ik`]: shooting-method inverse kinematics, coil-loaded equilibria and
//!   power-optimal current allocation.
//! * [`design`]: coil-length design curves, grasper blocking force and ablation tables.
//! * [`phantom`]: ventricle slice maps, collision checks and reachable workspace.
//! * [`teleop`]: the fixed-tick steering session, its wire protocol and scripted scenarios.
//! * [`config`]: the JSON configuration document tying it all together.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod config;
pub mod design;
pub mod error;
pub mod ik;
pub mod phantom;
pub mod rod;
pub mod teleop;

pub use error::{Error, Result};

/// 3-vector in SI units unless stated otherwise.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix, used for rotations and stiffness matrices.
pub type Mat3 = nalgebra::Matrix3<f64>;
