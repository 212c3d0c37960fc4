//! Cosserat rod model of the steerable segment.

mod kinematics;
mod params;
pub mod so3;
mod state;

pub use kinematics::{integrate_forward, rod_rhs, SegmentRate};
pub use params::{RodParams, RodParamsDoc, DEFAULT_POISSON_RATIO, MEASURED_FLEXURAL_RIGIDITY};
pub use so3::so3_log_distance;
pub use state::{FrameLabel, FramePose, RodState, SegmentState, ROTATION_TOLERANCE};

pub(crate) use state::{check_rotation, rotation_to_quaternion};
