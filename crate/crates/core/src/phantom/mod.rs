//! Ventricle phantom: slice geometry, collision checks, insertion and the
//! reachable workspace.

pub mod geometry;
mod map;
mod workspace;

pub use map::{
    collide, tumor_reached, CollisionReport, Contact, EntryPose, InsertionState, PhantomMap, SliceFrame, Tumor,
    DEFAULT_CAPTURE_DISTANCE_MM, PHANTOM_SCHEMA,
};
pub use workspace::{compute_workspace, WorkspaceProblem, WorkspaceRegion, WorkspaceSample};
