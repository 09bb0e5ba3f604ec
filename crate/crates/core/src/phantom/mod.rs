//! Deterministic synthetic phantom standing in for tracked acquisitions.

mod dataset;
mod pose;
mod render;
mod spec;
mod volume;

pub use dataset::{carve_hole, generate_dataset, Frame, HoleCarve, PhantomOracle, PoseSampler};
pub use pose::{
    surface_normal, surface_point, surface_pose, Pose, SurfaceCoords, MAX_ROLL_DEG, MAX_TILT_DEG, TRACKER_MAX_MM,
    UNIT_NORM_TOL,
};
pub use render::{render_slice, ImagingParams, RenderedSlice};
pub use spec::{PhantomSpec, Primitive, Shape, Speckle};
pub use volume::{build_phantom, Volume, VOXEL_MM};
