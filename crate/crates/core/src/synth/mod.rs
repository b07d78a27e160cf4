//! Synthetic scenes with exact ground truth: parametric container meshes placed
//! on a fitted support surface (standing or handheld with a capsule forearm),
//! rendered to depth, instance masks and normalized coordinate maps.

pub mod dataset;
pub mod mesh;
pub mod plane;
pub mod raster;
pub mod sampling;

pub use dataset::{
    apportion, generate_dataset, generate_each, generate_sample, plan, sub_seed, GeneratorConfig,
    SampleSpec, SceneSample, NOCS_LEVELS,
};
pub use mesh::{
    MeshParams, ParametricMesh, TriangleMesh, CAPSULE_LENGTH, CAPSULE_RADIUS, LATHE_SEGMENTS,
};
pub use plane::{ransac_plane_fit, surface_frame, SurfacePatch, SyntheticPlane};
pub use raster::{rasterize, RenderedScene};
pub use sampling::{
    height_interval, interpenetration_check, retry_until, sample_handheld_pose, sample_scale,
    sample_tabletop_pose, sample_with_rejection, GraspKind, PoseDraws, ScenePlacement,
    MAX_ATTEMPTS, MAX_ELEVATION, MAX_FOREARM_YAW_DEG, MAX_TILT_DEG, MIN_CLEARANCE,
    TABLETOP_CLEARANCE,
};
