//! Category-level 6D pose and size recovery from normalized object coordinates,
//! detection/pose evaluation metrics, and a synthetic scene generator that
//! produces exact ground truth for both.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pose;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    backproject, geodesic_angle, nocs_points, project, CameraIntrinsics, Category, DepthMap,
    InstanceMask, NocsMap, RigidTransform, Rotation3, SimilarityTransform, Vec2, Vec3,
};
pub use metrics::{
    box_iou, rotation_error, translation_error, Detection, GroundTruthInstance, OrientedBox3D,
    SymmetryClass,
};
pub use pose::{
    recover_pose_and_size, NocsObservation, PoseSizeEstimate, RecoveryMethod, RecoveryOptions,
    ScalePriors, ScaleStrategy,
};
pub use synth::{GeneratorConfig, SceneSample};
