//! Detection and pose evaluation: oriented 3D IoU, symmetry-aware rotation
//! error, translation error, interpolated average precision and threshold sweeps.

pub mod ap;
pub mod iou;
pub mod symmetry;

pub use ap::{
    average_precision, iou_ap, map_over_classes, match_detections, pose_ap, rank_outcomes,
    threshold_sweep, ApCurve, Detection, DetectionOutcome, GroundTruthInstance, MatchResult,
    SweepAxis,
};
pub use iou::{box_iou, intersection_volume, OrientedBox3D};
pub use symmetry::{
    rotation_error, symmetry_aware_nocs_error, symmetry_rotations, translation_error,
    SymmetryClass, SMOOTH_L1_BETA,
};
