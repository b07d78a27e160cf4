//! Pose and size recovery from normalized-coordinate observations.

pub mod epnp;
pub mod recovery;
pub mod umeyama;

pub use epnp::{
    epnp_pose, mean_reprojection_error, PnpBranch, PnpSolution, MIN_PNP_CORRESPONDENCES,
};
pub use recovery::{
    category_scale_prior, extent_from_nocs, recover_metric, recover_pose_and_size, NocsObservation,
    NormalizedExtent, PoseSizeEstimate, RecoveryMethod, RecoveryOptions, ScalePriors,
    ScaleStrategy, DEFAULT_MAX_CORRESPONDENCES, NOCS_CENTER,
};
pub use umeyama::umeyama_similarity;
