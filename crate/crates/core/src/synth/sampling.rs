//! Scale and pose samplers for tabletop and handheld placements, and the
//! interpenetration rejection loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Category, RigidTransform, Rotation3, SimilarityTransform, Vec3};
use crate::pose::NOCS_CENTER;
use crate::synth::mesh::{
    MeshParams, ParametricMesh, TriangleMesh, CAPSULE_LENGTH, CAPSULE_RADIUS,
};
use crate::synth::plane::{frame_with_up, SurfacePatch};

/// Surface points closer than this to the composite mesh force a resample, meters.
pub const MIN_CLEARANCE: f64 = 0.0005;
/// Cap on placement draws before giving up.
pub const MAX_ATTEMPTS: usize = 100;
/// Highest handheld object-center elevation above the surface, meters.
pub const MAX_ELEVATION: f64 = 0.40;
/// Bound on handheld pitch and roll, degrees.
pub const MAX_TILT_DEG: f64 = 45.0;
/// Bound on the forearm yaw about the vertical, degrees.
pub const MAX_FOREARM_YAW_DEG: f64 = 45.0;
/// Gap left between a tabletop object's base and the fitted surface, meters.
pub const TABLETOP_CLEARANCE: f64 = 0.002;

/// Height interval in meters for each container category.
pub fn height_interval(category: Category) -> Result<(f64, f64)> {
    match category {
        Category::Box => Ok((0.10, 0.32)),
        Category::NonStem => Ok((0.05, 0.18)),
        Category::Stem => Ok((0.06, 0.20)),
        Category::Human => Err(Error::InvalidInput(
            "the human class has no height interval".into(),
        )),
    }
}

/// Uniform height in the category interval and the matching scale for a mesh
/// of the given canonical height: `(height, scale)`.
pub fn sample_scale(
    category: Category,
    canonical_height: f64,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let (lo, hi) = height_interval(category)?;
    if !(canonical_height > 0.0) {
        return Err(Error::InvalidInput(
            "canonical height must be positive".into(),
        ));
    }
    let height = rng.random_range(lo..=hi);
    Ok((height, height / canonical_height))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraspKind {
    None,
    Handheld,
}

/// The random draws behind a placement, kept for auditing the samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDraws {
    /// Total rotation about the surface normal, degrees in [0, 360).
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Object-center height above the fitted surface, meters.
    pub elevation: f64,
    pub flipped: bool,
    pub forearm_yaw_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePlacement {
    pub object_id: u32,
    pub category: Category,
    pub mesh: MeshParams,
    /// Metric height, meters.
    pub height: f64,
    /// Meters per canonical unit.
    pub scale: f64,
    /// Canonical center to camera.
    pub pose: RigidTransform,
    pub grasp: GraspKind,
    /// Capsule frame (cap center at the hand, +y toward the elbow) to camera.
    pub occluder: Option<RigidTransform>,
    pub draws: PoseDraws,
}

impl ScenePlacement {
    /// `X = s·R·(p − 0.5) + t`.
    pub fn canonical_to_camera(&self) -> SimilarityTransform {
        let r = self.pose.rotation;
        let t = self.pose.translation - r.apply(&NOCS_CENTER) * self.scale;
        SimilarityTransform {
            scale: self.scale,
            rotation: r,
            translation: t,
        }
    }

    pub fn object_mesh(&self) -> Result<TriangleMesh> {
        let canonical = ParametricMesh::new(self.mesh)?;
        let f = self.canonical_to_camera();
        Ok(canonical.mesh.map_vertices(|p| f.apply(p)))
    }

    pub fn occluder_mesh(&self) -> Option<TriangleMesh> {
        self.occluder.map(|pose| {
            TriangleMesh::capsule(CAPSULE_RADIUS, CAPSULE_LENGTH).map_vertices(|p| pose.apply(p))
        })
    }
}

fn uniform_surface_point(patch: &SurfacePatch, rng: &mut impl Rng) -> Result<Vec3> {
    if patch.inliers.len() < 3 {
        return Err(Error::DegenerateGeometry(
            "surface patch has fewer than 3 inliers".into(),
        ));
    }
    let i = patch.inliers[rng.random_range(0..patch.inliers.len())];
    Ok(patch.project(&patch.points[i]))
}

/// Object standing on the surface at a random inlier with uniform yaw.
pub fn sample_tabletop_pose(
    patch: &SurfacePatch,
    mesh: &ParametricMesh,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<ScenePlacement> {
    let q = uniform_surface_point(patch, rng)?;
    let yaw_deg = rng.random_range(0.0..360.0);
    let rotation = frame_with_up(&patch.normal) * Rotation3::about_y(f64::to_radians(yaw_deg));
    let height = scale * mesh.canonical_height();
    let elevation = height / 2.0 + TABLETOP_CLEARANCE;
    Ok(ScenePlacement {
        object_id: 0,
        category: mesh.category(),
        mesh: mesh.params,
        height,
        scale,
        pose: RigidTransform::new(rotation, q + patch.normal * elevation),
        grasp: GraspKind::None,
        occluder: None,
        draws: PoseDraws {
            yaw_deg,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            elevation,
            flipped: false,
            forearm_yaw_deg: 0.0,
        },
    })
}

/// Object raised above the surface, facing the camera, tilted in pitch and
/// roll, with a capsule forearm holding it at the grasp site.
pub fn sample_handheld_pose(
    patch: &SurfacePatch,
    mesh: &ParametricMesh,
    scale: f64,
    category: Category,
    rng: &mut impl Rng,
) -> Result<ScenePlacement> {
    let q = uniform_surface_point(patch, rng)?;
    // (0, 0.4]: the surface itself is excluded.
    let elevation = MAX_ELEVATION * (1.0 - rng.random::<f64>());
    let flip = rng.random_bool(0.5);
    let pitch_deg = rng.random_range(-MAX_TILT_DEG..=MAX_TILT_DEG);
    let roll_deg = rng.random_range(-MAX_TILT_DEG..=MAX_TILT_DEG);
    let forearm_yaw_deg = rng.random_range(-MAX_FOREARM_YAW_DEG..=MAX_FOREARM_YAW_DEG);
    let right_hand = rng.random_bool(0.5);

    let up = patch.normal;
    let center = q + up * elevation;
    let frame = frame_with_up(&up);
    // Horizontal direction from the object toward the camera at the origin.
    let to_camera = {
        let c = -center;
        let h = c - up * up.dot(&c);
        if h.norm() > 1e-9 {
            h.normalize()
        } else {
            frame.column(2)
        }
    };
    let local = frame.transpose().apply(&to_camera);
    let flipped = flip && category == Category::Box;
    let mut yaw = local.x.atan2(local.z);
    if flipped {
        yaw += std::f64::consts::PI;
    }
    let yaw_deg = yaw.to_degrees().rem_euclid(360.0);
    let rotation = frame
        * Rotation3::about_y(yaw)
        * Rotation3::about_x(pitch_deg.to_radians())
        * Rotation3::about_z(roll_deg.to_radians());

    // Forearm points at the camera, yawed about the vertical; the hand sits
    // beside the grasp site and wraps slightly toward the viewer.
    let arm = Rotation3::from_axis_angle(&up, forearm_yaw_deg.to_radians()).apply(&to_camera);
    let side = up.cross(&arm).normalize() * if right_hand { 1.0 } else { -1.0 };
    let grasp_site = rotation.apply(&Vec3::new(0.0, mesh.grasp_height - 0.5, 0.0)) * scale + center;
    let reach = scale * mesh.grasp_radius;
    let hand = grasp_site + side * (reach + CAPSULE_RADIUS) + arm * (0.5 * reach);
    let occluder = RigidTransform::new(frame_with_up(&-arm), hand);

    Ok(ScenePlacement {
        object_id: 0,
        category,
        mesh: mesh.params,
        height: scale * mesh.canonical_height(),
        scale,
        pose: RigidTransform::new(rotation, center),
        grasp: GraspKind::Handheld,
        occluder: Some(occluder),
        draws: PoseDraws {
            yaw_deg,
            pitch_deg,
            roll_deg,
            elevation,
            flipped,
            forearm_yaw_deg,
        },
    })
}

fn bounding_sphere(mesh: &TriangleMesh) -> (Vec3, f64) {
    let (lo, hi) = mesh.bounds();
    let c = (lo + hi) / 2.0;
    let r = mesh
        .vertices
        .iter()
        .map(|v| (v - c).norm())
        .fold(0.0, f64::max);
    (c, r)
}

/// True (reject) when any surface point lies within `min_dist` of the
/// composite mesh (object plus occluder) or inside it.
pub fn interpenetration_check(
    placement: &ScenePlacement,
    patch: &SurfacePatch,
    min_dist: f64,
) -> bool {
    let Ok(object) = placement.object_mesh() else {
        return true;
    };
    let parts: Vec<TriangleMesh> = std::iter::once(object)
        .chain(placement.occluder_mesh())
        .collect();
    parts.iter().any(|mesh| {
        let (c, r) = bounding_sphere(mesh);
        patch
            .points
            .iter()
            .filter(|p| (*p - c).norm() <= r + min_dist)
            .any(|p| mesh.distance(p) < min_dist || mesh.contains(p))
    })
}

/// Calls `draw` until it yields a value, at most `max_attempts` times.
pub fn retry_until<T>(
    max_attempts: usize,
    mut draw: impl FnMut() -> Result<Option<T>>,
) -> Result<T> {
    if max_attempts == 0 {
        return Err(Error::InvalidInput(
            "max_attempts must be at least 1".into(),
        ));
    }
    for _ in 0..max_attempts {
        if let Some(t) = draw()? {
            return Ok(t);
        }
    }
    Err(Error::ExhaustedAttempts {
        attempts: max_attempts,
    })
}

/// First placement from `sampler` that clears the surface by [`MIN_CLEARANCE`].
pub fn sample_with_rejection(
    mut sampler: impl FnMut() -> Result<ScenePlacement>,
    patch: &SurfacePatch,
    max_attempts: usize,
) -> Result<ScenePlacement> {
    retry_until(max_attempts, || {
        let p = sampler()?;
        Ok((!interpenetration_check(&p, patch, MIN_CLEARANCE)).then_some(p))
    })
}
