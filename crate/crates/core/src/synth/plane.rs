//! Support-surface estimation: RANSAC plane fitting, the surface-aligned frame,
//! and a synthetic tabletop seen from a pitched camera.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Rotation3, Vec3};

/// A fitted support plane `n·p + d = 0` with `n` facing the camera (`d > 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePatch {
    pub points: Vec<Vec3>,
    pub normal: Vec3,
    pub offset: f64,
    pub inliers: Vec<usize>,
    pub inlier_threshold: f64,
}

impl SurfacePatch {
    /// Signed distance, positive on the camera side.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal * self.signed_distance(p)
    }

    pub fn inlier_points(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.inliers.iter().map(|&i| &self.points[i])
    }
}

fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    let scale = (b - a).norm().max((c - a).norm());
    if !(len > 1e-12 * scale * scale) {
        return None;
    }
    let n = n / len;
    Some((n, -n.dot(a)))
}

fn inliers_of(points: &[Vec3], n: &Vec3, d: f64, threshold: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| (n.dot(&points[i]) + d).abs() <= threshold)
        .collect()
}

/// Least-squares plane through `points` (smallest principal direction).
fn refit(points: &[Vec3], idx: &[usize]) -> Option<(Vec3, f64)> {
    let centroid = idx.iter().map(|&i| points[i]).sum::<Vec3>() / idx.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let q = points[i] - centroid;
        cov += q * q.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut order: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    order.sort_by(f64::total_cmp);
    if !(order[1] > 1e-12 * order[2]) {
        return None;
    }
    let n = eig.eigenvectors.column(k).normalize();
    Some((n, -n.dot(&centroid)))
}

/// Best plane by inlier count over `iterations` three-point hypotheses, then
/// refit to its inliers by least squares.
pub fn ransac_plane_fit(
    points: &[Vec3],
    iterations: usize,
    inlier_threshold: f64,
    seed: u64,
) -> Result<SurfacePatch> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if !(inlier_threshold > 0.0) || iterations == 0 {
        return Err(Error::InvalidInput(
            "plane fit needs a positive threshold and iteration count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..iterations {
        let pick = index::sample(&mut rng, points.len(), 3);
        let Some((n, d)) = plane_through(
            &points[pick.index(0)],
            &points[pick.index(1)],
            &points[pick.index(2)],
        ) else {
            continue;
        };
        let inl = inliers_of(points, &n, d, inlier_threshold);
        if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
            best = Some(inl);
        }
    }
    let best =
        best.ok_or_else(|| Error::DegenerateGeometry("no non-collinear plane hypothesis".into()))?;
    let (mut normal, mut offset) = refit(points, &best)
        .ok_or_else(|| Error::DegenerateGeometry("plane inliers are collinear".into()))?;
    if offset < 0.0 || (offset == 0.0 && normal.z > 0.0) {
        normal = -normal;
        offset = -offset;
    }
    let inliers = inliers_of(points, &normal, offset, inlier_threshold);
    Ok(SurfacePatch {
        points: points.to_vec(),
        normal,
        offset,
        inliers,
        inlier_threshold,
    })
}

/// Frame whose +y column is the surface up-normal (the camera-facing normal).
/// The remaining columns are a fixed orthonormal completion.
pub fn surface_frame(patch: &SurfacePatch) -> Rotation3 {
    frame_with_up(&patch.normal)
}

pub(crate) fn frame_with_up(up: &Vec3) -> Rotation3 {
    let y = up.normalize();
    // Seed with the basis axis least aligned with `y`.
    let seed = [Vec3::x(), Vec3::y(), Vec3::z()]
        .into_iter()
        .min_by(|a, b| a.dot(&y).abs().total_cmp(&b.dot(&y).abs()))
        .unwrap_or_else(Vec3::x);
    let z = seed.cross(&y).normalize();
    let x = y.cross(&z);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

/// A flat surface below a camera at `camera_height` meters, pitched down by
/// `pitch_deg`, sampled on a pixel grid with Gaussian noise along the normal and
/// a fraction of outliers displaced below the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPlane {
    pub camera_height: f64,
    pub pitch_deg: f64,
    pub max_range: f64,
    pub grid_step: u32,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
}

impl Default for SyntheticPlane {
    fn default() -> Self {
        Self {
            camera_height: 0.6,
            pitch_deg: 45.0,
            max_range: 2.0,
            grid_step: 4,
            noise_sigma: 0.0002,
            outlier_fraction: 0.2,
        }
    }
}

impl SyntheticPlane {
    pub fn validate(&self) -> Result<()> {
        let ok = self.camera_height > 0.0
            && self.pitch_deg > 0.0
            && self.pitch_deg < 90.0
            && self.max_range > self.camera_height
            && self.grid_step > 0
            && self.noise_sigma >= 0.0
            && (0.0..1.0).contains(&self.outlier_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid synthetic plane {self:?}"
            )))
        }
    }

    /// Exact camera-facing unit normal and offset.
    pub fn plane(&self) -> (Vec3, f64) {
        let p = self.pitch_deg.to_radians();
        (Vec3::new(0.0, -p.cos(), -p.sin()), self.camera_height)
    }

    /// Noise-free surface point seen through pixel `(u, v)`, within range.
    pub fn hit(&self, k: &CameraIntrinsics, u: f64, v: f64) -> Option<Vec3> {
        let (n, d) = self.plane();
        let ray = k.ray(u, v);
        let denom = n.dot(&ray);
        if denom >= 0.0 {
            return None;
        }
        let p = ray * (-d / denom);
        (p.norm() <= self.max_range).then_some(p)
    }

    /// Observed surface points; deterministic given `rng`.
    pub fn sample_points(&self, k: &CameraIntrinsics, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
        self.validate()?;
        let (n, _) = self.plane();
        let noise =
            Normal::new(0.0, self.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut points = Vec::new();
        for v in (0..k.height).step_by(self.grid_step as usize) {
            for u in (0..k.width).step_by(self.grid_step as usize) {
                let Some(p) = self.hit(k, u as f64, v as f64) else {
                    continue;
                };
                let offset = if rng.random::<f64>() < self.outlier_fraction {
                    -rng.random_range(0.01..0.3)
                } else {
                    noise.sample(rng)
                };
                points.push(p + n * offset);
            }
        }
        if points.len() < 3 {
            return Err(Error::DegenerateGeometry(
                "synthetic plane is not visible".into(),
            ));
        }
        Ok(points)
    }
}
