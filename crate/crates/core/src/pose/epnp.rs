//! EPnP: every object point is written as a barycentric combination of four
//! control points (three when the points are coplanar), which turns the pose
//! problem into finding the control points in the camera frame. Those live in
//! the null space of a `2n × 3k` system and are fixed by the known distances
//! between control points.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform, Rotation3, Vec2, Vec3};
use crate::pose::umeyama::rigid_alignment;

/// Smallest correspondence count accepted by [`epnp_pose`].
pub const MIN_PNP_CORRESPONDENCES: usize = 6;

/// Below this spread ratio (second/first principal axis) the points are collinear.
const COLLINEAR_RATIO: f64 = 1e-6;
/// Below this spread ratio (third/first principal axis) the planar branch is also tried.
const PLANAR_RATIO: f64 = 1e-2;
/// Below this ratio the third axis is measurement noise and only the planar branch runs.
const FLAT_RATIO: f64 = 1e-6;

const GAUSS_NEWTON_ITERATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnpBranch {
    /// Four control points.
    General,
    /// Three control points spanning the object plane.
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    /// Object-to-camera transform.
    pub pose: RigidTransform,
    /// Mean reprojection error in pixels.
    pub reprojection_error: f64,
    pub branch: PnpBranch,
}

/// Pose of the object whose points are `object_points` from their projections.
pub fn epnp_pose(
    object_points: &[Vec3],
    pixels: &[Vec2],
    intrinsics: &CameraIntrinsics,
) -> Result<PnpSolution> {
    if object_points.len() < MIN_PNP_CORRESPONDENCES {
        return Err(Error::DegenerateGeometry(format!(
            "EPnP needs at least {MIN_PNP_CORRESPONDENCES} correspondences, got {}",
            object_points.len()
        )));
    }
    solve(object_points, pixels, intrinsics)
}

/// EPnP without the stability floor; four correspondences is the mathematical minimum.
pub(crate) fn solve(
    object_points: &[Vec3],
    pixels: &[Vec2],
    intrinsics: &CameraIntrinsics,
) -> Result<PnpSolution> {
    let n = object_points.len();
    if n != pixels.len() {
        return Err(Error::CountMismatch {
            source_len: n,
            target_len: pixels.len(),
        });
    }
    if n < 4 {
        return Err(Error::DegenerateGeometry(format!(
            "EPnP needs at least 4 correspondences, got {n}"
        )));
    }

    let centroid = object_points.iter().sum::<Vec3>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in object_points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<(f64, Vec3)> = (0..3)
        .map(|i| {
            (
                eig.eigenvalues[i].max(0.0),
                eig.eigenvectors.column(i).into_owned(),
            )
        })
        .collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let spread: Vec<f64> = axes.iter().map(|a| a.0.sqrt()).collect();
    if !(spread[0] > 0.0) || spread[1] <= COLLINEAR_RATIO * spread[0] {
        return Err(Error::DegenerateGeometry(
            "object points are collinear".into(),
        ));
    }

    let flatness = spread[2] / spread[0];
    let mut candidates = Vec::new();
    if flatness > FLAT_RATIO {
        let controls = [
            centroid,
            centroid + axes[0].1 * spread[0],
            centroid + axes[1].1 * spread[1],
            centroid + axes[2].1 * spread[2],
        ];
        if let Some(sol) = solve_with_controls(
            &controls,
            object_points,
            pixels,
            intrinsics,
            PnpBranch::General,
        ) {
            candidates.push(sol);
        }
    }
    if flatness < PLANAR_RATIO {
        let controls = [
            centroid,
            centroid + axes[0].1 * spread[0],
            centroid + axes[1].1 * spread[1],
        ];
        if let Some(sol) = solve_with_controls(
            &controls,
            object_points,
            pixels,
            intrinsics,
            PnpBranch::Planar,
        ) {
            candidates.push(sol);
        }
    }
    candidates
        .into_iter()
        .filter(|s| s.reprojection_error.is_finite())
        .min_by(|a, b| a.reprojection_error.total_cmp(&b.reprojection_error))
        .ok_or_else(|| Error::NumericalFailure("control-point system is singular".into()))
}

/// Barycentric weights of every point with respect to `controls` (first control is the centroid).
fn barycentric_weights(controls: &[Vec3], points: &[Vec3]) -> Option<Vec<Vec<f64>>> {
    let c0 = controls[0];
    let basis: Vec<Vec3> = controls[1..].iter().map(|c| c - c0).collect();
    let weights = match basis.len() {
        3 => {
            let b = Matrix3::from_columns(&[basis[0], basis[1], basis[2]]);
            let inv = b.try_inverse()?;
            points
                .iter()
                .map(|p| {
                    let a = inv * (p - c0);
                    vec![1.0 - a.sum(), a[0], a[1], a[2]]
                })
                .collect()
        }
        2 => {
            // The planar basis is orthogonal (principal axes), so project directly.
            let norms = [basis[0].norm_squared(), basis[1].norm_squared()];
            points
                .iter()
                .map(|p| {
                    let d = p - c0;
                    let a1 = d.dot(&basis[0]) / norms[0];
                    let a2 = d.dot(&basis[1]) / norms[1];
                    vec![1.0 - a1 - a2, a1, a2]
                })
                .collect()
        }
        _ => return None,
    };
    Some(weights)
}

fn solve_with_controls(
    controls: &[Vec3],
    object_points: &[Vec3],
    pixels: &[Vec2],
    k: &CameraIntrinsics,
    branch: PnpBranch,
) -> Option<PnpSolution> {
    let nc = controls.len();
    let dim = 3 * nc;
    let alphas = barycentric_weights(controls, object_points)?;

    // Accumulate MᵀM directly; M itself has 2n rows.
    let mut mtm = DMatrix::<f64>::zeros(dim, dim);
    let mut row_u = DVector::<f64>::zeros(dim);
    let mut row_v = DVector::<f64>::zeros(dim);
    for (alpha, px) in alphas.iter().zip(pixels) {
        for (j, &a) in alpha.iter().enumerate() {
            row_u[3 * j] = a * k.fx;
            row_u[3 * j + 1] = 0.0;
            row_u[3 * j + 2] = a * (k.cx - px.x);
            row_v[3 * j] = 0.0;
            row_v[3 * j + 1] = a * k.fy;
            row_v[3 * j + 2] = a * (k.cy - px.y);
        }
        mtm.ger(1.0, &row_u, &row_u, 1.0);
        mtm.ger(1.0, &row_v, &row_v, 1.0);
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel_dim = if nc == 4 { 4 } else { 2 };
    let kernel: Vec<DVector<f64>> = order[..kernel_dim]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..nc)
        .flat_map(|a| ((a + 1)..nc).map(move |b| (a, b)))
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (controls[a] - controls[b]).norm_squared())
        .collect();
    // dv[k][pair]: difference between control points a and b within kernel vector k.
    let dv: Vec<Vec<Vec3>> = kernel
        .iter()
        .map(|v| {
            pairs
                .iter()
                .map(|&(a, b)| segment(v, a) - segment(v, b))
                .collect()
        })
        .collect();

    let max_case = if nc == 4 { 3 } else { 2 };
    let mut best: Option<PnpSolution> = None;
    for case in 1..=max_case {
        let Some(initial) = initial_betas(case, &dv, &rho) else {
            continue;
        };
        let mut betas = vec![0.0; kernel_dim];
        betas[..initial.len()].copy_from_slice(&initial);
        refine_betas(&mut betas, &dv, &rho);
        let Some(sol) = pose_from_betas(&betas, &kernel, &alphas, object_points, pixels, k, branch)
        else {
            continue;
        };
        if best.is_none_or(|b| sol.reprojection_error < b.reprojection_error) {
            best = Some(sol);
        }
    }
    best
}

fn segment(v: &DVector<f64>, j: usize) -> Vec3 {
    Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

/// Closed-form initial betas for a kernel of dimension `case`.
fn initial_betas(case: usize, dv: &[Vec<Vec3>], rho: &[f64]) -> Option<Vec<f64>> {
    let n_pairs = rho.len();
    match case {
        1 => {
            let (mut num, mut den) = (0.0, 0.0);
            for (d, r) in dv[0].iter().zip(rho) {
                num += d.norm() * r.sqrt();
                den += d.norm_squared();
            }
            (den > 0.0).then(|| vec![num / den])
        }
        2 => {
            // unknowns: b11, b12, b22
            let l = DMatrix::from_fn(n_pairs, 3, |p, c| {
                let (a, b) = (&dv[0][p], &dv[1][p]);
                match c {
                    0 => a.dot(a),
                    1 => 2.0 * a.dot(b),
                    _ => b.dot(b),
                }
            });
            let x = least_squares(l, rho)?;
            let (mut b1, mut b2) = (x[0].abs().sqrt(), x[2].abs().sqrt());
            if x[1] < 0.0 {
                b2 = -b2;
            }
            if x[0] < 0.0 {
                b1 = -b1;
                b2 = -b2;
            }
            Some(vec![b1, b2])
        }
        3 => {
            // unknowns: b11, b12, b13, b22, b23, b33
            if n_pairs < 6 {
                return None;
            }
            let l = DMatrix::from_fn(n_pairs, 6, |p, c| {
                let (a, b, d) = (&dv[0][p], &dv[1][p], &dv[2][p]);
                match c {
                    0 => a.dot(a),
                    1 => 2.0 * a.dot(b),
                    2 => 2.0 * a.dot(d),
                    3 => b.dot(b),
                    4 => 2.0 * b.dot(d),
                    _ => d.dot(d),
                }
            });
            let x = least_squares(l, rho)?;
            let b1 = x[0].abs().sqrt();
            let mut b2 = x[3].abs().sqrt();
            let mut b3 = x[5].abs().sqrt();
            if x[1] < 0.0 {
                b2 = -b2;
            }
            if x[2] < 0.0 {
                b3 = -b3;
            }
            let s = if x[0] < 0.0 { -1.0 } else { 1.0 };
            Some(vec![s * b1, s * b2, s * b3])
        }
        _ => None,
    }
}

fn least_squares(a: DMatrix<f64>, b: &[f64]) -> Option<DVector<f64>> {
    let rhs = DVector::from_column_slice(b);
    let x = a.svd(true, true).solve(&rhs, 1e-12).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn distance_residuals(betas: &[f64], dv: &[Vec<Vec3>], rho: &[f64]) -> (Vec<Vec3>, Vec<f64>) {
    let diffs: Vec<Vec3> = (0..rho.len())
        .map(|p| betas.iter().zip(dv).map(|(b, d)| d[p] * *b).sum())
        .collect();
    let res = diffs
        .iter()
        .zip(rho)
        .map(|(d, r)| d.norm_squared() - r)
        .collect();
    (diffs, res)
}

/// Gauss-Newton on the control-point distance constraints.
fn refine_betas(betas: &mut [f64], dv: &[Vec<Vec3>], rho: &[f64]) {
    let nb = betas.len();
    let cost = |b: &[f64]| {
        distance_residuals(b, dv, rho)
            .1
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
    };
    let mut current = cost(betas);
    for _ in 0..GAUSS_NEWTON_ITERATIONS {
        let (diffs, res) = distance_residuals(betas, dv, rho);
        let jac = DMatrix::from_fn(rho.len(), nb, |p, k| 2.0 * diffs[p].dot(&dv[k][p]));
        let neg_res: Vec<f64> = res.iter().map(|r| -r).collect();
        let Some(step) = least_squares(jac, &neg_res) else {
            return;
        };
        let trial: Vec<f64> = betas.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let trial_cost = cost(&trial);
        if !(trial_cost < current) {
            return;
        }
        betas.copy_from_slice(&trial);
        current = trial_cost;
    }
}

fn pose_from_betas(
    betas: &[f64],
    kernel: &[DVector<f64>],
    alphas: &[Vec<f64>],
    object_points: &[Vec3],
    pixels: &[Vec2],
    k: &CameraIntrinsics,
    branch: PnpBranch,
) -> Option<PnpSolution> {
    let nc = alphas[0].len();
    let mut controls_cam: Vec<Vec3> = (0..nc)
        .map(|j| {
            betas
                .iter()
                .zip(kernel)
                .map(|(b, v)| segment(v, j) * *b)
                .sum()
        })
        .collect();
    let mut cam_points: Vec<Vec3> = alphas
        .iter()
        .map(|a| a.iter().zip(&controls_cam).map(|(w, c)| c * *w).sum())
        .collect();
    let mean_z = cam_points.iter().map(|p| p.z).sum::<f64>() / cam_points.len() as f64;
    if mean_z < 0.0 {
        controls_cam.iter_mut().for_each(|c| *c = -*c);
        cam_points.iter_mut().for_each(|p| *p = -*p);
    }
    let (r, t) = rigid_alignment(object_points, &cam_points)?;
    if !Rotation3::is_rotation(&r, 1e-7) {
        return None;
    }
    let pose = RigidTransform::new(Rotation3::from_matrix_unchecked(r), t);
    let reprojection_error = mean_reprojection_error(&pose, object_points, pixels, k);
    Some(PnpSolution {
        pose,
        reprojection_error,
        branch,
    })
}

/// Mean pixel distance between `pixels` and the projections of `object_points` under `pose`.
/// Points behind the camera count as infinitely far.
pub fn mean_reprojection_error(
    pose: &RigidTransform,
    object_points: &[Vec3],
    pixels: &[Vec2],
    k: &CameraIntrinsics,
) -> f64 {
    let total: f64 = object_points
        .iter()
        .zip(pixels)
        .map(|(p, px)| match k.project_point(&pose.apply(p)) {
            Ok(q) => (q - px).norm(),
            Err(_) => f64::INFINITY,
        })
        .sum();
    total / object_points.len() as f64
}
