use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Rotation3, SimilarityTransform, Vec3};

/// Relative singular-value floor below which the cross-covariance is treated as rank deficient.
const RANK_EPS: f64 = 1e-10;

/// Least-squares similarity `(s, R, t)` minimizing `Σ‖s·R·pᵢ + t − qᵢ‖²`.
///
/// Reflections are removed by flipping the sign of the smallest singular
/// direction, so the rotation is always proper.
pub fn umeyama_similarity(source: &[Vec3], target: &[Vec3]) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::CountMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = source.iter().sum::<Vec3>() * inv_n;
    let mu_dst = target.iter().sum::<Vec3>() * inv_n;

    let mut sigma = Matrix3::zeros();
    let mut var_src = 0.0;
    for (p, q) in source.iter().zip(target) {
        let dp = p - mu_src;
        sigma += (q - mu_dst) * dp.transpose();
        var_src += dp.norm_squared();
    }
    sigma *= inv_n;
    var_src *= inv_n;

    let svd = sigma.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("SVD did not converge".into())),
    };
    let d = svd.singular_values;
    // nalgebra sorts singular values in descending order.
    if !(d[0] > 0.0) || d[1] <= RANK_EPS * d[0] || var_src <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "cross-covariance has rank < 2".into(),
        ));
    }

    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s) * v_t;
    let scale = d.dot(&s) / var_src;
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "non-positive scale {scale}"
        )));
    }
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = mu_dst - rotation.apply(&mu_src) * scale;
    SimilarityTransform::new(scale, rotation, translation)
}

/// Least-squares rigid motion (no scale) taking `source` onto `target`.
pub(crate) fn rigid_alignment(source: &[Vec3], target: &[Vec3]) -> Option<(Matrix3<f64>, Vec3)> {
    let n = source.len();
    if n == 0 || n != target.len() {
        return None;
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = source.iter().sum::<Vec3>() * inv_n;
    let mu_dst = target.iter().sum::<Vec3>() * inv_n;
    let mut sigma = Matrix3::zeros();
    for (p, q) in source.iter().zip(target) {
        sigma += (q - mu_dst) * (p - mu_src).transpose();
    }
    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s) * v_t;
    Some((r, mu_dst - r * mu_src))
}
