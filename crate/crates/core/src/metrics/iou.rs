//! Exact 3D IoU of oriented boxes by clipping one box's polyhedron against the
//! other's face planes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

/// Box centered at `pose.translation`, axes given by the columns of `pose.rotation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub pose: RigidTransform,
    /// Full side lengths along the local x, y and z axes.
    pub extent: Vec3,
}

impl OrientedBox3D {
    pub fn new(pose: RigidTransform, extent: Vec3) -> Result<Self> {
        if extent.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "box extent must be positive, got {extent:?}"
            )));
        }
        Ok(Self { pose, extent })
    }

    pub fn volume(&self) -> f64 {
        self.extent.product()
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self
            .pose
            .rotation
            .transpose()
            .apply(&(p - self.pose.translation));
        (0..3).all(|i| local[i].abs() <= 0.5 * self.extent[i])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.extent * 0.5;
        std::array::from_fn(|i| {
            let s = Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
            self.pose.apply(&s)
        })
    }

    /// Face planes as `(n, offset)` with the interior satisfying `n·x ≤ offset`.
    fn half_spaces(&self) -> [(Vec3, f64); 6] {
        let c = self.pose.translation;
        std::array::from_fn(|i| {
            let axis = self.pose.rotation.column(i / 2);
            let n = if i % 2 == 0 { axis } else { -axis };
            (n, n.dot(&c) + 0.5 * self.extent[i / 2])
        })
    }

    fn faces(&self) -> Vec<Vec<Vec3>> {
        let c = self.corners();
        let quads = [
            [0, 2, 6, 4],
            [1, 3, 7, 5],
            [0, 1, 5, 4],
            [2, 3, 7, 6],
            [0, 1, 3, 2],
            [4, 5, 7, 6],
        ];
        let center = self.center();
        quads
            .iter()
            .map(|q| {
                let mut face: Vec<Vec3> = q.iter().map(|&i| c[i]).collect();
                let fc = face.iter().sum::<Vec3>() / 4.0;
                if newell_normal(&face).dot(&(fc - center)) < 0.0 {
                    face.reverse();
                }
                face
            })
            .collect()
    }
}

fn newell_normal(poly: &[Vec3]) -> Vec3 {
    let mut n = Vec3::zeros();
    for (i, a) in poly.iter().enumerate() {
        let b = poly[(i + 1) % poly.len()];
        n += a.cross(&b);
    }
    n
}

/// Clips a closed convex polyhedron (outward-oriented faces) to `n·x ≤ offset`.
fn clip(faces: Vec<Vec<Vec3>>, n: &Vec3, offset: f64, eps: f64) -> Vec<Vec<Vec3>> {
    let mut out_faces = Vec::with_capacity(faces.len() + 1);
    let mut cap = Vec::new();
    let mut face_on_plane = false;
    for face in faces {
        let d: Vec<f64> = face.iter().map(|p| n.dot(p) - offset).collect();
        if d.iter().all(|x| x.abs() <= eps) {
            face_on_plane = true;
        }
        let mut kept = Vec::with_capacity(face.len() + 2);
        for i in 0..face.len() {
            let j = (i + 1) % face.len();
            let (pi, pj, di, dj) = (face[i], face[j], d[i], d[j]);
            if di <= eps {
                kept.push(pi);
                if di.abs() <= eps {
                    cap.push(pi);
                }
            }
            if (di < -eps && dj > eps) || (di > eps && dj < -eps) {
                let x = pi + (pj - pi) * (di / (di - dj));
                kept.push(x);
                cap.push(x);
            }
        }
        if kept.len() >= 3 {
            out_faces.push(kept);
        }
    }
    if !face_on_plane && cap.len() >= 3 {
        let centroid = cap.iter().sum::<Vec3>() / cap.len() as f64;
        let e1 = {
            let far = cap.iter().max_by(|a, b| {
                (*a - centroid)
                    .norm_squared()
                    .total_cmp(&(*b - centroid).norm_squared())
            });
            let v = far.map(|p| p - centroid).unwrap_or_else(Vec3::zeros);
            let v = v - n * n.dot(&v);
            if v.norm() > 0.0 {
                v.normalize()
            } else {
                Vec3::zeros()
            }
        };
        if e1.norm() > 0.0 {
            let e2 = n.cross(&e1);
            let mut keyed: Vec<(f64, Vec3)> = cap
                .into_iter()
                .map(|p| {
                    let d = p - centroid;
                    (d.dot(&e2).atan2(d.dot(&e1)), p)
                })
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            out_faces.push(keyed.into_iter().map(|(_, p)| p).collect());
        }
    }
    out_faces
}

fn polyhedron_volume(faces: &[Vec<Vec3>]) -> f64 {
    let Some(origin) = faces.first().and_then(|f| f.first()).copied() else {
        return 0.0;
    };
    let mut six_v = 0.0;
    for face in faces {
        let p0 = face[0] - origin;
        for w in face[1..].windows(2) {
            six_v += p0.dot(&(w[0] - origin).cross(&(w[1] - origin)));
        }
    }
    (six_v / 6.0).max(0.0)
}

/// Volume of `a ∩ b`.
pub fn intersection_volume(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    // Cheap rejection with bounding spheres.
    let ra = 0.5 * a.extent.norm();
    let rb = 0.5 * b.extent.norm();
    if (a.center() - b.center()).norm() > ra + rb {
        return 0.0;
    }
    let scale = a
        .extent
        .max()
        .max(b.extent.max())
        .max(a.center().abs().max())
        .max(b.center().abs().max())
        .max(1e-300);
    let eps = 1e-12 * scale;
    let mut poly = a.faces();
    for (n, offset) in b.half_spaces() {
        poly = clip(poly, &n, offset, eps);
        if poly.len() < 4 {
            return 0.0;
        }
    }
    polyhedron_volume(&poly).min(a.volume()).min(b.volume())
}

/// Jaccard index of two oriented boxes, in [0, 1].
pub fn box_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if !(union > 0.0) {
        return 0.0;
    }
    let iou = (inter / union).clamp(0.0, 1.0);
    // Identical boxes lose a few ulps in the clipping arithmetic.
    if 1.0 - iou < 1e-12 {
        1.0
    } else {
        iou
    }
}
