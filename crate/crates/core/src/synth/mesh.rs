//! Closed triangle meshes: parametric container stand-ins in canonical space
//! and the capsule used as a hand/forearm occluder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Category, Vec3};

/// Angular resolution of surfaces of revolution; a multiple of 6 so the
/// six-fold symmetry set maps the mesh onto itself.
pub const LATHE_SEGMENTS: usize = 48;

/// Occluder capsule radius, meters.
pub const CAPSULE_RADIUS: f64 = 0.02;
/// Occluder capsule total length including both caps, meters.
pub const CAPSULE_LENGTH: f64 = 0.25;

const CAPSULE_SEGMENTS: usize = 24;
const CAPSULE_CAP_RINGS: usize = 6;

// Irrational-looking direction so parity rays avoid mesh edges and axis-aligned faces.
const PARITY_RAY: Vec3 = Vec3::new(0.280_461_5, 0.903_101_3, 0.325_212_7);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    /// Outward-facing (counter-clockwise seen from outside) vertex triples.
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn iter_triangles(&self) -> impl Iterator<Item = [Vec3; 3]> + '_ {
        (0..self.triangles.len()).map(move |i| self.triangle(i))
    }

    /// Enclosed volume; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.iter_triangles()
            .map(|[a, b, c]| a.dot(&b.cross(&c)))
            .sum::<f64>()
            / 6.0
    }

    /// Every directed edge is paired with exactly one reversed edge.
    pub fn is_watertight(&self) -> bool {
        let mut edges = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        edges
            .iter()
            .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + offset)));
    }

    /// Unsigned distance from `p` to the surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.iter_triangles()
            .map(|t| (closest_point_on_triangle(p, &t) - p).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Inside test by ray parity; meaningful for watertight meshes only.
    pub fn contains(&self, p: &Vec3) -> bool {
        let dir = PARITY_RAY.normalize();
        let hits = self
            .iter_triangles()
            .filter(|t| ray_triangle(p, &dir, t).is_some_and(|h| h.t > 0.0))
            .count();
        hits % 2 == 1
    }

    fn flip(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    fn orient_outward(mut self) -> Self {
        if self.signed_volume() < 0.0 {
            self.flip();
        }
        self
    }

    /// Surface of revolution about +y. `profile` holds `(radius, y)` pairs from
    /// one pole to the other; the first and last radii must be zero.
    pub fn lathe(profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
        let mut mesh = TriangleMesh::default();
        // ring[k] for each profile point; poles collapse to a single vertex.
        let rings: Vec<Vec<u32>> = profile
            .iter()
            .map(|&(r, y)| {
                if r == 0.0 {
                    mesh.vertices.push(Vec3::new(0.0, y, 0.0));
                    vec![mesh.vertices.len() as u32 - 1; segments]
                } else {
                    (0..segments)
                        .map(|k| {
                            let theta = std::f64::consts::TAU * k as f64 / segments as f64;
                            mesh.vertices
                                .push(Vec3::new(r * theta.cos(), y, r * theta.sin()));
                            mesh.vertices.len() as u32 - 1
                        })
                        .collect()
                }
            })
            .collect();
        for (i, pair) in profile.windows(2).enumerate() {
            let (lower_pole, upper_pole) = (pair[0].0 == 0.0, pair[1].0 == 0.0);
            for k in 0..segments {
                let k1 = (k + 1) % segments;
                let (a, b) = (rings[i][k], rings[i][k1]);
                let (c, d) = (rings[i + 1][k1], rings[i + 1][k]);
                if !upper_pole {
                    mesh.triangles.push([a, c, d]);
                }
                if !lower_pole {
                    mesh.triangles.push([a, b, c]);
                }
            }
        }
        mesh.orient_outward()
    }

    /// Axis-aligned box centered at the origin.
    pub fn cuboid(size: Vec3) -> TriangleMesh {
        let h = size / 2.0;
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh {
            vertices,
            triangles,
        }
        .orient_outward()
    }

    /// Capsule along +y from the center of its lower cap (origin) to the center
    /// of its upper cap (`length − 2·radius` up).
    pub fn capsule(radius: f64, length: f64) -> TriangleMesh {
        let seg = length - 2.0 * radius;
        let n = CAPSULE_CAP_RINGS;
        let mut profile = Vec::with_capacity(2 * n + 2);
        for i in 0..=n {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
            profile.push((radius * phi.sin(), -radius * phi.cos()));
        }
        for i in 0..=n {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
            profile.push((radius * phi.cos(), seg + radius * phi.sin()));
        }
        let last = profile.len() - 1;
        profile[0].0 = 0.0;
        profile[last].0 = 0.0;
        Self::lathe(&profile, CAPSULE_SEGMENTS)
    }
}

/// Generator parameters of a container stand-in. Lathe radii are relative to
/// a unit profile height before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeshParams {
    Cuboid {
        width: f64,
        height: f64,
        depth: f64,
    },
    TaperedCup {
        bottom_radius: f64,
        top_radius: f64,
    },
    Stemmed {
        base_radius: f64,
        stem_radius: f64,
        stem_height: f64,
        bowl_radius: f64,
    },
}

const BASE_THICKNESS: f64 = 0.03;
const STEM_FILLET: f64 = 0.06;

impl MeshParams {
    pub fn category(&self) -> Category {
        match self {
            MeshParams::Cuboid { .. } => Category::Box,
            MeshParams::TaperedCup { .. } => Category::NonStem,
            MeshParams::Stemmed { .. } => Category::Stem,
        }
    }

    pub fn sample(category: Category, rng: &mut impl Rng) -> Result<Self> {
        Ok(match category {
            Category::Box => MeshParams::Cuboid {
                width: rng.random_range(0.35..1.0),
                height: 1.0,
                depth: rng.random_range(0.15..0.6),
            },
            Category::NonStem => MeshParams::TaperedCup {
                bottom_radius: rng.random_range(0.2..0.35),
                top_radius: rng.random_range(0.3..0.5),
            },
            Category::Stem => MeshParams::Stemmed {
                base_radius: rng.random_range(0.22..0.32),
                stem_radius: rng.random_range(0.025..0.05),
                stem_height: rng.random_range(0.3..0.5),
                bowl_radius: rng.random_range(0.28..0.4),
            },
            Category::Human => {
                return Err(Error::InvalidInput(
                    "no parametric mesh for the human class".into(),
                ))
            }
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MeshParams::Cuboid {
                width,
                height,
                depth,
            } => [width, height, depth].iter().all(|&v| v > 0.0),
            MeshParams::TaperedCup {
                bottom_radius,
                top_radius,
            } => bottom_radius > 0.0 && top_radius > 0.0,
            MeshParams::Stemmed {
                base_radius,
                stem_radius,
                stem_height,
                bowl_radius,
            } => {
                stem_radius > 0.0
                    && base_radius > stem_radius
                    && bowl_radius > stem_radius
                    && stem_height > BASE_THICKNESS + STEM_FILLET
                    && stem_height < 0.9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid mesh parameters {self:?}"
            )))
        }
    }

    /// Raw (unnormalized) mesh, raw y of the grasp site and horizontal radius there.
    fn raw(&self) -> (TriangleMesh, f64, f64) {
        match *self {
            MeshParams::Cuboid {
                width,
                height,
                depth,
            } => (
                TriangleMesh::cuboid(Vec3::new(width, height, depth)),
                0.0,
                0.5 * width.hypot(depth),
            ),
            MeshParams::TaperedCup {
                bottom_radius,
                top_radius,
            } => (
                TriangleMesh::lathe(
                    &[
                        (0.0, 0.0),
                        (bottom_radius, 0.0),
                        (top_radius, 1.0),
                        (0.0, 1.0),
                    ],
                    LATHE_SEGMENTS,
                ),
                0.5,
                0.5 * (bottom_radius + top_radius),
            ),
            MeshParams::Stemmed {
                base_radius,
                stem_radius,
                stem_height,
                bowl_radius,
            } => {
                let bowl = 1.0 - stem_height;
                let profile = [
                    (0.0, 0.0),
                    (base_radius, 0.0),
                    (base_radius, BASE_THICKNESS),
                    (stem_radius, STEM_FILLET),
                    (stem_radius, stem_height),
                    (0.6 * bowl_radius, stem_height + 0.1 * bowl),
                    (bowl_radius, stem_height + 0.6 * bowl),
                    (0.92 * bowl_radius, 1.0),
                    (0.0, 1.0),
                ];
                (
                    TriangleMesh::lathe(&profile, LATHE_SEGMENTS),
                    0.5 * (STEM_FILLET + stem_height),
                    stem_radius,
                )
            }
        }
    }
}

/// A container stand-in normalized to bounding-box diagonal 1, centered at
/// (0.5, 0.5, 0.5), vertical axis +y.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMesh {
    pub params: MeshParams,
    pub mesh: TriangleMesh,
    /// Canonical bounding-box side lengths.
    pub extent: Vec3,
    /// Canonical height of the grasp site on the vertical axis.
    pub grasp_height: f64,
    /// Canonical horizontal radius of the object at the grasp site.
    pub grasp_radius: f64,
}

impl ParametricMesh {
    pub fn new(params: MeshParams) -> Result<Self> {
        params.validate()?;
        let (raw, raw_grasp, raw_radius) = params.raw();
        let (lo, hi) = raw.bounds();
        let center = (lo + hi) / 2.0;
        let s = 1.0 / (hi - lo).norm();
        let half = Vec3::repeat(0.5);
        let mesh = raw.map_vertices(|v| (v - center) * s + half);
        Ok(Self {
            params,
            mesh,
            extent: (hi - lo) * s,
            grasp_height: (raw_grasp - center.y) * s + 0.5,
            grasp_radius: raw_radius * s,
        })
    }

    pub fn sample(category: Category, rng: &mut impl Rng) -> Result<Self> {
        Self::new(MeshParams::sample(category, rng)?)
    }

    pub fn category(&self) -> Category {
        self.params.category()
    }

    /// Canonical extent along the vertical axis.
    pub fn canonical_height(&self) -> f64 {
        self.extent.y
    }
}

/// Closest point to `p` on triangle `t` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, t: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Ray parameter: hit point is `origin + t·dir`.
    pub t: f64,
    /// Barycentric weights of vertices 1 and 2; vertex 0 gets `1 − u − v`.
    pub u: f64,
    pub v: f64,
}

/// Möller–Trumbore intersection; hits on edges count as inside.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, t: &[Vec3; 3]) -> Option<RayHit> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - t[0];
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(RayHit {
        t: e2.dot(&qvec) * inv,
        u,
        v,
    })
}
