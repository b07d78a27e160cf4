//! Z-buffered ray-cast rasterization of placed meshes at pixel centers.

use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, Category, DepthMap, InstanceMask, NocsMap, Vec3, MAX_DEPTH_MM,
};
use crate::metrics::OrientedBox3D;
use crate::synth::mesh::{ray_triangle, ParametricMesh, TriangleMesh};
use crate::synth::sampling::ScenePlacement;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub depth: DepthMap,
    pub mask: InstanceMask,
    pub nocs: NocsMap,
    /// Ground-truth box per placement.
    pub boxes: Vec<OrientedBox3D>,
    /// Mask id of each placement's container.
    pub instance_ids: Vec<u8>,
    /// Mask id of each placement's occluder, if any.
    pub occluder_ids: Vec<Option<u8>>,
}

struct Surface {
    camera: TriangleMesh,
    /// Canonical vertex coordinates for containers.
    canonical: Option<Vec<Vec3>>,
    id: u8,
}

#[derive(Clone, Copy)]
struct Fragment {
    z: f64,
    surface: u32,
    triangle: u32,
    u: f64,
    v: f64,
}

/// Renders depth (rounded to millimeters), instance ids and normalized
/// coordinates. NOCS is set exactly on container texels and zero elsewhere.
pub fn rasterize(placements: &[ScenePlacement], k: &CameraIntrinsics) -> Result<RenderedScene> {
    k.validate()?;
    let (w, h) = (k.width, k.height);
    let mut mask = InstanceMask::empty(w, h);
    let mut surfaces = Vec::new();
    let mut boxes = Vec::with_capacity(placements.len());
    let mut instance_ids = Vec::with_capacity(placements.len());
    let mut occluder_ids = Vec::with_capacity(placements.len());
    for p in placements {
        if !p.category.is_container() {
            return Err(Error::InvalidInput(format!(
                "placement of non-container class {}",
                p.category
            )));
        }
        let canonical = ParametricMesh::new(p.mesh)?;
        let f = p.canonical_to_camera();
        let id = mask.add_instance(p.category)?;
        surfaces.push(Surface {
            camera: canonical.mesh.map_vertices(|v| f.apply(v)),
            canonical: Some(canonical.mesh.vertices.clone()),
            id,
        });
        boxes.push(OrientedBox3D::new(p.pose, canonical.extent * p.scale)?);
        instance_ids.push(id);
        occluder_ids.push(match p.occluder_mesh() {
            Some(camera) => {
                let oid = mask.add_instance(Category::Human)?;
                surfaces.push(Surface {
                    camera,
                    canonical: None,
                    id: oid,
                });
                Some(oid)
            }
            None => None,
        });
    }

    let mut zbuf: Vec<Option<Fragment>> = vec![None; (w * h) as usize];
    let origin = Vec3::zeros();
    for (si, s) in surfaces.iter().enumerate() {
        if let Some(v) = s.camera.vertices.iter().find(|v| v.z <= 0.0) {
            return Err(Error::BehindCamera { z: v.z });
        }
        for (ti, tri) in s.camera.iter_triangles().enumerate() {
            let px: Vec<(f64, f64)> = tri
                .iter()
                .map(|p| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
                .collect();
            let umin = px
                .iter()
                .map(|q| q.0)
                .fold(f64::INFINITY, f64::min)
                .ceil()
                .max(0.0);
            let umax = px
                .iter()
                .map(|q| q.0)
                .fold(f64::NEG_INFINITY, f64::max)
                .floor()
                .min(w as f64 - 1.0);
            let vmin = px
                .iter()
                .map(|q| q.1)
                .fold(f64::INFINITY, f64::min)
                .ceil()
                .max(0.0);
            let vmax = px
                .iter()
                .map(|q| q.1)
                .fold(f64::NEG_INFINITY, f64::max)
                .floor()
                .min(h as f64 - 1.0);
            if umin > umax || vmin > vmax {
                continue;
            }
            for v in vmin as u32..=vmax as u32 {
                for u in umin as u32..=umax as u32 {
                    let ray = k.ray(u as f64, v as f64);
                    let Some(hit) = ray_triangle(&origin, &ray, &tri) else {
                        continue;
                    };
                    // Unit-depth rays: the ray parameter is the depth.
                    if hit.t <= 0.0 {
                        continue;
                    }
                    let slot = &mut zbuf[(v * w + u) as usize];
                    if slot.is_none_or(|f| hit.t < f.z) {
                        *slot = Some(Fragment {
                            z: hit.t,
                            surface: si as u32,
                            triangle: ti as u32,
                            u: hit.u,
                            v: hit.v,
                        });
                    }
                }
            }
        }
    }

    let mut depth = DepthMap::zeros(w, h);
    let mut nocs = NocsMap::zeros(w, h);
    for v in 0..h {
        for u in 0..w {
            let Some(f) = zbuf[(v * w + u) as usize] else {
                continue;
            };
            let s = &surfaces[f.surface as usize];
            let mm = (f.z * 1000.0).round();
            depth.set(
                u,
                v,
                if mm <= MAX_DEPTH_MM as f64 {
                    mm as u16
                } else {
                    0
                },
            );
            mask.set(u, v, s.id);
            if let Some(canon) = &s.canonical {
                let [a, b, c] = s.camera.triangles[f.triangle as usize];
                let p = canon[a as usize] * (1.0 - f.u - f.v)
                    + canon[b as usize] * f.u
                    + canon[c as usize] * f.v;
                nocs.set(u, v, p);
            }
        }
    }
    Ok(RenderedScene {
        depth,
        mask,
        nocs,
        boxes,
        instance_ids,
        occluder_ids,
    })
}
