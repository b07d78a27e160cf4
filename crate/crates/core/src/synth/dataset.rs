//! Seeded dataset generation: category and grasp assignment, per-sample
//! sub-seeds, placement with rejection, rendering and background compositing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, Category, DepthMap, InstanceMask, NocsMap, Vec3, MAX_DEPTH_MM,
};
use crate::metrics::OrientedBox3D;
use crate::synth::mesh::ParametricMesh;
use crate::synth::plane::{ransac_plane_fit, SurfacePatch, SyntheticPlane};
use crate::synth::raster::rasterize;
use crate::synth::sampling::{
    interpenetration_check, retry_until, sample_handheld_pose, sample_scale, sample_tabletop_pose,
    GraspKind, ScenePlacement, MAX_ATTEMPTS, MIN_CLEARANCE,
};

/// Levels per NOCS channel in stored maps.
pub const NOCS_LEVELS: f64 = 65535.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub samples: usize,
    /// Relative weight of each container category.
    pub category_mix: BTreeMap<Category, f64>,
    /// Fraction of samples with a handheld placement.
    pub handheld_fraction: f64,
    pub intrinsics: CameraIntrinsics,
    pub plane: SyntheticPlane,
    pub ransac_iterations: usize,
    /// Meters.
    pub ransac_threshold: f64,
    pub max_attempts: usize,
    /// Visible container texels required for a placement to be kept.
    pub min_visible_pixels: usize,
    /// Meters.
    pub min_clearance: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            category_mix: Category::CONTAINERS.into_iter().map(|c| (c, 1.0)).collect(),
            handheld_fraction: 0.5,
            intrinsics: CameraIntrinsics {
                fx: 615.0,
                fy: 615.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            plane: SyntheticPlane::default(),
            ransac_iterations: 200,
            ransac_threshold: 0.003,
            max_attempts: MAX_ATTEMPTS,
            min_visible_pixels: 64,
            min_clearance: MIN_CLEARANCE,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.plane.validate()?;
        if self.category_mix.is_empty() {
            return Err(Error::InvalidInput("category_mix is empty".into()));
        }
        for (c, w) in &self.category_mix {
            if !c.is_container() {
                return Err(Error::InvalidInput(format!(
                    "category_mix lists non-container class {c}"
                )));
            }
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "weight of {c} must be non-negative"
                )));
            }
        }
        if !(self.category_mix.values().sum::<f64>() > 0.0) {
            return Err(Error::InvalidInput("category weights sum to zero".into()));
        }
        if !(0.0..=1.0).contains(&self.handheld_fraction) {
            return Err(Error::InvalidInput(
                "handheld_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.max_attempts == 0 || self.ransac_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_attempts and ransac_iterations must be positive".into(),
            ));
        }
        if !(self.ransac_threshold > 0.0 && self.min_clearance >= 0.0) {
            return Err(Error::InvalidInput("thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// What to generate for one sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub index: usize,
    pub seed: u64,
    pub category: Category,
    pub grasp: GraspKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub index: usize,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub placements: Vec<ScenePlacement>,
    pub depth: DepthMap,
    pub mask: InstanceMask,
    /// Quantized to multiples of 1/65535.
    pub nocs: NocsMap,
    pub boxes: Vec<OrientedBox3D>,
    pub instance_ids: Vec<u8>,
    pub occluder_ids: Vec<Option<u8>>,
    /// The fitted support surface, kept for post-hoc checks.
    pub patch: SurfacePatch,
}

/// Counter-based sub-seed: a SplitMix64 finalizer over `seed` and the index.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest-remainder apportionment of `n` items over `weights`; ties go to
/// the earlier entry.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Category and grasp of every sample, fixed by `(config, seed)` alone.
pub fn plan(config: &GeneratorConfig, seed: u64) -> Result<Vec<SampleSpec>> {
    config.validate()?;
    let n = config.samples;
    let cats: Vec<Category> = config.category_mix.keys().copied().collect();
    let weights: Vec<f64> = config.category_mix.values().copied().collect();
    let mut categories: Vec<Category> = cats
        .iter()
        .zip(apportion(n, &weights))
        .flat_map(|(&c, k)| std::iter::repeat_n(c, k))
        .collect();
    let handheld = apportion(
        n,
        &[config.handheld_fraction, 1.0 - config.handheld_fraction],
    )[0];
    let mut grasps: Vec<GraspKind> = (0..n)
        .map(|i| {
            if i < handheld {
                GraspKind::Handheld
            } else {
                GraspKind::None
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    categories.shuffle(&mut rng);
    grasps.shuffle(&mut rng);
    Ok((0..n)
        .map(|index| SampleSpec {
            index,
            seed: sub_seed(seed, index as u64),
            category: categories[index],
            grasp: grasps[index],
        })
        .collect())
}

fn quantize(p: &Vec3) -> Vec3 {
    p.map(|c| (c.clamp(0.0, 1.0) * NOCS_LEVELS).round() / NOCS_LEVELS)
}

/// The object center must project inside the image; frame-truncated objects
/// leave too few texels to constrain the pose.
fn center_in_view(placement: &ScenePlacement, k: &CameraIntrinsics) -> bool {
    k.project_point(&placement.pose.translation)
        .is_ok_and(|px| {
            (0.0..k.width as f64).contains(&px.x) && (0.0..k.height as f64).contains(&px.y)
        })
}

/// Generates one sample; depends only on the config and `spec`.
pub fn generate_sample(config: &GeneratorConfig, spec: &SampleSpec) -> Result<SceneSample> {
    let k = config.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = config.plane.sample_points(&k, &mut rng)?;
    let patch = ransac_plane_fit(
        &points,
        config.ransac_iterations,
        config.ransac_threshold,
        rng.random(),
    )?;
    let mesh = ParametricMesh::sample(spec.category, &mut rng)?;
    let (_, scale) = sample_scale(spec.category, mesh.canonical_height(), &mut rng)?;

    let (placement, render) = retry_until(config.max_attempts, || {
        let mut placement = match spec.grasp {
            GraspKind::None => sample_tabletop_pose(&patch, &mesh, scale, &mut rng)?,
            GraspKind::Handheld => {
                sample_handheld_pose(&patch, &mesh, scale, spec.category, &mut rng)?
            }
        };
        placement.object_id = 1;
        if !center_in_view(&placement, &k)
            || interpenetration_check(&placement, &patch, config.min_clearance)
        {
            return Ok(None);
        }
        let render = match rasterize(&[placement], &k) {
            Ok(r) => r,
            Err(Error::BehindCamera { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let visible = render.mask.texels(render.instance_ids[0]).count();
        Ok((visible >= config.min_visible_pixels).then_some((placement, render)))
    })?;

    let mut depth = render.depth;
    let (w, h) = (k.width, k.height);
    for v in 0..h {
        for u in 0..w {
            if render.mask.get(u, v) == 0 {
                if let Some(p) = config.plane.hit(&k, u as f64, v as f64) {
                    let mm = (p.z * 1000.0).round();
                    if mm <= MAX_DEPTH_MM as f64 {
                        depth.set(u, v, mm as u16);
                    }
                }
            }
        }
    }
    let nocs = NocsMap::from_raw(w, h, render.nocs.as_slice().iter().map(quantize).collect())?;

    Ok(SceneSample {
        index: spec.index,
        seed: spec.seed,
        intrinsics: k,
        placements: vec![placement],
        depth,
        mask: render.mask,
        nocs,
        boxes: render.boxes,
        instance_ids: render.instance_ids,
        occluder_ids: render.occluder_ids,
        patch,
    })
}

/// Generates every planned sample in index order, handing each to `sink`.
pub fn generate_each(
    config: &GeneratorConfig,
    seed: u64,
    mut sink: impl FnMut(SceneSample) -> Result<()>,
) -> Result<()> {
    for spec in plan(config, seed)? {
        sink(generate_sample(config, &spec)?)?;
    }
    Ok(())
}

/// All samples in memory; prefer [`generate_each`] for large counts.
pub fn generate_dataset(config: &GeneratorConfig, seed: u64) -> Result<Vec<SceneSample>> {
    let mut out = Vec::with_capacity(config.samples);
    generate_each(config, seed, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}
