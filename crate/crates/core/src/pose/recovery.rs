use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, Category, DepthMap, InstanceMask, NocsMap, RigidTransform, Vec2, Vec3,
};
use crate::pose::epnp::epnp_pose;
use crate::pose::umeyama::umeyama_similarity;

/// Canonical-space position of the object center.
pub const NOCS_CENTER: Vec3 = Vec3::new(0.5, 0.5, 0.5);

/// Correspondences beyond this count are uniformly subsampled.
pub const DEFAULT_MAX_CORRESPONDENCES: usize = 4096;

/// One segmented instance with its predicted (or rendered) normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct NocsObservation<'a> {
    pub nocs: &'a NocsMap,
    pub mask: &'a InstanceMask,
    pub instance: u8,
    pub category: Category,
    pub depth: Option<&'a DepthMap>,
    pub intrinsics: CameraIntrinsics,
}

impl NocsObservation<'_> {
    fn validate(&self) -> Result<()> {
        if self.mask.category(self.instance).is_none() {
            return Err(Error::InvalidInput(format!(
                "instance {} not present in mask",
                self.instance
            )));
        }
        if !self.category.is_container() {
            return Err(Error::InvalidInput(
                "pose recovery applies to containers only".into(),
            ));
        }
        let dims = (self.mask.width(), self.mask.height());
        if (self.nocs.width(), self.nocs.height()) != dims {
            return Err(Error::InvalidInput(
                "NOCS map and mask dimensions differ".into(),
            ));
        }
        if let Some(d) = self.depth {
            if (d.width(), d.height()) != dims {
                return Err(Error::InvalidInput(
                    "depth map and mask dimensions differ".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Mean normalized-to-metric scale per category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Category, f64>", into = "BTreeMap<Category, f64>")]
pub struct ScalePriors(BTreeMap<Category, f64>);

impl ScalePriors {
    pub fn new(table: BTreeMap<Category, f64>) -> Result<Self> {
        if let Some((c, s)) = table.iter().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "prior for {c} must be positive, got {s}"
            )));
        }
        Ok(Self(table))
    }

    pub fn get(&self, category: Category) -> Result<f64> {
        self.0
            .get(&category)
            .copied()
            .ok_or(Error::MissingPrior(category))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, f64)> + '_ {
        self.0.iter().map(|(c, s)| (*c, *s))
    }
}

impl TryFrom<BTreeMap<Category, f64>> for ScalePriors {
    type Error = Error;

    fn try_from(table: BTreeMap<Category, f64>) -> Result<Self> {
        Self::new(table)
    }
}

impl From<ScalePriors> for BTreeMap<Category, f64> {
    fn from(p: ScalePriors) -> Self {
        p.0
    }
}

/// Where the EPnP variants take their metric scale from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleStrategy {
    /// Category mean from a training set (EPnP-A).
    AveragePrior(ScalePriors),
    /// The instance's true scale (EPnP-G).
    GroundTruth(f64),
    /// Scale of the Umeyama alignment against depth (EPnP-U).
    FromUmeyama,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryMethod {
    Umeyama,
    Epnp(ScaleStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryOptions {
    pub max_correspondences: usize,
    pub seed: u64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            max_correspondences: DEFAULT_MAX_CORRESPONDENCES,
            seed: 0,
        }
    }
}

/// Metric pose and size of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSizeEstimate {
    /// Canonical center to camera, meters.
    pub pose: RigidTransform,
    /// Full side lengths, meters.
    pub extent: Vec3,
    /// Meters per normalized unit.
    pub scale: f64,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedExtent {
    pub extent: Vec3,
    /// Set when the points cannot bound a volume (fewer than two distinct points).
    pub degenerate: bool,
}

/// Turns a pose recovered from unit-scale normalized points into a metric one.
///
/// With `X = s·N`, the projection `K(R·s·N + t) ∝ K(R·N + t/s)`, so the
/// normalized solution carries `t/s`.
pub fn recover_metric(nocs_pose: &RigidTransform, scale: f64) -> Result<RigidTransform> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scale must be positive, got {scale}"
        )));
    }
    Ok(RigidTransform::new(
        nocs_pose.rotation,
        nocs_pose.translation * scale,
    ))
}

/// Side lengths in normalized units: twice the largest absolute offset from the
/// canonical center along each axis.
pub fn extent_from_nocs(points: &[Vec3]) -> Result<NormalizedExtent> {
    let first = points.first().ok_or(Error::EmptySelection)?;
    let mut extent = Vec3::zeros();
    for p in points {
        let off = (p - NOCS_CENTER).abs() * 2.0;
        extent = extent.sup(&off);
    }
    let degenerate = points.iter().all(|p| p == first);
    Ok(NormalizedExtent { extent, degenerate })
}

/// Arithmetic mean scale per category; every `requested` category needs at least one sample.
pub fn category_scale_prior(
    samples: &[(Category, f64)],
    requested: &[Category],
) -> Result<ScalePriors> {
    let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for &(c, s) in samples {
        let e = sums.entry(c).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    if let Some(&missing) = requested.iter().find(|c| !sums.contains_key(c)) {
        return Err(Error::MissingCategory(missing));
    }
    ScalePriors::new(
        sums.into_iter()
            .map(|(c, (sum, n))| (c, sum / n as f64))
            .collect(),
    )
}

fn subsample<T: Copy>(items: Vec<T>, options: &RecoveryOptions) -> Vec<T> {
    if items.len() <= options.max_correspondences {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut picked = index::sample(&mut rng, items.len(), options.max_correspondences).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i]).collect()
}

/// Centered normalized points paired with back-projected depth for every masked texel with depth.
fn depth_correspondences(obs: &NocsObservation<'_>, depth: &DepthMap) -> Vec<(Vec3, Vec3)> {
    let k = &obs.intrinsics;
    obs.mask
        .texels(obs.instance)
        .filter_map(|(u, v)| {
            let d = depth.get(u, v);
            (d != 0).then(|| {
                let cam = k.ray(u as f64, v as f64) * (d as f64 / 1000.0);
                (obs.nocs.get(u, v) - NOCS_CENTER, cam)
            })
        })
        .collect()
}

fn umeyama_alignment(
    obs: &NocsObservation<'_>,
    options: &RecoveryOptions,
) -> Result<(RigidTransform, f64)> {
    let depth = obs.depth.ok_or(Error::MissingDepth)?;
    let pairs = depth_correspondences(obs, depth);
    if pairs.is_empty() {
        return Err(Error::EmptySelection);
    }
    let pairs = subsample(pairs, options);
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = pairs.into_iter().unzip();
    let sim = umeyama_similarity(&src, &dst)?;
    Ok((sim.rigid(), sim.scale))
}

fn epnp_alignment(obs: &NocsObservation<'_>, options: &RecoveryOptions) -> Result<RigidTransform> {
    let pairs: Vec<(Vec3, Vec2)> = obs
        .mask
        .texels(obs.instance)
        .map(|(u, v)| {
            (
                obs.nocs.get(u, v) - NOCS_CENTER,
                Vec2::new(u as f64, v as f64),
            )
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptySelection);
    }
    let pairs = subsample(pairs, options);
    let (pts, px): (Vec<Vec3>, Vec<Vec2>) = pairs.into_iter().unzip();
    Ok(epnp_pose(&pts, &px, &obs.intrinsics)?.pose)
}

/// Metric pose and size of the observed instance.
pub fn recover_pose_and_size(
    obs: &NocsObservation<'_>,
    method: &RecoveryMethod,
    options: &RecoveryOptions,
) -> Result<PoseSizeEstimate> {
    obs.validate()?;
    let (pose, scale) = match method {
        RecoveryMethod::Umeyama => umeyama_alignment(obs, options)?,
        RecoveryMethod::Epnp(strategy) => {
            let scale = match strategy {
                ScaleStrategy::AveragePrior(priors) => priors.get(obs.category)?,
                ScaleStrategy::GroundTruth(s) => *s,
                ScaleStrategy::FromUmeyama => umeyama_alignment(obs, options)?.1,
            };
            let nocs_pose = epnp_alignment(obs, options)?;
            (recover_metric(&nocs_pose, scale)?, scale)
        }
    };

    let (points, _) = crate::geometry::nocs_points(obs.nocs, obs.mask, obs.instance)?;
    let normalized = extent_from_nocs(&points)?;
    if normalized.degenerate || normalized.extent.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateGeometry(
            "normalized extent has a zero side".into(),
        ));
    }
    Ok(PoseSizeEstimate {
        pose,
        extent: normalized.extent * scale,
        scale,
        category: obs.category,
    })
}
