//! Structured text records: per-sample annotations, dataset manifests and
//! prediction files. Every record carries a schema version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, Category, DepthMap, InstanceMask, NocsMap, RigidTransform, Vec3,
};
use crate::io::png;
use crate::metrics::{Detection, GroundTruthInstance, OrientedBox3D, SymmetryClass};
use crate::pose::PoseSizeEstimate;
use crate::synth::{
    GeneratorConfig, GraspKind, MeshParams, ParametricMesh, PoseDraws, SceneSample,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses a record; malformed content is a schema error, not an I/O error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "{what} schema version {found}, expected {SCHEMA_VERSION}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderAnnotation {
    pub instance_id: u8,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceAnnotation {
    pub instance_id: u8,
    pub category: Category,
    /// Meters per canonical unit.
    pub scale: f64,
    /// Canonical center to camera; rotation row-major, translation in meters.
    pub pose: RigidTransform,
    /// Canonical bounding-box side lengths.
    pub extent: Vec3,
    pub symmetry: SymmetryClass,
    pub grasp: GraspKind,
    pub occluder: Option<OccluderAnnotation>,
    pub mesh: MeshParams,
    pub draws: PoseDraws,
}

impl InstanceAnnotation {
    pub fn metric_box(&self) -> Result<OrientedBox3D> {
        OrientedBox3D::new(self.pose, self.extent * self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub schema_version: u32,
    pub sample: usize,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub instances: Vec<InstanceAnnotation>,
}

impl AnnotationRecord {
    pub fn from_sample(sample: &SceneSample) -> Result<Self> {
        let instances = sample
            .placements
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let extent = ParametricMesh::new(p.mesh)?.extent;
                Ok(InstanceAnnotation {
                    instance_id: sample.instance_ids[i],
                    category: p.category,
                    scale: p.scale,
                    pose: p.pose,
                    extent,
                    symmetry: SymmetryClass::of(p.category),
                    grasp: p.grasp,
                    occluder: match (p.occluder, sample.occluder_ids[i]) {
                        (Some(pose), Some(instance_id)) => {
                            Some(OccluderAnnotation { instance_id, pose })
                        }
                        (None, None) => None,
                        _ => {
                            return Err(Error::InvalidInput(
                                "occluder pose and mask id disagree".into(),
                            ))
                        }
                    },
                    mesh: p.mesh,
                    draws: p.draws,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            sample: sample.index,
            seed: sample.seed,
            intrinsics: sample.intrinsics,
            instances,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version, "annotation")?;
        self.intrinsics
            .validate()
            .map_err(|e| Error::Schema(e.to_string()))?;
        for inst in &self.instances {
            if !inst.category.is_container() {
                return Err(Error::Schema(format!(
                    "instance {} is not a container",
                    inst.instance_id
                )));
            }
            if !(inst.scale > 0.0 && inst.scale.is_finite()) {
                return Err(Error::Schema(format!(
                    "instance {} has non-positive scale",
                    inst.instance_id
                )));
            }
            if !inst.extent.iter().all(|&e| e > 0.0 && e.is_finite()) {
                return Err(Error::Schema(format!(
                    "instance {} has a non-positive extent",
                    inst.instance_id
                )));
            }
            if inst.symmetry != SymmetryClass::of(inst.category) {
                return Err(Error::Schema(format!(
                    "instance {} symmetry does not match its class",
                    inst.instance_id
                )));
            }
        }
        self.mask_categories().map(|_| ())
    }

    /// Class of every mask id `1..=n`; each id must be declared exactly once.
    pub fn mask_categories(&self) -> Result<Vec<Category>> {
        let mut by_id = BTreeMap::new();
        for inst in &self.instances {
            let mut declare = |id: u8, c: Category| {
                if id == 0 || by_id.insert(id, c).is_some() {
                    Err(Error::Schema(format!(
                        "mask id {id} is zero or declared twice"
                    )))
                } else {
                    Ok(())
                }
            };
            declare(inst.instance_id, inst.category)?;
            if let Some(o) = inst.occluder {
                declare(o.instance_id, Category::Human)?;
            }
        }
        by_id
            .iter()
            .enumerate()
            .map(|(i, (&id, &c))| {
                if id as usize == i + 1 {
                    Ok(c)
                } else {
                    Err(Error::Schema(format!(
                        "mask ids are not contiguous: missing {}",
                        i + 1
                    )))
                }
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruthInstance>> {
        self.instances
            .iter()
            .map(|inst| {
                Ok(GroundTruthInstance {
                    image_id: self.sample as u64,
                    instance_id: inst.instance_id as u32,
                    category: inst.category,
                    bbox: inst.metric_box()?,
                    pose: inst.pose,
                    symmetry: inst.symmetry,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub depth: String,
    pub mask: String,
    pub nocs: String,
    pub annotation: String,
}

impl ManifestEntry {
    pub fn for_index(index: usize, seed: u64) -> Self {
        Self {
            index,
            seed,
            depth: format!("{index:06}.depth.png"),
            mask: format!("{index:06}.mask.png"),
            nocs: format!("{index:06}.nocs.png"),
            annotation: format!("{index:06}.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let m: Manifest = read_json(&root.join(MANIFEST_FILE))?;
        check_version(m.schema_version, "manifest")?;
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }
}

/// One decoded sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub depth: DepthMap,
    pub mask: InstanceMask,
    pub nocs: NocsMap,
    pub annotation: AnnotationRecord,
}

/// Paths of a sample's four files under `root`.
pub fn sample_paths(root: &Path, entry: &ManifestEntry) -> [PathBuf; 4] {
    [&entry.depth, &entry.mask, &entry.nocs, &entry.annotation].map(|f| root.join(f))
}

pub fn save_sample(root: &Path, sample: &SceneSample) -> Result<ManifestEntry> {
    let entry = ManifestEntry::for_index(sample.index, sample.seed);
    let [depth, mask, nocs, annotation] = sample_paths(root, &entry);
    png::save_depth(&depth, &sample.depth)?;
    png::save_mask(
        &mask,
        sample.mask.width(),
        sample.mask.height(),
        sample.mask.ids(),
    )?;
    png::save_nocs(&nocs, &sample.nocs)?;
    write_json(&annotation, &AnnotationRecord::from_sample(sample)?)?;
    Ok(entry)
}

pub fn load_sample(root: &Path, entry: &ManifestEntry) -> Result<LoadedSample> {
    let [depth, mask, nocs, annotation] = sample_paths(root, entry);
    let annotation: AnnotationRecord = read_json(&annotation)?;
    annotation.validate()?;
    let depth = png::load_depth(&depth)?;
    let (w, h, ids) = png::load_mask(&mask)?;
    let mask = InstanceMask::from_raw(w, h, ids, annotation.mask_categories()?)
        .map_err(|e| Error::Schema(format!("{}: {e}", entry.mask)))?;
    let nocs = png::load_nocs(&nocs)?;
    if (depth.width(), depth.height()) != (w, h) || (nocs.width(), nocs.height()) != (w, h) {
        return Err(Error::Schema(format!(
            "sample {} maps differ in size",
            entry.index
        )));
    }
    if (annotation.intrinsics.width, annotation.intrinsics.height) != (w, h) {
        return Err(Error::Schema(format!(
            "sample {} intrinsics do not match the maps",
            entry.index
        )));
    }
    Ok(LoadedSample {
        depth,
        mask,
        nocs,
        annotation,
    })
}

/// One recovered instance, or the reason recovery failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionEntry {
    pub sample: usize,
    pub instance_id: u8,
    pub category: Category,
    pub estimate: Option<PoseSizeEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub schema_version: u32,
    pub method: String,
    pub entries: Vec<PredictionEntry>,
}

impl PredictionFile {
    pub fn load(path: &Path) -> Result<Self> {
        let p: PredictionFile = read_json(path)?;
        check_version(p.schema_version, "prediction")?;
        Ok(p)
    }

    pub fn errors(&self) -> usize {
        self.entries.iter().filter(|e| e.estimate.is_none()).count()
    }

    /// Detections for every successful entry, checked against the ground truth ids.
    pub fn detections(&self, gts: &[GroundTruthInstance]) -> Result<Vec<Detection>> {
        let known: BTreeMap<(u64, u32), Category> = gts
            .iter()
            .map(|g| ((g.image_id, g.instance_id), g.category))
            .collect();
        self.entries
            .iter()
            .filter_map(|e| e.estimate.map(|est| (e, est)))
            .map(|(e, est)| {
                let key = (e.sample as u64, e.instance_id as u32);
                if !known.contains_key(&key) {
                    return Err(Error::IdMismatch(format!(
                        "prediction for sample {} instance {} has no ground truth",
                        e.sample, e.instance_id
                    )));
                }
                Ok(Detection {
                    image_id: key.0,
                    instance_id: key.1,
                    category: e.category,
                    bbox: OrientedBox3D::new(est.pose, est.extent)?,
                    pose: est.pose,
                })
            })
            .collect()
    }
}
