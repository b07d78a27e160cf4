//! Evaluation reports: per-class AP at a set of thresholds in the standard
//! column layout, optional sweep curves, and CSV renderings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Category;
use crate::io::records::SCHEMA_VERSION;
use crate::metrics::{
    iou_ap, map_over_classes, pose_ap, threshold_sweep, ApCurve, Detection, GroundTruthInstance,
    SweepAxis,
};

/// A true-positive criterion in display units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Threshold {
    /// 3D IoU at or above `percent`.
    Iou { percent: f64 },
    /// Translation error below `cm` and rotation error below `deg`.
    Pose { cm: f64, deg: f64 },
}

/// J25, J50, (5 cm, 5°), (10 cm, 5°), (10 cm, 10°), (15 cm, 10°).
pub const DEFAULT_THRESHOLDS: [Threshold; 6] = [
    Threshold::Iou { percent: 25.0 },
    Threshold::Iou { percent: 50.0 },
    Threshold::Pose { cm: 5.0, deg: 5.0 },
    Threshold::Pose { cm: 10.0, deg: 5.0 },
    Threshold::Pose {
        cm: 10.0,
        deg: 10.0,
    },
    Threshold::Pose {
        cm: 15.0,
        deg: 10.0,
    },
];

fn num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Threshold {
    /// Column label: `J25`, `e10_5` (centimeters, degrees).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Threshold::Iou { percent } => write!(f, "J{}", num(percent)),
            Threshold::Pose { cm, deg } => write!(f, "e{}_{}", num(cm), num(deg)),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;

    /// `iou:<percent>` or `pose:<cm>:<deg>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let value = |p: &str| -> Result<f64> {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::InvalidInput(format!("bad threshold value {p:?} in {s:?}")))
        };
        match parts.as_slice() {
            ["iou", p] => {
                let percent = value(p)?;
                if percent > 100.0 {
                    return Err(Error::InvalidInput(format!(
                        "IoU threshold {percent} exceeds 100%"
                    )));
                }
                Ok(Threshold::Iou { percent })
            }
            ["pose", cm, deg] => Ok(Threshold::Pose {
                cm: value(cm)?,
                deg: value(deg)?,
            }),
            _ => Err(Error::InvalidInput(format!(
                "threshold {s:?} is neither iou:<percent> nor pose:<cm>:<deg>"
            ))),
        }
    }
}

impl Threshold {
    pub fn per_class_ap(
        &self,
        dets: &[Detection],
        gts: &[GroundTruthInstance],
    ) -> Result<BTreeMap<Category, f64>> {
        match *self {
            Threshold::Iou { percent } => iou_ap(dets, gts, percent / 100.0),
            Threshold::Pose { cm, deg } => pose_ap(dets, gts, cm / 100.0, deg),
        }
    }
}

/// A sweep in display units (percent, degrees, centimeters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub axis: String,
    /// `(threshold, mAP)` pairs.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Iou,
    Rot,
    Tra,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(SweepKind::Iou),
            "rot" => Ok(SweepKind::Rot),
            "tra" => Ok(SweepKind::Tra),
            _ => Err(Error::InvalidInput(format!(
                "unknown sweep axis {s:?} (iou, rot, tra)"
            ))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Iou => "iou",
            SweepKind::Rot => "rot",
            SweepKind::Tra => "tra",
        })
    }
}

impl SweepKind {
    pub const ALL: [SweepKind; 3] = [SweepKind::Iou, SweepKind::Rot, SweepKind::Tra];

    /// IoU 0–100 %, rotation 0–60°, translation 0–50 cm, unit steps.
    pub fn default_grid(self) -> Vec<f64> {
        let top = match self {
            SweepKind::Iou => 100,
            SweepKind::Rot => 60,
            SweepKind::Tra => 50,
        };
        (0..=top).map(f64::from).collect()
    }

    /// Sweep along this axis with the other pose threshold unconstrained.
    pub fn run(
        self,
        dets: &[Detection],
        gts: &[GroundTruthInstance],
        grid: &[f64],
    ) -> Result<SweepCurve> {
        let (axis, factor) = match self {
            SweepKind::Iou => (SweepAxis::Iou, 0.01),
            SweepKind::Rot => (
                SweepAxis::Rotation {
                    fixed_translation: None,
                },
                1.0,
            ),
            SweepKind::Tra => (
                SweepAxis::Translation {
                    fixed_rotation_deg: None,
                },
                0.01,
            ),
        };
        let internal: Vec<f64> = grid.iter().map(|g| g * factor).collect();
        let ApCurve { points, .. } = threshold_sweep(dets, gts, axis, &internal)?;
        Ok(SweepCurve {
            axis: self.to_string(),
            points: grid
                .iter()
                .zip(points)
                .map(|(&g, (_, ap))| (g, ap))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub detections: usize,
    pub ground_truths: usize,
    /// Instances for which recovery produced no estimate.
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub columns: Vec<String>,
    pub thresholds: Vec<Threshold>,
    /// AP (percent) per class, one value per column.
    pub classes: BTreeMap<Category, Vec<f64>>,
    /// Unweighted mean over `classes`, per column.
    pub mean: Vec<f64>,
    pub curves: Vec<SweepCurve>,
    pub counts: ReportCounts,
}

impl EvalReport {
    /// Table as CSV with one decimal: a header, one row per class, then `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("class,{}\n", self.columns.join(","));
        let row = |name: &str, values: &[f64]| {
            let cells: Vec<String> = values.iter().map(|v| format!("{v:.1}")).collect();
            format!("{name},{}\n", cells.join(","))
        };
        for (c, values) in &self.classes {
            out += &row(c.name(), values);
        }
        out += &row("mean", &self.mean);
        out
    }
}

/// `threshold,map` rows.
pub fn curve_csv(curve: &SweepCurve) -> String {
    let mut out = String::from("threshold,map\n");
    for (t, ap) in &curve.points {
        out += &format!("{},{ap:.4}\n", num(*t));
    }
    out
}

/// AP table at `thresholds` plus, if `with_curves`, the three default sweeps.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    thresholds: &[Threshold],
    errors: usize,
    with_curves: bool,
) -> Result<EvalReport> {
    let mut classes: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    let mut mean = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let per_class = t.per_class_ap(dets, gts)?;
        mean.push(map_over_classes(&per_class)?);
        for (c, ap) in per_class {
            classes.entry(c).or_default().push(ap);
        }
    }
    let curves = if with_curves {
        SweepKind::ALL
            .iter()
            .map(|k| k.run(dets, gts, &k.default_grid()))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        columns: thresholds.iter().map(Threshold::to_string).collect(),
        thresholds: thresholds.to_vec(),
        classes,
        mean,
        curves,
        counts: ReportCounts {
            detections: dets.len(),
            ground_truths: gts.len(),
            errors,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidTransform, Rotation3, Vec3};
    use crate::metrics::OrientedBox3D;

    fn fixture(offset: f64) -> (Vec<Detection>, Vec<GroundTruthInstance>) {
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for (i, c) in Category::CONTAINERS.into_iter().enumerate() {
            let pose = RigidTransform::new(
                Rotation3::about_y(0.2 * i as f64),
                Vec3::new(0.0, 0.0, 1.0 + i as f64),
            );
            let bbox = OrientedBox3D::new(pose, Vec3::new(0.1, 0.2, 0.1)).unwrap();
            gts.push(GroundTruthInstance::new(i as u64, 1, c, bbox, pose));
            let moved = RigidTransform::new(
                pose.rotation,
                pose.translation + Vec3::new(offset, 0.0, 0.0),
            );
            let dbox = OrientedBox3D::new(moved, bbox.extent).unwrap();
            dets.push(Detection {
                image_id: i as u64,
                instance_id: 1,
                category: c,
                bbox: dbox,
                pose: moved,
            });
        }
        (dets, gts)
    }

    #[test]
    fn threshold_labels_and_parsing() {
        let labels: Vec<String> = DEFAULT_THRESHOLDS.iter().map(|t| t.to_string()).collect();
        assert_eq!(labels, ["J25", "J50", "e5_5", "e10_5", "e10_10", "e15_10"]);
        assert_eq!(
            "iou:75".parse::<Threshold>().unwrap(),
            Threshold::Iou { percent: 75.0 }
        );
        assert_eq!(
            "pose:20:15".parse::<Threshold>().unwrap(),
            Threshold::Pose {
                cm: 20.0,
                deg: 15.0
            }
        );
        assert_eq!(Threshold::Pose { cm: 2.5, deg: 1.0 }.to_string(), "e2.5_1");
        for bad in ["iou", "iou:120", "pose:5", "pose:a:b", "rot:5", "iou:-1"] {
            assert!(bad.parse::<Threshold>().is_err(), "{bad}");
        }
    }

    #[test]
    fn perfect_predictions_fill_the_table() {
        let (dets, gts) = fixture(0.0);
        let r = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS, 0, true).unwrap();
        assert!(r.classes.values().flatten().all(|&v| v == 100.0));
        assert!(r.mean.iter().all(|&v| v == 100.0));
        for curve in &r.curves {
            let positive: Vec<_> = curve.points.iter().filter(|p| p.0 > 0.0).collect();
            assert!(positive.iter().all(|p| p.1 == 100.0), "{}", curve.axis);
        }
        let csv = r.to_csv();
        assert!(csv.starts_with("class,J25,J50,e5_5,e10_5,e10_10,e15_10\n"));
        assert!(csv.ends_with("mean,100.0,100.0,100.0,100.0,100.0,100.0\n"));
    }

    #[test]
    fn twelve_centimeter_offset() {
        let (dets, gts) = fixture(0.12);
        let r = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS, 0, false).unwrap();
        let col = |name: &str| r.columns.iter().position(|c| c == name).unwrap();
        assert_eq!(r.mean[col("e10_10")], 0.0);
        assert_eq!(r.mean[col("e15_10")], 100.0);
        // class rows average to the mean row
        for (j, m) in r.mean.iter().enumerate() {
            let avg = r.classes.values().map(|v| v[j]).sum::<f64>() / r.classes.len() as f64;
            assert!((avg - m).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_rows() {
        let (dets, gts) = fixture(0.0);
        let one = SweepKind::Iou.run(&dets, &gts, &[50.0]).unwrap();
        assert_eq!(curve_csv(&one), "threshold,map\n50,100.0000\n");
        assert!("xyz".parse::<SweepKind>().is_err());
        assert_eq!(SweepKind::Rot.default_grid().len(), 61);
        assert_eq!(SweepKind::Tra.default_grid().last(), Some(&50.0));
    }
}
