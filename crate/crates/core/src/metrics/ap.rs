//! Greedy detection-to-ground-truth matching and interpolated average precision.
//!
//! Detections carry no confidence; they are ranked by their best IoU against a
//! same-class ground truth in the same image, ties broken by `(image_id,
//! instance_id)`. AP values are percentages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Category, RigidTransform};
use crate::metrics::iou::{box_iou, OrientedBox3D};
use crate::metrics::symmetry::{rotation_error, translation_error, SymmetryClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub instance_id: u32,
    pub category: Category,
    pub bbox: OrientedBox3D,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub image_id: u64,
    pub instance_id: u32,
    pub category: Category,
    pub bbox: OrientedBox3D,
    pub pose: RigidTransform,
    pub symmetry: SymmetryClass,
}

impl GroundTruthInstance {
    pub fn new(
        image_id: u64,
        instance_id: u32,
        category: Category,
        bbox: OrientedBox3D,
        pose: RigidTransform,
    ) -> Self {
        Self {
            image_id,
            instance_id,
            category,
            bbox,
            pose,
            symmetry: SymmetryClass::of(category),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOutcome {
    /// Index into the detection slice that was matched.
    pub detection: usize,
    pub true_positive: bool,
    /// Ranking key: best IoU against any same-class ground truth in the image.
    pub iou: f64,
    pub matched_gt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One entry per detection, in input order.
    pub outcomes: Vec<DetectionOutcome>,
    /// One flag per ground truth, in input order.
    pub gt_matched: Vec<bool>,
}

/// Which threshold a sweep varies. The other pose threshold is held fixed, or
/// left unconstrained when `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis")]
pub enum SweepAxis {
    /// IoU threshold as a fraction in [0, 1].
    Iou,
    /// Rotation threshold in degrees; translation threshold in meters.
    Rotation { fixed_translation: Option<f64> },
    /// Translation threshold in meters; rotation threshold in degrees.
    Translation { fixed_rotation_deg: Option<f64> },
}

/// mAP as a function of one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApCurve {
    pub axis: SweepAxis,
    /// `(threshold, mAP)` pairs with strictly increasing thresholds.
    pub points: Vec<(f64, f64)>,
}

struct PairTable {
    /// (detection index, gt index, iou) for same-image, same-class pairs.
    pairs: Vec<(usize, usize, f64)>,
    best_iou: Vec<f64>,
}

fn pair_table(detections: &[Detection], gts: &[GroundTruthInstance]) -> PairTable {
    let mut gt_by_image: BTreeMap<(u64, Category), Vec<usize>> = BTreeMap::new();
    for (gi, g) in gts.iter().enumerate() {
        gt_by_image
            .entry((g.image_id, g.category))
            .or_default()
            .push(gi);
    }
    let mut pairs = Vec::new();
    let mut best_iou = vec![0.0; detections.len()];
    for (di, d) in detections.iter().enumerate() {
        if let Some(candidates) = gt_by_image.get(&(d.image_id, d.category)) {
            for &gi in candidates {
                let iou = box_iou(&d.bbox, &gts[gi].bbox);
                best_iou[di] = f64::max(best_iou[di], iou);
                pairs.push((di, gi, iou));
            }
        }
    }
    PairTable { pairs, best_iou }
}

/// Greedy assignment by descending IoU over pairs admitted by `gate`.
fn greedy_match<F>(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    table: &PairTable,
    gate: F,
) -> MatchResult
where
    F: Fn(&Detection, &GroundTruthInstance, f64) -> bool,
{
    let mut candidates: Vec<(usize, usize, f64)> = table
        .pairs
        .iter()
        .copied()
        .filter(|&(di, gi, iou)| gate(&detections[di], &gts[gi], iou))
        .collect();
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| rank_key(&detections[a.0]).cmp(&rank_key(&detections[b.0])))
            .then_with(|| gts[a.1].instance_id.cmp(&gts[b.1].instance_id))
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut det_taken = vec![None; detections.len()];
    let mut gt_matched = vec![false; gts.len()];
    for (di, gi, _) in candidates {
        if det_taken[di].is_none() && !gt_matched[gi] {
            det_taken[di] = Some(gi);
            gt_matched[gi] = true;
        }
    }
    let outcomes = (0..detections.len())
        .map(|di| DetectionOutcome {
            detection: di,
            true_positive: det_taken[di].is_some(),
            iou: table.best_iou[di],
            matched_gt: det_taken[di],
        })
        .collect();
    MatchResult {
        outcomes,
        gt_matched,
    }
}

fn rank_key(d: &Detection) -> (u64, u32) {
    (d.image_id, d.instance_id)
}

/// IoU matching: same class, `IoU ≥ τ`, each ground truth claimed by at most one detection.
pub fn match_detections(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    iou_threshold: f64,
) -> MatchResult {
    let table = pair_table(detections, gts);
    greedy_match(detections, gts, &table, |_, _, iou| iou >= iou_threshold)
}

fn pose_match(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    table: &PairTable,
    max_translation: f64,
    max_rotation_deg: f64,
) -> MatchResult {
    greedy_match(detections, gts, table, |d, g, _| {
        translation_error(&d.pose.translation, &g.pose.translation) < max_translation
            && rotation_error(&d.pose.rotation, &g.pose.rotation, g.category) < max_rotation_deg
    })
}

/// Orders outcomes by descending IoU with `(image_id, instance_id)` tie-breaking.
pub fn rank_outcomes(
    detections: &[Detection],
    outcomes: &[DetectionOutcome],
) -> Vec<DetectionOutcome> {
    let mut ranked = outcomes.to_vec();
    ranked.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then_with(|| {
                rank_key(&detections[a.detection]).cmp(&rank_key(&detections[b.detection]))
            })
            .then_with(|| a.detection.cmp(&b.detection))
    });
    ranked
}

/// `AP = Σ_q (R_q − R_{q−1})·P̂(R_q)` over a ranked TP/FP sequence, in percent.
pub fn average_precision(ranked_true_positives: &[bool], total_ground_truth: usize) -> Result<f64> {
    if total_ground_truth == 0 {
        return Err(Error::NoGroundTruth);
    }
    let n = ranked_true_positives.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (q, &is_tp) in ranked_true_positives.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        recall.push(tp as f64 / total_ground_truth as f64);
        precision.push(tp as f64 / (q + 1) as f64);
    }
    // Interpolated precision: running maximum from the right.
    let mut interp = precision.clone();
    for q in (0..n.saturating_sub(1)).rev() {
        interp[q] = interp[q].max(interp[q + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for q in 0..n {
        ap += (recall[q] - prev_recall) * interp[q];
        prev_recall = recall[q];
    }
    Ok(100.0 * ap)
}

/// Unweighted mean of per-class APs.
pub fn map_over_classes(per_class: &BTreeMap<Category, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

fn per_class_ap(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    result: &MatchResult,
) -> Result<BTreeMap<Category, f64>> {
    let classes: BTreeSet<Category> = gts.iter().map(|g| g.category).collect();
    if classes.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let ranked = rank_outcomes(detections, &result.outcomes);
    classes
        .into_iter()
        .map(|c| {
            let seq: Vec<bool> = ranked
                .iter()
                .filter(|o| detections[o.detection].category == c)
                .map(|o| o.true_positive)
                .collect();
            let n_gt = gts.iter().filter(|g| g.category == c).count();
            Ok((c, average_precision(&seq, n_gt)?))
        })
        .collect()
}

/// Per-class AP with IoU-based true positives.
pub fn iou_ap(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    iou_threshold: f64,
) -> Result<BTreeMap<Category, f64>> {
    per_class_ap(
        detections,
        gts,
        &match_detections(detections, gts, iou_threshold),
    )
}

/// Per-class AP where a true positive needs `ε_t < max_translation` (meters) and
/// `ε_R < max_rotation_deg`.
pub fn pose_ap(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    max_translation: f64,
    max_rotation_deg: f64,
) -> Result<BTreeMap<Category, f64>> {
    let table = pair_table(detections, gts);
    per_class_ap(
        detections,
        gts,
        &pose_match(detections, gts, &table, max_translation, max_rotation_deg),
    )
}

/// mAP at every grid point along `axis`.
pub fn threshold_sweep(
    detections: &[Detection],
    gts: &[GroundTruthInstance],
    axis: SweepAxis,
    grid: &[f64],
) -> Result<ApCurve> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "sweep grid must be strictly increasing".into(),
        ));
    }
    let table = pair_table(detections, gts);
    let points = grid
        .iter()
        .map(|&tau| {
            let result = match axis {
                SweepAxis::Iou => greedy_match(detections, gts, &table, |_, _, iou| iou >= tau),
                SweepAxis::Rotation { fixed_translation } => pose_match(
                    detections,
                    gts,
                    &table,
                    fixed_translation.unwrap_or(f64::INFINITY),
                    tau,
                ),
                SweepAxis::Translation { fixed_rotation_deg } => pose_match(
                    detections,
                    gts,
                    &table,
                    tau,
                    fixed_rotation_deg.unwrap_or(f64::INFINITY),
                ),
            };
            Ok((
                tau,
                map_over_classes(&per_class_ap(detections, gts, &result)?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApCurve { axis, points })
}
