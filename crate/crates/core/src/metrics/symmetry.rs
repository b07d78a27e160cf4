use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, Category, InstanceMask, NocsMap, Rotation3, Vec3};
use crate::pose::NOCS_CENTER;

/// Transition point of the smooth-L1 penalty used by [`symmetry_aware_nocs_error`].
pub const SMOOTH_L1_BETA: f64 = 0.1;

/// Discrete rotational ambiguity about the canonical vertical (+y) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetryClass {
    /// Rotations by 180°.
    TwoFold,
    /// Rotations by multiples of 60°.
    SixFold,
    None,
}

impl SymmetryClass {
    pub fn of(category: Category) -> Self {
        match category {
            Category::Box => SymmetryClass::TwoFold,
            Category::NonStem | Category::Stem => SymmetryClass::SixFold,
            Category::Human => SymmetryClass::None,
        }
    }

    pub fn order(self) -> usize {
        match self {
            SymmetryClass::TwoFold => 2,
            SymmetryClass::SixFold => 6,
            SymmetryClass::None => 1,
        }
    }
}

/// Rotations about the canonical vertical axis that leave the category's appearance unchanged.
pub fn symmetry_rotations(category: Category) -> Vec<Rotation3> {
    let order = SymmetryClass::of(category).order();
    (0..order)
        .map(|k| Rotation3::about_y(std::f64::consts::TAU * k as f64 / order as f64))
        .collect()
}

/// Rotation error in degrees, minimized over the category's symmetry set.
pub fn rotation_error(pred: &Rotation3, gt: &Rotation3, category: Category) -> f64 {
    symmetry_rotations(category)
        .iter()
        .map(|s| geodesic_angle(pred, &(*gt * *s)))
        .fold(f64::INFINITY, f64::min)
}

/// Euclidean distance between translations, in the units of the inputs.
pub fn translation_error(pred: &Vec3, gt: &Vec3) -> f64 {
    (pred - gt).norm()
}

fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * a * a / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

/// Mean smooth-L1 distance between predicted and ground-truth coordinates over
/// the instance's texels, minimized over the symmetry set (ground truth is
/// rotated about the canonical center).
pub fn symmetry_aware_nocs_error(
    pred: &NocsMap,
    gt: &NocsMap,
    mask: &InstanceMask,
    instance: u8,
    category: Category,
) -> Result<f64> {
    let dims = (mask.width(), mask.height());
    if (pred.width(), pred.height()) != dims || (gt.width(), gt.height()) != dims {
        return Err(Error::InvalidInput(
            "NOCS maps and mask differ in size".into(),
        ));
    }
    let texels: Vec<(u32, u32)> = mask.texels(instance).collect();
    if texels.is_empty() {
        return Err(Error::EmptySelection);
    }
    let best = symmetry_rotations(category)
        .iter()
        .map(|s| {
            let total: f64 = texels
                .iter()
                .map(|&(u, v)| {
                    let g = s.apply(&(gt.get(u, v) - NOCS_CENTER)) + NOCS_CENTER;
                    let d = pred.get(u, v) - g;
                    d.iter().map(|&c| smooth_l1(c)).sum::<f64>() / 3.0
                })
                .sum();
            total / texels.len() as f64
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}
