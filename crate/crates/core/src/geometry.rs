//! Camera model, rotation/transform types and the image-grid containers shared by
//! recovery, evaluation and synthesis.
//!
//! Lengths are meters everywhere except [`DepthMap`], which stores integer
//! millimeters like the sensor does. Texel `(u, v)` has its center at pixel
//! coordinate `(u as f64, v as f64)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Tolerance used to accept a matrix as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Largest depth the sensor reports, in millimeters.
pub const MAX_DEPTH_MM: u16 = 6000;

/// Object categories. `Human` only labels occluders in masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Box,
    NonStem,
    Stem,
    Human,
}

impl Category {
    pub const CONTAINERS: [Category; 3] = [Category::Box, Category::NonStem, Category::Stem];

    pub fn is_container(self) -> bool {
        self != Category::Human
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Box => "box",
            Category::NonStem => "non-stem",
            Category::Stem => "stem",
            Category::Human => "human",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Category::Box),
            "non-stem" => Ok(Category::NonStem),
            "stem" => Ok(Category::Stem),
            "human" => Ok(Category::Human),
            other => Err(Error::InvalidInput(format!("unknown category `{other}`"))),
        }
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid camera intrinsics {self:?}"
            )))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Ray through pixel `(u, v)` with unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project_point(&self, p: &Vec3) -> Result<Vec2> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok(Vec2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if Self::is_rotation(&m, ROTATION_TOLERANCE) {
            Ok(Self(m))
        } else {
            Err(Error::InvalidInput(format!(
                "matrix is not a rotation: {m}"
            )))
        }
    }

    /// Wraps a matrix produced by a solver that guarantees SO(3) by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(Self::is_rotation(&m, 1e-7), "not a rotation: {m}");
        Self(m)
    }

    pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
        if !m.iter().all(|v| v.is_finite()) {
            return false;
        }
        let gram = m.transpose() * m - Matrix3::identity();
        gram.iter().all(|v| v.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
    }

    pub fn from_axis_angle(axis: &Vec3, angle_rad: f64) -> Self {
        let axis = Unit::new_normalize(*axis);
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle_rad);
        Self(*r.matrix())
    }

    pub fn about_x(angle_rad: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle_rad)
    }

    pub fn about_y(angle_rad: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle_rad)
    }

    pub fn about_z(angle_rad: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle_rad)
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(&v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl TryFrom<[f64; 9]> for Rotation3 {
    type Error = Error;

    fn try_from(v: [f64; 9]) -> Result<Self> {
        Self::from_row_major(v)
    }
}

impl From<Rotation3> for [f64; 9] {
    fn from(r: Rotation3) -> Self {
        r.to_row_major()
    }
}

/// Rotation followed by translation: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Rotation3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.apply(&other.translation),
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -rt.apply(&self.translation))
    }
}

/// Uniform scale, rotation and translation: `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Rotation3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        SimilarityTransform {
            scale: inv_scale,
            rotation: rt,
            translation: -rt.apply(&self.translation) * inv_scale,
        }
    }

    pub fn rigid(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }
}

/// Depth image in integer millimeters; zero marks a missing measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl DepthMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::InvalidInput(
                "depth buffer size does not match dimensions".into(),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > MAX_DEPTH_MM) {
            return Err(Error::InvalidInput(format!(
                "depth {v} mm exceeds sensor range"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.data[(v * self.width + u) as usize]
    }

    /// Stores `mm`, mapping out-of-range values to invalid.
    pub fn set(&mut self, u: u32, v: u32, mm: u16) {
        let mm = if mm > MAX_DEPTH_MM { 0 } else { mm };
        self.data[(v * self.width + u) as usize] = mm;
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }
}

/// Per-texel normalized object coordinates. Validity comes from an [`InstanceMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct NocsMap {
    width: u32,
    height: u32,
    data: Vec<Vec3>,
}

impl NocsMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![Vec3::zeros(); (width * height) as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<Vec3>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::InvalidInput(
                "NOCS buffer size does not match dimensions".into(),
            ));
        }
        if data
            .iter()
            .any(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidInput("NOCS values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> Vec3 {
        self.data[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, p: Vec3) {
        self.data[(v * self.width + u) as usize] = p.map(|c| c.clamp(0.0, 1.0));
    }

    pub fn as_slice(&self) -> &[Vec3] {
        &self.data
    }
}

/// Instance identifiers per texel (0 = background) plus the category of each instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: u32,
    height: u32,
    ids: Vec<u8>,
    categories: Vec<Category>,
}

impl InstanceMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ids: vec![0; (width * height) as usize],
            categories: Vec::new(),
        }
    }

    pub fn from_raw(
        width: u32,
        height: u32,
        ids: Vec<u8>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        if ids.len() != (width * height) as usize {
            return Err(Error::InvalidInput(
                "mask buffer size does not match dimensions".into(),
            ));
        }
        if categories.len() > u8::MAX as usize {
            return Err(Error::InvalidInput("at most 255 instances per mask".into()));
        }
        if let Some(id) = ids.iter().find(|&&id| id as usize > categories.len()) {
            return Err(Error::InvalidInput(format!("mask id {id} has no category")));
        }
        Ok(Self {
            width,
            height,
            ids,
            categories,
        })
    }

    /// Registers a new instance and returns its identifier.
    pub fn add_instance(&mut self, category: Category) -> Result<u8> {
        if self.categories.len() >= u8::MAX as usize {
            return Err(Error::InvalidInput("at most 255 instances per mask".into()));
        }
        self.categories.push(category);
        Ok(self.categories.len() as u8)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> u8 {
        self.ids[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, id: u8) {
        debug_assert!(id as usize <= self.categories.len());
        self.ids[(v * self.width + u) as usize] = id;
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, id: u8) -> Option<Category> {
        (id as usize)
            .checked_sub(1)
            .and_then(|i| self.categories.get(i))
            .copied()
    }

    pub fn instance_count(&self) -> usize {
        self.categories.len()
    }

    fn require(&self, instance: u8) -> Result<()> {
        match self.category(instance) {
            Some(_) => Ok(()),
            None => Err(Error::InvalidInput(format!(
                "instance {instance} not present in mask"
            ))),
        }
    }

    /// Texels belonging to `instance`, in row-major order.
    pub fn texels(&self, instance: u8) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.ids
            .iter()
            .enumerate()
            .filter(move |(_, &id)| id == instance && instance != 0)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }
}

fn check_dims(a: (u32, u32), b: (u32, u32), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "{what} dimensions {a:?} differ from mask {b:?}"
        )));
    }
    Ok(())
}

/// Lifts every masked texel with valid depth to a camera-frame point in meters.
/// The returned pixel list is index-aligned with the points.
pub fn backproject(
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    mask: &InstanceMask,
    instance: u8,
) -> Result<(Vec<Vec3>, Vec<Vec2>)> {
    mask.require(instance)?;
    check_dims(
        (depth.width, depth.height),
        (mask.width, mask.height),
        "depth",
    )?;
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (u, v) in mask.texels(instance) {
        let d = depth.get(u, v);
        if d == 0 {
            continue;
        }
        let z = d as f64 / 1000.0;
        points.push(intrinsics.ray(u as f64, v as f64) * z);
        pixels.push(Vec2::new(u as f64, v as f64));
    }
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok((points, pixels))
}

/// Pinhole projection of camera-frame points.
pub fn project(points: &[Vec3], intrinsics: &CameraIntrinsics) -> Result<Vec<Vec2>> {
    points.iter().map(|p| intrinsics.project_point(p)).collect()
}

/// Normalized coordinates of every texel of `instance`, index-aligned with its pixels.
pub fn nocs_points(
    nocs: &NocsMap,
    mask: &InstanceMask,
    instance: u8,
) -> Result<(Vec<Vec3>, Vec<Vec2>)> {
    mask.require(instance)?;
    check_dims((nocs.width, nocs.height), (mask.width, mask.height), "NOCS")?;
    let (points, pixels): (Vec<_>, Vec<_>) = mask
        .texels(instance)
        .map(|(u, v)| (nocs.get(u, v), Vec2::new(u as f64, v as f64)))
        .unzip();
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok((points, pixels))
}

/// Angle of the relative rotation `Ra·Rbᵀ`, in degrees: `arccos((tr − 1)/2)`,
/// evaluated as `atan2(sin, cos)` so it stays exact near 0° and 180°.
pub fn geodesic_angle(a: &Rotation3, b: &Rotation3) -> f64 {
    let rel = a.matrix() * b.matrix().transpose();
    let cos = (rel.trace() - 1.0) / 2.0;
    let sin = Vec3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        / 2.0;
    sin.atan2(cos).to_degrees()
}
