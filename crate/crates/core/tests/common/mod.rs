#![allow(dead_code)]

use proptest::prelude::*;

use nocskit::{CameraIntrinsics, OrientedBox3D, RigidTransform, Rotation3, Vec3};

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(615.0, 615.0, 320.0, 240.0, 640, 480).unwrap()
}

pub fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

pub fn rotation() -> impl Strategy<Value = Rotation3> {
    (
        prop::array::uniform3(-1.0..1.0f64),
        0.0..std::f64::consts::PI,
    )
        .prop_filter("axis too short", |(a, _)| {
            Vec3::new(a[0], a[1], a[2]).norm() > 0.1
        })
        .prop_map(|(a, angle)| Rotation3::from_axis_angle(&Vec3::new(a[0], a[1], a[2]), angle))
}

pub fn rigid(range: f64) -> impl Strategy<Value = RigidTransform> {
    (rotation(), vec3(range)).prop_map(|(r, t)| RigidTransform::new(r, t))
}

pub fn oriented_box() -> impl Strategy<Value = OrientedBox3D> {
    (rigid(0.1), prop::array::uniform3(0.02..0.4f64))
        .prop_map(|(pose, e)| OrientedBox3D::new(pose, Vec3::new(e[0], e[1], e[2])).unwrap())
}

pub fn assert_rotation_valid(r: &Rotation3) {
    let m = r.matrix();
    let gram = m.transpose() * m - nalgebra::Matrix3::identity();
    assert!(gram.amax() < 1e-9, "not orthonormal: {m}");
    assert!((m.determinant() - 1.0).abs() < 1e-9, "det != 1: {m}");
}
