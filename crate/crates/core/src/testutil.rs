//! Small camera builders shared by the unit tests.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::geometry::{CameraView, CropBox};

pub fn simple_k(f: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0)
}

/// 101x101 camera with a full-frame crop; fine for pure projection tests.
pub fn test_camera(k: Matrix3<f64>, r: Matrix3<f64>, t: Vector3<f64>) -> CameraView {
    CameraView::new(
        k,
        r,
        t,
        101,
        101,
        CropBox::new(0.0, 0.0, 100.0, 100.0, 32).unwrap(),
    )
    .unwrap()
}

/// Random 640x480 camera on a shell around the origin, looking roughly at it.
pub fn random_camera(rng: &mut impl Rng) -> CameraView {
    let radius = rng.gen_range(6.0..14.0);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let z = rng.gen_range(-0.5..0.5);
    let eye = Vector3::new(
        radius * theta.cos(),
        radius * theta.sin(),
        z * radius * 0.5,
    );
    let target = Vector3::new(
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
    );
    let f = rng.gen_range(400.0..900.0);
    let k = Matrix3::new(
        f,
        0.0,
        319.5 + rng.gen_range(-5.0..5.0),
        0.0,
        f * rng.gen_range(0.97..1.03),
        239.5 + rng.gen_range(-5.0..5.0),
        0.0,
        0.0,
        1.0,
    );
    CameraView::look_at(
        eye,
        target,
        Vector3::z(),
        k,
        640,
        480,
        CropBox::new(200.0, 120.0, 240.0, 240.0, 48).unwrap(),
    )
    .unwrap()
}
