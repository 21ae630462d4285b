//! Calibrated pinhole cameras and two-view epipolar relations.
//!
//! World points map into a camera as `x_cam = R * x_world + t`; pixels use
//! the shared convention from [`crate::grid`] (integer coordinates at pixel
//! centers, origin top-left, y down). Each view also carries the crop window
//! its heatmap was cut from, since the learned maps live on cropped, resized
//! grids rather than full frames.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Axis-aligned crop window inside a full image, together with the square
/// output size the crop is resized to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    /// Left edge in full-image pixel coordinates.
    pub left: f64,
    /// Top edge in full-image pixel coordinates.
    pub top: f64,
    /// Crop width in pixels, > 0.
    pub width: f64,
    /// Crop height in pixels, > 0.
    pub height: f64,
    /// Side length of the square resized output, >= 8.
    pub out_size: usize,
}

impl CropBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64, out_size: usize) -> Result<Self> {
        if out_size < 8 {
            return Err(Error::BadCropOutSize(out_size));
        }
        if !(width > 0.0 && height > 0.0 && left.is_finite() && top.is_finite()) {
            return Err(Error::BadCrop {
                width: 0,
                height: 0,
            });
        }
        Ok(CropBox {
            left,
            top,
            width,
            height,
            out_size,
        })
    }

    /// The four corners in full-image coordinates, clockwise from top-left.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        [
            Vector2::new(self.left, self.top),
            Vector2::new(self.left + self.width, self.top),
            Vector2::new(self.left + self.width, self.top + self.height),
            Vector2::new(self.left, self.top + self.height),
        ]
    }
}

/// Half-line from a camera center, with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::BadDirection(n));
        }
        Ok(Ray { origin, direction })
    }

    /// Point at distance `lambda` along the ray.
    #[inline]
    pub fn at(&self, lambda: f64) -> Vector3<f64> {
        self.origin + self.direction * lambda
    }
}

/// A calibrated view: intrinsics, pose, full-image size and the heatmap crop.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    image_width: u32,
    image_height: u32,
    crop: CropBox,
    // Derived, kept around because projection sits in hot loops.
    proj: Matrix3x4<f64>,
    k_inv: Matrix3<f64>,
    r_t: Matrix3<f64>,
    center: Vector3<f64>,
}

impl CameraView {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        image_width: u32,
        image_height: u32,
        crop: CropBox,
    ) -> Result<Self> {
        if k[(1, 0)].abs() > ORTHO_TOL || k[(2, 0)].abs() > ORTHO_TOL || k[(2, 1)].abs() > ORTHO_TOL
        {
            return Err(Error::BadIntrinsics);
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::BadIntrinsics);
        }
        let residual = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if residual > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::BadRotation(residual.max((det - 1.0).abs())));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::BadCrop {
                width: image_width,
                height: image_height,
            });
        }
        let max_x = f64::from(image_width - 1);
        let max_y = f64::from(image_height - 1);
        if crop.left < -ORTHO_TOL
            || crop.top < -ORTHO_TOL
            || crop.left + crop.width > max_x + ORTHO_TOL
            || crop.top + crop.height > max_y + ORTHO_TOL
        {
            return Err(Error::BadCrop {
                width: image_width,
                height: image_height,
            });
        }
        if crop.out_size < 8 {
            return Err(Error::BadCropOutSize(crop.out_size));
        }

        let mut proj = Matrix3x4::zeros();
        proj.fixed_view_mut::<3, 3>(0, 0).copy_from(&(k * r));
        proj.fixed_view_mut::<3, 1>(0, 3).copy_from(&(k * t));
        let k_inv = k.try_inverse().ok_or(Error::BadIntrinsics)?;
        let r_t = r.transpose();
        let center = -(r_t * t);
        Ok(CameraView {
            k,
            r,
            t,
            image_width,
            image_height,
            crop,
            proj,
            k_inv,
            r_t,
            center,
        })
    }

    /// Convenience constructor: camera at `eye` looking at `target`, with
    /// `up` fixing the roll. Image y grows opposite to `up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        k: Matrix3<f64>,
        image_width: u32,
        image_height: u32,
        crop: CropBox,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::CoincidentCenters);
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::BadConfig(
                "viewing direction is parallel to the up vector".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        CameraView::new(k, r, t, image_width, image_height, crop)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn k_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn crop(&self) -> &CropBox {
        &self.crop
    }

    pub fn with_crop(&self, crop: CropBox) -> Result<Self> {
        CameraView::new(
            self.k,
            self.r,
            self.t,
            self.image_width,
            self.image_height,
            crop,
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    /// Viewing axis (camera +z) in world coordinates.
    pub fn viewing_axis(&self) -> Vector3<f64> {
        self.r_t.column(2).into()
    }

    /// Project a world point. Returns the full-image pixel and the depth in
    /// the camera frame; depth <= 0 means the point is behind the camera and
    /// the pixel coordinates are not meaningful.
    #[inline]
    pub fn project(&self, x: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let h = self.proj
            * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
        let depth = h.z / self.k[(2, 2)];
        (Vector2::new(h.x / h.z, h.y / h.z), depth)
    }

    /// Backproject a full-image pixel into a world ray through the camera
    /// center. Any finite pixel is accepted; callers working on heatmaps
    /// convert to full-image coordinates first.
    pub fn ray_from_pixel(&self, pixel: &Vector2<f64>) -> Ray {
        let d = self.r_t * (self.k_inv * Vector3::new(pixel.x, pixel.y, 1.0));
        Ray {
            origin: self.center,
            direction: d.normalize(),
        }
    }

    /// Homogeneous image of another camera's center (the epipole). The third
    /// component being near zero means the epipole is at infinity.
    pub(crate) fn epipole_of(&self, other_center: &Vector3<f64>) -> Vector3<f64> {
        self.k * (self.r * other_center + self.t)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix F with `x_source^T F x_target = 0` for corresponding
/// pixels. Scaled to unit Frobenius norm, with the sign fixed so the first
/// largest-magnitude entry (row-major) is positive.
pub fn fundamental_matrix(target: &CameraView, source: &CameraView) -> Result<Matrix3<f64>> {
    let r_rel = source.r * target.r_t;
    let t_rel = source.t - r_rel * target.t;
    let scale = target.center().norm().max(source.center().norm()).max(1.0);
    if t_rel.norm() <= 1e-12 * scale {
        return Err(Error::CoincidentCenters);
    }
    let e = skew(&t_rel) * r_rel;
    let f = source.k_inv.transpose() * e * target.k_inv;
    let norm = f.norm();
    if norm <= 0.0 {
        return Err(Error::CoincidentCenters);
    }
    let mut f = f / norm;
    let mut best = 0usize;
    let mut best_mag = f64::NEG_INFINITY;
    for i in 0..3 {
        for j in 0..3 {
            let mag = f[(i, j)].abs();
            if mag > best_mag + 1e-15 {
                best_mag = mag;
                best = i * 3 + j;
            }
        }
    }
    if f[(best / 3, best % 3)] < 0.0 {
        f = -f;
    }
    Ok(f)
}

/// Point of the target pixel's ray at distance `lambda`, projected into the
/// source view. Errors if the point falls behind either camera.
pub fn epipolar_point(
    target: &CameraView,
    source: &CameraView,
    pixel: &Vector2<f64>,
    lambda: f64,
) -> Result<Vector2<f64>> {
    if lambda <= 0.0 {
        return Err(Error::BehindCamera(lambda));
    }
    let ray = target.ray_from_pixel(pixel);
    let (px, depth) = source.project(&ray.at(lambda));
    if depth <= 0.0 {
        return Err(Error::BehindCamera(depth));
    }
    Ok(px)
}
