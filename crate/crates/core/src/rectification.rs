//! Stereo rectification and heatmap-space warps.
//!
//! Rectifying a view pair rotates both cameras onto a shared orientation whose
//! x-axis runs along the baseline, so corresponding pixels land on equal rows
//! and the epipole moves to the ideal point [1, 0, 0]. On top of the full-image
//! homographies this module builds the crop-aware warps that move learned
//! heatmaps (which live on cropped, resized grids) into rectified frames, and
//! the per-pixel scan tables that turn ray max-pooling into row max-pooling.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, CropBox};
use crate::grid::ProbMap;

/// Invertible 3x3 projective map acting on pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= 1e-12 {
            return Err(Error::SingularHomography(det.abs()));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Apply to a pixel. None when the point maps to the line at infinity.
    #[inline]
    pub fn apply(&self, p: &Vector2<f64>) -> Option<Vector2<f64>> {
        let q = self.m * Vector3::new(p.x, p.y, 1.0);
        let scale = q.norm();
        if q.z.abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        Some(Vector2::new(q.x / q.z, q.y / q.z))
    }

    pub fn inverse(&self) -> Homography {
        // Determinant was checked at construction.
        Homography {
            m: self.m.try_inverse().expect("validated invertible"),
        }
    }

    /// `self` after `inner`: (self.compose(inner)).apply(p) applies `inner` first.
    pub fn compose(&self, inner: &Homography) -> Homography {
        Homography {
            m: self.m * inner.m,
        }
    }
}

/// Map from full-image coordinates into the crop's resized output grid: the
/// crop's top-left corner goes to (0, 0) and its far corner to (out, out).
pub fn crop_transform(crop: &CropBox) -> Homography {
    let sx = crop.out_size as f64 / crop.width;
    let sy = crop.out_size as f64 / crop.height;
    Homography {
        m: Matrix3::new(
            sx,
            0.0,
            -sx * crop.left,
            0.0,
            sy,
            -sy * crop.top,
            0.0,
            0.0,
            1.0,
        ),
    }
}

/// Shared rectified orientation for a view pair: x along the baseline, y
/// orthogonal to baseline and mean optical axis, z completing the frame.
/// Also returns the sign with which the baseline projects on the new x-axis.
fn rectified_rotation(target: &CameraView, source: &CameraView) -> Result<(Matrix3<f64>, f64)> {
    let ct = target.center();
    let cs = source.center();
    let baseline = cs - ct;
    let b = baseline.norm();
    let scale = ct.norm().max(cs.norm()).max(1.0);
    if b <= 1e-12 * scale {
        return Err(Error::CoincidentCenters);
    }
    let mut e1 = baseline / b;
    let zm = target.viewing_axis() + source.viewing_axis();
    let e2 = zm.cross(&e1);
    if e2.norm() < 1e-9 {
        // Baseline parallel to the mean viewing axis: head-on motion.
        return Err(Error::DegenerateRectification);
    }
    let mut e2 = e2.normalize();
    // Keep the rectified y-axis roughly aligned with the target's old one so
    // images do not flip; flipping e1 with it leaves e3 = e1 x e2 unchanged.
    let y_old: Vector3<f64> = target.r().row(1).transpose();
    if e2.dot(&y_old) < 0.0 {
        e2 = -e2;
        e1 = -e1;
    }
    let e3 = e1.cross(&e2);
    let r_rect = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
    let sign = if e1.dot(&baseline) >= 0.0 { 1.0 } else { -1.0 };
    Ok((r_rect, sign))
}

fn epipole_in_image(view: &CameraView, other_center: &Vector3<f64>) -> bool {
    let e = view.epipole_of(other_center);
    let scale = e.norm();
    if e.z.abs() <= 1e-12 * scale.max(1e-300) {
        return false; // epipole at infinity: fine
    }
    let u = e.x / e.z;
    let v = e.y / e.z;
    u >= 0.0
        && v >= 0.0
        && u <= f64::from(view.image_width() - 1)
        && v <= f64::from(view.image_height() - 1)
}

/// Full-image rectifying homographies for (target, source). Both warped views
/// share the target's intrinsics, so corresponding points get equal rows.
pub fn rectify_pair(target: &CameraView, source: &CameraView) -> Result<(Homography, Homography)> {
    if epipole_in_image(target, &source.center()) || epipole_in_image(source, &target.center()) {
        return Err(Error::DegenerateRectification);
    }
    let (r_rect, _) = rectified_rotation(target, source)?;
    let k = target.k();
    let h_t = k * r_rect * target.r().transpose() * target.k_inv();
    let h_s = k * r_rect * source.r().transpose() * source.k_inv();
    Ok((Homography::new(h_t)?, Homography::new(h_s)?))
}

/// Crop-aware warp for one view of a rectified pair: maps the view's heatmap
/// into a heatmap cut from the rectified frame. The rectified crop is the
/// axis-aligned bounding box of the warped crop corners, resized to the same
/// output size. Returns the warp together with that rectified crop.
pub fn heatmap_warp(view: &CameraView, rect: &Homography) -> Result<(Homography, CropBox)> {
    let mut min = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in view.crop().corners() {
        let q = rect
            .apply(&corner)
            .ok_or(Error::DegenerateRectification)?;
        if !(q.x.is_finite() && q.y.is_finite()) {
            return Err(Error::DegenerateRectification);
        }
        min.x = min.x.min(q.x);
        min.y = min.y.min(q.y);
        max.x = max.x.max(q.x);
        max.y = max.y.max(q.y);
    }
    let rect_crop = CropBox::new(
        min.x,
        min.y,
        max.x - min.x,
        max.y - min.y,
        view.crop().out_size,
    )?;
    let warp = crop_transform(&rect_crop)
        .compose(rect)
        .compose(&crop_transform(view.crop()).inverse());
    Ok((warp, rect_crop))
}

/// Resample a probability map through `warp` onto an `out_w` x `out_h` grid
/// (inverse-mapped bilinear lookups, zero outside the input).
pub fn warp_probmap(map: &ProbMap, warp: &Homography, out_w: usize, out_h: usize) -> ProbMap {
    let inv = warp.inverse();
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let v = inv
                .apply(&Vector2::new(x as f64, y as f64))
                .map_or(0.0, |p| map.sample_bilinear(p.x, p.y));
            data.push(v);
        }
    }
    ProbMap::from_raw_clamped(out_w, out_h, data)
}

/// Scan-line entry for one (rectified target pixel, source) pair. The column
/// of the target pixel's ray point at depth lambda, in the source's rectified
/// heatmap, is `col_origin - dcoef / lambda`; `row` is constant along the ray.
#[derive(Debug, Clone, Copy)]
pub struct ScanEntry {
    pub col_origin: f64,
    pub row: f64,
    pub dcoef: f64,
}

const INVALID_ENTRY: ScanEntry = ScanEntry {
    col_origin: f64::NAN,
    row: -1e12,
    dcoef: f64::NAN,
};

impl ScanEntry {
    pub fn valid(&self) -> bool {
        self.dcoef.is_finite() && self.col_origin.is_finite()
    }
}

/// Everything needed to run rectified row-scan belief transfer into one
/// target view from a fixed set of sources.
///
/// The scan is parametrized by the columns of the `pivot` source — the first
/// source with a real baseline to the target. Sources whose center coincides
/// with the target's (the self-consistency case) carry `dcoef = 0`: their
/// sample point never moves with depth. `coeffs` holds one representative
/// (a_i, b_i) per source, evaluated at the scan-grid center: the source-i
/// scan column relates to the pivot scan column u as a_i * u + b_i there.
/// The relation is pixel-dependent, so the scan itself uses the exact
/// per-pixel table instead.
#[derive(Debug, Clone)]
pub struct RectifiedPairing {
    out: usize,
    pivot: Option<usize>,
    pub target_warp: Homography,
    pub source_warps: Vec<Homography>,
    source_sizes: Vec<usize>,
    pub coeffs: Vec<(f64, f64)>,
    v_map: Vec<ScanEntry>,
}

impl RectifiedPairing {
    /// Side length of the square scan grid (the rectified target heatmap).
    pub fn out_size(&self) -> usize {
        self.out
    }

    pub fn n_sources(&self) -> usize {
        self.source_sizes.len()
    }

    /// Index of the source whose columns drive the scan; None when every
    /// source shares the target's center (nothing moves with depth).
    pub fn pivot(&self) -> Option<usize> {
        self.pivot
    }

    /// Heatmap side length expected of source `i`'s probability map.
    pub fn source_size(&self, i: usize) -> usize {
        self.source_sizes[i]
    }

    /// Scan entry for rectified target pixel (x, y) and source `i`.
    #[inline]
    pub fn entry(&self, x: usize, y: usize, i: usize) -> &ScanEntry {
        &self.v_map[(y * self.out + x) * self.source_sizes.len() + i]
    }
}

/// Build the rectified pairing of `target` against each source: per-source
/// rectifications, heatmap warps, and the per-pixel scan table that fixes the
/// row v_i and the affine column reparametrization in every rectified source.
pub fn reparam_coeffs(target: &CameraView, sources: &[&CameraView]) -> Result<RectifiedPairing> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    let out = target.crop().out_size;
    let fx = target.k()[(0, 0)];
    let ct = target.center();

    enum Kind {
        /// Proper baseline: affine column model in inverse depth.
        Regular {
            to_src_heat: Matrix3<f64>, // target full-image px -> source rect heatmap px
            dscale: f64,               // sign * crop_sx * fx * baseline
            e3: Vector3<f64>,
        },
        /// Source center coincides with the target's: the sample pixel is the
        /// projection of the ray direction, independent of depth.
        SamePlace { crop: Matrix3<f64> },
    }

    struct PerSource {
        warp: Homography,
        kind: Kind,
        out: usize,
    }

    let scale = ct.norm().max(1.0);
    let mut per: Vec<PerSource> = Vec::with_capacity(sources.len());
    let mut pivot = None;
    for src in sources {
        if (src.center() - ct).norm() <= 1e-12 * scale {
            per.push(PerSource {
                warp: heatmap_warp(src, &Homography::identity())?.0,
                kind: Kind::SamePlace {
                    crop: *crop_transform(src.crop()).matrix(),
                },
                out: src.crop().out_size,
            });
            continue;
        }
        if pivot.is_none() {
            pivot = Some(per.len());
        }
        let (h_t, h_s) = rectify_pair(target, src)?;
        let (sw, s_crop) = heatmap_warp(src, &h_s)?;
        let (r_rect, sign) = rectified_rotation(target, src)?;
        let b = (src.center() - ct).norm();
        let sx = s_crop.out_size as f64 / s_crop.width;
        per.push(PerSource {
            // Target full-image pixel -> pair-rectified frame -> source's
            // rectified heatmap. Rows are shared, so the target-side warp of
            // the pair lands target pixels on their source scan row directly.
            kind: Kind::Regular {
                to_src_heat: crop_transform(&s_crop).matrix() * h_t.matrix(),
                dscale: sign * sx * fx * b,
                e3: r_rect.row(2).transpose(),
            },
            warp: sw,
            out: s_crop.out_size,
        });
    }

    // The scan grid is the rectified target heatmap of the pivot pair; with
    // no pivot the target's own heatmap already is the scan grid.
    let (target_warp, back_full) = match pivot {
        Some(p) => {
            let (h_t, _) = rectify_pair(target, sources[p])?;
            let (tw, t_crop) = heatmap_warp(target, &h_t)?;
            let back = crop_transform(&t_crop).compose(&h_t).inverse();
            (tw, back)
        }
        None => (
            Homography::identity(),
            crop_transform(target.crop()).inverse(),
        ),
    };
    let n = per.len();

    let mut v_map = vec![INVALID_ENTRY; out * out * n];
    for y in 0..out {
        for x in 0..out {
            let Some(p_full) = back_full.apply(&Vector2::new(x as f64, y as f64)) else {
                continue;
            };
            if !(p_full.x.is_finite() && p_full.y.is_finite()) {
                continue;
            }
            let d = target.ray_from_pixel(&p_full).direction;
            let base = (y * out + x) * n;
            for (i, s) in per.iter().enumerate() {
                match &s.kind {
                    Kind::Regular {
                        to_src_heat,
                        dscale,
                        e3,
                    } => {
                        let q = to_src_heat * Vector3::new(p_full.x, p_full.y, 1.0);
                        if q.z.abs() <= 1e-12 {
                            continue;
                        }
                        let depth_dir = e3.dot(&d);
                        if depth_dir.abs() <= 1e-12 {
                            continue;
                        }
                        v_map[base + i] = ScanEntry {
                            col_origin: q.x / q.z,
                            row: q.y / q.z,
                            dcoef: dscale / depth_dir,
                        };
                    }
                    Kind::SamePlace { crop } => {
                        let (p, depth) = sources[i].project(&(ct + d));
                        if depth <= 1e-12 {
                            continue;
                        }
                        let q = crop * Vector3::new(p.x, p.y, 1.0);
                        v_map[base + i] = ScanEntry {
                            col_origin: q.x / q.z,
                            row: q.y / q.z,
                            dcoef: 0.0,
                        };
                    }
                }
            }
        }
    }

    // Representative coefficients at the scan-grid center pixel.
    let c = (out - 1) / 2;
    let center_base = (c * out + c) * n;
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let e = v_map[center_base + i];
        match pivot {
            Some(p) => {
                let pe = v_map[center_base + p];
                if pe.valid() && e.valid() {
                    let a = e.dcoef / pe.dcoef;
                    coeffs.push((a, e.col_origin - a * pe.col_origin));
                } else {
                    coeffs.push((f64::NAN, f64::NAN));
                }
            }
            None => coeffs.push((0.0, if e.valid() { e.col_origin } else { f64::NAN })),
        }
    }

    Ok(RectifiedPairing {
        out,
        pivot,
        target_warp,
        source_warps: per.iter().map(|s| s.warp.clone()).collect(),
        source_sizes: per.iter().map(|s| s.out).collect(),
        coeffs,
        v_map,
    })
}
