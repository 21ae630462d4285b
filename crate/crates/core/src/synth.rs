//! Synthetic ground truth: parametric solid scenes, camera rigs around them,
//! exact analytic silhouettes, and shaded feature renderings. Everything is
//! deterministic from seeds, so datasets can be rebuilt byte-identically.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraView, CropBox, Ray};
use crate::grid::BinaryMask;
use crate::model::{FeatureImage, FEATURE_CHANNELS};
use crate::rectification::crop_transform;

/// Solid body: everything reduces to a sphere test, the ellipsoid via its
/// affine change of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Ellipsoid {
        center: Vector3<f64>,
        semi_axes: Vector3<f64>,
        /// World-to-body rotation (rows are the body axes).
        orientation: Matrix3<f64>,
    },
}

impl Body {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Body::Sphere { radius, .. } => *radius > 0.0 && radius.is_finite(),
            Body::Ellipsoid { semi_axes, .. } => {
                semi_axes.iter().all(|a| *a > 0.0 && a.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig("body radii must be positive".into()))
        }
    }

    fn bound_radius(&self) -> f64 {
        match self {
            Body::Sphere { radius, .. } => *radius,
            Body::Ellipsoid { semi_axes, .. } => semi_axes.max(),
        }
    }

    fn center(&self) -> Vector3<f64> {
        match self {
            Body::Sphere { center, .. } | Body::Ellipsoid { center, .. } => *center,
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Body::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
            Body::Ellipsoid {
                center,
                semi_axes,
                orientation,
            } => {
                let q = orientation * (p - center);
                let s = Vector3::new(q.x / semi_axes.x, q.y / semi_axes.y, q.z / semi_axes.z);
                s.norm_squared() <= 1.0
            }
        }
    }

    /// Nearest positive ray parameter, if the ray enters the body.
    fn hit(&self, ray: &Ray) -> Option<f64> {
        // Unit-sphere quadratic in a frame where the body is the unit ball.
        let (q, e) = match self {
            Body::Sphere { center, radius } => {
                ((ray.origin - center) / *radius, ray.direction / *radius)
            }
            Body::Ellipsoid {
                center,
                semi_axes,
                orientation,
            } => {
                let o = orientation * (ray.origin - center);
                let d = orientation * ray.direction;
                (
                    Vector3::new(o.x / semi_axes.x, o.y / semi_axes.y, o.z / semi_axes.z),
                    Vector3::new(d.x / semi_axes.x, d.y / semi_axes.y, d.z / semi_axes.z),
                )
            }
        };
        let a = e.norm_squared();
        let b = q.dot(&e);
        let c = q.norm_squared() - 1.0;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t1 = (-b - s) / a;
        let t2 = (-b + s) / a;
        if t1 > 1e-9 {
            Some(t1)
        } else if t2 > 1e-9 {
            Some(t2)
        } else {
            None
        }
    }

    /// Outward surface normal at a point on (or near) the surface.
    fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Body::Sphere { center, .. } => (p - center).normalize(),
            Body::Ellipsoid {
                center,
                semi_axes,
                orientation,
            } => {
                let q = orientation * (p - center);
                let g = Vector3::new(
                    q.x / (semi_axes.x * semi_axes.x),
                    q.y / (semi_axes.y * semi_axes.y),
                    q.z / (semi_axes.z * semi_axes.z),
                );
                (orientation.transpose() * g).normalize()
            }
        }
    }
}

/// Union of solid bodies plus the seed that drives the background texture.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bodies: Vec<Body>,
    pub background_seed: u64,
}

impl Scene {
    pub fn new(bodies: Vec<Body>, background_seed: u64) -> Result<Self> {
        for b in &bodies {
            b.validate()?;
        }
        Ok(Scene {
            bodies,
            background_seed,
        })
    }

    /// The stock two-body scene used by tests and default configs: a ball
    /// with an oblique ellipsoid limb sticking out, so visual hulls stay
    /// strict supersets.
    pub fn default_two_body(background_seed: u64) -> Scene {
        let tilt = 0.5f64;
        let (c, s) = (tilt.cos(), tilt.sin());
        let orientation = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        Scene {
            bodies: vec![
                Body::Sphere {
                    center: Vector3::new(-0.15, 0.0, 0.1),
                    radius: 1.0,
                },
                Body::Ellipsoid {
                    center: Vector3::new(0.95, 0.35, -0.15),
                    semi_axes: Vector3::new(0.85, 0.3, 0.28),
                    orientation,
                },
            ],
            background_seed,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.bodies.iter().any(|b| b.contains(p))
    }

    /// Nearest positive hit over all bodies.
    pub fn hit(&self, ray: &Ray) -> Option<f64> {
        self.bodies
            .iter()
            .filter_map(|b| b.hit(ray))
            .min_by(|a, b| a.total_cmp(b))
    }

    fn hit_with_normal(&self, ray: &Ray) -> Option<(f64, Vector3<f64>)> {
        let mut best: Option<(f64, &Body)> = None;
        for b in &self.bodies {
            if let Some(t) = b.hit(ray) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, b));
                }
            }
        }
        best.map(|(t, b)| (t, b.normal_at(&ray.at(t))))
    }

    /// Conservative bounding sphere of all bodies.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        if self.bodies.is_empty() {
            return (Vector3::zeros(), 1.0);
        }
        let center = self
            .bodies
            .iter()
            .fold(Vector3::zeros(), |acc, b| acc + b.center())
            / self.bodies.len() as f64;
        let radius = self
            .bodies
            .iter()
            .map(|b| (b.center() - center).norm() + b.bound_radius())
            .fold(0.0, f64::max);
        (center, radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigKind {
    Ring,
    Dome,
    TwoLayer,
}

/// Camera rig description: evenly spaced cameras at `radius` from `look_at`,
/// all sharing one intrinsics template and heatmap size.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub kind: RigKind,
    pub camera_count: usize,
    pub radius: f64,
    pub look_at: Vector3<f64>,
    pub focal: f64,
    pub image_size: u32,
    pub heatmap_size: usize,
}

impl Rig {
    pub fn ring(camera_count: usize, radius: f64, heatmap_size: usize) -> Rig {
        Rig {
            kind: RigKind::Ring,
            camera_count,
            radius,
            look_at: Vector3::zeros(),
            focal: 300.0,
            image_size: 256,
            heatmap_size,
        }
    }
}

/// Build the rig's cameras. Each camera's crop is fitted to the projected
/// bounding sphere of `scene`, so heatmaps always contain the whole
/// silhouette with a margin.
pub fn make_rig(rig: &Rig, scene: &Scene) -> Result<Vec<CameraView>> {
    if rig.camera_count < 2 {
        return Err(Error::TooFewCameras(rig.camera_count));
    }
    if !(rig.radius > 0.0 && rig.focal > 0.0 && rig.image_size >= 16) {
        return Err(Error::BadConfig("rig radius/focal/image size".into()));
    }
    let (b_center, b_radius) = scene.bounding_sphere();
    let n = rig.camera_count;
    let mut eyes = Vec::with_capacity(n);
    match rig.kind {
        RigKind::Ring => {
            for k in 0..n {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                eyes.push(rig.look_at + rig.radius * Vector3::new(th.cos(), th.sin(), 0.0));
            }
        }
        RigKind::Dome => {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            for k in 0..n {
                let frac = (k as f64 + 0.5) / n as f64;
                let elev = 0.15 + 1.05 * frac; // 8.6 .. 69 degrees
                let th = golden * k as f64;
                eyes.push(
                    rig.look_at
                        + rig.radius
                            * Vector3::new(
                                elev.cos() * th.cos(),
                                elev.cos() * th.sin(),
                                elev.sin(),
                            ),
                );
            }
        }
        RigKind::TwoLayer => {
            let upper = n / 2 + n % 2;
            for k in 0..n {
                let (count, offset, elev): (usize, f64, f64) = if k < upper {
                    (upper, 0.0, 0.5)
                } else {
                    (n - upper, 0.5, 0.05)
                };
                let idx = if k < upper { k } else { k - upper };
                let th = 2.0 * std::f64::consts::PI * (idx as f64 + offset) / count as f64;
                eyes.push(
                    rig.look_at
                        + rig.radius
                            * Vector3::new(
                                elev.cos() * th.cos(),
                                elev.cos() * th.sin(),
                                elev.sin(),
                            ),
                );
            }
        }
    }

    let half = f64::from(rig.image_size - 1) / 2.0;
    let k = Matrix3::new(rig.focal, 0.0, half, 0.0, rig.focal, half, 0.0, 0.0, 1.0);
    let mut cams = Vec::with_capacity(n);
    for eye in eyes {
        if scene.contains(&eye) {
            return Err(Error::BadConfig("camera placed inside a scene body".into()));
        }
        let full = CropBox::new(
            0.0,
            0.0,
            f64::from(rig.image_size - 1),
            f64::from(rig.image_size - 1),
            rig.heatmap_size,
        )?;
        let cam = CameraView::look_at(
            eye,
            rig.look_at,
            Vector3::z(),
            k,
            rig.image_size,
            rig.image_size,
            full,
        )?;
        let (p, depth) = cam.project(&b_center);
        if depth <= b_radius {
            return Err(Error::BadConfig(
                "camera cannot see the whole scene bounding sphere".into(),
            ));
        }
        let r_px = rig.focal * b_radius / (depth * depth - b_radius * b_radius).sqrt() * 1.15 + 3.0;
        let max_c = f64::from(rig.image_size - 1);
        let left = (p.x - r_px).max(0.0);
        let right = (p.x + r_px).min(max_c);
        let top = (p.y - r_px).max(0.0);
        let bottom = (p.y + r_px).min(max_c);
        if right - left < 2.0 || bottom - top < 2.0 {
            return Err(Error::BadConfig(
                "scene projects outside the camera image".into(),
            ));
        }
        cams.push(cam.with_crop(CropBox::new(
            left,
            top,
            right - left,
            bottom - top,
            rig.heatmap_size,
        )?)?);
    }
    Ok(cams)
}

/// Exact silhouette on the view's heatmap grid: a pixel is foreground iff the
/// ray through its center intersects any body.
pub fn render_silhouette(scene: &Scene, cam: &CameraView) -> BinaryMask {
    let out = cam.crop().out_size;
    let back = crop_transform(cam.crop()).inverse();
    let mut mask = BinaryMask::zeros(out, out);
    for y in 0..out {
        for x in 0..out {
            let full = back
                .apply(&Vector2::new(x as f64, y as f64))
                .expect("crop transforms are affine");
            let ray = cam.ray_from_pixel(&full);
            mask.set(x, y, scene.hit(&ray).is_some());
        }
    }
    mask
}

// ---- deterministic procedural texture -------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn hash_unit(seed: u64, x: i64, y: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(x as u64 ^ splitmix64(y as u64 ^ 0x5bd1e995)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear lattice value noise in [0, 1] with cell size `cell` pixels.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let gx = x / cell;
    let gy = y / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = smoothstep(gx - x0);
    let fy = smoothstep(gy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let v00 = hash_unit(seed, x0, y0);
    let v10 = hash_unit(seed, x0 + 1, y0);
    let v01 = hash_unit(seed, x0, y0 + 1);
    let v11 = hash_unit(seed, x0 + 1, y0 + 1);
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

// Rendering constants. The background is mostly dark with sparse bright
// patches that reach foreground intensity, so a purely per-pixel classifier
// cannot be perfect and cross-view supervision has something to fix.
const LIGHT_DIR: [f64; 3] = [0.36, -0.32, 0.88];
const FG_AMBIENT: f64 = 0.6;
const FG_DIFFUSE: f64 = 0.60;
const FG_TINT: [f64; 3] = [1.0, 0.92, 0.85];
const BG_BASE: f64 = 0.08;
const BG_RANGE: f64 = 0.9;
const BG_SHARPNESS: f64 = 3.0;
const BG_TINT: [f64; 3] = [0.95, 0.97, 0.9];
const FG_SPECULAR: f64 = 0.4;
const FG_SHININESS: f64 = 10.0;

/// Shaded foreground over procedural background, plus normalized pixel
/// coordinates, with optional additive hash noise on the shading channels.
pub fn render_features(scene: &Scene, cam: &CameraView, noise_level: f64) -> FeatureImage {
    let out = cam.crop().out_size;
    let back = crop_transform(cam.crop()).inverse();
    let light = Vector3::new(LIGHT_DIR[0], LIGHT_DIR[1], LIGHT_DIR[2]).normalize();
    let mut img = FeatureImage::zeros(out, out, FEATURE_CHANNELS);
    let denom = (out - 1).max(1) as f64;
    // Sensor noise must differ between cameras, so salt it with the pose;
    // otherwise every view shares one noise image and the noise stops being
    // noise (it becomes a learnable bias field common to all views).
    let center = cam.center();
    let view_salt = center.x.to_bits()
        ^ center.y.to_bits().rotate_left(21)
        ^ center.z.to_bits().rotate_left(42);
    // Cameras in a rig never agree on exposure. A shared luminance gain per
    // view keeps channel ratios intact (the scene stays separable by a
    // gain-invariant rule) while forcing any single-view fit to miss on the
    // other cameras. The gain only ever brightens: an overexposed view turns
    // background into false positives, which other views can veto, whereas an
    // underexposed one would blind the camera to real foreground and no
    // cross-check can recover what nobody sees.
    let gain = 1.0
        + (25.0 * noise_level).min(1.0) * 0.7 * hash_unit(view_salt ^ 0x9e3779b9, 17, 29);
    for y in 0..out {
        for x in 0..out {
            let full = back
                .apply(&Vector2::new(x as f64, y as f64))
                .expect("crop transforms are affine");
            let ray = cam.ray_from_pixel(&full);
            let (base, tint, spec) = match scene.hit_with_normal(&ray) {
                Some((_, n)) => {
                    let lambert = n.dot(&light).max(0.0);
                    // White view-dependent highlight: it adds the same amount
                    // to every channel (tint differences survive exactly) but
                    // moves with the camera, so the same surface point looks
                    // different from different views.
                    let half = (light - ray.direction).normalize();
                    let spec = if lambert > 0.0 {
                        FG_SPECULAR * n.dot(&half).max(0.0).powf(FG_SHININESS)
                    } else {
                        0.0
                    };
                    (FG_AMBIENT + FG_DIFFUSE * lambert, FG_TINT, spec)
                }
                None => {
                    // Texture coordinates follow the full image so adjacent
                    // views do not share backgrounds.
                    let t = 0.6 * value_noise(scene.background_seed, full.x, full.y, 21.0)
                        + 0.4 * value_noise(scene.background_seed ^ 0xa5a5, full.x, full.y, 6.0);
                    let base = BG_BASE + BG_RANGE * t.powf(BG_SHARPNESS);
                    // Clutter: warm blobs that copy the foreground's tint and
                    // brightness range. Per pixel they are indistinguishable
                    // from the object; only cross-view agreement can reject
                    // them, because each camera sees different background.
                    // Scaled by noise_level so noise-free scenes stay exactly
                    // separable.
                    let c = value_noise(scene.background_seed ^ 0x3c3c, full.x, full.y, 14.0);
                    let warm = smoothstep(((c - 0.52) / 0.16).clamp(0.0, 1.0))
                        * (8.0 * noise_level).min(0.5);
                    let tint = [
                        BG_TINT[0] + warm * (FG_TINT[0] - BG_TINT[0]),
                        BG_TINT[1] + warm * (FG_TINT[1] - BG_TINT[1]),
                        BG_TINT[2] + warm * (FG_TINT[2] - BG_TINT[2]),
                    ];
                    let lifted = base + warm * (FG_AMBIENT + FG_DIFFUSE * t - base);
                    (lifted, tint, 0.0)
                }
            };
            for c in 0..3 {
                let noise_seed = scene
                    .background_seed
                    .wrapping_mul(31)
                    .wrapping_add(1 + c as u64)
                    .wrapping_add(view_salt);
                let u = 2.0 * hash_unit(noise_seed, x as i64, y as i64) - 1.0;
                img.set(c, x, y, gain * (base * tint[c] + spec) + noise_level * u);
            }
            img.set(3, x, y, x as f64 / denom);
            img.set(4, x, y, y as f64 / denom);
        }
    }
    img
}

/// One view of a dataset. Ground truth is attached only when labeled.
#[derive(Debug, Clone)]
pub struct DatasetView {
    pub camera: CameraView,
    pub features: FeatureImage,
    pub truth: Option<BinaryMask>,
    pub labeled: bool,
}

/// A reproducible multiview dataset. `eval_truth` keeps every view's GT for
/// evaluation only — training code must not read it for unlabeled views.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub views: Vec<DatasetView>,
    pub eval_truth: Vec<BinaryMask>,
    pub bound_center: Vector3<f64>,
    pub bound_radius: f64,
}

impl Dataset {
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].labeled)
            .collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| !self.views[i].labeled)
            .collect()
    }
}

/// Render the full dataset and split views into labeled/unlabeled by seed.
/// The labeled count is round(eta * views) and must leave at least 2 labeled
/// and 1 unlabeled view.
pub fn make_dataset(
    scene: &Scene,
    rig: &Rig,
    eta: f64,
    noise_level: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::BadConfig("labeled fraction must be in (0, 1)".into()));
    }
    let cams = make_rig(rig, scene)?;
    let n = cams.len();
    let labeled_count = (eta * n as f64).round() as usize;
    if labeled_count < 2 {
        return Err(Error::TooFewLabeled { eta, views: n });
    }
    if labeled_count >= n {
        return Err(Error::BadConfig(
            "labeled fraction leaves no unlabeled view".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    assemble_dataset(scene, cams, &order[..labeled_count], noise_level)
}

/// Like [`make_dataset`], but with the labeled views chosen explicitly —
/// comparisons across labeled counts want nested, evenly spread label sets
/// rather than shuffled ones.
pub fn make_dataset_with_labels(
    scene: &Scene,
    rig: &Rig,
    labels: &[usize],
    noise_level: f64,
) -> Result<Dataset> {
    let cams = make_rig(rig, scene)?;
    let n = cams.len();
    if labels.len() < 2 || labels.iter().any(|&i| i >= n) {
        return Err(Error::BadConfig(
            "need at least 2 labeled views, all within the rig".into(),
        ));
    }
    if labels.len() >= n {
        return Err(Error::BadConfig(
            "labeled set leaves no unlabeled view".into(),
        ));
    }
    assemble_dataset(scene, cams, labels, noise_level)
}

fn assemble_dataset(
    scene: &Scene,
    cams: Vec<CameraView>,
    labels: &[usize],
    noise_level: f64,
) -> Result<Dataset> {
    let mut labeled = vec![false; cams.len()];
    for &i in labels {
        labeled[i] = true;
    }
    let mut views = Vec::with_capacity(cams.len());
    let mut eval_truth = Vec::with_capacity(cams.len());
    for (i, cam) in cams.into_iter().enumerate() {
        let truth = render_silhouette(scene, &cam);
        let features = render_features(scene, &cam, noise_level);
        views.push(DatasetView {
            camera: cam,
            features,
            truth: labeled[i].then(|| truth.clone()),
            labeled: labeled[i],
        });
        eval_truth.push(truth);
    }
    let (bound_center, bound_radius) = scene.bounding_sphere();
    Ok(Dataset {
        views,
        eval_truth,
        bound_center,
        bound_radius,
    })
}
