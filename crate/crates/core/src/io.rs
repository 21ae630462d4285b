//! File formats for scenes, rigs, cameras, masks, maps and checkpoints.
//!
//! Text formats are TOML. Rasters use Netpbm: P4 bitmaps for binary masks and
//! P5 graymaps for 8-bit heatmap exports (probability scaled by 255 and
//! rounded). Probability maps, feature stacks and checkpoints get lossless
//! little-endian binary containers, because training resumption and
//! determinism checks need exact doubles back. Every writer goes through a
//! sibling temp file and a rename, so an interrupted run never leaves a
//! truncated artifact at the destination path.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, CropBox};
use crate::grid::{BinaryMask, ProbMap};
use crate::model::{Adam, EvalPoint, FeatureImage, ModelWeights, TrainState};
use crate::synth::{Body, Rig, RigKind, Scene};

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// `fs::read` with the path attached to the error, since "No such file or
/// directory" alone is useless to whoever typed the path.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| annotate(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Writes `bytes` through `<path>.tmp` and renames into place, creating
/// parent directories as needed. The rename is what makes partial output
/// impossible: the destination either keeps its old content or gets all of
/// the new one.
pub fn write_bytes_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_text_atomic(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_bytes_atomic(path, text.as_bytes())
}

/// Joins a header line and comma-joined rows into one CSV file. Fields are
/// written verbatim (callers emit plain numbers and bare identifiers, so no
/// quoting is needed); numeric fields should be pre-formatted with a fixed
/// precision to keep re-runs byte-identical.
pub fn write_csv(path: impl AsRef<Path>, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text_atomic(path, &out)
}

// ---------------------------------------------------------------------------
// TOML mirrors. The library types validate on construction, so the file
// structs stay dumb and every load round-trips through the real constructors.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneFile {
    background_seed: u64,
    bodies: Vec<BodyFile>,
}

#[derive(Serialize, Deserialize)]
struct BodyFile {
    kind: String,
    center: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semi_axes: Option<[f64; 3]>,
    /// Row-major world-to-body rotation.
    #[serde(skip_serializing_if = "Option::is_none")]
    orientation: Option<[f64; 9]>,
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn vec3_arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn mat3_arr(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    let file = SceneFile {
        background_seed: scene.background_seed,
        bodies: scene
            .bodies
            .iter()
            .map(|b| match b {
                Body::Sphere { center, radius } => BodyFile {
                    kind: "sphere".into(),
                    center: vec3_arr(center),
                    radius: Some(*radius),
                    semi_axes: None,
                    orientation: None,
                },
                Body::Ellipsoid {
                    center,
                    semi_axes,
                    orientation,
                } => BodyFile {
                    kind: "ellipsoid".into(),
                    center: vec3_arr(center),
                    radius: None,
                    semi_axes: Some(vec3_arr(semi_axes)),
                    orientation: Some(mat3_arr(orientation)),
                },
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&file)
        .map_err(|e| format_err(path.as_ref(), format!("cannot encode scene: {e}")))?;
    write_text_atomic(path, &text)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let file: SceneFile = toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    let mut bodies = Vec::with_capacity(file.bodies.len());
    for (i, b) in file.bodies.iter().enumerate() {
        let body = match b.kind.as_str() {
            "sphere" => Body::Sphere {
                center: vec3(b.center),
                radius: b
                    .radius
                    .ok_or_else(|| format_err(path, format!("body {i}: sphere needs `radius`")))?,
            },
            "ellipsoid" => Body::Ellipsoid {
                center: vec3(b.center),
                semi_axes: vec3(b.semi_axes.ok_or_else(|| {
                    format_err(path, format!("body {i}: ellipsoid needs `semi_axes`"))
                })?),
                orientation: Matrix3::from_row_slice(&b.orientation.ok_or_else(|| {
                    format_err(path, format!("body {i}: ellipsoid needs `orientation`"))
                })?),
            },
            other => {
                return Err(format_err(
                    path,
                    format!("body {i}: unknown kind {other:?} (sphere | ellipsoid)"),
                ))
            }
        };
        bodies.push(body);
    }
    Scene::new(bodies, file.background_seed)
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    kind: String,
    camera_count: usize,
    radius: f64,
    look_at: [f64; 3],
    focal: f64,
    image_size: u32,
    heatmap_size: usize,
}

fn rig_kind_name(kind: RigKind) -> &'static str {
    match kind {
        RigKind::Ring => "ring",
        RigKind::Dome => "dome",
        RigKind::TwoLayer => "two-layer",
    }
}

pub fn save_rig(path: impl AsRef<Path>, rig: &Rig) -> Result<()> {
    let file = RigFile {
        kind: rig_kind_name(rig.kind).into(),
        camera_count: rig.camera_count,
        radius: rig.radius,
        look_at: vec3_arr(&rig.look_at),
        focal: rig.focal,
        image_size: rig.image_size,
        heatmap_size: rig.heatmap_size,
    };
    let text = toml::to_string_pretty(&file)
        .map_err(|e| format_err(path.as_ref(), format!("cannot encode rig: {e}")))?;
    write_text_atomic(path, &text)
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<Rig> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let file: RigFile = toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    let kind = match file.kind.as_str() {
        "ring" => RigKind::Ring,
        "dome" => RigKind::Dome,
        "two-layer" => RigKind::TwoLayer,
        other => {
            return Err(format_err(
                path,
                format!("unknown rig kind {other:?} (ring | dome | two-layer)"),
            ))
        }
    };
    Ok(Rig {
        kind,
        camera_count: file.camera_count,
        radius: file.radius,
        look_at: vec3(file.look_at),
        focal: file.focal,
        image_size: file.image_size,
        heatmap_size: file.heatmap_size,
    })
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    /// Row-major intrinsics.
    k: [f64; 9],
    /// Row-major world-to-camera rotation.
    r: [f64; 9],
    t: [f64; 3],
    image_width: u32,
    image_height: u32,
    crop: CropFile,
}

#[derive(Serialize, Deserialize)]
struct CropFile {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    out_size: usize,
}

pub fn save_camera(path: impl AsRef<Path>, cam: &CameraView) -> Result<()> {
    let crop = cam.crop();
    let file = CameraFile {
        k: mat3_arr(cam.k()),
        r: mat3_arr(cam.r()),
        t: vec3_arr(cam.t()),
        image_width: cam.image_width(),
        image_height: cam.image_height(),
        crop: CropFile {
            left: crop.left,
            top: crop.top,
            width: crop.width,
            height: crop.height,
            out_size: crop.out_size,
        },
    };
    let text = toml::to_string_pretty(&file)
        .map_err(|e| format_err(path.as_ref(), format!("cannot encode camera: {e}")))?;
    write_text_atomic(path, &text)
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<CameraView> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let file: CameraFile = toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    CameraView::new(
        Matrix3::from_row_slice(&file.k),
        Matrix3::from_row_slice(&file.r),
        vec3(file.t),
        file.image_width,
        file.image_height,
        CropBox {
            left: file.crop.left,
            top: file.crop.top,
            width: file.crop.width,
            height: file.crop.height,
            out_size: file.crop.out_size,
        },
    )
}

// ---------------------------------------------------------------------------
// Netpbm rasters.
// ---------------------------------------------------------------------------

fn pack_mask_rows(mask: &BinaryMask) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    let stride = w.div_ceil(8);
    let mut raster = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                raster[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    raster
}

fn unpack_mask_rows(w: usize, h: usize, raster: &[u8]) -> Option<BinaryMask> {
    let stride = w.div_ceil(8);
    if raster.len() != stride * h {
        return None;
    }
    let mut mask = BinaryMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let bit = raster[y * stride + x / 8] & (0x80 >> (x % 8));
            mask.set(x, y, bit != 0);
        }
    }
    Some(mask)
}

/// Saves a mask as a binary PBM (P4). Foreground pixels are set bits, which
/// PBM viewers display as black on white.
pub fn save_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let mut out = format!("P4\n{} {}\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(&pack_mask_rows(mask));
    write_bytes_atomic(path, &out)
}

/// Reads the P4 subset written by [`save_mask`]: magic, two ASCII dimensions,
/// one whitespace byte, packed rows. `#` comment lines between header tokens
/// are accepted for hand-edited files.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let data = read_bytes(path)?;
    let (w, h, rest) = parse_pnm_header(&data, b"P4").map_err(|msg| format_err(path, msg))?;
    unpack_mask_rows(w, h, rest)
        .ok_or_else(|| format_err(path, format!("raster length does not match {w}x{h}")))
}

/// Exports a probability map as an 8-bit PGM (P5): gray = round(255 * p),
/// so 0 is certain background and 255 certain foreground.
pub fn save_probmap_pgm(path: impl AsRef<Path>, map: &ProbMap) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.as_slice().iter().map(|p| (p * 255.0).round() as u8));
    write_bytes_atomic(path, &out)
}

/// Parses a PNM header: magic, `#` comments, whitespace-separated dimensions
/// (and maxval for P5), then a single whitespace byte before the raster.
fn parse_pnm_header<'a>(
    data: &'a [u8],
    magic: &[u8],
) -> std::result::Result<(usize, usize, &'a [u8]), String> {
    if data.len() < 2 || &data[..2] != magic {
        return Err(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        ));
    }
    let mut pos = 2;
    let want_maxval = magic == b"P5";
    let mut fields = [0usize; 3];
    let n_fields = if want_maxval { 3 } else { 2 };
    for field in fields.iter_mut().take(n_fields) {
        // Skip whitespace and comment lines.
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err("expected an ASCII integer in header".into());
        }
        *field = std::str::from_utf8(&data[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "header field overflows usize".to_string())?;
    }
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("header must end with one whitespace byte".into()),
    }
    if want_maxval && fields[2] != 255 {
        return Err(format!("only maxval 255 is supported, got {}", fields[2]));
    }
    if fields[0] == 0 || fields[1] == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((fields[0], fields[1], &data[pos..]))
}

// ---------------------------------------------------------------------------
// Lossless binary containers. Shared layout: 4-byte magic, little-endian
// fixed-width fields, no padding; sizes derive from the header so the readers
// can validate the exact byte count.
// ---------------------------------------------------------------------------

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new(magic: &[u8; 4]) -> Self {
        ByteWriter {
            buf: magic.to_vec(),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8], magic: &[u8; 4], path: &'a Path) -> Result<Self> {
        if data.len() < 4 || &data[..4] != magic {
            return Err(format_err(
                path,
                format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(ByteReader { data, pos: 4, path })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(format_err(self.path, "truncated file"));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Header dimension that also bounds the remaining payload, so a corrupt
    /// length fails cleanly instead of triggering a huge allocation.
    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()? as usize;
        if v == 0 || v > self.data.len() {
            return Err(format_err(self.path, format!("implausible dimension {v}")));
        }
        Ok(v)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(format_err(
                self.path,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Saves a probability map with exact doubles: `PMAP`, u32 width, u32 height,
/// then width*height row-major f64 values, all little-endian.
pub fn save_probmap(path: impl AsRef<Path>, map: &ProbMap) -> Result<()> {
    let mut w = ByteWriter::new(b"PMAP");
    w.u32(map.width() as u32);
    w.u32(map.height() as u32);
    w.f64s(map.as_slice());
    write_bytes_atomic(path, &w.buf)
}

pub fn load_probmap(path: impl AsRef<Path>) -> Result<ProbMap> {
    let path = path.as_ref();
    let data = read_bytes(path)?;
    let mut r = ByteReader::new(&data, b"PMAP", path)?;
    let (w, h) = (r.dim()?, r.dim()?);
    let values = r.f64s(w * h)?;
    r.finish()?;
    ProbMap::from_vec(w, h, values)
}

/// Saves a feature stack: `FEAT`, u32 channels, u32 width, u32 height, then
/// the channel-major f64 data exactly as the model consumes it.
pub fn save_features(path: impl AsRef<Path>, features: &FeatureImage) -> Result<()> {
    let mut w = ByteWriter::new(b"FEAT");
    w.u32(features.channels() as u32);
    w.u32(features.width() as u32);
    w.u32(features.height() as u32);
    w.f64s(features.as_slice());
    write_bytes_atomic(path, &w.buf)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureImage> {
    let path = path.as_ref();
    let data = read_bytes(path)?;
    let mut r = ByteReader::new(&data, b"FEAT", path)?;
    let (c, w, h) = (r.dim()?, r.dim()?, r.dim()?);
    let values = r.f64s(c * w * h)?;
    r.finish()?;
    FeatureImage::from_vec(w, h, c, values)
}

const CHECKPOINT_VERSION: u32 = 1;

/// Serializes resumable training state: `CKPT`, a format version, model
/// weights, optimizer moments, the exact RNG position, the step counter,
/// per-view pseudo-masks and the metric history. Loading this back and
/// resuming reproduces an uninterrupted run bit for bit.
pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let mut w = ByteWriter::new(b"CKPT");
    w.u32(CHECKPOINT_VERSION);

    let weights = &state.weights;
    w.u32(weights.channels() as u32);
    w.u32(weights.hidden() as u32);
    w.f64s(&weights.w1);
    w.f64s(&weights.b1);
    w.f64s(&weights.w2);
    w.f64(weights.b2);

    let opt = &state.opt;
    w.f64(opt.lr);
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps);
    w.u64(opt.t);
    w.u32(opt.m.len() as u32);
    w.f64s(&opt.m);
    w.f64s(&opt.v);

    w.buf.extend_from_slice(&state.rng.get_seed());
    w.u128(state.rng.get_word_pos());
    w.u64(state.step as u64);

    w.u32(state.pseudo.len() as u32);
    for entry in &state.pseudo {
        match entry {
            None => w.u8(0),
            Some(mask) => {
                w.u8(1);
                w.u32(mask.width() as u32);
                w.u32(mask.height() as u32);
                w.buf.extend_from_slice(&pack_mask_rows(mask));
            }
        }
    }

    w.u32(state.history.len() as u32);
    for point in &state.history {
        w.u64(point.step as u64);
        w.f64(point.mean_iou);
        w.f64(point.pixel_accuracy);
    }

    write_bytes_atomic(path, &w.buf)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let data = read_bytes(path)?;
    let mut r = ByteReader::new(&data, b"CKPT", path)?;
    let bad = |msg: String| Error::BadCheckpoint(format!("{}: {msg}", path.display()));

    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }

    let (channels, hidden) = (r.dim()?, r.dim()?);
    let mut weights = ModelWeights::zeros(channels, hidden);
    weights.w1 = r.f64s(hidden * channels)?;
    weights.b1 = r.f64s(hidden)?;
    weights.w2 = r.f64s(hidden)?;
    weights.b2 = r.f64()?;

    let mut opt = Adam::new(r.f64()?, 0);
    opt.beta1 = r.f64()?;
    opt.beta2 = r.f64()?;
    opt.eps = r.f64()?;
    opt.t = r.u64()?;
    let n_moments = r.u32()? as usize;
    if n_moments != weights.n_params() {
        return Err(bad(format!(
            "{n_moments} optimizer moments for {} parameters",
            weights.n_params()
        )));
    }
    opt.m = r.f64s(n_moments)?;
    opt.v = r.f64s(n_moments)?;

    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(r.u128()?);
    let step = r.u64()? as usize;

    let n_views = r.u32()? as usize;
    if n_views > data.len() {
        return Err(bad(format!("implausible view count {n_views}")));
    }
    let mut pseudo = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        match r.u8()? {
            0 => pseudo.push(None),
            1 => {
                let (w, h) = (r.dim()?, r.dim()?);
                let raster = r.take(w.div_ceil(8) * h)?;
                let mask = unpack_mask_rows(w, h, raster)
                    .ok_or_else(|| bad("pseudo-mask raster length mismatch".into()))?;
                pseudo.push(Some(mask));
            }
            tag => return Err(bad(format!("unknown pseudo-mask tag {tag}"))),
        }
    }

    let n_history = r.u32()? as usize;
    if n_history > data.len() {
        return Err(bad(format!("implausible history length {n_history}")));
    }
    let mut history = Vec::with_capacity(n_history);
    for _ in 0..n_history {
        history.push(EvalPoint {
            step: r.u64()? as usize,
            mean_iou: r.f64()?,
            pixel_accuracy: r.f64()?,
        });
    }
    r.finish()?;

    let finite = weights
        .w1
        .iter()
        .chain(&weights.b1)
        .chain(&weights.w2)
        .chain(std::iter::once(&weights.b2))
        .chain(&opt.m)
        .chain(&opt.v)
        .all(|v| v.is_finite());
    if !finite {
        return Err(bad("non-finite parameter or moment".into()));
    }

    Ok(TrainState {
        weights,
        opt,
        rng,
        step,
        pseudo,
        history,
    })
}
