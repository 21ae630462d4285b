//! Shape transfer across calibrated views: binary shape-from-silhouette
//! sweeps, probabilistic belief transfer by ray max-pooling and by its fast
//! rectified row-scan form, the subgradient backward pass of the rectified
//! transfer, and the constructive upper/lower probability bounds with a
//! voxel-carving oracle to validate them against.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::grid::{BinaryMask, PixelGrid, ProbMap};
use crate::rectification::{crop_transform, warp_probmap, Homography, RectifiedPairing};

/// How depths are sampled along rays in the brute-force transfer paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    /// Uniform in inverse depth — matches the column-uniform sampling of the
    /// rectified scan.
    UniformDisparity,
    LogDepth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSampling {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl DepthSampling {
    pub fn new(lambda_min: f64, lambda_max: f64, count: usize, spacing: Spacing) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_max > lambda_min && lambda_max.is_finite()) || count < 2 {
            return Err(Error::BadDepthRange);
        }
        Ok(DepthSampling {
            lambda_min,
            lambda_max,
            count,
            spacing,
        })
    }

    /// Sampling bracketing a working volume: a sphere of `radius` at
    /// `distance` from the camera, with margin.
    pub fn around(distance: f64, radius: f64, count: usize) -> Result<Self> {
        let lo = (distance - 1.3 * radius).max(1e-3 * distance);
        let hi = distance + 1.3 * radius;
        DepthSampling::new(lo, hi, count, Spacing::UniformDisparity)
    }

    /// Sampled depths in ascending order, endpoints included.
    pub fn lambdas(&self) -> Vec<f64> {
        let n = self.count;
        let mut out = Vec::with_capacity(n);
        match self.spacing {
            Spacing::UniformDisparity => {
                let s0 = 1.0 / self.lambda_min;
                let s1 = 1.0 / self.lambda_max;
                for k in 0..n {
                    let s = s0 + (s1 - s0) * k as f64 / (n - 1) as f64;
                    out.push(1.0 / s);
                }
            }
            Spacing::LogDepth => {
                let l0 = self.lambda_min.ln();
                let l1 = self.lambda_max.ln();
                for k in 0..n {
                    out.push((l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp());
                }
            }
        }
        out
    }
}

/// Project a target-ray point into a source heatmap. Returns None when the
/// point is behind the source camera.
#[inline]
fn heat_coords(
    source: &CameraView,
    heat: &Homography,
    point: &Vector3<f64>,
) -> Option<Vector2<f64>> {
    let (p, depth) = source.project(point);
    if depth <= 0.0 {
        return None;
    }
    heat.apply(&p)
}

/// Binary shape-from-silhouette transfer: a target pixel is foreground iff
/// some sampled depth along its ray reads foreground in every source mask
/// (nearest-pixel lookup; behind-camera or out-of-bounds samples are
/// background).
pub fn silhouette_transfer(
    sources: &[(&BinaryMask, &CameraView)],
    target: &CameraView,
    sampling: &DepthSampling,
) -> Result<BinaryMask> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    for (mask, cam) in sources {
        let out = cam.crop().out_size;
        if mask.width() != out || mask.height() != out {
            return Err(Error::SizeMismatch {
                want_w: out,
                want_h: out,
                got_w: mask.width(),
                got_h: mask.height(),
            });
        }
    }
    let out = target.crop().out_size;
    let back = crop_transform(target.crop()).inverse();
    let heats: Vec<Homography> = sources
        .iter()
        .map(|(_, cam)| crop_transform(cam.crop()))
        .collect();
    let lambdas = sampling.lambdas();
    let mut result = BinaryMask::zeros(out, out);
    for y in 0..out {
        for x in 0..out {
            let full = back
                .apply(&Vector2::new(x as f64, y as f64))
                .expect("crop transforms are affine");
            let ray = target.ray_from_pixel(&full);
            'depth: for &lambda in &lambdas {
                let point = ray.at(lambda);
                for ((mask, cam), heat) in sources.iter().zip(&heats) {
                    match heat_coords(cam, heat, &point) {
                        Some(q) if mask.sample_nearest(q.x, q.y) => {}
                        _ => continue 'depth,
                    }
                }
                result.set(x, y, true);
                break;
            }
        }
    }
    Ok(result)
}

/// Probabilistic belief transfer along one target pixel's ray: the max over
/// sampled depths of the product of bilinear source lookups (out-of-bounds
/// factors are zero). `pixel` is in target heatmap coordinates.
pub fn belief_transfer_ray(
    sources: &[(&ProbMap, &CameraView)],
    target: &CameraView,
    pixel: &Vector2<f64>,
    sampling: &DepthSampling,
) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    let back = crop_transform(target.crop()).inverse();
    let heats: Vec<Homography> = sources
        .iter()
        .map(|(_, cam)| crop_transform(cam.crop()))
        .collect();
    let full = back.apply(pixel).expect("crop transforms are affine");
    let ray = target.ray_from_pixel(&full);
    let mut best = 0.0f64;
    for lambda in sampling.lambdas() {
        let point = ray.at(lambda);
        let mut prod = 1.0;
        for ((map, cam), heat) in sources.iter().zip(&heats) {
            let f = match heat_coords(cam, heat, &point) {
                Some(q) => map.sample_bilinear(q.x, q.y),
                None => 0.0,
            };
            if f == 0.0 {
                prod = 0.0;
                break;
            }
            prod *= f;
        }
        best = best.max(prod);
    }
    Ok(best)
}

/// Everything the backward pass needs about one rectified transfer: per scan
/// pixel, the winning column, the sample position in every warped source, and
/// the factor values there. Kept in memory only.
#[derive(Debug, Clone)]
pub struct ArgmaxRecord {
    out: usize,
    n: usize,
    source_sizes: Vec<usize>,
    target_warp: Homography,
    source_warps: Vec<Homography>,
    valid: Vec<bool>,
    win_col: Vec<u32>,
    coords: Vec<(f64, f64)>,
    factors: Vec<f64>,
}

impl ArgmaxRecord {
    /// Winning scan column of rectified pixel (x, y), if it had a positive
    /// product.
    pub fn winning_column(&self, x: usize, y: usize) -> Option<usize> {
        let i = y * self.out + x;
        self.valid[i].then(|| self.win_col[i] as usize)
    }
}

/// Rectified row-scan belief transfer. Sources are warped into their
/// rectified frames once; each rectified target pixel then takes the max over
/// integer scan columns of the product of row-constant source lookups, and
/// the result is unwarped to the target heatmap. Ties pick the lowest column.
pub fn belief_transfer_rectified(
    sources: &[(&ProbMap, &CameraView)],
    target: &CameraView,
    pairing: &RectifiedPairing,
) -> Result<(ProbMap, ArgmaxRecord)> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    if sources.len() != pairing.n_sources() {
        return Err(Error::BadTriplet);
    }
    let out = target.crop().out_size;
    if pairing.out_size() != out {
        return Err(Error::SizeMismatch {
            want_w: out,
            want_h: out,
            got_w: pairing.out_size(),
            got_h: pairing.out_size(),
        });
    }
    for (i, (map, cam)) in sources.iter().enumerate() {
        let want = pairing.source_size(i);
        if map.width() != want || map.height() != want || cam.crop().out_size != want {
            return Err(Error::SizeMismatch {
                want_w: want,
                want_h: want,
                got_w: map.width(),
                got_h: map.height(),
            });
        }
    }

    let n = sources.len();
    let warped: Vec<ProbMap> = sources
        .iter()
        .enumerate()
        .map(|(i, (map, _))| {
            let s = pairing.source_size(i);
            warp_probmap(map, &pairing.source_warps[i], s, s)
        })
        .collect();

    let mut rect = PixelGrid::zeros(out, out);
    let mut record = ArgmaxRecord {
        out,
        n,
        source_sizes: (0..n).map(|i| pairing.source_size(i)).collect(),
        target_warp: pairing.target_warp.clone(),
        source_warps: pairing.source_warps.clone(),
        valid: vec![false; out * out],
        win_col: vec![0; out * out],
        coords: vec![(0.0, 0.0); out * out * n],
        factors: vec![0.0; out * out * n],
    };

    let scan_cols = pairing.pivot().map_or(1, |p| pairing.source_size(p));
    let mut sample = vec![(0.0f64, 0.0f64); n];
    let mut facts = vec![0.0f64; n];
    for y in 0..out {
        for x in 0..out {
            let mut best = 0.0f64;
            let pe = pairing.pivot().map(|p| pairing.entry(x, y, p));
            if let Some(pe) = pe {
                if !pe.valid() || pe.dcoef == 0.0 {
                    continue;
                }
            }
            for u in 0..scan_cols {
                let inv_lambda = match pe {
                    Some(pe) => {
                        let il = (pe.col_origin - u as f64) / pe.dcoef;
                        if il <= 0.0 {
                            continue; // behind the camera or at infinity
                        }
                        il
                    }
                    None => 0.0,
                };
                let mut prod = 1.0;
                for i in 0..n {
                    let e = pairing.entry(x, y, i);
                    if !e.valid() {
                        prod = 0.0;
                        break;
                    }
                    let col = if Some(i) == pairing.pivot() {
                        u as f64
                    } else {
                        e.col_origin - e.dcoef * inv_lambda
                    };
                    let f = warped[i].sample_bilinear(col, e.row);
                    if f == 0.0 {
                        prod = 0.0;
                        break;
                    }
                    sample[i] = (col, e.row);
                    facts[i] = f;
                    prod *= f;
                }
                if prod > best {
                    best = prod;
                    let idx = y * out + x;
                    record.valid[idx] = true;
                    record.win_col[idx] = u as u32;
                    let base = idx * n;
                    record.coords[base..base + n].copy_from_slice(&sample);
                    record.factors[base..base + n].copy_from_slice(&facts);
                }
            }
            rect.set(x, y, best);
        }
    }

    // Unwrap the rectified result back onto the target heatmap by sampling
    // at each heatmap pixel's rectified position.
    let mut data = Vec::with_capacity(out * out);
    for y in 0..out {
        for x in 0..out {
            let v = pairing
                .target_warp
                .apply(&Vector2::new(x as f64, y as f64))
                .map_or(0.0, |p| rect.sample_bilinear(p.x, p.y));
            data.push(v);
        }
    }
    Ok((ProbMap::from_raw_clamped(out, out, data), record))
}

/// Route gradients w.r.t. the unwrapped transfer output back onto the source
/// probability maps: only each pixel's winning column receives gradient, each
/// source getting upstream times the product of the other factors, scattered
/// through the bilinear lookups of the unwrap, scan, and warp stages in turn.
pub fn transfer_backward(record: &ArgmaxRecord, upstream: &PixelGrid) -> Result<Vec<PixelGrid>> {
    let out = record.out;
    if upstream.width() != out || upstream.height() != out {
        return Err(Error::SizeMismatch {
            want_w: out,
            want_h: out,
            got_w: upstream.width(),
            got_h: upstream.height(),
        });
    }

    // Unwrap stage adjoint: scatter heatmap gradients onto the rectified scan
    // grid through the same bilinear weights the forward sampling used.
    let mut g_rect = PixelGrid::zeros(out, out);
    for y in 0..out {
        for x in 0..out {
            let g = upstream.get(x, y);
            if g == 0.0 {
                continue;
            }
            if let Some(p) = record
                .target_warp
                .apply(&Vector2::new(x as f64, y as f64))
            {
                g_rect.splat_bilinear(p.x, p.y, g);
            }
        }
    }

    // Scan stage: each rectified pixel's gradient flows to its winning
    // samples in the warped source grids.
    let n = record.n;
    let mut g_warped: Vec<PixelGrid> = record
        .source_sizes
        .iter()
        .map(|&s| PixelGrid::zeros(s, s))
        .collect();
    for idx in 0..out * out {
        if !record.valid[idx] {
            continue;
        }
        let g = g_rect.as_slice()[idx];
        if g == 0.0 {
            continue;
        }
        let base = idx * n;
        for i in 0..n {
            let mut others = 1.0;
            for j in 0..n {
                if j != i {
                    others *= record.factors[base + j];
                }
            }
            let (cx, cy) = record.coords[base + i];
            g_warped[i].splat_bilinear(cx, cy, g * others);
        }
    }

    // Warp stage adjoint: push warped-grid gradients back through each
    // source's rectifying warp onto the original heatmap.
    let mut grads = Vec::with_capacity(n);
    for (i, gw) in g_warped.iter().enumerate() {
        let s = record.source_sizes[i];
        let inv = record.source_warps[i].inverse();
        let mut gm = PixelGrid::zeros(s, s);
        for y in 0..s {
            for x in 0..s {
                let g = gw.get(x, y);
                if g == 0.0 {
                    continue;
                }
                if let Some(p) = inv.apply(&Vector2::new(x as f64, y as f64)) {
                    gm.splat_bilinear(p.x, p.y, g);
                }
            }
        }
        grads.push(gm);
    }
    Ok(grads)
}

/// Upper probability bound for an unlabeled view: exactly the rectified
/// belief transfer with the labeled views as sources.
pub fn upper_bound(
    labeled: &[(&ProbMap, &CameraView)],
    unlabeled_cam: &CameraView,
    pairing: &RectifiedPairing,
) -> Result<ProbMap> {
    belief_transfer_rectified(labeled, unlabeled_cam, pairing).map(|(p, _)| p)
}

/// Axis-aligned cubic voxel lattice: n^3 cells spanning [min, max].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    min: Vector3<f64>,
    max: Vector3<f64>,
    n: usize,
}

impl VoxelGrid {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>, n: usize) -> Result<Self> {
        if n < 2 || !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::BadVoxelGrid);
        }
        Ok(VoxelGrid { min, max, n })
    }

    /// Cube of half-extent `half` around `center`.
    pub fn around(center: Vector3<f64>, half: f64, n: usize) -> Result<Self> {
        let h = Vector3::new(half, half, half);
        VoxelGrid::new(center - h, center + h, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Center of voxel (i, j, k).
    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let f = |lo: f64, hi: f64, idx: usize| {
            lo + (hi - lo) * (idx as f64 + 0.5) / self.n as f64
        };
        Vector3::new(
            f(self.min.x, self.max.x, i),
            f(self.min.y, self.max.y, j),
            f(self.min.z, self.max.z, k),
        )
    }

    /// Edge length of one voxel along x (the grid is cubic in index space,
    /// but extents may differ per axis).
    pub fn voxel_size(&self) -> Vector3<f64> {
        (self.max - self.min) / self.n as f64
    }
}

/// Occupancy over a [`VoxelGrid`], index order x-fastest.
#[derive(Debug, Clone)]
pub struct VoxelOccupancy {
    grid: VoxelGrid,
    occupied: Vec<u8>,
}

impl VoxelOccupancy {
    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    #[inline]
    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupied[(k * self.grid.n + j) * self.grid.n + i] != 0
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&v| v != 0).count()
    }
}

/// Nearest-pixel foreground test of a world point in one view's mask.
#[inline]
fn mask_sees(mask: &BinaryMask, cam: &CameraView, heat: &Homography, p: &Vector3<f64>) -> bool {
    match heat_coords(cam, heat, p) {
        Some(q) => mask.sample_nearest(q.x, q.y),
        None => false,
    }
}

/// Classic space carving: a voxel stays occupied iff its center projects to
/// foreground in every mask; the occupancy is then reprojected into each
/// requested view (a pixel is set iff some occupied voxel rounds to it).
pub fn voxel_hull_oracle(
    masks: &[(&BinaryMask, &CameraView)],
    grid: &VoxelGrid,
    reproject_to: &[&CameraView],
) -> (VoxelOccupancy, Vec<BinaryMask>) {
    let heats: Vec<Homography> = masks
        .iter()
        .map(|(_, cam)| crop_transform(cam.crop()))
        .collect();
    let n = grid.n;
    let mut occupied = vec![0u8; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let c = grid.center(i, j, k);
                let inside = masks
                    .iter()
                    .zip(&heats)
                    .all(|((mask, cam), heat)| mask_sees(mask, cam, heat, &c));
                occupied[(k * n + j) * n + i] = u8::from(inside);
            }
        }
    }
    let occ = VoxelOccupancy {
        grid: grid.clone(),
        occupied,
    };

    let mut reprojections = Vec::with_capacity(reproject_to.len());
    for cam in reproject_to {
        let out = cam.crop().out_size;
        let heat = crop_transform(cam.crop());
        let mut mask = BinaryMask::zeros(out, out);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if !occ.is_occupied(i, j, k) {
                        continue;
                    }
                    if let Some(q) = heat_coords(cam, &heat, &grid.center(i, j, k)) {
                        let (px, py) = (q.x.round(), q.y.round());
                        if px >= 0.0 && py >= 0.0 && (px as usize) < out && (py as usize) < out {
                            mask.set(px as usize, py as usize, true);
                        }
                    }
                }
            }
        }
        reprojections.push(mask);
    }
    (occ, reprojections)
}

/// Forced-foreground radius of the lower bound, in heatmap pixels.
const FORCE_RADIUS_PX: f64 = 1.0;

/// Anisotropy-safe heatmap scale of a view: full-image pixels map to heatmap
/// pixels by at most this factor.
fn heat_scale(cam: &CameraView) -> f64 {
    let c = cam.crop();
    let s = c.out_size as f64;
    (s / c.width).max(s / c.height)
}

/// Projection of a half-voxel-diagonal displacement at `point`, in the view's
/// heatmap pixels: the radius within which the projection of anything inside
/// the voxel must fall.
fn voxel_slack_px(cam: &CameraView, scale: f64, half_diag: f64, point: &Vector3<f64>) -> f64 {
    let (_, depth) = cam.project(point);
    let fx = cam.k()[(0, 0)].max(cam.k()[(1, 1)]);
    half_diag * fx / depth.max(1e-9) * scale
}

/// Conservative lower bound on an unlabeled view's foreground: pixel x is
/// marked iff some labeled view j has a foreground pixel whose ray's
/// intersection with the visual hull of the *other* labeled views is
/// non-empty and projects entirely within [`FORCE_RADIUS_PX`] of x — the
/// labeled evidence cannot be explained without foreground at x. The hull is
/// over-approximated (dilated masks, voxels within half a diagonal of the
/// ray) and every projection is padded by the voxel's own projected extent,
/// so a mark here implies the continuous criterion. Marks are further
/// restricted to the full hull's reprojection.
pub fn lower_bound(
    labeled: &[(&BinaryMask, &CameraView)],
    unlabeled_cam: &CameraView,
    grid: &VoxelGrid,
) -> Result<BinaryMask> {
    let n_views = labeled.len();
    if n_views < 2 {
        return Err(Error::TooFewCameras(n_views));
    }
    if n_views > 31 {
        return Err(Error::BadConfig("lower bound supports at most 31 views".into()));
    }
    let heats: Vec<Homography> = labeled
        .iter()
        .map(|(_, cam)| crop_transform(cam.crop()))
        .collect();
    let target_heat = crop_transform(unlabeled_cam.crop());
    let target_scale = heat_scale(unlabeled_cam);
    let n = grid.n();
    let out = unlabeled_cam.crop().out_size;
    let half_diag = 0.5 * grid.voxel_size().norm();

    // One pass: which views might see any part of each voxel as foreground.
    // Dilating the masks by one pixel covers both the voxel-center-to-corner
    // and the rasterization slack, keeping the hull a superset of the truth.
    let dilated: Vec<BinaryMask> = labeled.iter().map(|(m, _)| m.dilate(1)).collect();
    let full: u32 = (1 << n_views) - 1;
    let mut bits = vec![0u32; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let c = grid.center(i, j, k);
                let mut b = 0u32;
                for (v, ((_, cam), heat)) in labeled.iter().zip(&heats).enumerate() {
                    if mask_sees(&dilated[v], cam, heat, &c) {
                        b |= 1 << v;
                    }
                }
                bits[(k * n + j) * n + i] = b;
            }
        }
    }

    let mut result = BinaryMask::zeros(out, out);
    for (j_view, ((mask_j, cam_j), heat_j)) in labeled.iter().zip(&heats).enumerate() {
        let bit_j = 1u32 << j_view;
        let scale_j = heat_scale(cam_j);
        // Bins: per foreground pixel of view j, every hull-minus-j voxel its
        // center ray might pass through (projection within the voxel's own
        // slack radius) — an over-approximation of ray ∩ hull.
        let mut bins: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        let w_j = mask_j.width() as i64;
        let h_j = mask_j.height() as i64;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let idx = (k * n + j) * n + i;
                    if bits[idx] | bit_j != full {
                        continue;
                    }
                    let c = grid.center(i, j, k);
                    let Some(q) = heat_coords(cam_j, heat_j, &c) else {
                        continue;
                    };
                    let r = voxel_slack_px(cam_j, scale_j, half_diag, &c);
                    for py in (q.y - r).floor() as i64..=(q.y + r).ceil() as i64 {
                        for px in (q.x - r).floor() as i64..=(q.x + r).ceil() as i64 {
                            if px < 0 || py < 0 || px >= w_j || py >= h_j {
                                continue;
                            }
                            let d = Vector2::new(px as f64 - q.x, py as f64 - q.y);
                            if d.norm() <= r && mask_j.get(px as usize, py as usize) {
                                bins.entry((px as u32, py as u32)).or_default().push(idx);
                            }
                        }
                    }
                }
            }
        }
        for voxels in bins.values() {
            // Project the bin into the unlabeled view, padded by each voxel's
            // projected extent; a pixel is forced only if the whole cluster
            // fits within the force radius around it.
            let mut pts = Vec::with_capacity(voxels.len());
            let mut sum = Vector2::zeros();
            let mut ok = true;
            for &idx in voxels {
                let i = idx % n;
                let j = (idx / n) % n;
                let k = idx / (n * n);
                let c = grid.center(i, j, k);
                match heat_coords(unlabeled_cam, &target_heat, &c) {
                    Some(q) => {
                        sum += q;
                        pts.push((q, voxel_slack_px(unlabeled_cam, target_scale, half_diag, &c)));
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || pts.is_empty() {
                continue;
            }
            let centroid = sum / pts.len() as f64;
            let (px, py) = (centroid.x.round(), centroid.y.round());
            if px < 0.0 || py < 0.0 || px as usize >= out || py as usize >= out {
                continue;
            }
            let center = Vector2::new(px, py);
            if pts
                .iter()
                .all(|(q, r)| (q - center).norm() + r <= FORCE_RADIUS_PX)
            {
                result.set(px as usize, py as usize, true);
            }
        }
    }

    // A pixel can only be forced where the hull itself projects.
    let mut hull_proj = BinaryMask::zeros(out, out);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if bits[(k * n + j) * n + i] != full {
                    continue;
                }
                if let Some(q) =
                    heat_coords(unlabeled_cam, &target_heat, &grid.center(i, j, k))
                {
                    let (px, py) = (q.x.round(), q.y.round());
                    if px >= 0.0 && py >= 0.0 && (px as usize) < out && (py as usize) < out {
                        hull_proj.set(px as usize, py as usize, true);
                    }
                }
            }
        }
    }
    let mut clipped = BinaryMask::zeros(out, out);
    for y in 0..out {
        for x in 0..out {
            clipped.set(x, y, result.get(x, y) && hull_proj.get(x, y));
        }
    }
    Ok(clipped)
}

/// Upper and lower probability envelopes around one view's true foreground.
#[derive(Debug, Clone)]
pub struct BoundPair {
    upper: ProbMap,
    lower: ProbMap,
}

impl BoundPair {
    pub fn new(upper: ProbMap, lower: ProbMap) -> Result<Self> {
        upper.same_size(&lower)?;
        for y in 0..upper.height() {
            for x in 0..upper.width() {
                let (u, l) = (upper.get(x, y), lower.get(x, y));
                if l > u + 1e-9 {
                    return Err(Error::UnorderedBounds { x, y, lower: l, upper: u });
                }
            }
        }
        Ok(BoundPair { upper, lower })
    }

    pub fn upper(&self) -> &ProbMap {
        &self.upper
    }

    pub fn lower(&self) -> &ProbMap {
        &self.lower
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rectification::reparam_coeffs;
    use crate::synth::{make_rig, render_silhouette, Body, Rig, Scene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_scene() -> Scene {
        Scene::new(
            vec![Body::Sphere {
                center: Vector3::zeros(),
                radius: 1.0,
            }],
            3,
        )
        .unwrap()
    }

    fn two_body_rig(views: usize, out: usize) -> (Scene, Vec<CameraView>) {
        let scene = Scene::default_two_body(5);
        let cams = make_rig(&Rig::ring(views, 10.0, out), &scene).unwrap();
        (scene, cams)
    }

    fn default_sampling(count: usize) -> DepthSampling {
        DepthSampling::around(10.0, 2.0, count).unwrap()
    }

    /// Box-blurred silhouette: a probability map with bounded slope so
    /// resampling error stays small.
    fn blurred_silhouette(scene: &Scene, cam: &CameraView, passes: usize) -> ProbMap {
        ProbMap::from(&render_silhouette(scene, cam)).box_blur(passes)
    }

    #[test]
    fn sampling_endpoints_and_order() {
        let s = DepthSampling::new(2.0, 8.0, 5, Spacing::UniformDisparity).unwrap();
        let l = s.lambdas();
        assert_eq!(l.len(), 5);
        assert!((l[0] - 2.0).abs() < 1e-12 && (l[4] - 8.0).abs() < 1e-12);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        let lg = DepthSampling::new(2.0, 8.0, 3, Spacing::LogDepth).unwrap();
        let ll = lg.lambdas();
        assert!((ll[1] - 4.0).abs() < 1e-12, "log midpoint {}", ll[1]);
        assert!(DepthSampling::new(0.0, 1.0, 4, Spacing::LogDepth).is_err());
        assert!(DepthSampling::new(2.0, 1.0, 4, Spacing::LogDepth).is_err());
        assert!(DepthSampling::new(1.0, 2.0, 1, Spacing::LogDepth).is_err());
    }

    #[test]
    fn all_ones_sources_saturate() {
        let (_, cams) = two_body_rig(4, 32);
        let ones = BinaryMask::from_vec(32, 32, vec![1; 32 * 32]).unwrap();
        let srcs = [(&ones, &cams[1]), (&ones, &cams[2])];
        let out = silhouette_transfer(&srcs, &cams[0], &default_sampling(128)).unwrap();
        // Central rays stay in-bounds in the other cameras through the whole
        // working volume; corner rays may exit their crops.
        for y in 8..24 {
            for x in 8..24 {
                assert!(out.get(x, y), "central pixel ({x},{y}) not saturated");
            }
        }
    }

    #[test]
    fn transfer_includes_truth_on_the_ring() {
        let (scene, cams) = two_body_rig(8, 48);
        // Conservative source rasterization: inclusion of the true shape
        // needs source masks that cover the continuous silhouette, and
        // pixel-center sampling misses slivers at the rim. One dilation
        // covers them (boundary curvature is far below pixel scale).
        let masks: Vec<BinaryMask> = cams
            .iter()
            .map(|c| render_silhouette(&scene, c).dilate(1))
            .collect();
        let truths: Vec<BinaryMask> =
            cams.iter().map(|c| render_silhouette(&scene, c)).collect();
        let sampling = default_sampling(512);
        for t in 0..8 {
            let sources: Vec<(&BinaryMask, &CameraView)> = (0..8)
                .filter(|&i| i != t)
                .map(|i| (&masks[i], &cams[i]))
                .collect();
            let transferred = silhouette_transfer(&sources, &cams[t], &sampling).unwrap();
            let truth = &truths[t];
            let mut missed = 0;
            for y in 0..48 {
                for x in 0..48 {
                    if truth.get(x, y) && !transferred.get(x, y) {
                        missed += 1;
                    }
                }
            }
            assert_eq!(missed, 0, "view {t}: {missed} truth pixels missed");
        }
    }

    #[test]
    fn self_source_reproduces_the_mask() {
        let (scene, cams) = two_body_rig(4, 48);
        let mask = render_silhouette(&scene, &cams[0]);
        let srcs = [(&mask, &cams[0])];
        let out = silhouette_transfer(&srcs, &cams[0], &default_sampling(64)).unwrap();
        // Every ray point reprojects onto its own pixel, so the transfer
        // degenerates to the mask itself.
        assert_eq!(out.as_slice(), mask.as_slice());
    }

    #[test]
    fn ray_belief_trivial_values() {
        let (_, cams) = two_body_rig(3, 32);
        let ones = ProbMap::constant(32, 32, 1.0).unwrap();
        let zeros = ProbMap::zeros(32, 32);
        let sampling = default_sampling(64);
        let px = Vector2::new(16.0, 16.0);
        let v1 = belief_transfer_ray(
            &[(&ones, &cams[1]), (&ones, &cams[2])],
            &cams[0],
            &px,
            &sampling,
        )
        .unwrap();
        assert_eq!(v1, 1.0);
        let v0 = belief_transfer_ray(
            &[(&ones, &cams[1]), (&zeros, &cams[2])],
            &cams[0],
            &px,
            &sampling,
        )
        .unwrap();
        assert_eq!(v0, 0.0);
        assert!(belief_transfer_ray(&[], &cams[0], &px, &sampling).is_err());
    }

    #[test]
    fn binary_belief_matches_silhouette_away_from_boundaries() {
        let (scene, cams) = two_body_rig(5, 40);
        let masks: Vec<BinaryMask> = cams.iter().map(|c| render_silhouette(&scene, c)).collect();
        let sampling = default_sampling(256);
        let probs: Vec<ProbMap> = masks.iter().map(|m| m.to_probmap()).collect();
        let sources_m: Vec<(&BinaryMask, &CameraView)> =
            (1..5).map(|i| (&masks[i], &cams[i])).collect();
        let sources_p: Vec<(&ProbMap, &CameraView)> =
            (1..5).map(|i| (&probs[i], &cams[i])).collect();
        let hard = silhouette_transfer(&sources_m, &cams[0], &sampling).unwrap();
        // Bilinear vs nearest lookups can only disagree within a pixel of a
        // mask boundary; exclude a one-pixel band around the binary result.
        let stable = |m: &BinaryMask, x: usize, y: usize| {
            m.erode(1).get(x, y) || !m.dilate(1).get(x, y)
        };
        let mut checked = 0;
        for y in 0..40 {
            for x in 0..40 {
                if !stable(&hard, x, y) {
                    continue;
                }
                let soft = belief_transfer_ray(
                    &sources_p,
                    &cams[0],
                    &Vector2::new(x as f64, y as f64),
                    &sampling,
                )
                .unwrap();
                assert_eq!(
                    soft > 0.5,
                    hard.get(x, y),
                    "disagreement at ({x},{y}): soft {soft}"
                );
                checked += 1;
            }
        }
        assert!(checked > 1000, "exclusion band ate the test: {checked}");
    }

    #[test]
    fn rectified_matches_dense_ray_sweep() {
        let (scene, cams) = two_body_rig(3, 48);
        // Smooth maps: the L_inf tolerance budgets bilinear resampling error,
        // which is unbounded across a hard 0/1 edge.
        let masks: Vec<ProbMap> = cams
            .iter()
            .map(|c| blurred_silhouette(&scene, c, 3))
            .collect();
        let sources: Vec<(&ProbMap, &CameraView)> =
            (1..3).map(|i| (&masks[i], &cams[i])).collect();
        let pairing = reparam_coeffs(&cams[0], &[&cams[1], &cams[2]]).unwrap();
        let (fast, _) = belief_transfer_rectified(&sources, &cams[0], &pairing).unwrap();
        let sampling = DepthSampling::around(10.0, 2.0, 2048).unwrap();
        let mut linf = 0.0f64;
        for y in 0..48 {
            for x in 0..48 {
                let slow = belief_transfer_ray(
                    &sources,
                    &cams[0],
                    &Vector2::new(x as f64, y as f64),
                    &sampling,
                )
                .unwrap();
                linf = linf.max((slow - fast.get(x, y)).abs());
            }
        }
        assert!(linf <= 0.05, "L_inf between paths = {linf}");
    }

    #[test]
    fn rectified_self_consistency() {
        // The target itself as sole source: the transfer must reproduce the
        // map up to resampling.
        let (scene, cams) = two_body_rig(3, 48);
        let map = render_silhouette(&scene, &cams[0]).to_probmap();
        let pairing = reparam_coeffs(&cams[0], &[&cams[0]]).unwrap();
        assert!(pairing.pivot().is_none());
        let (out, _) =
            belief_transfer_rectified(&[(&map, &cams[0])], &cams[0], &pairing).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                assert!(
                    out.get(x, y) >= map.get(x, y) - 0.02,
                    "({x},{y}): {} vs {}",
                    out.get(x, y),
                    map.get(x, y)
                );
            }
        }
    }

    #[test]
    fn adding_a_source_never_increases_belief() {
        // 6-ring, skipping the antipodal camera (a ring neighbor more than
        // ~135 degrees away has its epipole in-image: degenerate).
        let (scene, cams) = two_body_rig(6, 40);
        let maps: Vec<ProbMap> = cams
            .iter()
            .map(|c| render_silhouette(&scene, c).to_probmap())
            .collect();
        let picks = [1usize, 2, 4];
        let three: Vec<(&ProbMap, &CameraView)> =
            picks.iter().map(|&i| (&maps[i], &cams[i])).collect();
        let pairing3 = reparam_coeffs(&cams[0], &[&cams[1], &cams[2], &cams[4]]).unwrap();
        let (p3, _) = belief_transfer_rectified(&three, &cams[0], &pairing3).unwrap();
        // Fourth source: the target's own map (supported self-pair).
        let mut four = three.clone();
        four.push((&maps[0], &cams[0]));
        let pairing4 =
            reparam_coeffs(&cams[0], &[&cams[1], &cams[2], &cams[4], &cams[0]]).unwrap();
        let (p4, _) = belief_transfer_rectified(&four, &cams[0], &pairing4).unwrap();
        for (a, b) in p4.as_slice().iter().zip(p3.as_slice()) {
            assert!(*a <= b + 1e-9, "belief grew: {a} > {b}");
        }
    }

    /// Central finite differences over source-map values against the routed
    /// subgradient, skipping probes whose argmax flips.
    #[test]
    fn backward_matches_finite_differences() {
        let (scene, cams) = two_body_rig(3, 24);
        // Smooth maps: blurred silhouettes, strictly inside (0, 1).
        let maps: Vec<ProbMap> = cams
            .iter()
            .map(|c| {
                let m = render_silhouette(&scene, c);
                let mut soft = ProbMap::zeros(24, 24);
                for y in 0..24 {
                    for x in 0..24 {
                        let mut acc = 0.0;
                        let mut cnt = 0.0;
                        for dy in -2i32..=2 {
                            for dx in -2i32..=2 {
                                let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                                if nx >= 0 && ny >= 0 && nx < 24 && ny < 24 {
                                    acc += f64::from(m.get(nx as usize, ny as usize));
                                    cnt += 1.0;
                                }
                            }
                        }
                        soft.set(x, y, (0.05 + 0.9 * acc / cnt).clamp(0.0, 1.0)).unwrap();
                    }
                }
                soft
            })
            .collect();
        let pairing = reparam_coeffs(&cams[0], &[&cams[1], &cams[2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut weights = PixelGrid::zeros(24, 24);
        for y in 0..24 {
            for x in 0..24 {
                weights.set(x, y, rng.gen_range(-1.0..1.0));
            }
        }
        let run = |maps: &[ProbMap]| {
            let sources: Vec<(&ProbMap, &CameraView)> =
                (1..3).map(|i| (&maps[i], &cams[i])).collect();
            belief_transfer_rectified(&sources, &cams[0], &pairing).unwrap()
        };
        let (_, record) = run(&maps);
        let loss = |p: &ProbMap| -> f64 {
            p.as_slice()
                .iter()
                .zip(weights.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let grads = transfer_backward(&record, &weights).unwrap();

        let eps = 1e-4;
        let mut probes = 0;
        let mut ties = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        while probes < 60 {
            let si = rng.gen_range(1..3usize);
            let x = rng.gen_range(0..24);
            let y = rng.gen_range(0..24);
            let v = maps[si].get(x, y);
            if v < 2.0 * eps || v > 1.0 - 2.0 * eps {
                continue;
            }
            let mut hi_maps = maps.clone();
            hi_maps[si].set(x, y, v + eps).unwrap();
            let mut lo_maps = maps.clone();
            lo_maps[si].set(x, y, v - eps).unwrap();
            let (hi_out, hi_rec) = run(&hi_maps);
            let (lo_out, lo_rec) = run(&lo_maps);
            // Skip probes that flipped any argmax: the subgradient is only
            // valid on the smooth selection.
            if hi_rec.win_col != record.win_col || lo_rec.win_col != record.win_col {
                ties += 1;
                continue;
            }
            let fd = (loss(&hi_out) - loss(&lo_out)) / (2.0 * eps);
            let g = grads[si - 1].get(x, y);
            assert!(
                (fd - g).abs() <= 1e-4 * g.abs().max(1.0),
                "probe ({si},{x},{y}): fd {fd} vs analytic {g}"
            );
            probes += 1;
        }
        assert!(ties < 60, "nearly all probes hit argmax ties");
    }

    #[test]
    fn backward_zero_upstream_and_untouched_pixels() {
        let (scene, cams) = two_body_rig(3, 24);
        let maps: Vec<ProbMap> = cams
            .iter()
            .map(|c| render_silhouette(&scene, c).to_probmap())
            .collect();
        let pairing = reparam_coeffs(&cams[0], &[&cams[1], &cams[2]]).unwrap();
        let sources: Vec<(&ProbMap, &CameraView)> =
            (1..3).map(|i| (&maps[i], &cams[i])).collect();
        let (_, record) = belief_transfer_rectified(&sources, &cams[0], &pairing).unwrap();
        let zeros = transfer_backward(&record, &PixelGrid::zeros(24, 24)).unwrap();
        for g in &zeros {
            assert!(g.as_slice().iter().all(|&v| v == 0.0));
        }
        // Mismatched upstream dims are a stale record.
        assert!(transfer_backward(&record, &PixelGrid::zeros(25, 24)).is_err());
    }

    #[test]
    fn voxel_hull_contains_analytic_sphere_interior() {
        let scene = sphere_scene();
        let cams = make_rig(&Rig::ring(6, 10.0, 48), &scene).unwrap();
        let masks: Vec<BinaryMask> = cams.iter().map(|c| render_silhouette(&scene, c)).collect();
        let sources: Vec<(&BinaryMask, &CameraView)> =
            masks.iter().zip(&cams).map(|(m, c)| (m, c)).collect();
        let grid = VoxelGrid::around(Vector3::zeros(), 1.3, 64).unwrap();
        let (occ, _) = voxel_hull_oracle(&sources, &grid, &[]);
        // Interior voxels with margin for the nearest-pixel rounding of the
        // mask lookups (half a pixel is ~0.017 world units here).
        let margin = 0.05;
        let mut misses = 0;
        for k in 0..64 {
            for j in 0..64 {
                for i in 0..64 {
                    let c = grid.center(i, j, k);
                    if c.norm() <= 1.0 - margin && !occ.is_occupied(i, j, k) {
                        misses += 1;
                    }
                }
            }
        }
        assert_eq!(misses, 0);
        // Empty mask in any view kills the whole hull.
        let empty = BinaryMask::zeros(48, 48);
        let mut crippled = sources.clone();
        crippled[2] = (&empty, crippled[2].1);
        let (occ2, _) = voxel_hull_oracle(&crippled, &grid, &[]);
        assert_eq!(occ2.count(), 0);
    }

    #[test]
    fn lower_bound_is_inside_truth_and_upper() {
        let (scene, cams) = two_body_rig(8, 48);
        let masks: Vec<BinaryMask> = cams.iter().map(|c| render_silhouette(&scene, c)).collect();
        let labeled: Vec<(&BinaryMask, &CameraView)> =
            (1..8).map(|i| (&masks[i], &cams[i])).collect();
        let grid = VoxelGrid::around(Vector3::new(0.4, 0.175, -0.025), 2.2, 96).unwrap();
        let lower = lower_bound(&labeled, &cams[0], &grid).unwrap();
        assert!(lower.count_ones() > 0, "lower bound came out empty");
        let truth = &masks[0];
        for y in 0..48 {
            for x in 0..48 {
                assert!(
                    !lower.get(x, y) || truth.get(x, y),
                    "lower bound leaked outside truth at ({x},{y})"
                );
            }
        }
        let upper = silhouette_transfer(&labeled, &cams[0], &default_sampling(512)).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                assert!(!lower.get(x, y) || upper.get(x, y));
            }
        }
        assert!(lower_bound(&labeled[..1], &cams[0], &grid).is_err());
    }

    #[test]
    fn nearly_coincident_views_force_nothing() {
        let scene = sphere_scene();
        let base = make_rig(&Rig::ring(16, 10.0, 40), &scene).unwrap();
        // Two adjacent ring cameras are close; use the two closest available.
        let masks: Vec<BinaryMask> =
            base.iter().map(|c| render_silhouette(&scene, c)).collect();
        let labeled = [(&masks[1], &base[1]), (&masks[2], &base[2])];
        let grid = VoxelGrid::around(Vector3::zeros(), 1.3, 64).unwrap();
        let lower = lower_bound(&labeled, &base[9], &grid).unwrap();
        let area = render_silhouette(&scene, &base[9]).count_ones();
        assert!(
            lower.count_ones() * 20 <= area,
            "near-degenerate baseline forced {} of {} pixels",
            lower.count_ones(),
            area
        );
    }

    #[test]
    fn upper_bound_dominates_interior_truth() {
        let (scene, cams) = two_body_rig(6, 48);
        let maps: Vec<ProbMap> = cams
            .iter()
            .map(|c| render_silhouette(&scene, c).to_probmap())
            .collect();
        // All ring neighbors except the antipodal one (degenerate pair).
        let picks = [1usize, 2, 4, 5];
        let refs: Vec<&CameraView> = picks.iter().map(|&i| &cams[i]).collect();
        let pairing = reparam_coeffs(&cams[0], &refs).unwrap();
        let sources: Vec<(&ProbMap, &CameraView)> =
            picks.iter().map(|&i| (&maps[i], &cams[i])).collect();
        let upper = upper_bound(&sources, &cams[0], &pairing).unwrap();
        let truth = render_silhouette(&scene, &cams[0]);
        // Resampling softens a 1-2 px boundary ring; the interior must be
        // fully dominated.
        let interior = truth.erode(2);
        for y in 0..48 {
            for x in 0..48 {
                if interior.get(x, y) {
                    assert!(
                        upper.get(x, y) >= 1.0 - 0.02,
                        "upper bound fell to {} inside truth at ({x},{y})",
                        upper.get(x, y)
                    );
                }
            }
        }
    }

    #[test]
    fn single_constant_source_saturates_upper_bound() {
        let (_, cams) = two_body_rig(3, 32);
        let ones = ProbMap::constant(32, 32, 1.0).unwrap();
        let pairing = reparam_coeffs(&cams[0], &[&cams[1]]).unwrap();
        let upper = upper_bound(&[(&ones, &cams[1])], &cams[0], &pairing).unwrap();
        // Central region: rays stay in the source's bounds.
        for y in 8..24 {
            for x in 8..24 {
                assert!(upper.get(x, y) >= 0.98, "({x},{y}) = {}", upper.get(x, y));
            }
        }
    }

    #[test]
    fn bound_pair_rejects_inversion() {
        let upper = ProbMap::constant(4, 4, 0.4).unwrap();
        let lower = ProbMap::constant(4, 4, 0.6).unwrap();
        assert!(matches!(
            BoundPair::new(upper, lower),
            Err(Error::UnorderedBounds { .. })
        ));
    }
}
