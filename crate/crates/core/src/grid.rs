//! Raster containers shared by the whole pipeline.
//!
//! All grids use the same pixel convention: integer coordinates address pixel
//! centers, the origin is the center of the top-left pixel, x grows right and
//! y grows down. Sampling outside the grid returns 0 rather than clamping, so
//! values fade out across the border instead of smearing edge pixels.

use crate::error::{Error, Result};

/// Unconstrained f64 raster. Used for gradients and other intermediates that
/// are not probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PixelGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        PixelGrid {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(PixelGrid {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Bilinear sample with zero padding outside the grid.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        sample_bilinear(&self.data, self.width, self.height, u, v)
    }

    /// Scatter `v` onto the four pixels around (u, v) with bilinear weights.
    /// Out-of-bounds corners are dropped, mirroring the zero-padded sampler.
    pub fn splat_bilinear(&mut self, u: f64, v: f64, value: f64) {
        if !(u > -1.0 && u < self.width as f64 && v > -1.0 && v < self.height as f64) {
            return;
        }
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let x0 = x0 as isize;
        let y0 = y0 as isize;
        for (dx, dy, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let x = x0 + dx;
            let y = y0 + dy;
            if w != 0.0
                && x >= 0
                && y >= 0
                && (x as usize) < self.width
                && (y as usize) < self.height
            {
                self.data[y as usize * self.width + x as usize] += value * w;
            }
        }
    }
}

#[inline]
fn sample_bilinear(data: &[f64], width: usize, height: usize, u: f64, v: f64) -> f64 {
    if !(u > -1.0 && u < width as f64 && v > -1.0 && v < height as f64) {
        return 0.0;
    }
    let x0f = u.floor();
    let y0f = v.floor();
    let fx = u - x0f;
    let fy = v - y0f;
    let x0 = x0f as isize;
    let y0 = y0f as isize;
    let fetch = |x: isize, y: isize| -> f64 {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            data[y as usize * width + x as usize]
        } else {
            0.0
        }
    };
    fetch(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + fetch(x0 + 1, y0) * fx * (1.0 - fy)
        + fetch(x0, y0 + 1) * (1.0 - fx) * fy
        + fetch(x0 + 1, y0 + 1) * fx * fy
}

/// Per-pixel probability map with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// All-zero map.
    pub fn zeros(width: usize, height: usize) -> Self {
        ProbMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::BadProbability(value));
        }
        Ok(ProbMap {
            width,
            height,
            data: vec![value; width * height],
        })
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::BadProbability(v));
            }
        }
        Ok(ProbMap {
            width,
            height,
            data,
        })
    }

    /// Internal fast path for values that are in range by construction, up to
    /// float rounding; anything a hair outside is clamped rather than refused.
    pub(crate) fn from_raw_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        ProbMap {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) -> Result<()> {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::BadProbability(v));
        }
        self.data[y * self.width + x] = v;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Bilinear sample with zero padding; the result is clamped back into
    /// [0, 1] to absorb the odd ulp of rounding in the weight sum.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        sample_bilinear(&self.data, self.width, self.height, u, v).clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_size(&self, other: &ProbMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::SizeMismatch {
                want_w: self.width,
                want_h: self.height,
                got_w: other.width,
                got_h: other.height,
            });
        }
        Ok(())
    }

    /// 5x5 box blur repeated `passes` times, the window clipped at borders.
    /// Averaging keeps values in [0, 1] and bounds the map's slope, which is
    /// what keeps resampling error small when a hard-edged map gets warped or
    /// scanned at sub-pixel positions.
    pub fn box_blur(&self, passes: usize) -> ProbMap {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut cur = self.data.clone();
        for _ in 0..passes {
            let mut next = vec![0.0; cur.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for dy in -2..=2 {
                        for dx in -2..=2 {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx >= 0 && ny >= 0 && nx < w && ny < h {
                                acc += cur[(ny * w + nx) as usize];
                                cnt += 1.0;
                            }
                        }
                    }
                    next[(y * w + x) as usize] = acc / cnt;
                }
            }
            cur = next;
        }
        ProbMap {
            width: self.width,
            height: self.height,
            data: cur,
        }
    }
}

/// A binary mask lifted to probabilities 0.0/1.0, the usual starting point
/// for blurred belief maps.
impl From<&BinaryMask> for ProbMap {
    fn from(mask: &BinaryMask) -> ProbMap {
        ProbMap {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Binary mask stored as one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::BadProbability(f64::from(
                *data.iter().find(|&&v| v > 1).unwrap(),
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    /// Nearest-pixel lookup; anything outside the grid reads as background.
    /// Halfway coordinates round away from zero (`f64::round`).
    #[inline]
    pub fn sample_nearest(&self, u: f64, v: f64) -> bool {
        let x = u.round();
        let y = v.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return false;
        }
        self.data[y as usize * self.width + x as usize] != 0
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// View the mask as a {0, 1} probability map.
    pub fn to_probmap(&self) -> ProbMap {
        ProbMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn same_size(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::SizeMismatch {
                want_w: self.width,
                want_h: self.height,
                got_w: other.width,
                got_h: other.height,
            });
        }
        Ok(())
    }

    /// Morphological erosion with a square (Chebyshev) structuring element of
    /// the given radius; pixels within `radius` of the border erode away.
    pub fn erode(&self, radius: usize) -> BinaryMask {
        let mut out = BinaryMask::zeros(self.width, self.height);
        let r = radius as isize;
        for y in 0..self.height as isize {
            'px: for x in 0..self.width as isize {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0
                            || ny < 0
                            || nx >= self.width as isize
                            || ny >= self.height as isize
                            || self.data[ny as usize * self.width + nx as usize] == 0
                        {
                            continue 'px;
                        }
                    }
                }
                out.data[y as usize * self.width + x as usize] = 1;
            }
        }
        out
    }

    /// Morphological dilation with a square (Chebyshev) structuring element.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        let mut out = BinaryMask::zeros(self.width, self.height);
        let r = radius as isize;
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                if self.data[y as usize * self.width + x as usize] == 0 {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0
                            && ny >= 0
                            && nx < self.width as isize
                            && ny < self.height as isize
                        {
                            out.data[ny as usize * self.width + nx as usize] = 1;
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_center_hits_texel() {
        let mut g = PixelGrid::zeros(4, 4);
        g.set(2, 1, 3.0);
        assert_eq!(g.sample_bilinear(2.0, 1.0), 3.0);
    }

    #[test]
    fn bilinear_interpolates_between_centers() {
        let mut g = PixelGrid::zeros(4, 1);
        g.set(1, 0, 1.0);
        g.set(2, 0, 3.0);
        assert!((g.sample_bilinear(1.25, 0.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_fades_to_zero_outside() {
        let mut g = PixelGrid::zeros(2, 2);
        g.set(0, 0, 1.0);
        // Half a pixel past the border mixes with zero padding.
        assert!((g.sample_bilinear(-0.5, 0.0) - 0.5).abs() < 1e-12);
        assert_eq!(g.sample_bilinear(-1.0, 0.0), 0.0);
        assert_eq!(g.sample_bilinear(5.0, 0.0), 0.0);
    }

    #[test]
    fn probmap_rejects_out_of_range() {
        assert!(ProbMap::from_vec(1, 1, vec![1.2]).is_err());
        assert!(ProbMap::from_vec(1, 1, vec![-0.1]).is_err());
        assert!(ProbMap::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(ProbMap::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn nearest_rounds_and_bounds_checks() {
        let mut m = BinaryMask::zeros(3, 3);
        m.set(1, 1, true);
        assert!(m.sample_nearest(1.4, 0.6));
        assert!(!m.sample_nearest(1.6, 0.6));
        assert!(!m.sample_nearest(-0.6, 1.0));
        assert!(!m.sample_nearest(1.0, 3.0));
    }

    #[test]
    fn splat_matches_sample_adjoint() {
        // <splat(u,v,1), g> must equal sample_g(u,v) for any grid g.
        let mut g = PixelGrid::zeros(5, 5);
        for (i, v) in g.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let (u, v) = (2.3, 3.7);
        let mut delta = PixelGrid::zeros(5, 5);
        delta.splat_bilinear(u, v, 1.0);
        let dot: f64 = delta
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        assert!((dot - g.sample_bilinear(u, v)).abs() < 1e-12);
    }
}
