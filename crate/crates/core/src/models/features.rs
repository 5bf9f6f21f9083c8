//! Per-pixel inputs: normalized coordinates, a local patch from each level
//! of a box-filtered image pyramid, and an optional coarse thumbnail of the
//! whole frame shared by every pixel of a record.

use crate::error::{Error, Result};
use crate::field::Pixel;
use crate::render::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Odd patch side length.
    pub patch_size: usize,
    /// Pixel spacing between patch samples.
    pub patch_stride: usize,
    /// Side of the thumbnail grid; 0 disables it.
    pub context_grid: usize,
    /// Extra pyramid levels, each half the resolution of the previous one.
    pub pyramid_levels: usize,
}

/// An image resampled for feature extraction.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    /// Level `l` is `(h_l, w_l, data)` at `1/2^l` resolution.
    levels: Vec<(usize, usize, Vec<f64>)>,
    context: Vec<f64>,
}

impl FeatureSpec {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, patch_size: 9, patch_stride: 1, context_grid: 0, pyramid_levels: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 || self.patch_size == 0 {
            return Err(Error::InvalidConfig(format!("patch_size {} must be odd", self.patch_size)));
        }
        if self.patch_stride == 0 {
            return Err(Error::InvalidConfig("patch_stride must be >= 1".into()));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::InvalidConfig(format!("channels {} must be 1 or 3", self.channels)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("empty image".into()));
        }
        if self.pyramid_levels > 8 || (self.height.min(self.width) >> self.pyramid_levels) == 0 {
            return Err(Error::InvalidConfig(format!("{} pyramid levels exceed the image", self.pyramid_levels)));
        }
        if self.context_grid > self.height.min(self.width) {
            return Err(Error::InvalidConfig(format!("context_grid {} exceeds the image", self.context_grid)));
        }
        Ok(())
    }

    /// Coordinates plus one patch per pyramid level.
    pub fn pixel_dim(&self) -> usize {
        2 + (1 + self.pyramid_levels) * self.patch_size * self.patch_size * self.channels
    }

    pub fn context_dim(&self) -> usize {
        self.context_grid * self.context_grid * self.channels
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.height != self.height || image.width != self.width || image.channels != self.channels {
            return Err(Error::Shape(format!(
                "image {}x{}x{} does not match model input {}x{}x{}",
                image.height, image.width, image.channels, self.height, self.width, self.channels
            )));
        }
        Ok(())
    }

    pub fn check_pixel(&self, p: Pixel) -> Result<()> {
        if p.row >= self.height || p.col >= self.width {
            return Err(Error::Domain(format!("pixel ({}, {}) outside {}x{}", p.row, p.col, self.height, self.width)));
        }
        Ok(())
    }

    /// Pyramid and thumbnail of `image`, computed once per frame.
    pub fn prepare(&self, image: &Image) -> PreparedImage {
        let c = self.channels;
        let base: Vec<f64> = image.data.iter().map(|v| *v as f64).collect();
        let mut levels = vec![(image.height, image.width, base)];
        for _ in 0..self.pyramid_levels {
            let (h, w, prev) = levels.last().expect("base level");
            let (nh, nw) = (h.div_ceil(2), w.div_ceil(2));
            let mut next = vec![0.0; nh * nw * c];
            for r in 0..nh {
                for col in 0..nw {
                    for ch in 0..c {
                        let mut sum = 0.0;
                        let mut cnt = 0.0;
                        for rr in 2 * r..(2 * r + 2).min(*h) {
                            for cc in 2 * col..(2 * col + 2).min(*w) {
                                sum += prev[(rr * w + cc) * c + ch];
                                cnt += 1.0;
                            }
                        }
                        next[(r * nw + col) * c + ch] = sum / cnt;
                    }
                }
            }
            levels.push((nh, nw, next));
        }
        PreparedImage { levels, context: self.context(image) }
    }

    /// Writes `pixel_dim()` values for pixel `p` into `out`.
    pub fn write_pixel(&self, prep: &PreparedImage, p: Pixel, out: &mut [f64]) {
        out[0] = 2.0 * (p.col as f64 + 0.5) / self.width as f64 - 1.0;
        out[1] = 2.0 * (p.row as f64 + 0.5) / self.height as f64 - 1.0;
        let half = (self.patch_size / 2) as isize;
        let s = self.patch_stride as isize;
        let c = self.channels;
        let mut k = 2;
        let (h0, w0, base) = &prep.levels[0];
        for dr in -half..=half {
            let r = p.row as isize + dr * s;
            for dc in -half..=half {
                let col = p.col as isize + dc * s;
                let inside = r >= 0 && col >= 0 && (r as usize) < *h0 && (col as usize) < *w0;
                for ch in 0..c {
                    out[k] = if inside { base[(r as usize * w0 + col as usize) * c + ch] } else { 0.0 };
                    k += 1;
                }
            }
        }
        for (l, (h, w, data)) in prep.levels.iter().enumerate().skip(1) {
            let f = (1usize << l) as f64;
            let cr = (p.row as f64 + 0.5) / f - 0.5;
            let cc = (p.col as f64 + 0.5) / f - 0.5;
            for dr in -half..=half {
                for dc in -half..=half {
                    let (r, col) = (cr + (dr * s) as f64, cc + (dc * s) as f64);
                    for ch in 0..c {
                        out[k] = bilinear(data, *h, *w, c, r, col, ch);
                        k += 1;
                    }
                }
            }
        }
    }

    /// Feature rows for `pixels`, `pixels.len() × pixel_dim()`.
    pub fn pixel_rows(&self, prep: &PreparedImage, pixels: &[Pixel]) -> Vec<f64> {
        let d = self.pixel_dim();
        let mut out = vec![0.0; pixels.len() * d];
        for (i, p) in pixels.iter().enumerate() {
            self.write_pixel(prep, *p, &mut out[i * d..(i + 1) * d]);
        }
        out
    }

    /// Box-averaged `context_grid²` thumbnail; empty when disabled.
    pub fn context(&self, image: &Image) -> Vec<f64> {
        let g = self.context_grid;
        if g == 0 {
            return Vec::new();
        }
        let c = self.channels;
        let mut sums = vec![0.0; g * g * c];
        let mut counts = vec![0usize; g * g];
        for row in 0..self.height {
            let br = row * g / self.height;
            for col in 0..self.width {
                let bc = col * g / self.width;
                counts[br * g + bc] += 1;
                for ch in 0..c {
                    sums[(br * g + bc) * c + ch] += image.get(row, col, ch) as f64;
                }
            }
        }
        for (b, n) in counts.iter().enumerate() {
            for ch in 0..c {
                sums[b * c + ch] /= *n as f64;
            }
        }
        sums
    }
}

impl PreparedImage {
    pub fn context(&self) -> &[f64] {
        &self.context
    }
}

fn bilinear(data: &[f64], h: usize, w: usize, c: usize, row: f64, col: f64, ch: usize) -> f64 {
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let mut v = 0.0;
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let wgt = wr * wc;
            let (r, cc) = (r0 + dr, c0 + dc);
            if wgt != 0.0 && r >= 0.0 && cc >= 0.0 && r < h as f64 && cc < w as f64 {
                v += wgt * data[(r as usize * w + cc as usize) * c + ch];
            }
        }
    }
    v
}

/// Bilinear sample at continuous index coordinates (pixel `(r, c)` sits at
/// `(r as f64, c as f64)`), zero outside the image.
pub fn sample_bilinear(image: &Image, row: f64, col: f64, ch: usize) -> f64 {
    let data: Vec<f64> = image.data.iter().map(|v| *v as f64).collect();
    bilinear(&data, image.height, image.width, image.channels, row, col, ch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let mut img = Image::filled(h, w, 1, 0.0);
        for r in 0..h {
            for c in 0..w {
                img.data[r * w + c] = (r * w + c) as f32 / (h * w) as f32;
            }
        }
        img
    }

    #[test]
    fn patch_matches_bilinear_at_integer_offsets() {
        let img = ramp(12, 10);
        let mut spec = FeatureSpec::new(12, 10, 1);
        spec.patch_size = 5;
        spec.patch_stride = 2;
        let mut out = vec![0.0; spec.pixel_dim()];
        let p = Pixel::new(1, 8);
        spec.write_pixel(&spec.prepare(&img), p, &mut out);
        let mut k = 2;
        for dr in -2..=2 {
            for dc in -2..=2 {
                let v = sample_bilinear(&img, (p.row as i64 + 2 * dr) as f64, (p.col as i64 + 2 * dc) as f64, 0);
                assert_eq!(out[k], v);
                k += 1;
            }
        }
        // Out-of-frame samples are zero padded.
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn bilinear_interpolates() {
        let img = ramp(4, 4);
        let v = sample_bilinear(&img, 1.5, 2.25, 0);
        let want = 0.5 * (0.75 * img.get(1, 2, 0) + 0.25 * img.get(1, 3, 0)) as f64
            + 0.5 * (0.75 * img.get(2, 2, 0) + 0.25 * img.get(2, 3, 0)) as f64;
        assert!((v - want).abs() < 1e-7);
    }

    #[test]
    fn coordinates_are_normalized() {
        let spec = FeatureSpec::new(8, 16, 1);
        let img = Image::filled(8, 16, 1, 0.0);
        let mut out = vec![0.0; spec.pixel_dim()];
        spec.write_pixel(&spec.prepare(&img), Pixel::new(0, 15), &mut out);
        assert_eq!(out[0], 2.0 * 15.5 / 16.0 - 1.0);
        assert_eq!(out[1], 2.0 * 0.5 / 8.0 - 1.0);
    }

    #[test]
    fn context_preserves_mean() {
        let img = ramp(12, 10);
        let mut spec = FeatureSpec::new(12, 10, 1);
        spec.context_grid = 1;
        let mean = img.data.iter().map(|v| *v as f64).sum::<f64>() / 120.0;
        assert!((spec.context(&img)[0] - mean).abs() < 1e-12);
        spec.context_grid = 4;
        assert_eq!(spec.context(&img).len(), 16);
    }

    #[test]
    fn pyramid_levels_average_blocks() {
        let img = ramp(8, 8);
        let mut spec = FeatureSpec::new(8, 8, 1);
        spec.patch_size = 1;
        spec.pyramid_levels = 2;
        assert_eq!(spec.pixel_dim(), 5);
        let prep = spec.prepare(&img);
        let mut out = vec![0.0; 5];
        // Pixel (1, 1) is the corner of the top-left 2x2 block: at level 1 its
        // center falls at (0.25, 0.25) in that level's index space.
        spec.write_pixel(&prep, Pixel::new(1, 1), &mut out);
        let block = |r0: usize, c0: usize, s: usize| -> f64 {
            let mut t = 0.0;
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    t += img.get(r, c, 0) as f64;
                }
            }
            t / (s * s) as f64
        };
        let l1 = 0.75 * 0.75 * block(0, 0, 2) + 0.75 * 0.25 * (block(0, 2, 2) + block(2, 0, 2)) + 0.25 * 0.25 * block(2, 2, 2);
        assert!((out[3] - l1).abs() < 1e-12, "{} vs {l1}", out[3]);
        // Level 2 at pixel (1, 1): center (-0.125, -0.125), mostly block (0, 0) of size 4.
        let l2 = 0.875 * 0.875 * block(0, 0, 4);
        assert!((out[4] - l2).abs() < 1e-12);
        spec.pyramid_levels = 4;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn validation() {
        let mut spec = FeatureSpec::new(8, 8, 1);
        spec.patch_size = 4;
        assert!(spec.validate().is_err());
        spec.patch_size = 3;
        spec.context_grid = 9;
        assert!(spec.validate().is_err());
        spec.context_grid = 2;
        spec.validate().unwrap();
        assert!(spec.check_pixel(Pixel::new(8, 0)).is_err());
    }
}
