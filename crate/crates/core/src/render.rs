//! Deterministic rasterization of the chain into grayscale or RGB images.
//!
//! Links are capsules (segment plus radius) drawn proximal first so distal
//! links cover proximal ones. Each link has its own base intensity and a
//! radial shading profile so pixel motion can be attributed to a link.
//!
//! All pixel-space geometry is evaluated relative to the integer part of the
//! camera offset. Whole-pixel camera shifts therefore shift the output
//! exactly, bit for bit.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kinematics::{CameraModel, ChainConfig, ChainFrames, ChainState, LinkPoint, Vec2};

/// Row-major `H×W×C` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Binary PGM (C=1) or PPM (C=3) dump for eyeballing.
    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Format(format!("cannot dump {c}-channel image"))),
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        f.write_all(&bytes)?;
        Ok(())
    }
}

/// Appearance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    pub link_intensity: Vec<f64>,
    pub radial_shading_gain: f64,
    pub background: f64,
    pub supersample: usize,
    pub channels: usize,
}

impl RenderStyle {
    /// Grayscale style for `n` links. Intensities follow a golden-ratio
    /// sequence, which keeps neighbouring links at least 0.2 apart.
    pub fn default_for(n: usize) -> Self {
        const PHI: f64 = 0.618_033_988_749_895;
        let link_intensity = (0..n).map(|i| 0.35 + 0.6 * ((i as f64 + 1.0) * PHI).fract()).collect();
        Self { link_intensity, radial_shading_gain: 0.5, background: 0.0, supersample: 4, channels: 1 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.link_intensity.len() != n {
            return Err(Error::InvalidConfig(format!(
                "style has {} link intensities for {n} links",
                self.link_intensity.len()
            )));
        }
        for (i, v) in self.link_intensity.iter().enumerate() {
            if !(*v > 0.0 && *v <= 1.0) {
                return Err(Error::InvalidConfig(format!("link intensity {i} = {v} outside (0, 1]")));
            }
        }
        for (i, w) in self.link_intensity.windows(2).enumerate() {
            if (w[0] - w[1]).abs() < 0.08 {
                return Err(Error::InvalidConfig(format!("links {i} and {} differ by less than 0.08", i + 1)));
            }
        }
        if !(self.radial_shading_gain >= 0.0) {
            return Err(Error::InvalidConfig("radial_shading_gain must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.background) {
            return Err(Error::InvalidConfig("background must be in [0, 1)".into()));
        }
        if self.supersample == 0 {
            return Err(Error::InvalidConfig("supersample factor must be >= 1".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidConfig(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    /// Color of link `k` at normalized distance `d ∈ [0, 1]` from its joint.
    fn shade(&self, k: usize, d: f64, out: &mut [f32]) {
        let v = (self.link_intensity[k] * (1.0 - self.radial_shading_gain * d * d)).clamp(0.0, 1.0);
        if self.channels == 1 {
            out[0] = v as f32;
        } else {
            for (c, o) in out.iter_mut().enumerate() {
                let tint = 0.55 + 0.45 * (((k + 2 * c) as f64 + 1.0) * 0.618_033_988_749_895).fract();
                *o = (v * tint) as f32;
            }
        }
    }
}

/// A link capsule in local pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Capsule {
    a: Vec2,
    b: Vec2,
    radius: f64,
}

impl Capsule {
    /// Distance from `p` to the proximal end, normalized so the far tip is 1.
    #[inline]
    fn joint_radial(&self, p: Vec2) -> f64 {
        let ab = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let reach = (ab[0] * ab[0] + ab[1] * ab[1]).sqrt() + self.radius;
        let d = ((p[0] - self.a[0]).powi(2) + (p[1] - self.a[1]).powi(2)).sqrt();
        if reach > 0.0 { (d / reach).min(1.0) } else { 0.0 }
    }

    /// Squared distance from `p` to the capsule axis.
    #[inline]
    fn dist2(&self, p: Vec2) -> f64 {
        let ab = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let ap = [p[0] - self.a[0], p[1] - self.a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
        d[0] * d[0] + d[1] * d[1]
    }

    #[inline]
    fn contains(&self, p: Vec2) -> bool {
        self.dist2(p) <= self.radius * self.radius
    }
}

/// Chain geometry projected into pixel space for one state.
///
/// Coordinates are "local": pixel coordinates minus the integer part of the
/// camera offset.
pub(crate) struct PixelGeometry {
    caps: Vec<Capsule>,
    int_offset: [i64; 2],
    frac_offset: Vec2,
    scale: f64,
    pub(crate) frames: ChainFrames,
}

impl PixelGeometry {
    pub(crate) fn new(config: &ChainConfig, camera: &CameraModel, state: &ChainState) -> Self {
        let frames = config.frames(&state.q);
        let ox = camera.offset[0].floor();
        let oy = camera.offset[1].floor();
        let frac_offset = [camera.offset[0] - ox, camera.offset[1] - oy];
        let to_local = |x: Vec2| [camera.scale * x[0] + frac_offset[0], camera.scale * x[1] + frac_offset[1]];
        let caps = (0..config.n_joints())
            .map(|k| Capsule {
                a: to_local(frames.joints[k]),
                b: to_local(frames.joints[k + 1]),
                radius: config.link_radii[k] * camera.scale,
            })
            .collect();
        Self { caps, int_offset: [ox as i64, oy as i64], frac_offset, scale: camera.scale, frames }
    }

    /// Local coordinates of the center of pixel `(row, col)`.
    #[inline]
    pub(crate) fn pixel_local(&self, row: usize, col: usize) -> Vec2 {
        [(col as i64 - self.int_offset[0]) as f64 + 0.5, (row as i64 - self.int_offset[1]) as f64 + 0.5]
    }

    /// Topmost link covering a local point.
    #[inline]
    pub(crate) fn top_link(&self, p: Vec2) -> Option<usize> {
        (0..self.caps.len()).rev().find(|&k| self.caps[k].contains(p))
    }

    /// World position of a local pixel point.
    #[inline]
    pub(crate) fn local_to_world(&self, p: Vec2) -> Vec2 {
        [(p[0] - self.frac_offset[0]) / self.scale, (p[1] - self.frac_offset[1]) / self.scale]
    }

    /// Local pixel position of a world point.
    #[inline]
    pub(crate) fn world_to_local(&self, x: Vec2) -> Vec2 {
        [self.scale * x[0] + self.frac_offset[0], self.scale * x[1] + self.frac_offset[1]]
    }

    /// The material point under the center of pixel `(row, col)`, if any.
    pub(crate) fn material_at(&self, row: usize, col: usize) -> Option<LinkPoint> {
        let p = self.pixel_local(row, col);
        let link = self.top_link(p)?;
        Some(self.frames.world_to_local(link, self.local_to_world(p)))
    }

    /// Pixel indices `(row, col)` whose local center is `p`, if inside the frame.
    pub(crate) fn local_to_pixel(&self, p: Vec2, height: usize, width: usize) -> Option<(usize, usize)> {
        let col = (p[0] - 0.5).round() as i64 + self.int_offset[0];
        let row = (p[1] - 0.5).round() as i64 + self.int_offset[1];
        (row >= 0 && col >= 0 && (row as usize) < height && (col as usize) < width).then(|| (row as usize, col as usize))
    }
}

/// Renders the chain at `state`.
pub fn render(config: &ChainConfig, camera: &CameraModel, style: &RenderStyle, state: &ChainState) -> Image {
    let (h, w, ch) = (camera.height, camera.width, style.channels);
    let s = style.supersample.max(1);
    let geom = PixelGeometry::new(config, camera, state);
    let (sh, sw) = (h * s, w * s);

    // Per-subsample topmost link and normalized distance from its joint.
    let mut link_id = vec![u16::MAX; sh * sw];
    let mut radial = vec![0.0f32; sh * sw];
    let inv_s = 1.0 / s as f64;
    // Local coordinate of subsample index `i` along an axis with integer offset `o`.
    let sub_local = |i: usize, o: i64| ((i as i64 - o * s as i64) as f64 + 0.5) * inv_s;
    for (k, cap) in geom.caps.iter().enumerate() {
        let lo_x = cap.a[0].min(cap.b[0]) - cap.radius;
        let hi_x = cap.a[0].max(cap.b[0]) + cap.radius;
        let lo_y = cap.a[1].min(cap.b[1]) - cap.radius;
        let hi_y = cap.a[1].max(cap.b[1]) + cap.radius;
        let range = |lo: f64, hi: f64, o: i64, len: usize| {
            let a = ((lo * s as f64 - 0.5).floor() as i64 + o * s as i64).max(0);
            let b = ((hi * s as f64 - 0.5).ceil() as i64 + o * s as i64).min(len as i64 - 1);
            (a, b)
        };
        let (x0, x1) = range(lo_x, hi_x, geom.int_offset[0], sw);
        let (y0, y1) = range(lo_y, hi_y, geom.int_offset[1], sh);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let r2 = cap.radius * cap.radius;
        for sy in y0 as usize..=y1 as usize {
            let py = sub_local(sy, geom.int_offset[1]);
            for sx in x0 as usize..=x1 as usize {
                let p = [sub_local(sx, geom.int_offset[0]), py];
                let d2 = cap.dist2(p);
                if d2 <= r2 {
                    link_id[sy * sw + sx] = k as u16;
                    radial[sy * sw + sx] = cap.joint_radial(p) as f32;
                }
            }
        }
    }

    let mut img = Image::filled(h, w, ch, style.background as f32);
    let norm = 1.0 / (s * s) as f64;
    let mut color = [0.0f32; 3];
    let mut acc = [0.0f64; 3];
    for row in 0..h {
        for col in 0..w {
            acc[..ch].fill(0.0);
            let mut any = false;
            for sy in row * s..(row + 1) * s {
                for sx in col * s..(col + 1) * s {
                    let id = link_id[sy * sw + sx];
                    if id == u16::MAX {
                        acc[..ch].iter_mut().for_each(|a| *a += style.background);
                    } else {
                        any = true;
                        style.shade(id as usize, radial[sy * sw + sx] as f64, &mut color[..ch]);
                        for c in 0..ch {
                            acc[c] += color[c] as f64;
                        }
                    }
                }
            }
            if any {
                let base = (row * w + col) * ch;
                for c in 0..ch {
                    img.data[base + c] = (acc[c] * norm).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    img
}

/// `H×W` row-major mask, true where a capsule covers the pixel center.
pub fn foreground_mask(config: &ChainConfig, camera: &CameraModel, _style: &RenderStyle, state: &ChainState) -> Vec<bool> {
    let geom = PixelGeometry::new(config, camera, state);
    let mut mask = vec![false; camera.height * camera.width];
    for row in 0..camera.height {
        for col in 0..camera.width {
            mask[row * camera.width + col] = geom.top_link(geom.pixel_local(row, col)).is_some();
        }
    }
    mask
}
