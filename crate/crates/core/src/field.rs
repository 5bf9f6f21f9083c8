//! Dense image-space Jacobian fields: a 2×n matrix per pixel mapping joint
//! increments to pixel motion (pixels per radian).

use crate::error::{Error, Result};
use crate::kinematics::{CameraModel, ChainConfig, ChainState};
use crate::linalg::Mat2xN;
use crate::render::PixelGeometry;

/// A (possibly partially evaluated) Jacobian field over an `H×W` image.
///
/// Pixels that were never evaluated are `undefined` and are skipped by the
/// inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub height: usize,
    pub width: usize,
    pub n: usize,
    data: Vec<f64>,
    defined: Vec<bool>,
}

/// Integer pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl JacobianField {
    pub fn new(height: usize, width: usize, n: usize) -> Self {
        Self { height, width, n, data: vec![0.0; height * width * 2 * n], defined: vec![false; height * width] }
    }

    /// Builds a field from per-pixel matrices in any order.
    pub fn from_pixels(height: usize, width: usize, n: usize, pixels: &[Pixel], mats: &[Mat2xN]) -> Result<Self> {
        if pixels.len() != mats.len() {
            return Err(Error::Shape(format!("{} pixels but {} matrices", pixels.len(), mats.len())));
        }
        let mut f = Self::new(height, width, n);
        for (p, m) in pixels.iter().zip(mats) {
            f.set(*p, m)?;
        }
        Ok(f)
    }

    pub fn set(&mut self, p: Pixel, m: &Mat2xN) -> Result<()> {
        if p.row >= self.height || p.col >= self.width {
            return Err(Error::Domain(format!("pixel {p:?} outside {}x{}", self.height, self.width)));
        }
        if m.cols() != self.n {
            return Err(Error::Shape(format!("matrix has {} columns, field has {}", m.cols(), self.n)));
        }
        let i = p.row * self.width + p.col;
        self.data[i * 2 * self.n..(i + 1) * 2 * self.n].copy_from_slice(m.as_slice());
        self.defined[i] = true;
        Ok(())
    }

    /// Row-major `2n` slice at a defined pixel.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> Option<&[f64]> {
        let i = row * self.width + col;
        self.defined[i].then(|| &self.data[i * 2 * self.n..(i + 1) * 2 * self.n])
    }

    pub fn matrix(&self, row: usize, col: usize) -> Option<Mat2xN> {
        self.at(row, col).map(|s| Mat2xN::from_slice(self.n, s))
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|d| **d).count()
    }

    /// Predicted flow `J(p) δa` at every defined pixel, as `(pixel, [dx, dy])`.
    pub fn apply(&self, delta_a: &[f64]) -> Vec<(Pixel, [f64; 2])> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if let Some(j) = self.at(row, col) {
                    let (r0, r1) = j.split_at(self.n);
                    let v = [crate::linalg::dot(r0, delta_a), crate::linalg::dot(r1, delta_a)];
                    out.push((Pixel::new(row, col), v));
                }
            }
        }
        out
    }
}

/// The ground-truth field: `scale · ∂x/∂q` of the material point under each
/// foreground pixel center.
pub fn analytic_field(config: &ChainConfig, camera: &CameraModel, state: &ChainState) -> JacobianField {
    let n = config.n_joints();
    let geom = PixelGeometry::new(config, camera, state);
    let mut field = JacobianField::new(camera.height, camera.width, n);
    for row in 0..camera.height {
        for col in 0..camera.width {
            if let Some(point) = geom.material_at(row, col) {
                let x = geom.frames.local_to_world(&point);
                let j = geom.frames.jacobian_at(point.link, x, n).scaled(camera.scale);
                field.set(Pixel::new(row, col), &j).expect("pixel in range");
            }
        }
    }
    field
}
