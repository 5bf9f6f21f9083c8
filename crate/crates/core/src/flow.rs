//! Dense optical flow between consecutive chain states.
//!
//! [`oracle_flow`] is exact material-point correspondence: every foreground
//! pixel of the source frame is traced back to the point of the chain it
//! shows, that point is moved with the chain, and its pixel displacement is
//! reported. [`first_order_flow`] is the linearization of the same map
//! through the analytic Jacobian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::kinematics::{Action, CameraModel, ChainConfig, ChainState};
use crate::render::{PixelGeometry, RenderStyle};

/// Per-pixel 2-vector motion anchored at the source frame, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    /// `H×W×2`, row-major, `[dx, dy]` per pixel.
    pub vectors: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, vectors: vec![0.0; height * width * 2], valid: vec![false; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 2] {
        let i = 2 * (row * self.width + col);
        [self.vectors[i], self.vectors[i + 1]]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    fn set(&mut self, row: usize, col: usize, v: [f64; 2]) {
        let i = row * self.width + col;
        self.vectors[2 * i] = v[0] as f32;
        self.vectors[2 * i + 1] = v[1] as f32;
        self.valid[i] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Largest `|component|` difference over pixels valid in both fields.
    pub fn max_abs_diff(&self, other: &FlowField) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.valid.len() {
            if self.valid[i] && other.valid[i] {
                for c in 0..2 {
                    worst = worst.max((self.vectors[2 * i + c] as f64 - other.vectors[2 * i + c] as f64).abs());
                }
            }
        }
        worst
    }
}

/// Oracle flow plus the per-pixel occlusion bit.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFlow {
    pub flow: FlowField,
    /// True where the material point is hidden (or leaves the frame) in the
    /// target state. The flow there is still the material displacement.
    pub occluded: Vec<bool>,
}

/// Exact flow of the source frame's foreground pixels under `action`.
pub fn oracle_flow(
    config: &ChainConfig,
    camera: &CameraModel,
    _style: &RenderStyle,
    state: &ChainState,
    action: &Action,
) -> OracleFlow {
    oracle_flow_between(config, camera, state, &state.advanced(action), [0.0, 0.0])
}

/// Exact flow from `from` to `to`, optionally with the whole target frame
/// translated by `target_shift` pixels (a camera move between frames).
pub fn oracle_flow_between(
    config: &ChainConfig,
    camera: &CameraModel,
    from: &ChainState,
    to: &ChainState,
    target_shift: [f64; 2],
) -> OracleFlow {
    let (h, w) = (camera.height, camera.width);
    let src = PixelGeometry::new(config, camera, from);
    let dst = PixelGeometry::new(config, camera, to);
    let mut flow = FlowField::zeros(h, w);
    let mut occluded = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            let Some(point) = src.material_at(row, col) else { continue };
            let x0 = src.frames.local_to_world(&point);
            let x1 = dst.frames.local_to_world(&point);
            let d = [
                camera.scale * (x1[0] - x0[0]) + target_shift[0],
                camera.scale * (x1[1] - x0[1]) + target_shift[1],
            ];
            flow.set(row, col, d);
            let p1 = dst.world_to_local(x1);
            let visible = dst.top_link(p1) == Some(point.link) && {
                let p_shifted = [p1[0] + target_shift[0], p1[1] + target_shift[1]];
                dst.local_to_pixel(p_shifted, h, w).is_some()
            };
            occluded[row * w + col] = !visible;
        }
    }
    OracleFlow { flow, occluded }
}

/// Linearized flow `scale · J(x) · δa` on the source frame's foreground.
pub fn first_order_flow(config: &ChainConfig, camera: &CameraModel, state: &ChainState, action: &Action) -> FlowField {
    let (h, w) = (camera.height, camera.width);
    let n = config.n_joints();
    let geom = PixelGeometry::new(config, camera, state);
    let mut flow = FlowField::zeros(h, w);
    for row in 0..h {
        for col in 0..w {
            let Some(point) = geom.material_at(row, col) else { continue };
            let x = geom.frames.local_to_world(&point);
            let jac = geom.frames.jacobian_at(point.link, x, n);
            let v = jac.mul_vec(&action.delta_a);
            flow.set(row, col, [camera.scale * v[0], camera.scale * v[1]]);
        }
    }
    flow
}

/// Estimator error model: Gaussian jitter on valid vectors plus dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNoiseModel {
    pub sigma_pixels: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl FlowNoiseModel {
    pub fn none() -> Self {
        Self { sigma_pixels: 0.0, dropout_rate: 0.0, seed: 0 }
    }

    pub fn realistic(seed: u64) -> Self {
        Self { sigma_pixels: 0.25, dropout_rate: 0.02, seed }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_pixels == 0.0 && self.dropout_rate == 0.0
    }
}

/// Applies `model` to a copy of `flow`; deterministic per seed.
pub fn add_noise(flow: &FlowField, model: &FlowNoiseModel) -> FlowField {
    let mut out = flow.clone();
    if model.is_noiseless() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let normal = Normal::new(0.0, model.sigma_pixels.max(0.0)).expect("finite sigma");
    for i in 0..out.valid.len() {
        if !out.valid[i] {
            continue;
        }
        if model.dropout_rate > 0.0 && rng.random::<f64>() < model.dropout_rate {
            out.valid[i] = false;
            out.vectors[2 * i] = 0.0;
            out.vectors[2 * i + 1] = 0.0;
            continue;
        }
        if model.sigma_pixels > 0.0 {
            out.vectors[2 * i] += normal.sample(&mut rng) as f32;
            out.vectors[2 * i + 1] += normal.sample(&mut rng) as f32;
        }
    }
    out
}
