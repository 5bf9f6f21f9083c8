//! Planar serial-chain kinematics: forward kinematics of material points,
//! the closed-form embodiment Jacobian, joint-limit clamping and the affine
//! camera that maps world coordinates to pixels.
//!
//! Conventions: world and pixel coordinates are `[x, y]`. Pixel `x` is the
//! column and `y` the row, so pixel `(row r, col c)` has its center at
//! `[c + 0.5, r + 0.5]`. Absolute link angle `k` is
//! `base_angle + q[0] + … + q[k]`.

use crate::error::{Error, Result};
use crate::linalg::Mat2xN;

pub type Vec2 = [f64; 2];

/// Geometry of a planar finger with `n` revolute joints.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub link_lengths: Vec<f64>,
    pub link_radii: Vec<f64>,
    pub joint_limits: Vec<(f64, f64)>,
    pub base_position: Vec2,
    /// Absolute direction of link 0 at `q = 0`.
    pub base_angle: f64,
}

impl ChainConfig {
    /// Builds and validates a chain.
    pub fn new(
        link_lengths: Vec<f64>,
        link_radii: Vec<f64>,
        joint_limits: Vec<(f64, f64)>,
        base_position: Vec2,
        base_angle: f64,
    ) -> Result<Self> {
        let cfg = Self { link_lengths, link_radii, joint_limits, base_position, base_angle };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Chain with unit base at the origin, `base_angle = 0`, and wide limits.
    /// Used mostly by tests.
    pub fn simple(link_lengths: &[f64]) -> Self {
        let n = link_lengths.len();
        Self {
            link_lengths: link_lengths.to_vec(),
            link_radii: vec![0.1; n],
            joint_limits: vec![(-std::f64::consts::PI, std::f64::consts::PI); n],
            base_position: [0.0, 0.0],
            base_angle: 0.0,
        }
    }

    /// The experiment default: lengths `length0·length_taper^i`, radii
    /// `radius0·radius_taper^i`, symmetric limits, base at the world origin
    /// pointing towards `-y` (image up).
    pub fn tapered(n: usize, taper: &ChainTaper) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n_joints must be at least 1".into()));
        }
        let lengths = (0..n).map(|i| taper.length0 * taper.length_taper.powi(i as i32)).collect();
        let radii = (0..n).map(|i| taper.radius0 * taper.radius_taper.powi(i as i32)).collect();
        Self::new(
            lengths,
            radii,
            vec![(-taper.joint_limit, taper.joint_limit); n],
            [0.0, 0.0],
            -std::f64::consts::FRAC_PI_2,
        )
    }

    /// Experiment geometry with total length 1: lengths proportional to
    /// `length_taper^i`, radii `max(0.25·length, 0.04)`, symmetric limits of
    /// `joint_limit`, base pointing towards `-y`.
    pub fn unit_reach(n: usize, taper: &ChainTaper) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n_joints must be at least 1".into()));
        }
        let raw: Vec<f64> = (0..n).map(|i| taper.length_taper.powi(i as i32)).collect();
        let total: f64 = raw.iter().sum();
        let lengths: Vec<f64> = raw.iter().map(|l| l / total).collect();
        let radii = lengths.iter().map(|l| (0.25 * l).max(0.04)).collect();
        Self::new(
            lengths,
            radii,
            vec![(-taper.joint_limit, taper.joint_limit); n],
            [0.0, 0.0],
            -std::f64::consts::FRAC_PI_2,
        )
    }

    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if n == 0 {
            return Err(Error::InvalidConfig("n_joints must be at least 1".into()));
        }
        if self.link_radii.len() != n || self.joint_limits.len() != n {
            return Err(Error::InvalidConfig(format!(
                "expected {n} radii and limits, got {} and {}",
                self.link_radii.len(),
                self.joint_limits.len()
            )));
        }
        for i in 0..n {
            let (l, r) = (self.link_lengths[i], self.link_radii[i]);
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(format!("link_lengths[{i}] = {l} must be > 0")));
            }
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!("link_radii[{i}] = {r} must be > 0")));
            }
            let (lo, hi) = self.joint_limits[i];
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("joint_limits[{i}] needs lo < hi, got ({lo}, {hi})")));
            }
        }
        if !self.base_position.iter().all(|v| v.is_finite()) || !self.base_angle.is_finite() {
            return Err(Error::InvalidConfig("base pose must be finite".into()));
        }
        Ok(())
    }

    /// Maximum distance from the base to any point of the chain.
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum::<f64>() + self.link_radii.iter().cloned().fold(0.0, f64::max)
    }

    /// Clamps `q` to the joint limits, coordinate-wise.
    pub fn clamp(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.joint_limits).map(|(v, &(lo, hi))| v.clamp(lo, hi)).collect()
    }

    /// Joint positions `c_0..c_n` (the last is the tip) and absolute link
    /// angles for state `q`.
    pub fn frames(&self, q: &[f64]) -> ChainFrames {
        let n = self.n_joints();
        assert_eq!(q.len(), n, "state dimension must equal n_joints");
        let mut joints = Vec::with_capacity(n + 1);
        let mut angles = Vec::with_capacity(n);
        let mut p = self.base_position;
        let mut theta = self.base_angle;
        joints.push(p);
        for (k, qk) in q.iter().enumerate() {
            theta += qk;
            angles.push(theta);
            let (s, c) = theta.sin_cos();
            p = [p[0] + self.link_lengths[k] * c, p[1] + self.link_lengths[k] * s];
            joints.push(p);
        }
        ChainFrames { joints, angles }
    }
}

/// Geometry parameters for [`ChainConfig::tapered`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTaper {
    pub length0: f64,
    pub length_taper: f64,
    pub radius0: f64,
    pub radius_taper: f64,
    pub joint_limit: f64,
}

impl Default for ChainTaper {
    fn default() -> Self {
        Self { length0: 1.0, length_taper: 0.85, radius0: 0.09, radius_taper: 0.9, joint_limit: 2.4 }
    }
}

/// Joint positions and absolute link angles at one state.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub joints: Vec<Vec2>,
    pub angles: Vec<f64>,
}

impl ChainFrames {
    /// World position of a point given in link-local coordinates.
    pub fn local_to_world(&self, p: &LinkPoint) -> Vec2 {
        let c = self.joints[p.link];
        let (s, co) = self.angles[p.link].sin_cos();
        [c[0] + p.along * co - p.across * s, c[1] + p.along * s + p.across * co]
    }

    /// Link-local coordinates of a world point relative to `link`.
    pub fn world_to_local(&self, link: usize, x: Vec2) -> LinkPoint {
        let c = self.joints[link];
        let (s, co) = self.angles[link].sin_cos();
        let d = [x[0] - c[0], x[1] - c[1]];
        LinkPoint { link, along: d[0] * co + d[1] * s, across: -d[0] * s + d[1] * co }
    }

    /// World-unit Jacobian `∂x/∂q` of a material point on `link` currently at
    /// world position `x`. Column `j` is the rotation of `x` about joint `j`
    /// for `j ≤ link` and zero otherwise.
    pub fn jacobian_at(&self, link: usize, x: Vec2, n: usize) -> Mat2xN {
        let mut jac = Mat2xN::zeros(n);
        for j in 0..=link {
            let c = self.joints[j];
            jac.set(0, j, -(x[1] - c[1]));
            jac.set(1, j, x[0] - c[0]);
        }
        jac
    }
}

/// Joint angles of the chain (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub q: Vec<f64>,
}

impl ChainState {
    pub fn new(q: Vec<f64>) -> Self {
        Self { q }
    }

    pub fn zeros(n: usize) -> Self {
        Self { q: vec![0.0; n] }
    }

    pub fn clamped(&self, config: &ChainConfig) -> Self {
        Self { q: config.clamp(&self.q) }
    }

    /// `q + δa`, without clamping.
    pub fn advanced(&self, action: &Action) -> Self {
        Self { q: self.q.iter().zip(&action.delta_a).map(|(a, b)| a + b).collect() }
    }
}

/// A joint-angle increment.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub delta_a: Vec<f64>,
}

impl Action {
    pub fn new(delta_a: Vec<f64>) -> Self {
        Self { delta_a }
    }

    pub fn zeros(n: usize) -> Self {
        Self { delta_a: vec![0.0; n] }
    }

    /// Checks finiteness and `‖δa‖∞ ≤ cap`.
    pub fn checked(delta_a: Vec<f64>, cap: f64) -> Result<Self> {
        if let Some(v) = delta_a.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("action entry {v}")));
        }
        let inf = delta_a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if inf > cap {
            return Err(Error::Domain(format!("|action|_inf = {inf} exceeds cap {cap}")));
        }
        Ok(Self { delta_a })
    }

    pub fn clamp_each(&self, cap: f64) -> Self {
        Self { delta_a: self.delta_a.iter().map(|v| v.clamp(-cap, cap)).collect() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { delta_a: self.delta_a.iter().map(|v| v * s).collect() }
    }

    pub fn inf_norm(&self) -> f64 {
        self.delta_a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A material point named by link, fraction along the link and fraction of
/// the radius across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPoint {
    pub link_index: usize,
    pub arc_param: f64,
    pub lateral: f64,
}

impl BodyPoint {
    pub fn new(link_index: usize, arc_param: f64, lateral: f64) -> Self {
        Self { link_index, arc_param, lateral }
    }

    pub fn tip(config: &ChainConfig) -> Self {
        Self::new(config.n_joints() - 1, 1.0, 0.0)
    }

    fn to_local(self, config: &ChainConfig) -> Result<LinkPoint> {
        let n = config.n_joints();
        if self.link_index >= n {
            return Err(Error::Domain(format!("link_index {} out of range for {n} links", self.link_index)));
        }
        if !(0.0..=1.0).contains(&self.arc_param) || !(-1.0..=1.0).contains(&self.lateral) {
            return Err(Error::Domain(format!(
                "body point (arc {}, lateral {}) outside [0,1]x[-1,1]",
                self.arc_param, self.lateral
            )));
        }
        Ok(LinkPoint {
            link: self.link_index,
            along: self.arc_param * config.link_lengths[self.link_index],
            across: self.lateral * config.link_radii[self.link_index],
        })
    }
}

/// A material point in link-local world units; unlike [`BodyPoint`] it can
/// also name points in the rounded end caps of a capsule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPoint {
    pub link: usize,
    pub along: f64,
    pub across: f64,
}

/// World position of a body point.
pub fn forward_kinematics(config: &ChainConfig, state: &ChainState, point: BodyPoint) -> Result<Vec2> {
    let local = point.to_local(config)?;
    Ok(config.frames(&state.q).local_to_world(&local))
}

/// `∂(world position)/∂q` of a body point, in world units per radian.
pub fn analytic_jacobian(config: &ChainConfig, state: &ChainState, point: BodyPoint) -> Result<Mat2xN> {
    let local = point.to_local(config)?;
    let frames = config.frames(&state.q);
    let x = frames.local_to_world(&local);
    Ok(frames.jacobian_at(local.link, x, config.n_joints()))
}

/// Affine pinhole-free camera: `pixel = scale · world + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub scale: f64,
    pub offset: Vec2,
    pub height: usize,
    pub width: usize,
}

impl CameraModel {
    pub fn new(scale: f64, offset: Vec2, height: usize, width: usize) -> Result<Self> {
        let cam = Self { scale, offset, height, width };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("camera scale {} must be > 0", self.scale)));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidConfig(format!(
                "image size {}x{} below the 16x16 minimum",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Camera that places the chain base at the horizontal center, a quarter
    /// of the height above the bottom edge, with a scale chosen so the fully
    /// extended chain stays inside the frame when pointing up or sideways.
    pub fn fit(config: &ChainConfig, height: usize, width: usize, max_scale: f64) -> Result<Self> {
        let reach = config.reach();
        let base_px = [width as f64 * 0.5, height as f64 * 0.75];
        let scale = (0.46 * width as f64 / reach).min(0.72 * height as f64 / reach).min(max_scale);
        let offset = [base_px[0] - scale * config.base_position[0], base_px[1] - scale * config.base_position[1]];
        Self::new(scale, offset, height, width)
    }

    #[inline]
    pub fn project(&self, x: Vec2) -> Vec2 {
        [self.scale * x[0] + self.offset[0], self.scale * x[1] + self.offset[1]]
    }

    #[inline]
    pub fn unproject(&self, p: Vec2) -> Vec2 {
        [(p[0] - self.offset[0]) / self.scale, (p[1] - self.offset[1]) / self.scale]
    }

    /// Center of pixel `(row, col)` in pixel coordinates.
    #[inline]
    pub fn pixel_center(row: usize, col: usize) -> Vec2 {
        [col as f64 + 0.5, row as f64 + 0.5]
    }

    /// The camera with its offset moved by whole pixels.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        Self { offset: [self.offset[0] + dx, self.offset[1] + dy], ..self.clone() }
    }
}

/// Pixel position of a world point; free function form of [`CameraModel::project`].
pub fn project(camera: &CameraModel, x: Vec2) -> Vec2 {
    camera.project(x)
}
