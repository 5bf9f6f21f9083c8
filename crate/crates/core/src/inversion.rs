//! Ridge-regularized action recovery.
//!
//! Two flavours share one objective. Training inverts each pixel's 2×n
//! Jacobian on its own with the right-inverse closed form
//! `Jᵀ(JJᵀ + λI)⁻¹`, which only needs a 2×2 inverse. Inference pools every
//! pixel into one n×n system
//!
//! ```text
//! δâ = (Σ_p J_pᵀ J_p + λI)⁻¹ Σ_p J_pᵀ v_p
//! ```
//!
//! solved by Cholesky factorization. Pixel contributions are combined with
//! a fixed binary tree in row-major pixel order, so the result does not
//! depend on the order in which the field was filled.

use crate::error::{Error, Result};
use crate::field::JacobianField;
use crate::flow::FlowField;
use crate::kinematics::Action;
use crate::linalg::{self, Mat2xN, MatNx2};
use crate::render::Image;

/// Regularization and pixel-selection settings for the pooled solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeParams {
    pub lambda: f64,
    /// Sum only over pixels whose flow is valid.
    pub use_mask: bool,
    /// Divide the data term by the number of contributing pixels, making
    /// `lambda` independent of foreground area.
    pub weight_by_validity: bool,
}

impl RidgeParams {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, use_mask: true, weight_by_validity: false }
    }

    /// `lambda` given in image-normalized units (flow measured as a
    /// fraction of the larger image side), converted to pixel units.
    pub fn normalized(lambda: f64, height: usize, width: usize) -> Self {
        Self::new(pixel_lambda(lambda, height, width))
    }
}

/// Converts a ridge weight from image-normalized to pixel units.
pub fn pixel_lambda(lambda: f64, height: usize, width: usize) -> f64 {
    let s = height.max(width) as f64;
    lambda * s * s
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

/// `Jᵀ(JJᵀ + λI)⁻¹`, the n×2 ridge pseudo-inverse of a 2×n matrix.
pub fn ridge_pinv(j: &Mat2xN, lambda: f64) -> Result<MatNx2> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda {lambda} must be >= 0")));
    }
    let [a, b, c] = j.gram();
    let inv = linalg::inv_sym2([a + lambda, b, c + lambda])?;
    let rows = (0..j.cols())
        .map(|k| {
            let col = j.column(k);
            linalg::sym2_mul(inv, col)
        })
        .collect();
    Ok(MatNx2 { rows })
}

/// Result of the pooled solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub delta_a: Vec<f64>,
    /// Pixels that contributed.
    pub pixels: usize,
    /// `Σ_p ‖J_p δâ − v_p‖²`.
    pub residual_sq: f64,
    /// `Σ_p ‖v_p‖²`.
    pub flow_sq: f64,
    /// Smallest eigenvalue of `Σ J_pᵀ J_p` fell below `1e-10 · trace`.
    pub ill_conditioned: bool,
}

impl RidgeSolution {
    /// `sqrt(residual / flow energy)`; 0 when there is no flow.
    pub fn relative_residual(&self) -> f64 {
        if self.flow_sq > 0.0 {
            (self.residual_sq / self.flow_sq).sqrt()
        } else {
            0.0
        }
    }

    /// Value of the ridge objective at `delta_a` (unnormalized data term).
    pub fn objective(field: &JacobianField, flow: &FlowField, params: &RidgeParams, delta_a: &[f64]) -> f64 {
        let mut data = 0.0;
        let mut count = 0usize;
        for_each_pixel(field, flow, params, |j, v| {
            let n = delta_a.len();
            let (r0, r1) = j.split_at(n);
            let e = [linalg::dot(r0, delta_a) - v[0], linalg::dot(r1, delta_a) - v[1]];
            data += e[0] * e[0] + e[1] * e[1];
            count += 1;
        });
        let w = if params.weight_by_validity && count > 0 { 1.0 / count as f64 } else { 1.0 };
        w * data + params.lambda * linalg::dot(delta_a, delta_a)
    }
}

fn for_each_pixel(field: &JacobianField, flow: &FlowField, params: &RidgeParams, mut f: impl FnMut(&[f64], [f64; 2])) {
    for row in 0..field.height {
        for col in 0..field.width {
            let Some(j) = field.at(row, col) else { continue };
            let valid = flow.is_valid(row, col);
            if params.use_mask && !valid {
                continue;
            }
            let v = if valid { flow.get(row, col) } else { [0.0, 0.0] };
            f(j, [v[0] as f64, v[1] as f64]);
        }
    }
}

/// Accumulates `(Σ JᵀJ, Σ Jᵀv)` over `items` with a fixed binary tree.
fn tree_normal_equations(items: &[(&[f64], [f64; 2])], n: usize) -> (Vec<f64>, Vec<f64>) {
    match items.len() {
        0 => (vec![0.0; n * n], vec![0.0; n]),
        1 => {
            let (j, v) = items[0];
            let (r0, r1) = j.split_at(n);
            let mut m = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    m[a * n + b] = r0[a] * r0[b] + r1[a] * r1[b];
                }
            }
            let rhs = (0..n).map(|a| r0[a] * v[0] + r1[a] * v[1]).collect();
            (m, rhs)
        }
        len => {
            let (left, right) = items.split_at(len / 2);
            let (mut m, mut b) = tree_normal_equations(left, n);
            let (m2, b2) = tree_normal_equations(right, n);
            m.iter_mut().zip(&m2).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(&b2).for_each(|(x, y)| *x += y);
            (m, b)
        }
    }
}

/// Pooled ridge least squares over all (valid) pixels of `field`.
pub fn aggregate_invert(field: &JacobianField, flow: &FlowField, params: &RidgeParams) -> Result<RidgeSolution> {
    if field.height != flow.height || field.width != flow.width {
        return Err(Error::Shape(format!(
            "field is {}x{}, flow is {}x{}",
            field.height, field.width, flow.height, flow.width
        )));
    }
    if !(params.lambda >= 0.0) || !params.lambda.is_finite() {
        return Err(Error::Domain(format!("lambda {} must be >= 0", params.lambda)));
    }
    let n = field.n;
    let mut items: Vec<(&[f64], [f64; 2])> = Vec::new();
    for row in 0..field.height {
        for col in 0..field.width {
            let Some(j) = field.at(row, col) else { continue };
            let valid = flow.is_valid(row, col);
            if params.use_mask && !valid {
                continue;
            }
            let v = if valid { flow.get(row, col) } else { [0.0, 0.0] };
            let v = [v[0] as f64, v[1] as f64];
            if !v.iter().all(|x| x.is_finite()) || !j.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("pixel ({row}, {col})")));
            }
            items.push((j, v));
        }
    }
    let (mut normal, mut rhs) = tree_normal_equations(&items, n);
    if params.weight_by_validity && !items.is_empty() {
        let w = 1.0 / items.len() as f64;
        normal.iter_mut().for_each(|x| *x *= w);
        rhs.iter_mut().for_each(|x| *x *= w);
    }
    let trace: f64 = (0..n).map(|i| normal[i * n + i]).sum();
    let ill_conditioned = trace == 0.0 || linalg::min_eigenvalue(&normal, n) < 1e-10 * trace;
    if ill_conditioned {
        log::warn!("aggregate_invert: normal matrix is ill-conditioned (trace {trace:e}, {} pixels)", items.len());
    }
    for i in 0..n {
        normal[i * n + i] += params.lambda;
    }
    linalg::cholesky_in_place(&mut normal, n)?;
    let delta_a = linalg::cholesky_solve(&normal, n, &rhs);

    let mut residual_sq = 0.0;
    let mut flow_sq = 0.0;
    for (j, v) in &items {
        let (r0, r1) = j.split_at(n);
        let e = [linalg::dot(r0, &delta_a) - v[0], linalg::dot(r1, &delta_a) - v[1]];
        residual_sq += e[0] * e[0] + e[1] * e[1];
        flow_sq += v[0] * v[0] + v[1] * v[1];
    }
    Ok(RidgeSolution { delta_a, pixels: items.len(), residual_sq, flow_sq, ill_conditioned })
}

/// Per-pair output of [`translate_chunk`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecovery {
    /// Recovered action after the per-joint clamp.
    pub action: Action,
    /// Unclamped solution.
    pub raw: Vec<f64>,
    pub relative_residual: f64,
    pub ill_conditioned: bool,
}

/// Converts a committed visual prefix `frames[0..=K]` into `K` actions, one
/// pooled solve per adjacent pair. `frames[0]` is the current observation.
///
/// `flow_fn(k, a, b)` measures the flow from frame `k` to `k+1`;
/// `field_fn(k, a, flow)` evaluates the Jacobian field on frame `k` (the
/// flow is passed so callers can restrict evaluation to valid pixels).
pub fn translate_chunk<FL, FI>(
    frames: &[Image],
    mut field_fn: FI,
    mut flow_fn: FL,
    params: &RidgeParams,
    delta_max: f64,
) -> Result<Vec<PairRecovery>>
where
    FL: FnMut(usize, &Image, &Image) -> Result<FlowField>,
    FI: FnMut(usize, &Image, &FlowField) -> Result<JacobianField>,
{
    if frames.len() < 2 {
        return Err(Error::Domain("a chunk needs at least two frames".into()));
    }
    if frames.iter().any(|f| !f.same_shape(&frames[0])) {
        return Err(Error::Shape("chunk frames differ in shape".into()));
    }
    let mut out = Vec::with_capacity(frames.len() - 1);
    for k in 0..frames.len() - 1 {
        let flow = flow_fn(k, &frames[k], &frames[k + 1])?;
        let field = field_fn(k, &frames[k], &flow)?;
        let sol = aggregate_invert(&field, &flow, params)?;
        let raw = sol.delta_a.clone();
        out.push(PairRecovery {
            action: Action::new(raw.iter().map(|v| v.clamp(-delta_max, delta_max)).collect()),
            raw,
            relative_residual: sol.relative_residual(),
            ill_conditioned: sol.ill_conditioned,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{analytic_field, Pixel};
    use crate::flow::{first_order_flow, oracle_flow};
    use crate::kinematics::{CameraModel, ChainConfig, ChainState, ChainTaper};
    use crate::render::{render, RenderStyle};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, n: usize) -> Mat2xN {
        let r0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Mat2xN::from_rows(&r0, &r1)
    }

    /// `(JᵀJ + λI)⁻¹Jᵀ` via a general n×n solve.
    fn left_form(j: &Mat2xN, lambda: f64) -> DMatrix<f64> {
        let jm = DMatrix::from_row_slice(2, j.cols(), j.as_slice());
        let a = jm.transpose() * &jm + DMatrix::identity(j.cols(), j.cols()) * lambda;
        a.lu().solve(&jm.transpose()).unwrap()
    }

    #[test]
    fn identity_pinv() {
        let p = ridge_pinv(&Mat2xN::from_rows(&[1.0, 0.0], &[0.0, 1.0]), 0.0).unwrap();
        assert_eq!(p.rows, vec![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn singular_without_ridge_errors() {
        let j = Mat2xN::from_rows(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        assert!(matches!(ridge_pinv(&j, 0.0), Err(Error::Singular(_))));
        assert!(ridge_pinv(&j, 1e-3).is_ok());
    }

    #[test]
    fn push_through_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(1..9);
            let j = random_mat(&mut rng, n);
            let right = ridge_pinv(&j, 1e-3).unwrap();
            let left = left_form(&j, 1e-3);
            for r in 0..n {
                for c in 0..2 {
                    assert!((right.get(r, c) - left[(r, c)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn recovered_norm_shrinks_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = random_mat(&mut rng, 5);
        let v = [0.7, -1.3];
        let mut last = f64::INFINITY;
        for lambda in [1e-6, 1e-4, 1e-2, 1e-1, 1.0, 10.0, 100.0] {
            let x = ridge_pinv(&j, lambda).unwrap().mul_vec(v);
            let norm = linalg::dot(&x, &x).sqrt();
            assert!(norm <= last + 1e-15);
            last = norm;
        }
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, density: f64) -> JacobianField {
        let mut f = JacobianField::new(h, w, n);
        for row in 0..h {
            for col in 0..w {
                if rng.random::<f64>() < density {
                    f.set(Pixel::new(row, col), &random_mat(rng, n)).unwrap();
                }
            }
        }
        f
    }

    fn flow_from(field: &JacobianField, delta: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> FlowField {
        let mut flow = FlowField::zeros(field.height, field.width);
        for (p, v) in field.apply(delta) {
            let i = p.row * field.width + p.col;
            flow.vectors[2 * i] = (v[0] + noise * rng.random_range(-1.0..1.0)) as f32;
            flow.vectors[2 * i + 1] = (v[1] + noise * rng.random_range(-1.0..1.0)) as f32;
            flow.valid[i] = true;
        }
        flow
    }

    #[test]
    fn zero_flow_gives_zero_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = random_field(&mut rng, 4, 16, 16, 0.3);
        let mut flow = FlowField::zeros(16, 16);
        flow.valid.iter_mut().for_each(|v| *v = true);
        let sol = aggregate_invert(&field, &flow, &RidgeParams::default()).unwrap();
        assert!(sol.delta_a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn consistent_system_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = rng.random_range(2..10);
            let field = random_field(&mut rng, n, 16, 16, 0.4);
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            // Build the flow in f64 and store it losslessly by using values on a coarse grid.
            let truth: Vec<f64> = truth.iter().map(|v| (v * 1024.0).round() / 1024.0).collect();
            let mut flow = FlowField::zeros(16, 16);
            let mut exact = field.clone();
            for row in 0..16 {
                for col in 0..16 {
                    if let Some(j) = field.at(row, col) {
                        // Quantize the Jacobian so J·δa is exact in f32.
                        let q: Vec<f64> = j.iter().map(|v| (v * 64.0).round() / 64.0).collect();
                        let m = Mat2xN::from_slice(n, &q);
                        exact.set(Pixel::new(row, col), &m).unwrap();
                        let v = m.mul_vec(&truth);
                        let i = row * 16 + col;
                        flow.vectors[2 * i] = v[0] as f32;
                        flow.vectors[2 * i + 1] = v[1] as f32;
                        flow.valid[i] = true;
                    }
                }
            }
            let sol = aggregate_invert(&exact, &flow, &RidgeParams::new(1e-10)).unwrap();
            let err: f64 = sol.delta_a.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = linalg::dot(&truth, &truth).sqrt();
            assert!(err / norm < 1e-8, "relative error {}", err / norm);
        }
    }

    #[test]
    fn matches_stacked_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.random_range(1..12);
            let field = random_field(&mut rng, n, 12, 12, 0.5);
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            let flow = flow_from(&field, &truth, 0.05, &mut rng);
            let lambda = 1e-3;
            let sol = aggregate_invert(&field, &flow, &RidgeParams::new(lambda)).unwrap();
            // Stack every pixel's two rows, append sqrt(λ)·I, and solve by SVD.
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for row in 0..12 {
                for col in 0..12 {
                    if let (Some(j), true) = (field.at(row, col), flow.is_valid(row, col)) {
                        let v = flow.get(row, col);
                        rows.extend_from_slice(&j[..n]);
                        rhs.push(v[0] as f64);
                        rows.extend_from_slice(&j[n..]);
                        rhs.push(v[1] as f64);
                    }
                }
            }
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = lambda.sqrt();
                rows.extend(e);
                rhs.push(0.0);
            }
            let a = DMatrix::from_row_slice(rhs.len(), n, &rows);
            let x = a.svd(true, true).solve(&DVector::from_vec(rhs), 1e-14).unwrap();
            let diff: f64 = (0..n).map(|k| (x[k] - sol.delta_a[k]).powi(2)).sum::<f64>().sqrt();
            assert!(diff / x.norm() < 1e-8, "relative diff {}", diff / x.norm());
        }
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let field = random_field(&mut rng, 5, 10, 10, 0.6);
        let flow = flow_from(&field, &[0.05, -0.02, 0.01, 0.08, -0.1], 0.1, &mut rng);
        let mut pixels = Vec::new();
        let mut mats = Vec::new();
        for row in 0..10 {
            for col in 0..10 {
                if let Some(m) = field.matrix(row, col) {
                    pixels.push(Pixel::new(row, col));
                    mats.push(m);
                }
            }
        }
        let mut order: Vec<usize> = (0..pixels.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled = JacobianField::from_pixels(
            10,
            10,
            5,
            &order.iter().map(|&i| pixels[i]).collect::<Vec<_>>(),
            &order.iter().map(|&i| mats[i].clone()).collect::<Vec<_>>(),
        )
        .unwrap();
        let a = aggregate_invert(&field, &flow, &RidgeParams::default()).unwrap();
        let b = aggregate_invert(&shuffled, &flow, &RidgeParams::default()).unwrap();
        assert_eq!(a.delta_a, b.delta_a);
    }

    #[test]
    fn solution_is_a_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let field = random_field(&mut rng, 6, 12, 12, 0.5);
        let flow = flow_from(&field, &[0.1, 0.0, -0.05, 0.02, 0.07, -0.03], 0.2, &mut rng);
        let params = RidgeParams::new(1e-2);
        let sol = aggregate_invert(&field, &flow, &params).unwrap();
        let best = RidgeSolution::objective(&field, &flow, &params, &sol.delta_a);
        for _ in 0..50 {
            let dir: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = linalg::dot(&dir, &dir).sqrt();
            let moved: Vec<f64> = sol.delta_a.iter().zip(&dir).map(|(a, d)| a + 1e-4 * d / norm).collect();
            assert!(RidgeSolution::objective(&field, &flow, &params, &moved) >= best);
        }
    }

    #[test]
    fn linear_in_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let field = random_field(&mut rng, 3, 8, 8, 0.7);
        let flow = flow_from(&field, &[0.1, 0.2, -0.1], 0.1, &mut rng);
        let mut doubled = flow.clone();
        doubled.vectors.iter_mut().for_each(|v| *v *= 2.0);
        let a = aggregate_invert(&field, &flow, &RidgeParams::default()).unwrap();
        let b = aggregate_invert(&field, &doubled, &RidgeParams::default()).unwrap();
        for (x, y) in a.delta_a.iter().zip(&b.delta_a) {
            assert!((2.0 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let field = JacobianField::new(8, 8, 2);
        assert!(matches!(aggregate_invert(&field, &FlowField::zeros(8, 9), &RidgeParams::default()), Err(Error::Shape(_))));
        let mut f = JacobianField::new(4, 4, 1);
        f.set(Pixel::new(0, 0), &Mat2xN::from_rows(&[f64::NAN], &[1.0])).unwrap();
        let mut flow = FlowField::zeros(4, 4);
        flow.valid[0] = true;
        assert!(matches!(aggregate_invert(&f, &flow, &RidgeParams::default()), Err(Error::NonFinite(_))));
        // No pixels and no ridge: singular.
        assert!(aggregate_invert(&JacobianField::new(4, 4, 2), &FlowField::zeros(4, 4), &RidgeParams::new(0.0)).is_err());
    }

    #[test]
    fn hidden_joint_component_vanishes_with_lambda() {
        // Joint 2 moves no pixel: its column is tiny everywhere.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut field = random_field(&mut rng, 3, 10, 10, 0.5);
        for row in 0..10 {
            for col in 0..10 {
                if let Some(mut m) = field.matrix(row, col) {
                    m.set(0, 2, 1e-4 * m.get(0, 2));
                    m.set(1, 2, 1e-4 * m.get(1, 2));
                    field.set(Pixel::new(row, col), &m).unwrap();
                }
            }
        }
        let flow = flow_from(&field, &[0.05, -0.05, 0.0], 0.05, &mut rng);
        let mut last = f64::INFINITY;
        for lambda in [1e-8, 1e-6, 1e-4, 1e-2, 1.0] {
            let x = aggregate_invert(&field, &flow, &RidgeParams::new(lambda)).unwrap().delta_a[2].abs();
            assert!(x <= last * (1.0 + 1e-9));
            last = x;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn chunk_of_identical_frames_is_zero() {
        let cfg = ChainConfig::tapered(2, &ChainTaper::default()).unwrap();
        let cam = CameraModel::fit(&cfg, 32, 32, 32.0).unwrap();
        let style = RenderStyle::default_for(2);
        let q = ChainState::new(vec![0.3, 0.4]);
        let img = render(&cfg, &cam, &style, &q);
        let out = translate_chunk(
            &[img.clone(), img],
            |_, _, _| Ok(analytic_field(&cfg, &cam, &q)),
            |_, _, _| Ok(oracle_flow(&cfg, &cam, &style, &q, &Action::zeros(2)).flow),
            &RidgeParams::default(),
            0.12,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].action.delta_a.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn chunk_recovers_synthetic_trajectory() {
        let cfg = ChainConfig::tapered(3, &ChainTaper::default()).unwrap();
        let cam = CameraModel::fit(&cfg, 64, 64, 32.0).unwrap();
        let style = RenderStyle::default_for(3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base: Vec<Action> =
            (0..4).map(|_| Action::new((0..3).map(|_| rng.random_range(-0.12..0.12)).collect())).collect();
        // Linearization error is second order in the step, so the recovery
        // error must shrink at least ~4x when every step is halved.
        let mut errs = Vec::new();
        for scale in [1.0, 0.5, 0.25] {
            let actions: Vec<Action> = base.iter().map(|a| a.scaled(scale)).collect();
            let mut states = vec![ChainState::new(vec![0.4, -0.6, 0.8])];
            for a in &actions {
                states.push(states.last().unwrap().advanced(a));
            }
            let frames: Vec<Image> = states.iter().map(|s| render(&cfg, &cam, &style, s)).collect();
            let out = translate_chunk(
                &frames,
                |k, _, _| Ok(analytic_field(&cfg, &cam, &states[k])),
                |k, _, _| Ok(oracle_flow(&cfg, &cam, &style, &states[k], &actions[k]).flow),
                &RidgeParams::new(1e-8),
                0.12,
            )
            .unwrap();
            let mut worst = 0.0f64;
            for (rec, truth) in out.iter().zip(&actions) {
                for (a, b) in rec.action.delta_a.iter().zip(&truth.delta_a) {
                    worst = worst.max((a - b).abs());
                }
            }
            errs.push(worst);
        }
        assert!(errs[0] < 0.04, "{errs:?}");
        assert!(errs[2] < 5e-3, "{errs:?}");
        assert!(errs[1] < errs[0] / 2.5 && errs[2] < errs[1] / 2.5, "{errs:?}");
        // First-order flow is exactly linear in the action.
        let q = ChainState::new(vec![0.4, -0.6, 0.8]);
        let flow = first_order_flow(&cfg, &cam, &q, &base[0]);
        let sol = aggregate_invert(&analytic_field(&cfg, &cam, &q), &flow, &RidgeParams::new(1e-8)).unwrap();
        for (a, b) in sol.delta_a.iter().zip(&base[0].delta_a) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
