//! The Jacobian-field model: a per-pixel MLP whose head emits a 2×n matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureSpec, PreparedImage};
use super::mlp::{Activation, ContextRows, Stack};
use crate::dataset::TransitionRecord;
use crate::error::{Error, Result};
use crate::field::{JacobianField, Pixel};
use crate::linalg::Mat2xN;
use crate::render::Image;

/// Rows evaluated per forward pass when filling a whole field.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModelSpec {
    pub n_joints: usize,
    pub features: FeatureSpec,
    pub hidden: Vec<usize>,
    /// Multiplies the raw head output; pixels per world unit keeps the raw
    /// output near unit scale.
    pub output_scale: f64,
}

impl FieldModelSpec {
    pub fn new(n_joints: usize, features: FeatureSpec, output_scale: f64) -> Self {
        Self { n_joints, features, hidden: vec![128, 128], output_scale }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.n_joints == 0 {
            return Err(Error::InvalidConfig("n_joints must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad hidden widths {:?}", self.hidden)));
        }
        if !(self.output_scale > 0.0) || !self.output_scale.is_finite() {
            return Err(Error::InvalidConfig(format!("output_scale {} must be > 0", self.output_scale)));
        }
        Ok(())
    }

    pub(crate) fn trunk(&self) -> Stack {
        let mut layers: Vec<(usize, Activation)> = self.hidden.iter().map(|h| (*h, Activation::Tanh)).collect();
        layers.push((2 * self.n_joints, Activation::Identity));
        Stack::new(0, self.features.pixel_dim(), &layers, self.features.context_dim())
    }

    pub fn param_count(&self) -> usize {
        self.trunk().param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchFieldModel {
    pub spec: FieldModelSpec,
    pub params: Vec<f64>,
    trunk: Stack,
}

/// Loss hyperparameters shared by training and gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JidmLossConfig {
    pub w_a: f64,
    pub charbonnier_eps: f64,
    pub lambda: f64,
}

impl Default for JidmLossConfig {
    fn default() -> Self {
        Self { w_a: 0.3, charbonnier_eps: 1e-3, lambda: 1e-4 }
    }
}

/// Pixels drawn from one transition; the target at each is its flow vector
/// (zero where the flow is invalid).
#[derive(Debug, Clone)]
pub struct JidmSample<'a> {
    pub record: &'a TransitionRecord,
    pub pixels: Vec<Pixel>,
}

/// Mean forward and inverse terms of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JidmTerms {
    pub forward: f64,
    pub inverse: f64,
}

impl PatchFieldModel {
    /// Hidden layers Glorot-initialized from `seed`, head zeroed.
    pub fn new(spec: FieldModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let trunk = spec.trunk();
        let mut params = vec![0.0; trunk.end()];
        trunk.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed), true);
        Ok(Self { spec, params, trunk })
    }

    pub fn from_params(spec: FieldModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let trunk = spec.trunk();
        if params.len() != trunk.end() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", trunk.end(), params.len())));
        }
        Ok(Self { spec, params, trunk })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn n_joints(&self) -> usize {
        self.spec.n_joints
    }

    fn context(&self, images: &[PreparedImage], row_record: Vec<usize>) -> Option<ContextRows> {
        (self.spec.features.context_grid > 0).then(|| ContextRows {
            features: images.iter().flat_map(|im| im.context().iter().copied()).collect(),
            records: images.len(),
            row_record,
        })
    }

    /// Field matrices at `pixels` of `image`.
    pub fn evaluate_field(&self, image: &Image, pixels: &[Pixel]) -> Result<Vec<Mat2xN>> {
        self.spec.features.check_image(image)?;
        for p in pixels {
            self.spec.features.check_pixel(*p)?;
        }
        let n = self.spec.n_joints;
        let s = self.spec.output_scale;
        let mut out = Vec::with_capacity(pixels.len());
        let prep = [self.spec.features.prepare(image)];
        for chunk in pixels.chunks(EVAL_CHUNK) {
            let x = self.spec.features.pixel_rows(&prep[0], chunk);
            let ctx = self.context(&prep, vec![0; chunk.len()]);
            let cache = self.trunk.forward(&self.params, &x, chunk.len(), ctx.as_ref());
            for row in cache.output().chunks(2 * n) {
                let data: Vec<f64> = row.iter().map(|v| v * s).collect();
                out.push(Mat2xN::from_slice(n, &data));
            }
        }
        Ok(out)
    }

    /// A field defined at `pixels` only.
    pub fn field_at(&self, image: &Image, pixels: &[Pixel]) -> Result<JacobianField> {
        let mats = self.evaluate_field(image, pixels)?;
        JacobianField::from_pixels(image.height, image.width, self.spec.n_joints, pixels, &mats)
    }

    /// Loss and exact gradient of the pixel-averaged objective
    /// `ρ(‖Jδa − v‖) + w_a‖δa − Jᵀ(JJᵀ + λI)⁻¹v‖²`.
    pub fn loss_jidm(&self, batch: &[JidmSample], cfg: &JidmLossConfig) -> Result<(f64, Vec<f64>)> {
        let (terms, grad) = self.loss_impl(batch, cfg, true)?;
        Ok((terms.forward + cfg.w_a * terms.inverse, grad))
    }

    pub fn loss_terms(&self, batch: &[JidmSample], cfg: &JidmLossConfig) -> Result<JidmTerms> {
        Ok(self.loss_impl(batch, cfg, false)?.0)
    }

    fn loss_impl(&self, batch: &[JidmSample], cfg: &JidmLossConfig, with_grad: bool) -> Result<(JidmTerms, Vec<f64>)> {
        let n = self.spec.n_joints;
        let fs = &self.spec.features;
        let d = fs.pixel_dim();
        let rows: usize = batch.iter().map(|b| b.pixels.len()).sum();
        if rows == 0 {
            return Err(Error::EmptySelection("batch has no pixels".into()));
        }
        let mut x = vec![0.0; rows * d];
        let mut row_record = Vec::with_capacity(rows);
        let mut prepared = Vec::with_capacity(batch.len());
        let mut r = 0;
        for (i, b) in batch.iter().enumerate() {
            fs.check_image(&b.record.o_t)?;
            if b.record.delta_a.len() != n {
                return Err(Error::Shape(format!("record has {} joints, model {}", b.record.delta_a.len(), n)));
            }
            let prep = fs.prepare(&b.record.o_t);
            for p in &b.pixels {
                fs.check_pixel(*p)?;
                fs.write_pixel(&prep, *p, &mut x[r * d..(r + 1) * d]);
                row_record.push(i);
                r += 1;
            }
            prepared.push(prep);
        }
        let ctx = self.context(&prepared, row_record);
        let cache = self.trunk.forward(&self.params, &x, rows, ctx.as_ref());
        let out = cache.output();

        let s = self.spec.output_scale;
        let eps2 = cfg.charbonnier_eps * cfg.charbonnier_eps;
        let lam = cfg.lambda;
        let mut d_out = if with_grad { vec![0.0; rows * 2 * n] } else { Vec::new() };
        let mut forward = 0.0;
        let mut inverse = 0.0;
        let mut j0 = vec![0.0; n];
        let mut j1 = vec![0.0; n];
        let mut a_hat = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut r = 0;
        for b in batch {
            let da = &b.record.delta_a;
            for p in &b.pixels {
                let o = &out[r * 2 * n..(r + 1) * 2 * n];
                for k in 0..n {
                    j0[k] = s * o[k];
                    j1[k] = s * o[n + k];
                }
                let v = if b.record.flow.is_valid(p.row, p.col) {
                    let f = b.record.flow.get(p.row, p.col);
                    [f[0] as f64, f[1] as f64]
                } else {
                    [0.0, 0.0]
                };
                let e = [dot(&j0, da) - v[0], dot(&j1, da) - v[1]];
                let rho = (e[0] * e[0] + e[1] * e[1] + eps2).sqrt();
                forward += rho;

                let a = dot(&j0, &j0) + lam;
                let bb = dot(&j0, &j1);
                let c = dot(&j1, &j1) + lam;
                let det = a * c - bb * bb;
                let inv = [c / det, -bb / det, a / det];
                let y = [inv[0] * v[0] + inv[1] * v[1], inv[1] * v[0] + inv[2] * v[1]];
                let mut rr = 0.0;
                for k in 0..n {
                    a_hat[k] = j0[k] * y[0] + j1[k] * y[1];
                    let res = da[k] - a_hat[k];
                    rr += res * res;
                    g[k] = 2.0 * res;
                }
                inverse += rr;

                if with_grad {
                    let jg = [dot(&j0, &g), dot(&j1, &g)];
                    let w = [inv[0] * jg[0] + inv[1] * jg[1], inv[1] * jg[0] + inv[2] * jg[1]];
                    let dst = &mut d_out[r * 2 * n..(r + 1) * 2 * n];
                    let scale = s / rows as f64;
                    for k in 0..n {
                        let jtw = j0[k] * w[0] + j1[k] * w[1];
                        let inv0 = -y[0] * g[k] + w[0] * a_hat[k] + y[0] * jtw;
                        let inv1 = -y[1] * g[k] + w[1] * a_hat[k] + y[1] * jtw;
                        dst[k] = scale * (e[0] / rho * da[k] + cfg.w_a * inv0);
                        dst[n + k] = scale * (e[1] / rho * da[k] + cfg.w_a * inv1);
                    }
                }
                r += 1;
            }
        }
        let terms = JidmTerms { forward: forward / rows as f64, inverse: inverse / rows as f64 };
        let mut grad = Vec::new();
        if with_grad {
            grad = vec![0.0; self.params.len()];
            self.trunk.backward(&self.params, &x, ctx.as_ref(), &cache, &d_out, &mut grad, false);
        }
        Ok((terms, grad))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}


#[cfg(test)]
mod tests {
    use super::tests_support::tiny_dataset;
    use super::*;
    use rand::Rng;

    fn tiny_spec(n: usize, context: usize) -> FieldModelSpec {
        let mut f = FeatureSpec::new(24, 24, 1);
        f.patch_size = 3;
        f.pyramid_levels = 2;
        f.context_grid = context;
        let mut s = FieldModelSpec::new(n, f, 4.0);
        s.hidden = vec![7, 5];
        s
    }

    fn perturbed(spec: FieldModelSpec, seed: u64) -> PatchFieldModel {
        let mut m = PatchFieldModel::new(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        m.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
        m
    }

    fn samples(ds: &crate::dataset::Dataset) -> Vec<JidmSample<'_>> {
        ds.records
            .iter()
            .take(3)
            .map(|r| {
                let mut px: Vec<Pixel> = (0..24 * 24)
                    .filter(|i| r.flow.valid[*i])
                    .map(|i| Pixel::new(i / 24, i % 24))
                    .take(6)
                    .collect();
                px.push(Pixel::new(0, 0));
                JidmSample { record: r, pixels: px }
            })
            .collect()
    }

    #[test]
    fn zero_head_gives_zero_field() {
        let m = PatchFieldModel::new(tiny_spec(3, 4), 1).unwrap();
        let img = Image::filled(24, 24, 1, 0.4);
        let f = m.evaluate_field(&img, &[Pixel::new(3, 4), Pixel::new(20, 1)]).unwrap();
        assert!(f.iter().all(|j| j.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn batched_equals_single() {
        let m = perturbed(tiny_spec(4, 4), 2);
        let ds = tiny_dataset(4);
        let img = &ds.records[0].o_t;
        let pixels: Vec<Pixel> = (0..40).map(|i| Pixel::new(i % 24, (i * 7) % 24)).collect();
        let all = m.evaluate_field(img, &pixels).unwrap();
        for (p, j) in pixels.iter().zip(&all) {
            assert_eq!(&m.evaluate_field(img, &[*p]).unwrap()[0], j);
        }
    }

    #[test]
    fn out_of_bounds_pixel_errors() {
        let m = PatchFieldModel::new(tiny_spec(2, 0), 1).unwrap();
        let img = Image::filled(24, 24, 1, 0.0);
        assert!(m.evaluate_field(&img, &[Pixel::new(0, 24)]).is_err());
        assert!(m.evaluate_field(&Image::filled(20, 24, 1, 0.0), &[Pixel::new(0, 0)]).is_err());
    }

    #[test]
    fn field_is_linear_in_action() {
        let m = perturbed(tiny_spec(3, 0), 3);
        let ds = tiny_dataset(3);
        let px = vec![Pixel::new(12, 12), Pixel::new(5, 9)];
        let field = m.field_at(&ds.records[0].o_t, &px).unwrap();
        let a = [0.1, -0.2, 0.05];
        let b = [-0.03, 0.07, 0.2];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + y).collect();
        let (fa, fb, fs) = (field.apply(&a), field.apply(&b), field.apply(&sum));
        for i in 0..fa.len() {
            for c in 0..2 {
                let want = 2.0 * fa[i].1[c] + fb[i].1[c];
                assert!((fs[i].1[c] - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn w_a_zero_is_pure_charbonnier() {
        let m = perturbed(tiny_spec(3, 4), 4);
        let ds = tiny_dataset(3);
        let batch = samples(&ds);
        let cfg = JidmLossConfig { w_a: 0.0, ..Default::default() };
        let (loss, _) = m.loss_jidm(&batch, &cfg).unwrap();
        let mut want = 0.0;
        let mut count = 0;
        for b in &batch {
            let js = m.evaluate_field(&b.record.o_t, &b.pixels).unwrap();
            for (p, j) in b.pixels.iter().zip(js) {
                let pred = j.mul_vec(&b.record.delta_a);
                let v = if b.record.flow.is_valid(p.row, p.col) { b.record.flow.get(p.row, p.col) } else { [0.0; 2] };
                let e0 = pred[0] - v[0] as f64;
                let e1 = pred[1] - v[1] as f64;
                want += (e0 * e0 + e1 * e1 + 1e-6).sqrt();
                count += 1;
            }
        }
        assert!((loss - want / count as f64).abs() < 1e-12);
    }

    #[test]
    fn consistent_pixels_cost_epsilon() {
        // Zero field with zero-flow (background) targets: every residual is 0.
        let m = PatchFieldModel::new(tiny_spec(2, 0), 1).unwrap();
        let ds = tiny_dataset(2);
        let r = &ds.records[0];
        let bg: Vec<Pixel> = (0..24 * 24).filter(|i| !r.flow.valid[*i]).map(|i| Pixel::new(i / 24, i % 24)).take(5).collect();
        let cfg = JidmLossConfig::default();
        let terms = m.loss_terms(&[JidmSample { record: r, pixels: bg }], &cfg).unwrap();
        assert_eq!(terms.forward, cfg.charbonnier_eps);
    }

    fn check_gradient(spec: FieldModelSpec, cfg: JidmLossConfig, seed: u64) {
        let n = spec.n_joints;
        let m = perturbed(spec, seed);
        let ds = tiny_dataset(n);
        let batch = samples(&ds);
        let (_, grad) = m.loss_jidm(&batch, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let i = rng.random_range(0..m.params.len());
            let h = 1e-6 * (1.0 + m.params[i].abs());
            let mut up = m.clone();
            up.params[i] += h;
            let mut down = m.clone();
            down.params[i] -= h;
            let fd = (up.loss_jidm(&batch, &cfg).unwrap().0 - down.loss_jidm(&batch, &cfg).unwrap().0) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(tiny_spec(3, 4), JidmLossConfig::default(), 10);
        check_gradient(tiny_spec(5, 0), JidmLossConfig::default(), 11);
    }

    #[test]
    fn inverse_term_gradient_matches_finite_differences() {
        // Forward term off so only the pseudoinverse path is exercised.
        check_gradient(tiny_spec(4, 4), JidmLossConfig { w_a: 1.0, charbonnier_eps: 1e-3, lambda: 1e-2 }, 12);
        let only_inverse = JidmLossConfig { w_a: 1e6, charbonnier_eps: 1e-3, lambda: 1e-2 };
        check_gradient(tiny_spec(2, 0), only_inverse, 13);
    }
}
