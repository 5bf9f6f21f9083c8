//! Direct action regressors sharing the field model's per-pixel trunk.
//!
//! Trunk features at a fixed grid of pixels pass through a per-pixel tanh
//! fusion layer, are mean-pooled per record, and a linear readout gives the
//! action. The fusion width is chosen so the parameter count matches a given
//! field model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

use super::features::{FeatureSpec, PreparedImage};
use super::jidm::FieldModelSpec;
use super::mlp::{Activation, ContextRows, Stack};
use crate::dataset::TransitionRecord;
use crate::error::{Error, Result};
use crate::field::Pixel;
use crate::flow::FlowField;
use crate::render::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectVariant {
    /// Patches from both frames through a shared trunk (UniPi*).
    FramePair,
    /// Patch from the first frame plus the mean valid flow over the pooling
    /// cell around the pixel.
    FlowConditioned,
}

impl fmt::Display for DirectVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectVariant::FramePair => "unipi",
            DirectVariant::FlowConditioned => "didm-flow",
        })
    }
}

impl FromStr for DirectVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unipi" => Ok(DirectVariant::FramePair),
            "didm-flow" => Ok(DirectVariant::FlowConditioned),
            _ => Err(Error::InvalidConfig(format!("unknown direct variant {s:?}"))),
        }
    }
}

/// Brings typical flow inputs to order one.
const FLOW_GAIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectSpec {
    pub variant: DirectVariant,
    pub n_joints: usize,
    pub features: FeatureSpec,
    pub hidden: Vec<usize>,
    pub fusion_width: usize,
    /// Spacing of the pooling grid in pixels.
    pub pool_stride: usize,
    /// Output multiplier, radians.
    pub delta_max: f64,
    /// Multiplier applied to flow inputs.
    pub flow_scale: f64,
}

impl DirectSpec {
    /// Same trunk as `field`, fusion width picked to minimize the parameter
    /// count difference.
    pub fn matched(variant: DirectVariant, field: &FieldModelSpec, pool_stride: usize, delta_max: f64) -> Self {
        let mut spec = Self {
            variant,
            n_joints: field.n_joints,
            features: field.features,
            hidden: field.hidden.clone(),
            fusion_width: 1,
            pool_stride,
            delta_max,
            flow_scale: FLOW_GAIN / (delta_max * field.output_scale),
        };
        let target = field.param_count() as i64;
        let mut best = (i64::MAX, 1);
        for w in 1..=4 * (field.n_joints * 2 + 8) {
            spec.fusion_width = w;
            let diff = (spec.param_count() as i64 - target).abs();
            if diff < best.0 {
                best = (diff, w);
            }
        }
        spec.fusion_width = best.1;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.n_joints == 0 || self.fusion_width == 0 || self.pool_stride == 0 {
            return Err(Error::InvalidConfig("n_joints, fusion_width and pool_stride must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad hidden widths {:?}", self.hidden)));
        }
        if !(self.delta_max > 0.0) || !(self.flow_scale > 0.0) || !self.flow_scale.is_finite() {
            return Err(Error::InvalidConfig("delta_max and flow_scale must be > 0".into()));
        }
        Ok(())
    }

    fn trunk_inputs(&self) -> usize {
        self.features.pixel_dim() + if self.variant == DirectVariant::FlowConditioned { 2 } else { 0 }
    }

    fn trunk_width(&self) -> usize {
        *self.hidden.last().expect("hidden widths")
    }

    fn stacks(&self) -> (Stack, Stack, Stack) {
        let layers: Vec<(usize, Activation)> = self.hidden.iter().map(|h| (*h, Activation::Tanh)).collect();
        let trunk = Stack::new(0, self.trunk_inputs(), &layers, self.features.context_dim());
        let fusion_in = match self.variant {
            DirectVariant::FramePair => 2 * self.trunk_width(),
            DirectVariant::FlowConditioned => self.trunk_width(),
        };
        let fusion = Stack::new(trunk.end(), fusion_in, &[(self.fusion_width, Activation::Tanh)], 0);
        let readout = Stack::new(fusion.end(), self.fusion_width, &[(self.n_joints, Activation::Identity)], 0);
        (trunk, fusion, readout)
    }

    pub fn param_count(&self) -> usize {
        self.stacks().2.end()
    }

    /// Pixel centers of the pooling grid.
    pub fn pool_pixels(&self) -> Vec<Pixel> {
        let s = self.pool_stride;
        let mut out = Vec::new();
        let mut row = s / 2;
        while row < self.features.height {
            let mut col = s / 2;
            while col < self.features.width {
                out.push(Pixel::new(row, col));
                col += s;
            }
            row += s;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectIdm {
    pub spec: DirectSpec,
    pub params: Vec<f64>,
    trunk: Stack,
    fusion: Stack,
    readout: Stack,
    grid: Vec<Pixel>,
}

/// Inputs for one transition.
#[derive(Debug, Clone, Copy)]
pub struct DirectInput<'a> {
    pub o_t: &'a Image,
    pub o_next: &'a Image,
    pub flow: &'a FlowField,
}

impl<'a> From<&'a TransitionRecord> for DirectInput<'a> {
    fn from(r: &'a TransitionRecord) -> Self {
        Self { o_t: &r.o_t, o_next: &r.o_next, flow: &r.flow }
    }
}

struct Pass {
    trunk_in: Vec<Vec<f64>>,
    ctx: Vec<Option<ContextRows>>,
    trunk: Vec<super::mlp::StackCache>,
    fusion_in: Vec<f64>,
    fusion: super::mlp::StackCache,
    pooled: Vec<f64>,
    readout: super::mlp::StackCache,
}

impl DirectIdm {
    pub fn new(spec: DirectSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (trunk, fusion, readout) = spec.stacks();
        let mut params = vec![0.0; readout.end()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        trunk.init(&mut params, &mut rng, false);
        fusion.init(&mut params, &mut rng, false);
        readout.init(&mut params, &mut rng, false);
        let grid = spec.pool_pixels();
        Ok(Self { spec, params, trunk, fusion, readout, grid })
    }

    pub fn from_params(spec: DirectSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let (trunk, fusion, readout) = spec.stacks();
        if params.len() != readout.end() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", readout.end(), params.len())));
        }
        let grid = spec.pool_pixels();
        Ok(Self { spec, params, trunk, fusion, readout, grid })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn trunk_rows(&self, image: &PreparedImage, flow: Option<&FlowField>) -> Vec<f64> {
        let fs = &self.spec.features;
        let d = self.spec.trunk_inputs();
        let pd = fs.pixel_dim();
        let mut x = vec![0.0; self.grid.len() * d];
        for (i, p) in self.grid.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            fs.write_pixel(image, *p, &mut row[..pd]);
            if let Some(f) = flow {
                let s = self.spec.pool_stride;
                let (r0, c0) = (p.row - s / 2, p.col - s / 2);
                let (mut sum, mut count) = ([0.0; 2], 0usize);
                for r in r0..(r0 + s).min(f.height) {
                    for c in c0..(c0 + s).min(f.width) {
                        if f.is_valid(r, c) {
                            let v = f.get(r, c);
                            sum[0] += v[0] as f64;
                            sum[1] += v[1] as f64;
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    row[pd] = sum[0] / count as f64 * self.spec.flow_scale;
                    row[pd + 1] = sum[1] / count as f64 * self.spec.flow_scale;
                }
            }
        }
        x
    }

    fn forward(&self, inputs: &[DirectInput]) -> Result<Pass> {
        let fs = &self.spec.features;
        for inp in inputs {
            fs.check_image(inp.o_t)?;
            fs.check_image(inp.o_next)?;
            if inp.flow.height != fs.height || inp.flow.width != fs.width {
                return Err(Error::Shape("flow does not match the model input".into()));
            }
        }
        let g = self.grid.len();
        let records = inputs.len();
        let rows = records * g;
        let row_record: Vec<usize> = (0..rows).map(|r| r / g).collect();
        let views: Vec<Vec<(&Image, Option<&FlowField>)>> = match self.spec.variant {
            DirectVariant::FramePair => vec![
                inputs.iter().map(|i| (i.o_t, None)).collect(),
                inputs.iter().map(|i| (i.o_next, None)).collect(),
            ],
            DirectVariant::FlowConditioned => vec![inputs.iter().map(|i| (i.o_t, Some(i.flow))).collect()],
        };
        let mut trunk_in = Vec::new();
        let mut ctx = Vec::new();
        let mut trunk = Vec::new();
        for view in &views {
            let prepared: Vec<PreparedImage> = view.iter().map(|(im, _)| fs.prepare(im)).collect();
            let x: Vec<f64> = view.iter().zip(&prepared).flat_map(|((_, fl), p)| self.trunk_rows(p, *fl)).collect();
            let c = (fs.context_grid > 0).then(|| ContextRows {
                features: prepared.iter().flat_map(|p| p.context().iter().copied()).collect(),
                records,
                row_record: row_record.clone(),
            });
            trunk.push(self.trunk.forward(&self.params, &x, rows, c.as_ref()));
            trunk_in.push(x);
            ctx.push(c);
        }
        let h = self.spec.trunk_width();
        let fusion_in: Vec<f64> = if trunk.len() == 1 {
            trunk[0].output().to_vec()
        } else {
            let mut v = Vec::with_capacity(rows * 2 * h);
            for r in 0..rows {
                v.extend_from_slice(&trunk[0].output()[r * h..(r + 1) * h]);
                v.extend_from_slice(&trunk[1].output()[r * h..(r + 1) * h]);
            }
            v
        };
        let fusion = self.fusion.forward(&self.params, &fusion_in, rows, None);
        let w = self.spec.fusion_width;
        let mut pooled = vec![0.0; records * w];
        for r in 0..rows {
            let dst = &mut pooled[(r / g) * w..(r / g + 1) * w];
            dst.iter_mut().zip(&fusion.output()[r * w..(r + 1) * w]).for_each(|(a, b)| *a += b);
        }
        pooled.iter_mut().for_each(|v| *v /= g as f64);
        let readout = self.readout.forward(&self.params, &pooled, records, None);
        Ok(Pass { trunk_in, ctx, trunk, fusion_in, fusion, pooled, readout })
    }

    /// Predicted actions, one per input.
    pub fn predict(&self, inputs: &[DirectInput]) -> Result<Vec<Vec<f64>>> {
        let pass = self.forward(inputs)?;
        Ok(pass
            .readout
            .output()
            .chunks(self.spec.n_joints)
            .map(|o| o.iter().map(|v| v * self.spec.delta_max).collect())
            .collect())
    }

    /// Mean over records and joints of the squared action error, with its
    /// exact gradient.
    pub fn loss_direct(&self, inputs: &[DirectInput], targets: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::Shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
        }
        let n = self.spec.n_joints;
        if targets.iter().any(|t| t.len() != n) {
            return Err(Error::Shape("target width does not match the model".into()));
        }
        let pass = self.forward(inputs)?;
        let dm = self.spec.delta_max;
        let count = (inputs.len() * n) as f64;
        let mut loss = 0.0;
        let mut d_read = vec![0.0; inputs.len() * n];
        for (i, t) in targets.iter().enumerate() {
            for k in 0..n {
                let e = dm * pass.readout.output()[i * n + k] - t[k];
                loss += e * e;
                d_read[i * n + k] = 2.0 * e * dm / count;
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        let d_pooled = self
            .readout
            .backward(&self.params, &pass.pooled, None, &pass.readout, &d_read, &mut grad, true)
            .expect("input gradient");
        let g = self.grid.len();
        let w = self.spec.fusion_width;
        let rows = inputs.len() * g;
        let mut d_fusion = vec![0.0; rows * w];
        for r in 0..rows {
            for k in 0..w {
                d_fusion[r * w + k] = d_pooled[(r / g) * w + k] / g as f64;
            }
        }
        let d_fin = self
            .fusion
            .backward(&self.params, &pass.fusion_in, None, &pass.fusion, &d_fusion, &mut grad, true)
            .expect("input gradient");
        let h = self.spec.trunk_width();
        let views = pass.trunk.len();
        for v in 0..views {
            let d_trunk: Vec<f64> = if views == 1 {
                d_fin.clone()
            } else {
                (0..rows).flat_map(|r| d_fin[r * 2 * h + v * h..r * 2 * h + (v + 1) * h].iter().copied()).collect()
            };
            self.trunk.backward(&self.params, &pass.trunk_in[v], pass.ctx[v].as_ref(), &pass.trunk[v], &d_trunk, &mut grad, false);
        }
        Ok((loss / count, grad))
    }
}
