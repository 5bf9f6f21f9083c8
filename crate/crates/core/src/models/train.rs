//! Seeded minibatch training with Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::direct::{DirectIdm, DirectInput};
use super::jidm::{JidmLossConfig, JidmSample, PatchFieldModel};
use super::Model;
use crate::dataset::{Dataset, TransitionRecord};
use crate::error::{Error, Result};
use crate::field::Pixel;
use crate::inversion::pixel_lambda;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub w_a: f64,
    pub charbonnier_eps: f64,
    /// Ridge weight in image-normalized units.
    pub lambda_train: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub records_per_step: usize,
    pub pixels_per_record: usize,
    pub foreground_fraction: f64,
    /// Use every foreground and background pixel instead of sampling.
    pub dense: bool,
    /// Cosine decay of the learning rate down to this fraction; 1 keeps it
    /// constant.
    pub final_lr_fraction: f64,
    /// Steps over which `w_a` ramps linearly from 0; 0 applies it at once.
    pub inverse_warmup_steps: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w_a: 0.3,
            charbonnier_eps: 1e-3,
            lambda_train: 1e-4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            steps: 20_000,
            records_per_step: 16,
            pixels_per_record: 512,
            foreground_fraction: 0.5,
            dense: false,
            final_lr_fraction: 1.0,
            inverse_warmup_steps: 0,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.w_a >= 0.0) {
            return bad("w_a must be >= 0");
        }
        if !(self.charbonnier_eps > 0.0) {
            return bad("charbonnier_eps must be > 0");
        }
        if !(self.lambda_train > 0.0) {
            return bad("lambda_train must be > 0");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("bad optimizer settings");
        }
        if self.records_per_step == 0 || self.pixels_per_record == 0 || self.log_every == 0 {
            return bad("records_per_step, pixels_per_record and log_every must be >= 1");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return bad("foreground_fraction must be in [0, 1]");
        }
        Ok(())
    }

    /// Loss settings for images of `height` × `width` pixels.
    pub fn loss_config(&self, height: usize, width: usize) -> JidmLossConfig {
        JidmLossConfig { w_a: self.w_a, charbonnier_eps: self.charbonnier_eps, lambda: pixel_lambda(self.lambda_train, height, width) }
    }

    /// Learning rate at `step`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.final_lr_fraction >= 1.0 || self.steps <= 1 {
            return self.learning_rate;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        let f = self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.learning_rate * f
    }

    /// Inverse-term weight at `step`.
    pub fn w_a_at(&self, step: usize) -> f64 {
        if step >= self.inverse_warmup_steps {
            self.w_a
        } else {
            self.w_a * step as f64 / self.inverse_warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Foreground (flow-valid) and background (off the chain) pixels of a record.
pub fn pixel_pools(record: &TransitionRecord) -> (Vec<Pixel>, Vec<Pixel>) {
    let w = record.flow.width;
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for i in 0..record.flow.valid.len() {
        let p = Pixel::new(i / w, i % w);
        if record.flow.valid[i] {
            fg.push(p);
        } else if !record.occluded[i] {
            bg.push(p);
        }
    }
    (fg, bg)
}

fn sample_pixels(fg: &[Pixel], bg: &[Pixel], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Pixel> {
    if cfg.dense {
        return fg.iter().chain(bg).copied().collect();
    }
    let total = cfg.pixels_per_record;
    let mut n_fg = (cfg.foreground_fraction * total as f64).round() as usize;
    if fg.is_empty() {
        n_fg = 0;
    } else if bg.is_empty() {
        n_fg = total;
    }
    let mut out = Vec::with_capacity(total);
    for _ in 0..n_fg {
        out.push(fg[rng.random_range(0..fg.len())]);
    }
    if !bg.is_empty() {
        for _ in n_fg..total {
            out.push(bg[rng.random_range(0..bg.len())]);
        }
    }
    out
}

fn check_finite(step: usize, loss: f64, params: &[f64]) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        let param_norm = params.iter().map(|p| p * p).sum::<f64>().sqrt();
        log::error!("non-finite loss at step {step}, parameter norm {param_norm:e}");
        Err(Error::NonFiniteLoss { step, param_norm })
    }
}

fn record_point(curve: &mut Vec<LossPoint>, step: usize, loss: f64, cfg: &TrainConfig, label: &str) {
    if step % cfg.log_every == 0 || step + 1 == cfg.steps {
        log::info!("{label} step {step}: loss {loss:.6e}");
        curve.push(LossPoint { step, loss });
    }
}

pub fn train_field(model: &PatchFieldModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<(PatchFieldModel, Vec<LossPoint>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptySelection("training set is empty".into()));
    }
    let pools: Vec<(Vec<Pixel>, Vec<Pixel>)> = dataset.records.iter().map(pixel_pools).collect();
    let mut loss_cfg = cfg.loss_config(model.spec.features.height, model.spec.features.width);
    let mut model = model.clone();
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let batch: Vec<JidmSample> = (0..cfg.records_per_step)
            .map(|_| {
                let i = rng.random_range(0..dataset.len());
                let pixels = sample_pixels(&pools[i].0, &pools[i].1, cfg, &mut rng);
                JidmSample { record: &dataset.records[i], pixels }
            })
            .filter(|s| !s.pixels.is_empty())
            .collect();
        loss_cfg.w_a = cfg.w_a_at(step);
        let (loss, grad) = model.loss_jidm(&batch, &loss_cfg)?;
        check_finite(step, loss, &model.params)?;
        record_point(&mut curve, step, loss, cfg, "jidm");
        opt.learning_rate = cfg.learning_rate_at(step);
        opt.step(&mut model.params, &grad);
    }
    Ok((model, curve))
}

pub fn train_direct(model: &DirectIdm, dataset: &Dataset, cfg: &TrainConfig) -> Result<(DirectIdm, Vec<LossPoint>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptySelection("training set is empty".into()));
    }
    let mut model = model.clone();
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let picks: Vec<&TransitionRecord> =
            (0..cfg.records_per_step).map(|_| &dataset.records[rng.random_range(0..dataset.len())]).collect();
        let inputs: Vec<DirectInput> = picks.iter().map(|r| DirectInput::from(*r)).collect();
        let targets: Vec<&[f64]> = picks.iter().map(|r| r.delta_a.as_slice()).collect();
        let (loss, grad) = model.loss_direct(&inputs, &targets)?;
        check_finite(step, loss, &model.params)?;
        record_point(&mut curve, step, loss, cfg, &model.spec.variant.to_string());
        opt.learning_rate = cfg.learning_rate_at(step);
        opt.step(&mut model.params, &grad);
    }
    Ok((model, curve))
}

/// Trains any model kind; returns the trained copy and the loss curve.
pub fn train(model: &Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<LossPoint>)> {
    match model {
        Model::Field(m) => train_field(m, dataset, cfg).map(|(m, c)| (Model::Field(m), c)),
        Model::Direct(m) => train_direct(m, dataset, cfg).map(|(m, c)| (Model::Direct(m), c)),
    }
}
