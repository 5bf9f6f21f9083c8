//! Run configuration and the train/evaluate/rollout experiment cells.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{ConfigDoc, Section};
use crate::control::{
    reaching_tasks, run_tasks, ControllerConfig, Env, PlannerMode, RolloutLog, RolloutStats, ScriptedPlanner, Translator,
};
use crate::dataset::{generate_selfplay, ActionLaw, Dataset, SelfPlaySpec};
use crate::error::{Error, Result};
use crate::flow::FlowNoiseModel;
use crate::inversion::RidgeParams;
use crate::kinematics::{CameraModel, ChainConfig, ChainTaper};
use crate::metrics::{median, Metric, MetricsRow, MetricsTable};
use crate::models::eval::{eval_action_mse, eval_flow_epe};
use crate::models::features::FeatureSpec;
use crate::models::jidm::{FieldModelSpec, PatchFieldModel};
use crate::models::train::{train, LossPoint, TrainConfig};
use crate::models::{Model, ModelKind};
use crate::render::RenderStyle;

pub const SECTIONS: [&str; 10] = ["run", "chain", "image", "data", "model", "train", "eval", "control", "sweep", "noise"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Upper bound on pixels per world unit.
    pub max_scale: f64,
    pub shading_gain: f64,
    pub supersample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    /// Training transitions.
    pub budget: usize,
    pub steps_per_episode: usize,
    pub law: ActionLaw,
    pub delta_max: f64,
    /// Held-out episodes, drawn from a separate stream.
    pub test_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub pyramid_levels: usize,
    pub context_grid: usize,
    pub hidden: Vec<usize>,
    pub pool_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    /// Ridge weight for action recovery, image-normalized.
    pub lambda_inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub episodes: usize,
    pub planner: PlannerMode,
    pub delta_plan: f64,
    pub noise_sigma: f64,
    pub adversarial_jump: f64,
    pub controller: ControllerConfig,
    /// Goal radius in pixels.
    pub tolerance: f64,
    /// Start and goal joint angles are drawn from `[-spread, spread]`.
    pub spread: f64,
    /// Ridge weight of the analytic translator, pixel units.
    pub lambda_analytic: f64,
    /// Commit lengths for the chunking sweep.
    pub commits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub dofs: Vec<usize>,
    pub budgets: Vec<usize>,
    pub kinds: Vec<ModelKind>,
    pub seeds: Vec<u64>,
}

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub n_joints: usize,
    pub taper: ChainTaper,
    pub image: ImageSpec,
    pub data: DataSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub control: ControlSpec,
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            n_joints: 5,
            taper: ChainTaper::default(),
            image: ImageSpec { height: 64, width: 64, channels: 3, max_scale: 32.0, shading_gain: 0.5, supersample: 4 },
            data: DataSpec { budget: 2000, steps_per_episode: 20, law: ActionLaw::Uniform, delta_max: 0.12, test_episodes: 20 },
            model: ModelConfig {
                kind: ModelKind::Jidm,
                patch_size: 5,
                patch_stride: 1,
                pyramid_levels: 2,
                context_grid: 0,
                hidden: vec![64, 64],
                pool_stride: 4,
            },
            train: TrainConfig {
                learning_rate: 3e-3,
                final_lr_fraction: 0.02,
                steps: 3000,
                records_per_step: 8,
                pixels_per_record: 128,
                ..TrainConfig::default()
            },
            eval: EvalSpec { lambda_inf: 0.0625 },
            control: ControlSpec {
                episodes: 50,
                planner: PlannerMode::Oracle,
                delta_plan: 0.12,
                noise_sigma: 0.2,
                adversarial_jump: 4.0,
                controller: ControllerConfig::default(),
                tolerance: 2.0,
                spread: 2.0,
                lambda_analytic: 1e-3,
                commits: vec![1, 2, 3, 4],
            },
            sweep: SweepSpec {
                dofs: vec![2, 3, 5, 8, 12, 16],
                budgets: vec![250, 500, 1000, 2000, 4000, 8000],
                kinds: ModelKind::ALL.to_vec(),
                seeds: vec![0, 1, 2],
            },
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn to_doc(&self) -> ConfigDoc {
        let mut doc = ConfigDoc::new();
        let mut s = Section::new("run");
        s.set("seed", self.seed).set("out", self.out.display());
        doc.push(s);

        let t = &self.taper;
        let mut s = Section::new("chain");
        s.set("n_joints", self.n_joints)
            .set_f64("length_taper", t.length_taper)
            .set_f64("radius0", t.radius0)
            .set_f64("radius_taper", t.radius_taper)
            .set_f64("joint_limit", t.joint_limit);
        doc.push(s);

        let i = &self.image;
        let mut s = Section::new("image");
        s.set("height", i.height)
            .set("width", i.width)
            .set("channels", i.channels)
            .set_f64("max_scale", i.max_scale)
            .set_f64("shading_gain", i.shading_gain)
            .set("supersample", i.supersample);
        doc.push(s);

        let d = &self.data;
        let mut s = Section::new("data");
        s.set("budget", d.budget)
            .set("steps_per_episode", d.steps_per_episode)
            .set("law", d.law)
            .set_f64("delta_max", d.delta_max)
            .set("test_episodes", d.test_episodes);
        doc.push(s);

        let m = &self.model;
        let mut s = Section::new("model");
        s.set("kind", m.kind)
            .set("patch_size", m.patch_size)
            .set("patch_stride", m.patch_stride)
            .set("pyramid_levels", m.pyramid_levels)
            .set("context_grid", m.context_grid)
            .set("hidden", join(&m.hidden))
            .set("pool_stride", m.pool_stride);
        doc.push(s);

        let t = &self.train;
        let mut s = Section::new("train");
        s.set_f64("w_a", t.w_a)
            .set_f64("charbonnier_eps", t.charbonnier_eps)
            .set_f64("lambda_train", t.lambda_train)
            .set_f64("learning_rate", t.learning_rate)
            .set_f64("final_lr_fraction", t.final_lr_fraction)
            .set_f64("beta1", t.beta1)
            .set_f64("beta2", t.beta2)
            .set_f64("adam_eps", t.adam_eps)
            .set("steps", t.steps)
            .set("records_per_step", t.records_per_step)
            .set("pixels_per_record", t.pixels_per_record)
            .set_f64("foreground_fraction", t.foreground_fraction)
            .set("dense", t.dense)
            .set("inverse_warmup_steps", t.inverse_warmup_steps)
            .set("log_every", t.log_every);
        doc.push(s);

        let mut s = Section::new("eval");
        s.set_f64("lambda_inf", self.eval.lambda_inf);
        doc.push(s);

        let c = &self.control;
        let k = &c.controller;
        let mut s = Section::new("control");
        s.set("episodes", c.episodes)
            .set("planner", c.planner)
            .set_f64("delta_plan", c.delta_plan)
            .set_f64("noise_sigma", c.noise_sigma)
            .set_f64("adversarial_jump", c.adversarial_jump)
            .set("context", k.context)
            .set("lookahead", k.lookahead)
            .set("commit", k.commit)
            .set("actions_per_frame", k.actions_per_frame)
            .set("max_steps", k.max_steps)
            .set_f64("tolerance", c.tolerance)
            .set_f64("spread", c.spread)
            .set_f64("lambda_analytic", c.lambda_analytic)
            .set("commits", join(&c.commits));
        doc.push(s);

        if let Some(n) = &k.replan_noise {
            let mut s = Section::new("noise");
            s.set_f64("sigma_pixels", n.sigma_pixels).set_f64("dropout_rate", n.dropout_rate).set("seed", n.seed);
            doc.push(s);
        }

        let w = &self.sweep;
        let mut s = Section::new("sweep");
        s.set("dofs", join(&w.dofs)).set("budgets", join(&w.budgets)).set("kinds", join(&w.kinds)).set("seeds", join(&w.seeds));
        doc.push(s);
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_doc().to_string()
    }

    /// Reads a document over the defaults. Missing keys keep their default;
    /// unknown sections and keys are errors.
    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        doc.reject_unknown_sections(&SECTIONS)?;
        let mut cfg = Self::default();
        let empty = Section::default();
        let sec = |name: &str| doc.section(name).unwrap_or(&empty);

        let mut r = sec("run").reader();
        cfg.seed = r.or("seed", cfg.seed)?;
        cfg.out = PathBuf::from(r.or("out", cfg.out.display().to_string())?);
        r.finish()?;

        let mut r = sec("chain").reader();
        cfg.n_joints = r.or("n_joints", cfg.n_joints)?;
        let t = &mut cfg.taper;
        t.length_taper = r.or("length_taper", t.length_taper)?;
        t.radius0 = r.or("radius0", t.radius0)?;
        t.radius_taper = r.or("radius_taper", t.radius_taper)?;
        t.joint_limit = r.or("joint_limit", t.joint_limit)?;
        r.finish()?;

        let mut r = sec("image").reader();
        let i = &mut cfg.image;
        i.height = r.or("height", i.height)?;
        i.width = r.or("width", i.width)?;
        i.channels = r.or("channels", i.channels)?;
        i.max_scale = r.or("max_scale", i.max_scale)?;
        i.shading_gain = r.or("shading_gain", i.shading_gain)?;
        i.supersample = r.or("supersample", i.supersample)?;
        r.finish()?;

        let mut r = sec("data").reader();
        let d = &mut cfg.data;
        d.budget = r.or("budget", d.budget)?;
        d.steps_per_episode = r.or("steps_per_episode", d.steps_per_episode)?;
        d.law = r.or("law", d.law)?;
        d.delta_max = r.or("delta_max", d.delta_max)?;
        d.test_episodes = r.or("test_episodes", d.test_episodes)?;
        r.finish()?;

        let mut r = sec("model").reader();
        let m = &mut cfg.model;
        m.kind = r.or("kind", m.kind)?;
        m.patch_size = r.or("patch_size", m.patch_size)?;
        m.patch_stride = r.or("patch_stride", m.patch_stride)?;
        m.pyramid_levels = r.or("pyramid_levels", m.pyramid_levels)?;
        m.context_grid = r.or("context_grid", m.context_grid)?;
        if let Some(h) = r.list_opt("hidden")? {
            m.hidden = h;
        }
        m.pool_stride = r.or("pool_stride", m.pool_stride)?;
        r.finish()?;

        let mut r = sec("train").reader();
        let t = &mut cfg.train;
        t.w_a = r.or("w_a", t.w_a)?;
        t.charbonnier_eps = r.or("charbonnier_eps", t.charbonnier_eps)?;
        t.lambda_train = r.or("lambda_train", t.lambda_train)?;
        t.learning_rate = r.or("learning_rate", t.learning_rate)?;
        t.final_lr_fraction = r.or("final_lr_fraction", t.final_lr_fraction)?;
        t.beta1 = r.or("beta1", t.beta1)?;
        t.beta2 = r.or("beta2", t.beta2)?;
        t.adam_eps = r.or("adam_eps", t.adam_eps)?;
        t.steps = r.or("steps", t.steps)?;
        t.records_per_step = r.or("records_per_step", t.records_per_step)?;
        t.pixels_per_record = r.or("pixels_per_record", t.pixels_per_record)?;
        t.foreground_fraction = r.or("foreground_fraction", t.foreground_fraction)?;
        t.dense = r.or("dense", t.dense)?;
        t.inverse_warmup_steps = r.or("inverse_warmup_steps", t.inverse_warmup_steps)?;
        t.log_every = r.or("log_every", t.log_every)?;
        r.finish()?;

        let mut r = sec("eval").reader();
        cfg.eval.lambda_inf = r.or("lambda_inf", cfg.eval.lambda_inf)?;
        r.finish()?;

        let mut r = sec("control").reader();
        let c = &mut cfg.control;
        c.episodes = r.or("episodes", c.episodes)?;
        c.planner = r.or("planner", c.planner)?;
        c.delta_plan = r.or("delta_plan", c.delta_plan)?;
        c.noise_sigma = r.or("noise_sigma", c.noise_sigma)?;
        c.adversarial_jump = r.or("adversarial_jump", c.adversarial_jump)?;
        let k = &mut c.controller;
        k.context = r.or("context", k.context)?;
        k.lookahead = r.or("lookahead", k.lookahead)?;
        k.commit = r.or("commit", k.commit)?;
        k.actions_per_frame = r.or("actions_per_frame", k.actions_per_frame)?;
        k.max_steps = r.or("max_steps", k.max_steps)?;
        c.tolerance = r.or("tolerance", c.tolerance)?;
        c.spread = r.or("spread", c.spread)?;
        c.lambda_analytic = r.or("lambda_analytic", c.lambda_analytic)?;
        if let Some(v) = r.list_opt("commits")? {
            c.commits = v;
        }
        r.finish()?;

        if let Some(s) = doc.section("noise") {
            let mut r = s.reader();
            let n = FlowNoiseModel { sigma_pixels: r.get("sigma_pixels")?, dropout_rate: r.get("dropout_rate")?, seed: r.or("seed", 0)? };
            r.finish()?;
            cfg.control.controller.replan_noise = Some(n);
        }

        let mut r = sec("sweep").reader();
        let w = &mut cfg.sweep;
        if let Some(v) = r.list_opt("dofs")? {
            w.dofs = v;
        }
        if let Some(v) = r.list_opt("budgets")? {
            w.budgets = v;
        }
        if let Some(v) = r.list_opt("kinds")? {
            w.kinds = v;
        }
        if let Some(v) = r.list_opt("seeds")? {
            w.seeds = v;
        }
        r.finish()?;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_doc(&ConfigDoc::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_joints == 0 {
            return bad("n_joints must be >= 1".into());
        }
        if self.image.height == 0 || self.image.width == 0 || !matches!(self.image.channels, 1 | 3) || self.image.supersample == 0 {
            return bad("image needs positive size, 1 or 3 channels and supersample >= 1".into());
        }
        if self.data.budget == 0 || self.data.steps_per_episode == 0 || self.data.test_episodes == 0 {
            return bad("budget, steps_per_episode and test_episodes must be >= 1".into());
        }
        if !(self.eval.lambda_inf > 0.0) || !(self.control.lambda_analytic > 0.0) {
            return bad("ridge weights must be > 0".into());
        }
        if self.control.episodes == 0 || self.control.commits.is_empty() {
            return bad("control needs episodes >= 1 and at least one commit length".into());
        }
        let w = &self.sweep;
        if w.dofs.is_empty() || w.budgets.is_empty() || w.kinds.is_empty() || w.seeds.is_empty() {
            return bad("sweep lists must be non-empty".into());
        }
        if w.dofs.contains(&0) || w.budgets.contains(&0) {
            return bad("sweep dofs and budgets must be >= 1".into());
        }
        self.control.controller.validate()?;
        self.train.validate()
    }

    pub fn env(&self, n_joints: usize) -> Result<Env> {
        let config = ChainConfig::unit_reach(n_joints, &self.taper)?;
        let camera = CameraModel::fit(&config, self.image.height, self.image.width, self.image.max_scale)?;
        let mut style = RenderStyle::default_for(n_joints);
        style.channels = self.image.channels;
        style.radial_shading_gain = self.image.shading_gain;
        style.supersample = self.image.supersample;
        let env = Env { config, camera, style, delta_max: self.data.delta_max };
        env.validate()?;
        Ok(env)
    }

    /// Self-play settings for `episodes` episodes on stream `seed`.
    pub fn selfplay(&self, n_joints: usize, episodes: usize, seed: u64) -> Result<SelfPlaySpec> {
        let env = self.env(n_joints)?;
        Ok(SelfPlaySpec {
            config: env.config,
            camera: env.camera,
            style: env.style,
            episodes,
            steps_per_episode: self.data.steps_per_episode,
            law: self.data.law,
            delta_max: self.data.delta_max,
            seed,
        })
    }

    /// Training set of `budget` transitions. Smaller budgets of the same
    /// seed are prefixes of larger ones.
    pub fn train_set(&self, n_joints: usize, budget: usize, seed: u64) -> Result<Dataset> {
        let episodes = budget.div_ceil(self.data.steps_per_episode);
        Ok(generate_selfplay(&self.selfplay(n_joints, episodes, stream(self.seed, seed, n_joints, TRAIN_STREAM))?)?.truncated(budget))
    }

    /// Held-out set, disjoint in stream from every training set.
    pub fn test_set(&self, n_joints: usize, seed: u64) -> Result<Dataset> {
        generate_selfplay(&self.selfplay(n_joints, self.data.test_episodes, stream(self.seed, seed, n_joints, TEST_STREAM))?)
    }

    pub fn field_spec(&self, n_joints: usize, camera: &CameraModel) -> FieldModelSpec {
        let m = &self.model;
        let features = FeatureSpec {
            height: self.image.height,
            width: self.image.width,
            channels: self.image.channels,
            patch_size: m.patch_size,
            patch_stride: m.patch_stride,
            context_grid: m.context_grid,
            pyramid_levels: m.pyramid_levels,
        };
        FieldModelSpec { hidden: m.hidden.clone(), ..FieldModelSpec::new(n_joints, features, camera.scale) }
    }

    pub fn build_model(&self, kind: ModelKind, n_joints: usize, seed: u64) -> Result<Model> {
        let env = self.env(n_joints)?;
        let field = self.field_spec(n_joints, &env.camera);
        Model::build(kind, &field, self.model.pool_stride, self.data.delta_max, stream(self.seed, seed, n_joints, MODEL_STREAM))
    }

    pub fn train_config(&self, n_joints: usize, seed: u64) -> TrainConfig {
        TrainConfig { seed: stream(self.seed, seed, n_joints, TRAIN_LOOP_STREAM), ..self.train.clone() }
    }
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;
const TRAIN_LOOP_STREAM: u64 = 4;
const TASK_STREAM: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one use of one cell.
pub fn stream(run_seed: u64, seed: u64, n_joints: usize, purpose: u64) -> u64 {
    [seed, n_joints as u64, purpose].iter().fold(splitmix(run_seed), |acc, v| splitmix(acc ^ v))
}

/// A trained model with its held-out metrics.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub model: Model,
    pub curve: Vec<LossPoint>,
    pub row: MetricsRow,
}

/// Held-out metrics of a model: clamped action MSE for every kind, flow EPE
/// for field models.
pub fn evaluate(cfg: &RunConfig, model: &Model, test: &Dataset, row: &mut MetricsRow) -> Result<()> {
    row.action_mse = eval_action_mse(model, &test.records, cfg.eval.lambda_inf, cfg.data.delta_max)?;
    if let Model::Field(m) = model {
        row.flow_epe = eval_flow_epe(m, &test.records)?;
    }
    Ok(())
}

pub fn train_and_evaluate(
    cfg: &RunConfig,
    experiment: &str,
    kind: ModelKind,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
) -> Result<CellOutput> {
    let n = train_set.n_joints();
    let start = Instant::now();
    let init = cfg.build_model(kind, n, seed)?;
    let (model, curve) = train(&init, train_set, &cfg.train_config(n, seed))?;
    let mut row = MetricsRow::new(experiment, &kind.to_string(), n, train_set.len(), seed);
    evaluate(cfg, &model, test_set, &mut row)?;
    row.wall_time = start.elapsed().as_secs_f64();
    Ok(CellOutput { model, curve, row })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub kind: ModelKind,
    pub dof: usize,
    pub budget: usize,
    pub seed: u64,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-dof{}-b{}-s{}", self.kind, self.dof, self.budget, self.seed)
    }
}

/// Trains one cell from scratch.
pub fn run_cell(cfg: &RunConfig, experiment: &str, key: CellKey) -> Result<CellOutput> {
    let train_set = cfg.train_set(key.dof, key.budget, key.seed)?;
    let test_set = cfg.test_set(key.dof, key.seed)?;
    train_and_evaluate(cfg, experiment, key.kind, &train_set, &test_set, key.seed)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub table: MetricsTable,
    pub failures: Vec<(CellKey, String)>,
}

/// Runs every cell, at most `jobs` at a time. Cells sharing (dof, seed)
/// share one generated dataset. A failed cell keeps a NaN row and an entry
/// in `failures`; the rest of the sweep continues. Rows come back sorted by
/// cell, independent of scheduling.
pub fn run_sweep(cfg: &RunConfig, experiment: &str, cells: &[CellKey], jobs: usize, out: Option<&Path>) -> Result<SweepResult> {
    if cells.is_empty() {
        return Err(Error::EmptySelection("sweep has no cells".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut groups: BTreeMap<(usize, u64), Vec<CellKey>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.dof, c.seed)).or_default().push(*c);
    }
    let mut results: Vec<(CellKey, Result<MetricsRow>)> = Vec::new();
    for ((dof, seed), group) in groups {
        let max_budget = group.iter().map(|c| c.budget).max().unwrap_or(0);
        let data = cfg.train_set(dof, max_budget, seed).and_then(|t| Ok((t, cfg.test_set(dof, seed)?)));
        let (full, test) = match data {
            Ok(d) => d,
            Err(e) => {
                let msg = e.to_string();
                results.extend(group.iter().map(|c| (*c, Err(Error::Domain(msg.clone())))));
                continue;
            }
        };
        let rows: Vec<(CellKey, Result<MetricsRow>)> = pool.install(|| {
            group
                .par_iter()
                .map(|c| {
                    let r = train_and_evaluate(cfg, experiment, c.kind, &full.truncated(c.budget), &test, c.seed).and_then(|o| {
                        if let Some(dir) = out {
                            save_cell(dir, experiment, c, &o)?;
                        }
                        Ok(o.row)
                    });
                    if let Err(e) = &r {
                        log::warn!("cell {c} failed: {e}");
                    } else {
                        log::info!("cell {c} done");
                    }
                    (*c, r)
                })
                .collect()
        });
        results.extend(rows);
    }
    results.sort_by_key(|(c, _)| *c);
    let mut table = MetricsTable::default();
    let mut failures = Vec::new();
    for (c, r) in results {
        match r {
            Ok(row) => table.rows.push(row),
            Err(e) => {
                table.rows.push(MetricsRow::new(experiment, &c.kind.to_string(), c.dof, c.budget, c.seed));
                failures.push((c, e.to_string()));
            }
        }
    }
    table.sort();
    Ok(SweepResult { table, failures })
}

fn save_cell(dir: &Path, experiment: &str, key: &CellKey, out: &CellOutput) -> Result<()> {
    let cell_dir = dir.join(experiment).join(key.to_string());
    std::fs::create_dir_all(&cell_dir)?;
    crate::models::checkpoint::save_checkpoint(&out.model, &cell_dir.join("model.ckpt"))?;
    std::fs::write(cell_dir.join("loss.csv"), loss_curve_csv(&out.curve))?;
    Ok(())
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("step,loss\n");
    for p in curve {
        s.push_str(&format!("{},{}\n", p.step, crate::config::fmt_f64(p.loss)));
    }
    s
}

/// Cells of the DoF sweep: every (kind, dof, seed) at the configured budget.
pub fn dof_cells(cfg: &RunConfig) -> Vec<CellKey> {
    let w = &cfg.sweep;
    let mut v = Vec::new();
    for &kind in &w.kinds {
        for &dof in &w.dofs {
            for &seed in &w.seeds {
                v.push(CellKey { kind, dof, budget: cfg.data.budget, seed });
            }
        }
    }
    v
}

/// Cells of the data sweep: every (kind, budget, seed) at the configured DoF.
pub fn data_cells(cfg: &RunConfig) -> Vec<CellKey> {
    let w = &cfg.sweep;
    let mut v = Vec::new();
    for &kind in &w.kinds {
        for &budget in &w.budgets {
            for &seed in &w.seeds {
                v.push(CellKey { kind, dof: cfg.n_joints, budget, seed });
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub dof: usize,
    pub jidm: f64,
    pub best_direct: f64,
    /// `best_direct - jidm`, seed medians.
    pub gap: f64,
}

/// Per DoF: seed-median MSE of J-IDM against the best seed-median MSE of
/// the direct kinds present.
pub fn gap_by_dof(table: &MetricsTable, experiment: &str) -> Vec<GapRow> {
    let med = table.medians(experiment, Metric::ActionMse);
    let jidm = ModelKind::Jidm.to_string();
    let mut dofs: Vec<usize> = med.keys().map(|k| k.1).collect();
    dofs.sort_unstable();
    dofs.dedup();
    dofs.into_iter()
        .filter_map(|dof| {
            let j = med.iter().find(|(k, _)| k.0 == jidm && k.1 == dof).map(|(_, v)| *v)?;
            let d = med.iter().filter(|(k, _)| k.0 != jidm && k.1 == dof).map(|(_, v)| *v).reduce(f64::min)?;
            Some(GapRow { dof, jidm: j, best_direct: d, gap: d - j })
        })
        .collect()
}

/// Smallest budget at which the J-IDM seed median is at most the best
/// direct seed median at the largest budget.
pub fn smallest_matching_budget(table: &MetricsTable, experiment: &str) -> Option<usize> {
    let med = table.medians(experiment, Metric::ActionMse);
    let jidm = ModelKind::Jidm.to_string();
    let top = med.keys().filter(|k| k.0 != jidm).map(|k| k.2).max()?;
    let target = med.iter().filter(|(k, _)| k.0 != jidm && k.2 == top).map(|(_, v)| *v).reduce(f64::min)?;
    med.iter().filter(|(k, v)| k.0 == jidm && **v <= target).map(|(k, _)| k.2).min()
}

/// Median over seeds of a per-seed comparison is not what the table holds,
/// so this counts seeds directly: seeds where J-IDM at `half` is at most
/// every direct kind at `full`.
pub fn seeds_matching_at_half(table: &MetricsTable, experiment: &str, half: usize, full: usize) -> (usize, usize) {
    let jidm = ModelKind::Jidm.to_string();
    let rows: Vec<&MetricsRow> = table.rows.iter().filter(|r| r.experiment == experiment).collect();
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut wins = 0;
    let mut total = 0;
    for s in seeds {
        let j = rows.iter().find(|r| r.seed == s && r.kind == jidm && r.budget == half).map(|r| r.action_mse);
        let d = rows.iter().filter(|r| r.seed == s && r.kind != jidm && r.budget == full).map(|r| r.action_mse).reduce(f64::min);
        if let (Some(j), Some(d)) = (j, d) {
            total += 1;
            if j <= d {
                wins += 1;
            }
        }
    }
    (wins, total)
}

/// Which field the rollout translator uses.
#[derive(Debug, Clone)]
pub enum FieldChoice {
    Analytic,
    Learned(Arc<PatchFieldModel>),
}

pub fn translator(cfg: &RunConfig, field: &FieldChoice) -> Translator {
    match field {
        FieldChoice::Analytic => Translator::analytic(cfg.control.lambda_analytic),
        FieldChoice::Learned(m) => {
            Translator::learned(m.clone(), RidgeParams::normalized(cfg.eval.lambda_inf, cfg.image.height, cfg.image.width))
        }
    }
}

pub fn planner(cfg: &RunConfig, seed: u64) -> ScriptedPlanner {
    let c = &cfg.control;
    ScriptedPlanner {
        mode: c.planner,
        delta_plan: c.delta_plan,
        noise_sigma: c.noise_sigma,
        adversarial_jump: c.adversarial_jump,
        seed: stream(cfg.seed, seed, cfg.n_joints, TASK_STREAM + 1),
    }
}

/// Reaching episodes on the configured chain, with one metrics row.
pub fn run_rollouts(cfg: &RunConfig, field: &FieldChoice, seed: u64) -> Result<(Vec<RolloutLog>, MetricsRow)> {
    let start = Instant::now();
    let env = cfg.env(cfg.n_joints)?;
    if let FieldChoice::Learned(m) = field {
        if m.n_joints() != cfg.n_joints {
            return Err(Error::Shape(format!("model has {} joints, chain has {}", m.n_joints(), cfg.n_joints)));
        }
    }
    let c = &cfg.control;
    let tasks = reaching_tasks(&env, c.episodes, c.spread, c.tolerance, stream(cfg.seed, seed, cfg.n_joints, TASK_STREAM));
    let logs = run_tasks(&planner(cfg, seed), &translator(cfg, field), &env, &c.controller, &tasks)?;
    let stats = RolloutStats::from_logs(&logs);
    let kind = match field {
        FieldChoice::Analytic => "oracle",
        FieldChoice::Learned(_) => "jidm",
    };
    let mut row = MetricsRow::new("rollout", kind, cfg.n_joints, 0, seed);
    row.success_rate = stats.success_rate();
    row.progress = stats.mean_progress;
    row.wall_time = start.elapsed().as_secs_f64();
    Ok((logs, row))
}

/// Seed-median helper for reports.
pub fn median_of(values: impl Iterator<Item = f64>) -> f64 {
    median(values.filter(|v| !v.is_nan()).collect())
}
