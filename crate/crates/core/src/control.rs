//! Receding-horizon visual control.
//!
//! A scripted planner proposes `M` future frames, the controller decodes the
//! first `K` of them into actions through the flow-to-action translator,
//! executes `r·K` simulator actions and replans from the new observation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{analytic_field, JacobianField, Pixel};
use crate::flow::{add_noise, oracle_flow_between, FlowField, FlowNoiseModel};
use crate::inversion::{translate_chunk, RidgeParams};
use crate::kinematics::{analytic_jacobian, forward_kinematics, Action, BodyPoint, CameraModel, ChainConfig, ChainState, Vec2};
use crate::linalg::{cholesky_in_place, cholesky_solve};
use crate::models::PatchFieldModel;
use crate::render::{render, Image, RenderStyle};

/// Alg. 1 constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Context frames kept for the planner. The scripted planner only looks
    /// at the latest one.
    pub context: usize,
    pub lookahead: usize,
    pub commit: usize,
    pub actions_per_frame: usize,
    pub max_steps: usize,
    pub replan_noise: Option<FlowNoiseModel>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { context: 6, lookahead: 4, commit: 1, actions_per_frame: 1, max_steps: 60, replan_noise: None }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context == 0 {
            return Err(Error::InvalidConfig("context must be >= 1".into()));
        }
        if self.commit == 0 || self.commit > self.lookahead {
            return Err(Error::InvalidConfig(format!("need 1 <= commit ({}) <= lookahead ({})", self.commit, self.lookahead)));
        }
        if self.actions_per_frame == 0 {
            return Err(Error::InvalidConfig("actions_per_frame must be >= 1".into()));
        }
        Ok(())
    }

    /// Simulator actions executed between two plans.
    pub fn chunk_actions(&self) -> usize {
        self.actions_per_frame * self.commit
    }
}

/// The simulated world: chain, camera, renderer and per-action cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub config: ChainConfig,
    pub camera: CameraModel,
    pub style: RenderStyle,
    pub delta_max: f64,
}

impl Env {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.camera.validate()?;
        self.style.validate(self.config.n_joints())?;
        if !(self.delta_max > 0.0) || !self.delta_max.is_finite() {
            return Err(Error::InvalidConfig(format!("delta_max {} must be > 0", self.delta_max)));
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.config.n_joints()
    }

    pub fn render(&self, state: &ChainState) -> Image {
        render(&self.config, &self.camera, &self.style, state)
    }

    pub fn tip_pixel(&self, state: &ChainState) -> Vec2 {
        let tip = forward_kinematics(&self.config, state, BodyPoint::tip(&self.config)).expect("tip is a valid body point");
        self.camera.project(tip)
    }

    /// Applies one action: capped to `delta_max` per joint, then clamped to
    /// the joint limits.
    pub fn step(&self, state: &ChainState, action: &Action) -> ChainState {
        state.advanced(&action.clamp_each(self.delta_max)).clamped(&self.config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalTarget {
    Joints(Vec<f64>),
    TipPixel(Vec2),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub target: GoalTarget,
    /// Pixels for tip goals, radians (Euclidean) for joint goals.
    pub tolerance: f64,
}

impl GoalSpec {
    pub fn tip(pixel: Vec2) -> Self {
        Self { target: GoalTarget::TipPixel(pixel), tolerance: 2.0 }
    }

    pub fn joints(q: Vec<f64>, tolerance: f64) -> Self {
        Self { target: GoalTarget::Joints(q), tolerance }
    }

    /// Fails with [`Error::Unreachable`] for targets outside the joint
    /// limits or beyond the chain's reach.
    pub fn validate(&self, env: &Env) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("goal tolerance {} must be > 0", self.tolerance)));
        }
        match &self.target {
            GoalTarget::Joints(q) => {
                if q.len() != env.n_joints() {
                    return Err(Error::Shape(format!("goal has {} joints, chain {}", q.len(), env.n_joints())));
                }
                for (v, (lo, hi)) in q.iter().zip(&env.config.joint_limits) {
                    if !(*lo <= *v && *v <= *hi) {
                        return Err(Error::Unreachable(format!("joint target {v} outside [{lo}, {hi}]")));
                    }
                }
            }
            GoalTarget::TipPixel(p) => {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::Unreachable("tip target is not finite".into()));
                }
                let x = env.camera.unproject(*p);
                let b = env.config.base_position;
                let d = ((x[0] - b[0]).powi(2) + (x[1] - b[1]).powi(2)).sqrt();
                let reach: f64 = env.config.link_lengths.iter().sum();
                if d > reach {
                    return Err(Error::Unreachable(format!("tip target at distance {d:.4} beyond reach {reach:.4}")));
                }
            }
        }
        Ok(())
    }

    pub fn distance(&self, env: &Env, state: &ChainState) -> f64 {
        match &self.target {
            GoalTarget::Joints(q) => q.iter().zip(&state.q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            GoalTarget::TipPixel(p) => {
                let t = env.tip_pixel(state);
                ((t[0] - p[0]).powi(2) + (t[1] - p[1]).powi(2)).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerMode {
    Oracle,
    Noisy,
    Adversarial,
}

impl fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerMode::Oracle => "oracle",
            PlannerMode::Noisy => "noisy",
            PlannerMode::Adversarial => "adversarial",
        })
    }
}

impl FromStr for PlannerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(PlannerMode::Oracle),
            "noisy" => Ok(PlannerMode::Noisy),
            "adversarial" => Ok(PlannerMode::Adversarial),
            other => Err(Error::InvalidConfig(format!("unknown planner mode {other:?}"))),
        }
    }
}

/// Stand-in for the video planner.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPlanner {
    pub mode: PlannerMode,
    /// Cap on the joint move between consecutive planned frames.
    pub delta_plan: f64,
    /// Per-frame Gaussian joint drift of the noisy mode (radians). The drift
    /// accumulates along the horizon.
    pub noise_sigma: f64,
    /// Per-joint jump of the adversarial mode, in multiples of `delta_plan`.
    pub adversarial_jump: f64,
    pub seed: u64,
}

impl ScriptedPlanner {
    pub fn oracle(delta_plan: f64) -> Self {
        Self { mode: PlannerMode::Oracle, delta_plan, noise_sigma: 0.0, adversarial_jump: 4.0, seed: 0 }
    }

    pub fn noisy(delta_plan: f64, noise_sigma: f64, seed: u64) -> Self {
        Self { mode: PlannerMode::Noisy, noise_sigma, seed, ..Self::oracle(delta_plan) }
    }

    pub fn adversarial(delta_plan: f64, seed: u64) -> Self {
        Self { mode: PlannerMode::Adversarial, seed, ..Self::oracle(delta_plan) }
    }

    pub fn validate(&self, env: &Env) -> Result<()> {
        if !(self.delta_plan > 0.0) || self.delta_plan > env.delta_max {
            return Err(Error::InvalidConfig(format!("delta_plan {} must be in (0, {}]", self.delta_plan, env.delta_max)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.adversarial_jump > 1.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0 and adversarial_jump > 1".into()));
        }
        Ok(())
    }
}

/// `M` planned frames with the states they were rendered from.
#[derive(Debug, Clone)]
pub struct Plan {
    pub frames: Vec<Image>,
    pub states: Vec<ChainState>,
    /// `‖Δq‖∞` between consecutive planned states, starting from the
    /// current state.
    pub implied_steps: Vec<f64>,
}

impl Plan {
    /// Whether every planned frame is reachable from its predecessor with
    /// one frame's worth of capped actions.
    pub fn is_feasible(&self, per_frame_cap: f64) -> bool {
        self.implied_steps.iter().all(|s| *s <= per_frame_cap + 1e-12)
    }
}

/// One resolved-rate step toward the goal, capped at `cap` per joint.
/// Damped least-squares step moving the tip by `e` pixels, restricted to
/// joints that can still move in the requested direction.
fn tip_step(env: &Env, q: &[f64], e: Vec2) -> Vec<f64> {
    let n = env.n_joints();
    let limits = &env.config.joint_limits;
    let state = ChainState::new(q.to_vec());
    let j = analytic_jacobian(&env.config, &state, BodyPoint::tip(&env.config))
        .expect("tip is a valid body point")
        .scaled(env.camera.scale);
    let mu = 1e-3 * env.camera.scale * env.camera.scale;
    let mut free = vec![true; n];
    loop {
        let mut a = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                if free[r] && free[c] {
                    a[r * n + c] = j.get(0, r) * j.get(0, c) + j.get(1, r) * j.get(1, c);
                }
            }
            a[r * n + r] += mu;
        }
        cholesky_in_place(&mut a, n).expect("damped normal matrix is positive definite");
        let mut rhs = j.tr_mul_vec(e);
        rhs.iter_mut().zip(&free).for_each(|(v, f)| {
            if !f {
                *v = 0.0
            }
        });
        let dq = cholesky_solve(&a, n, &rhs);
        let blocked: Vec<usize> = (0..n)
            .filter(|&k| free[k])
            .filter(|&k| {
                let (lo, hi) = limits[k];
                (q[k] >= hi - 1e-9 && dq[k] > 0.0) || (q[k] <= lo + 1e-9 && dq[k] < 0.0)
            })
            .collect();
        if blocked.is_empty() {
            return dq;
        }
        blocked.iter().for_each(|&k| free[k] = false);
    }
}

/// Joint configuration within the limits whose tip lands on `target`,
/// nearest to `from` among solutions found from a fixed set of starts.
pub fn tip_inverse_kinematics(env: &Env, from: &ChainState, target: Vec2) -> Option<Vec<f64>> {
    let n = env.n_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1c0ffee);
    let mut starts = vec![from.q.clone()];
    for _ in 0..16 {
        starts.push(env.config.joint_limits.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut q = env.config.clamp(&start);
        for _ in 0..300 {
            let t = env.tip_pixel(&ChainState::new(q.clone()));
            let e = [target[0] - t[0], target[1] - t[1]];
            if e[0].hypot(e[1]) < 1e-3 {
                break;
            }
            let dq = tip_step(env, &q, e);
            let inf = dq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let s = if inf > 0.3 { 0.3 / inf } else { 1.0 };
            let next: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + s * b).collect();
            q = env.config.clamp(&next);
        }
        let t = env.tip_pixel(&ChainState::new(q.clone()));
        if (t[0] - target[0]).hypot(t[1] - target[1]) < 1e-2 {
            let d = q.iter().zip(&from.q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, q));
            }
        }
    }
    debug_assert!(best.as_ref().is_none_or(|(_, q)| q.len() == n));
    best.map(|(_, q)| q)
}

/// Joint-space target of a goal.
fn joint_target(env: &Env, state: &ChainState, goal: &GoalSpec) -> Result<Vec<f64>> {
    match &goal.target {
        GoalTarget::Joints(q) => Ok(q.clone()),
        GoalTarget::TipPixel(p) => tip_inverse_kinematics(env, state, *p)
            .ok_or_else(|| Error::Unreachable(format!("no joint configuration within limits reaches tip pixel {p:?}"))),
    }
}

/// One step toward `target`, scaled so `‖Δq‖∞ ≤ cap`.
fn capped_step(state: &ChainState, target: &[f64], cap: f64) -> Vec<f64> {
    let mut dq: Vec<f64> = target.iter().zip(&state.q).map(|(a, b)| a - b).collect();
    let inf = dq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if inf > cap {
        dq.iter_mut().for_each(|v| *v *= cap / inf);
    }
    dq
}

fn plan_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Renders `m` future frames from `state` toward `goal`. `stream` selects
/// the planner's random stream (one per plan call).
pub fn plan(planner: &ScriptedPlanner, env: &Env, state: &ChainState, goal: &GoalSpec, m: usize, stream: u64) -> Result<Plan> {
    planner.validate(env)?;
    goal.validate(env)?;
    if m == 0 {
        return Err(Error::Domain("plan length must be >= 1".into()));
    }
    let n = env.n_joints();
    let mut rng = plan_rng(planner.seed, stream);
    let mut clean = state.clone();
    let mut drift = vec![0.0; n];
    let mut prev = state.clone();
    let mut states = Vec::with_capacity(m);
    let target = match planner.mode {
        PlannerMode::Adversarial => Vec::new(),
        _ => joint_target(env, state, goal)?,
    };
    for _ in 0..m {
        let next = match planner.mode {
            PlannerMode::Oracle | PlannerMode::Noisy => {
                let dq = capped_step(&clean, &target, planner.delta_plan);
                clean = clean.advanced(&Action::new(dq)).clamped(&env.config);
                if planner.mode == PlannerMode::Noisy && planner.noise_sigma > 0.0 {
                    let normal = Normal::new(0.0, planner.noise_sigma).expect("finite sigma");
                    drift.iter_mut().for_each(|d| *d += normal.sample(&mut rng));
                    ChainState::new(clean.q.iter().zip(&drift).map(|(a, b)| a + b).collect()).clamped(&env.config)
                } else {
                    clean.clone()
                }
            }
            PlannerMode::Adversarial => {
                let jump = planner.adversarial_jump * planner.delta_plan;
                let mut q: Vec<f64> = prev.q.iter().map(|v| v + if rng.random::<bool>() { jump } else { -jump }).collect();
                // Reflect off the limits so the jump survives clamping.
                for (v, (p, (lo, hi))) in q.iter_mut().zip(prev.q.iter().zip(&env.config.joint_limits)) {
                    if *v > *hi || *v < *lo {
                        *v = if *v > *hi { p - jump } else { p + jump };
                    }
                }
                ChainState::new(q).clamped(&env.config)
            }
        };
        states.push(next.clone());
        prev = next;
    }
    let mut implied_steps = Vec::with_capacity(m);
    let mut from = state;
    for s in &states {
        implied_steps.push(s.q.iter().zip(&from.q).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())));
        from = s;
    }
    let frames = states.iter().map(|s| env.render(s)).collect();
    Ok(Plan { frames, states, implied_steps })
}

/// Source of the Jacobian field used to translate frames into actions.
#[derive(Debug, Clone)]
pub enum FieldSource {
    /// Exact field of the state each frame was rendered from.
    Analytic,
    Learned(Arc<PatchFieldModel>),
}

/// Flow-to-action translation settings.
#[derive(Debug, Clone)]
pub struct Translator {
    pub field: FieldSource,
    pub ridge: RidgeParams,
}

impl Translator {
    pub fn analytic(lambda: f64) -> Self {
        Self { field: FieldSource::Analytic, ridge: RidgeParams::new(lambda) }
    }

    pub fn learned(model: Arc<PatchFieldModel>, ridge: RidgeParams) -> Self {
        Self { field: FieldSource::Learned(model), ridge }
    }

    fn field(&self, env: &Env, state: &ChainState, image: &Image, flow: &FlowField) -> Result<JacobianField> {
        match &self.field {
            FieldSource::Analytic => Ok(analytic_field(&env.config, &env.camera, state)),
            FieldSource::Learned(model) => {
                let pixels: Vec<Pixel> = (0..flow.height)
                    .flat_map(|r| (0..flow.width).map(move |c| Pixel::new(r, c)))
                    .filter(|p| flow.is_valid(p.row, p.col))
                    .collect();
                if pixels.is_empty() {
                    return Ok(JacobianField::new(image.height, image.width, model.n_joints()));
                }
                model.field_at(image, &pixels)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureStage {
    Planner,
    Translator,
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureStage::Planner => "planner",
            FailureStage::Translator => "translator",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub stage: FailureStage,
    pub detail: String,
}

/// One executed simulator action.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub step: usize,
    pub plan: usize,
    pub observed_q: Vec<f64>,
    /// FNV-1a digest of the committed planned frames.
    pub frames_digest: u64,
    pub plan_feasible: bool,
    pub action: Vec<f64>,
    pub executed_q: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSummary {
    pub success: bool,
    pub progress: f64,
    pub steps: usize,
    pub plans: usize,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    pub steps: Vec<RolloutStep>,
    pub summary: RolloutSummary,
}

const LOG_HEADER: &str = "step,plan,observed_q,frames_digest,plan_feasible,action,executed_q,distance";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

fn split_vec(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|t| t.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("bad number {t:?}") })).collect()
}

fn digest(frames: &[Image]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for f in frames {
        for v in &f.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

impl RolloutLog {
    /// Number of actions executed after each plan, in plan order.
    pub fn actions_per_plan(&self) -> Vec<usize> {
        let mut counts = vec![0; self.summary.plans];
        for s in &self.steps {
            counts[s.plan] += 1;
        }
        counts
    }

    /// Header, one comma-separated row per step, then a `#` summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(LOG_HEADER);
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{:016x},{},{},{},{:?}\n",
                s.step,
                s.plan,
                join(&s.observed_q),
                s.frames_digest,
                s.plan_feasible as u8,
                join(&s.action),
                join(&s.executed_q),
                s.distance
            ));
        }
        let m = &self.summary;
        let failure = match &m.failure {
            None => "none".to_string(),
            Some(f) => format!("{}:{}", f.stage, f.detail.replace(['\n', ','], " ")),
        };
        out.push_str(&format!(
            "# success={} progress={:?} steps={} plans={} initial_distance={:?} final_distance={:?} failure={}\n",
            m.success as u8, m.progress, m.steps, m.plans, m.initial_distance, m.final_distance, failure
        ));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == LOG_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: "missing rollout log header".into() }),
        }
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, line) in lines {
            let ln = i + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                if summary.is_some() {
                    return Err(Error::Parse { line: ln, msg: "duplicate summary".into() });
                }
                summary = Some(parse_summary(rest, ln)?);
                continue;
            }
            if summary.is_some() {
                return Err(Error::Parse { line: ln, msg: "row after summary".into() });
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Parse { line: ln, msg: format!("expected 8 fields, got {}", f.len()) });
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { line: ln, msg: format!("bad integer {s:?}") });
            steps.push(RolloutStep {
                step: int(f[0])?,
                plan: int(f[1])?,
                observed_q: split_vec(f[2], ln)?,
                frames_digest: u64::from_str_radix(f[3], 16).map_err(|_| Error::Parse { line: ln, msg: "bad digest".into() })?,
                plan_feasible: match f[4] {
                    "0" => false,
                    "1" => true,
                    s => return Err(Error::Parse { line: ln, msg: format!("bad flag {s:?}") }),
                },
                action: split_vec(f[5], ln)?,
                executed_q: split_vec(f[6], ln)?,
                distance: f[7].parse().map_err(|_| Error::Parse { line: ln, msg: "bad distance".into() })?,
            });
        }
        let summary = summary.ok_or(Error::Parse { line: 0, msg: "missing summary line".into() })?;
        if steps.iter().any(|s| s.plan >= summary.plans) {
            return Err(Error::Format("step refers to a plan beyond the plan count".into()));
        }
        Ok(Self { steps, summary })
    }
}

fn parse_summary(text: &str, line: usize) -> Result<RolloutSummary> {
    let err = |msg: String| Error::Parse { line, msg };
    let (head, failure_text) = text.split_once(" failure=").ok_or_else(|| err("summary lacks failure".into()))?;
    let mut fields = std::collections::HashMap::new();
    for tok in head.split(' ') {
        let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("bad summary token {tok:?}")))?;
        if fields.insert(k, v).is_some() {
            return Err(err(format!("duplicate summary key {k}")));
        }
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(format!("summary lacks {k}")));
    let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| err(format!("bad {k}")));
    let int = |k: &str| get(k)?.parse::<usize>().map_err(|_| err(format!("bad {k}")));
    let failure = match failure_text {
        "none" => None,
        s => {
            let (stage, detail) = s.split_once(':').ok_or_else(|| err("bad failure".into()))?;
            let stage = match stage {
                "planner" => FailureStage::Planner,
                "translator" => FailureStage::Translator,
                _ => return Err(err(format!("bad failure stage {stage:?}"))),
            };
            Some(Failure { stage, detail: detail.to_string() })
        }
    };
    if fields.len() != 6 {
        return Err(err("unexpected summary keys".into()));
    }
    Ok(RolloutSummary {
        success: match get("success")? {
            "0" => false,
            "1" => true,
            _ => return Err(err("bad success flag".into())),
        },
        progress: num("progress")?,
        steps: int("steps")?,
        plans: int("plans")?,
        initial_distance: num("initial_distance")?,
        final_distance: num("final_distance")?,
        failure,
    })
}

fn progress(initial: f64, last: f64) -> f64 {
    if initial <= 0.0 {
        1.0
    } else {
        (1.0 - last / initial).clamp(0.0, 1.0)
    }
}

/// Runs Alg. 1 from `start` until the goal is within tolerance or
/// `max_steps` actions have executed. Planner and translator errors end the
/// episode and are recorded in the summary.
pub fn rollout(
    planner: &ScriptedPlanner,
    translator: &Translator,
    env: &Env,
    cfg: &ControllerConfig,
    goal: &GoalSpec,
    start: &ChainState,
) -> Result<RolloutLog> {
    env.validate()?;
    cfg.validate()?;
    planner.validate(env)?;
    goal.validate(env)?;
    if start.q.len() != env.n_joints() {
        return Err(Error::Shape(format!("start has {} joints, chain {}", start.q.len(), env.n_joints())));
    }
    let r = cfg.actions_per_frame;
    let frame_cap = r as f64 * env.delta_max;
    let mut state = start.clamped(&env.config);
    let initial = goal.distance(env, &state);
    let mut dist = initial;
    let mut steps = Vec::new();
    let mut plans = 0usize;
    let mut any_infeasible = false;
    let mut failure = None;
    let mut observed = env.render(&state);

    while dist >= goal.tolerance && steps.len() < cfg.max_steps {
        let chunk = match plan(planner, env, &state, goal, cfg.lookahead, plans as u64) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(Failure { stage: FailureStage::Planner, detail: e.to_string() });
                break;
            }
        };
        let plan_index = plans;
        plans += 1;
        let k = cfg.commit;
        let feasible = chunk.implied_steps[..k].iter().all(|s| *s <= frame_cap + 1e-12);
        any_infeasible |= !feasible;

        let mut frames = Vec::with_capacity(k + 1);
        frames.push(observed.clone());
        frames.extend(chunk.frames[..k].iter().cloned());
        let mut states = Vec::with_capacity(k + 1);
        states.push(state.clone());
        states.extend(chunk.states[..k].iter().cloned());
        let frames_digest = digest(&frames[1..]);

        let recovered = translate_chunk(
            &frames,
            |i, image, flow| translator.field(env, &states[i], image, flow),
            |i, _, _| {
                let exact = oracle_flow_between(&env.config, &env.camera, &states[i], &states[i + 1], [0.0, 0.0]).flow;
                Ok(match &cfg.replan_noise {
                    Some(noise) => {
                        let seed = noise.seed ^ ((plan_index as u64) << 20) ^ i as u64;
                        add_noise(&exact, &FlowNoiseModel { seed, ..noise.clone() })
                    }
                    None => exact,
                })
            },
            &translator.ridge,
            frame_cap,
        );
        let recovered = match recovered {
            Ok(r) => r,
            Err(e) => {
                failure = Some(Failure { stage: FailureStage::Translator, detail: e.to_string() });
                break;
            }
        };
        'chunk: for pair in &recovered {
            let action = pair.action.scaled(1.0 / r as f64);
            for _ in 0..r {
                let observed_q = state.q.clone();
                state = env.step(&state, &action);
                dist = goal.distance(env, &state);
                steps.push(RolloutStep {
                    step: steps.len(),
                    plan: plan_index,
                    observed_q,
                    frames_digest,
                    plan_feasible: feasible,
                    action: action.delta_a.clone(),
                    executed_q: state.q.clone(),
                    distance: dist,
                });
                if dist < goal.tolerance || steps.len() >= cfg.max_steps {
                    break 'chunk;
                }
            }
        }
        observed = env.render(&state);
    }

    let success = dist < goal.tolerance;
    if !success && failure.is_none() {
        failure = Some(if any_infeasible {
            Failure { stage: FailureStage::Planner, detail: "planned frames imply infeasible motion".into() }
        } else {
            Failure { stage: FailureStage::Translator, detail: format!("goal not reached in {} steps", cfg.max_steps) }
        });
    }
    let summary = RolloutSummary {
        success,
        progress: if success { 1.0 } else { progress(initial, dist) },
        steps: steps.len(),
        plans,
        initial_distance: initial,
        final_distance: dist,
        failure,
    };
    Ok(RolloutLog { steps, summary })
}

/// A start state and goal for one reaching episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachTask {
    pub start: ChainState,
    pub goal: GoalSpec,
}

/// Tip-reaching tasks: start and goal poses drawn uniformly within
/// `spread` of zero (clipped to the limits); the goal is the tip pixel of
/// the goal pose.
pub fn reaching_tasks(env: &Env, count: usize, spread: f64, tolerance: f64, seed: u64) -> Vec<ReachTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let q: Vec<f64> = env
            .config
            .joint_limits
            .iter()
            .map(|(lo, hi)| rng.random_range(lo.max(-spread)..=hi.min(spread)))
            .collect();
        ChainState::new(q)
    };
    (0..count)
        .map(|_| {
            let start = draw(&mut rng);
            let target = draw(&mut rng);
            ReachTask { start, goal: GoalSpec { target: GoalTarget::TipPixel(env.tip_pixel(&target)), tolerance } }
        })
        .collect()
}

/// Aggregate over a batch of rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub episodes: usize,
    pub successes: usize,
    pub mean_progress: f64,
    pub mean_plans: f64,
    pub planner_failures: usize,
    pub translator_failures: usize,
}

impl RolloutStats {
    pub fn from_logs(logs: &[RolloutLog]) -> Self {
        let count = |stage| logs.iter().filter(|l| l.summary.failure.as_ref().map(|f| f.stage) == Some(stage)).count();
        let n = logs.len().max(1) as f64;
        Self {
            episodes: logs.len(),
            successes: logs.iter().filter(|l| l.summary.success).count(),
            mean_progress: logs.iter().map(|l| l.summary.progress).sum::<f64>() / n,
            mean_plans: logs.iter().map(|l| l.summary.plans as f64).sum::<f64>() / n,
            planner_failures: count(FailureStage::Planner),
            translator_failures: count(FailureStage::Translator),
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes.max(1) as f64
    }
}

/// Runs every task in parallel. The planner seed of task `i` is
/// `planner.seed + i`, so results do not depend on scheduling.
pub fn run_tasks(
    planner: &ScriptedPlanner,
    translator: &Translator,
    env: &Env,
    cfg: &ControllerConfig,
    tasks: &[ReachTask],
) -> Result<Vec<RolloutLog>> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let p = ScriptedPlanner { seed: planner.seed.wrapping_add(i as u64), ..planner.clone() };
            rollout(&p, translator, env, cfg, &t.goal, &t.start)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSweepRow {
    pub commit: usize,
    pub success_rate: f64,
    pub mean_progress: f64,
    pub mean_plans: f64,
}

/// Success statistics per commit length `K`. Every `K` sees the same tasks;
/// planner noise streams are disjoint across `K` and trials.
pub fn chunk_sweep(
    planner: &ScriptedPlanner,
    translator: &Translator,
    env: &Env,
    base: &ControllerConfig,
    ks: &[usize],
    tasks: &[ReachTask],
) -> Result<Vec<ChunkSweepRow>> {
    if let Some(k) = ks.iter().find(|k| **k == 0 || **k > base.lookahead) {
        return Err(Error::InvalidConfig(format!("commit {k} outside 1..={}", base.lookahead)));
    }
    ks.iter()
        .map(|&k| {
            let cfg = ControllerConfig { commit: k, ..base.clone() };
            let p = ScriptedPlanner { seed: planner.seed.wrapping_add((k as u64) << 32), ..planner.clone() };
            let stats = RolloutStats::from_logs(&run_tasks(&p, translator, env, &cfg, tasks)?);
            Ok(ChunkSweepRow { commit: k, success_rate: stats.success_rate(), mean_progress: stats.mean_progress, mean_plans: stats.mean_plans })
        })
        .collect()
}
