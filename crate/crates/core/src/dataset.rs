//! Self-play transition data and its binary persistence.
//!
//! Record file layout (little-endian):
//!
//! ```text
//! header: "JIDM" | version u32 | H u32 | W u32 | C u32 | n u32 | record_count u64
//! record: o_t      H·W·C f32
//!         delta_a  n f32
//!         o_next   H·W·C f32
//!         flow     H·W·2 f32
//!         valid    H·W u8
//!         occluded H·W u8
//!         state_q  n f32
//! ```
//!
//! A dataset on disk is one or more shard files plus a text manifest in the
//! shared config format. Joint angles and actions are generated on a
//! `2^-20` rad grid so they are exactly representable in `f32`; the stored
//! values reproduce every rendered image and flow field bit for bit.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{self, ConfigDoc, Section};
use crate::error::{Error, Result};
use crate::flow::{oracle_flow, FlowField};
use crate::kinematics::{Action, CameraModel, ChainConfig, ChainState};
use crate::render::{render, Image, RenderStyle};

pub const MAGIC: &[u8; 4] = b"JIDM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;
const GRID: f64 = 1_048_576.0; // 2^20

/// One `(o_t, δa_t, o_{t+1})` transition with its flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub o_t: Image,
    pub delta_a: Vec<f64>,
    pub o_next: Image,
    pub flow: FlowField,
    pub occluded: Vec<bool>,
    /// Diagnostics only; never a model input.
    pub state_q: Vec<f64>,
}

/// How self-play increments are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionLaw {
    /// i.i.d. uniform in `[-δ_max, δ_max]^n`.
    Uniform,
    /// AR(1): `δ_t = ρ δ_{t-1} + √(1-ρ²) u_t`, `u_t` uniform, then capped.
    Correlated(f64),
}

impl std::fmt::Display for ActionLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionLaw::Uniform => write!(f, "uniform"),
            ActionLaw::Correlated(rho) => write!(f, "correlated({rho:?})"),
        }
    }
}

impl std::str::FromStr for ActionLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(ActionLaw::Uniform);
        }
        let rho = s
            .strip_prefix("correlated(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|r| r.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown action law {s:?}")))?;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidConfig(format!("correlation {rho} outside [0, 1)")));
        }
        Ok(ActionLaw::Correlated(rho))
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfPlaySpec {
    pub config: ChainConfig,
    pub camera: CameraModel,
    pub style: RenderStyle,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub law: ActionLaw,
    pub delta_max: f64,
    pub seed: u64,
}

/// A set of transitions grouped in whole episodes of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SelfPlaySpec,
    pub records: Vec<TransitionRecord>,
    /// Episode index of each record (from the original generation).
    pub episode_ids: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.spec.config.n_joints()
    }

    /// Keeps the first `count` records (rounded down to whole episodes when
    /// possible, never below one episode).
    pub fn truncated(&self, count: usize) -> Dataset {
        let count = count.min(self.records.len());
        Dataset {
            spec: self.spec.clone(),
            records: self.records[..count].to_vec(),
            episode_ids: self.episode_ids[..count].to_vec(),
        }
    }
}

fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

/// Largest grid value not exceeding `hi` (and symmetric for `lo`).
fn snap_inside(v: f64, lo: f64, hi: f64) -> f64 {
    let mut s = snap(v.clamp(lo, hi));
    if s > hi {
        s -= 1.0 / GRID;
    }
    if s < lo {
        s += 1.0 / GRID;
    }
    s
}

fn draw_episode(spec: &SelfPlaySpec, episode: usize) -> Vec<TransitionRecord> {
    let n = spec.config.n_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(episode as u64);
    let cap = snap_inside(spec.delta_max, -spec.delta_max, spec.delta_max);
    let mut q: Vec<f64> = spec
        .config
        .joint_limits
        .iter()
        .map(|&(lo, hi)| snap_inside(rng.random_range(lo..=hi), lo, hi))
        .collect();
    let mut prev = vec![0.0; n];
    let mut state = ChainState::new(q.clone());
    let mut o_t = render(&spec.config, &spec.camera, &spec.style, &state);
    let mut out = Vec::with_capacity(spec.steps_per_episode);
    for _ in 0..spec.steps_per_episode {
        let raw: Vec<f64> = (0..n)
            .map(|j| {
                let u = rng.random_range(-spec.delta_max..=spec.delta_max);
                match spec.law {
                    ActionLaw::Uniform => u,
                    ActionLaw::Correlated(rho) => rho * prev[j] + (1.0 - rho * rho).sqrt() * u,
                }
            })
            .collect();
        let mut delta = vec![0.0; n];
        for j in 0..n {
            let (lo, hi) = spec.config.joint_limits[j];
            let d = snap(raw[j]).clamp(-cap, cap);
            let target = snap_inside(q[j] + d, lo, hi);
            delta[j] = target - q[j];
        }
        prev.clone_from(&delta);
        let action = Action::new(delta.clone());
        let of = oracle_flow(&spec.config, &spec.camera, &spec.style, &state, &action);
        let next = state.advanced(&action);
        let o_next = render(&spec.config, &spec.camera, &spec.style, &next);
        out.push(TransitionRecord {
            o_t: o_t.clone(),
            delta_a: delta,
            o_next: o_next.clone(),
            flow: of.flow,
            occluded: of.occluded,
            state_q: q.clone(),
        });
        q = next.q.clone();
        state = next;
        o_t = o_next;
    }
    out
}

/// Generates random-motion self-play transitions. Output bytes depend only
/// on `spec`; episodes are produced in parallel and collected in order.
pub fn generate_selfplay(spec: &SelfPlaySpec) -> Result<Dataset> {
    if spec.episodes == 0 || spec.steps_per_episode == 0 {
        return Err(Error::InvalidConfig("episodes and steps_per_episode must be >= 1".into()));
    }
    if !(spec.delta_max > 0.0 && spec.delta_max.is_finite()) {
        return Err(Error::InvalidConfig(format!("delta_max {} must be > 0", spec.delta_max)));
    }
    spec.config.validate()?;
    spec.camera.validate()?;
    spec.style.validate(spec.config.n_joints())?;
    let episodes: Vec<Vec<TransitionRecord>> = (0..spec.episodes).into_par_iter().map(|e| draw_episode(spec, e)).collect();
    let mut records = Vec::with_capacity(spec.episodes * spec.steps_per_episode);
    let mut episode_ids = Vec::with_capacity(records.capacity());
    for (e, recs) in episodes.into_iter().enumerate() {
        episode_ids.extend(std::iter::repeat_n(e as u32, recs.len()));
        records.extend(recs);
    }
    Ok(Dataset { spec: spec.clone(), records, episode_ids })
}

/// Episode-level split into `(train, val)`. Each episode goes wholly to one
/// side; the assignment is a seeded shuffle of episode ids.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!("train_fraction {train_fraction} must be in (0, 1)")));
    }
    let mut ids: Vec<u32> = dataset.episode_ids.clone();
    ids.dedup();
    let mut shuffled = ids.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..shuffled.len()).rev() {
        let j = rng.random_range(0..=i);
        shuffled.swap(i, j);
    }
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    if n_train == 0 || n_train == ids.len() {
        return Err(Error::Domain(format!(
            "split of {} episodes at fraction {train_fraction} leaves one side empty",
            ids.len()
        )));
    }
    let train_set: std::collections::HashSet<u32> = shuffled[..n_train].iter().copied().collect();
    let mut train = Dataset { spec: dataset.spec.clone(), records: Vec::new(), episode_ids: Vec::new() };
    let mut val = train.clone();
    for (rec, &e) in dataset.records.iter().zip(&dataset.episode_ids) {
        let side = if train_set.contains(&e) { &mut train } else { &mut val };
        side.records.push(rec.clone());
        side.episode_ids.push(e);
    }
    Ok((train, val))
}

/// Shape parameters from a record file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_joints: usize,
    pub record_count: u64,
}

impl RecordHeader {
    /// Bytes per record, or `None` on overflow.
    pub fn record_len(&self) -> Option<usize> {
        let hw = self.height.checked_mul(self.width)?;
        let img = hw.checked_mul(self.channels)?.checked_mul(4)?;
        let flow = hw.checked_mul(8)?;
        let masks = hw.checked_mul(2)?;
        let act = self.n_joints.checked_mul(4)?;
        img.checked_mul(2)?.checked_add(flow)?.checked_add(masks)?.checked_add(act.checked_mul(2)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: impl Iterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes records into the binary layout.
pub fn encode_records(records: &[TransitionRecord], n_joints: usize, image_shape: (usize, usize, usize)) -> Result<Vec<u8>> {
    let (h, w, c) = image_shape;
    let header = RecordHeader { version: FORMAT_VERSION, height: h, width: w, channels: c, n_joints, record_count: records.len() as u64 };
    let rec_len = header.record_len().ok_or_else(|| Error::Format("record size overflow".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + rec_len * records.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for v in [h, w, c, n_joints] {
        put_u32(&mut out, u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?);
    }
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.o_t.height != h || r.o_t.width != w || r.o_t.channels != c || !r.o_t.same_shape(&r.o_next) {
            return Err(Error::Shape("record image shape differs from header".into()));
        }
        if r.delta_a.len() != n_joints || r.state_q.len() != n_joints {
            return Err(Error::Shape("record action/state length differs from header".into()));
        }
        if r.flow.height != h || r.flow.width != w || r.occluded.len() != h * w {
            return Err(Error::Shape("record flow shape differs from header".into()));
        }
        put_f32s(&mut out, r.o_t.data.iter().copied());
        put_f32s(&mut out, r.delta_a.iter().map(|v| *v as f32));
        put_f32s(&mut out, r.o_next.data.iter().copied());
        put_f32s(&mut out, r.flow.vectors.iter().copied());
        out.extend(r.flow.valid.iter().map(|v| *v as u8));
        out.extend(r.occluded.iter().map(|v| *v as u8));
        put_f32s(&mut out, r.state_q.iter().map(|v| *v as f32));
    }
    Ok(out)
}

/// Parses and validates a record-file header.
pub fn decode_header(bytes: &[u8]) -> Result<RecordHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected JIDM".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let header = RecordHeader {
        version,
        height: u32_at(8) as usize,
        width: u32_at(12) as usize,
        channels: u32_at(16) as usize,
        n_joints: u32_at(20) as usize,
        record_count: u64::from_le_bytes(bytes[24..32].try_into().unwrap()),
    };
    if header.height == 0 || header.width == 0 || header.n_joints == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    if header.channels != 1 && header.channels != 3 {
        return Err(Error::Format(format!("unsupported channel count {}", header.channels)));
    }
    Ok(header)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn f32s(&mut self, count: usize) -> Vec<f32> {
        let end = self.pos + 4 * count;
        let out = self.bytes[self.pos..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        self.pos = end;
        out
    }

    fn flags(&mut self, count: usize) -> Result<Vec<bool>> {
        let end = self.pos + count;
        let out = self.bytes[self.pos..end]
            .iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("mask byte {other} is not 0/1"))),
            })
            .collect();
        self.pos = end;
        out
    }
}

/// Parses a whole record file. The total length must match the header
/// exactly; nothing is allocated on the header's word alone.
pub fn decode_records(bytes: &[u8]) -> Result<(RecordHeader, Vec<TransitionRecord>)> {
    let header = decode_header(bytes)?;
    let rec_len = header.record_len().ok_or_else(|| Error::Format("record size overflow".into()))?;
    let body = bytes.len() - HEADER_LEN;
    let expected = usize::try_from(header.record_count)
        .ok()
        .and_then(|c| c.checked_mul(rec_len))
        .ok_or_else(|| Error::Format("record count overflow".into()))?;
    if body != expected {
        return Err(Error::Format(format!("body is {body} bytes, header implies {expected}")));
    }
    let (h, w, c, n) = (header.height, header.width, header.channels, header.n_joints);
    let mut cur = Cursor { bytes, pos: HEADER_LEN };
    let mut records = Vec::with_capacity(header.record_count as usize);
    for _ in 0..header.record_count {
        let o_t = Image { height: h, width: w, channels: c, data: cur.f32s(h * w * c) };
        let delta_a = cur.f32s(n).into_iter().map(f64::from).collect();
        let o_next = Image { height: h, width: w, channels: c, data: cur.f32s(h * w * c) };
        let vectors = cur.f32s(h * w * 2);
        let valid = cur.flags(h * w)?;
        let occluded = cur.flags(h * w)?;
        let state_q = cur.f32s(n).into_iter().map(f64::from).collect();
        records.push(TransitionRecord {
            o_t,
            delta_a,
            o_next,
            flow: FlowField { height: h, width: w, vectors, valid },
            occluded,
            state_q,
        });
    }
    Ok((header, records))
}

/// One shard of an on-disk dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardEntry {
    pub file: String,
    /// Byte offset of this shard in the concatenation of all shards.
    pub byte_offset: u64,
    pub records: u64,
}

/// Text sidecar describing an on-disk dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub record_count: u64,
    pub spec: SelfPlaySpec,
    pub shards: Vec<ShardEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", self.format_version)));
        }
        if self.shards.windows(2).any(|w| w[1].byte_offset <= w[0].byte_offset) {
            return Err(Error::Format("shard offsets must be strictly increasing".into()));
        }
        let total: u64 = self.shards.iter().map(|s| s.records).sum();
        if total != self.record_count {
            return Err(Error::Format(format!("shards hold {total} records, manifest says {}", self.record_count)));
        }
        Ok(())
    }

    pub fn to_doc(&self) -> ConfigDoc {
        let mut doc = ConfigDoc::new();
        let mut m = Section::new("manifest");
        m.set("format_version", self.format_version);
        m.set("record_count", self.record_count);
        m.set(
            "shards",
            self.shards.iter().map(|s| format!("{}:{}:{}", s.file, s.byte_offset, s.records)).collect::<Vec<_>>().join(", "),
        );
        doc.push(m);
        let mut sp = Section::new("selfplay");
        sp.set("seed", self.spec.seed);
        sp.set("episodes", self.spec.episodes);
        sp.set("steps_per_episode", self.spec.steps_per_episode);
        sp.set("action_law", self.spec.law);
        sp.set_f64("delta_max", self.spec.delta_max);
        doc.push(sp);
        doc.push(config::chain_to_section(&self.spec.config));
        doc.push(config::camera_to_section(&self.spec.camera));
        doc.push(config::style_to_section(&self.spec.style));
        doc
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = ConfigDoc::parse(text)?;
        doc.reject_unknown_sections(&["manifest", "selfplay", "chain", "camera", "style"])?;
        let mut m = doc.require("manifest")?.reader();
        let format_version = m.get("format_version")?;
        let record_count = m.get("record_count")?;
        let shard_items: Vec<String> = m.list("shards")?;
        m.finish()?;
        let shards = shard_items
            .iter()
            .map(|item| {
                let mut parts = item.rsplitn(3, ':');
                let records = parts.next().and_then(|v| v.parse().ok());
                let offset = parts.next().and_then(|v| v.parse().ok());
                let file = parts.next().filter(|f| !f.is_empty() && !f.contains(['/', '\\']) && *f != "..");
                match (file, offset, records) {
                    (Some(f), Some(o), Some(r)) => Ok(ShardEntry { file: f.to_string(), byte_offset: o, records: r }),
                    _ => Err(Error::Format(format!("bad shard entry {item:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sp = doc.require("selfplay")?.reader();
        let seed = sp.get("seed")?;
        let episodes = sp.get("episodes")?;
        let steps_per_episode: usize = sp.get("steps_per_episode")?;
        let law = sp.get("action_law")?;
        let delta_max = sp.get("delta_max")?;
        sp.finish()?;
        let config = config::chain_from_section(doc.require("chain")?)?;
        let camera = config::camera_from_section(doc.require("camera")?)?;
        let style = config::style_from_section(doc.require("style")?)?;
        if steps_per_episode == 0 {
            return Err(Error::Format("steps_per_episode must be >= 1".into()));
        }
        let manifest = DatasetManifest {
            format_version,
            record_count,
            spec: SelfPlaySpec { config, camera, style, episodes, steps_per_episode, law, delta_max, seed },
            shards,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Writes `dataset` as `<stem>.manifest` plus shard files in `dir`.
/// `records_per_shard = None` writes a single shard.
pub fn write_dataset(dataset: &Dataset, dir: &Path, stem: &str, records_per_shard: Option<usize>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let spec = &dataset.spec;
    let shape = (spec.camera.height, spec.camera.width, spec.style.channels);
    let per = records_per_shard.unwrap_or(dataset.len().max(1)).max(1);
    let mut shards = Vec::new();
    let mut offset = 0u64;
    let chunks: Vec<&[TransitionRecord]> =
        if dataset.is_empty() { vec![&dataset.records[..]] } else { dataset.records.chunks(per).collect() };
    for (i, chunk) in chunks.iter().enumerate() {
        let file = if chunks.len() == 1 { format!("{stem}.bin") } else { format!("{stem}.{i:04}.bin") };
        let bytes = encode_records(chunk, dataset.n_joints(), shape)?;
        std::fs::File::create(dir.join(&file))?.write_all(&bytes)?;
        shards.push(ShardEntry { file, byte_offset: offset, records: chunk.len() as u64 });
        offset += bytes.len() as u64;
    }
    let manifest = DatasetManifest { format_version: FORMAT_VERSION, record_count: dataset.len() as u64, spec: spec.clone(), shards };
    let path = dir.join(format!("{stem}.manifest"));
    std::fs::write(&path, manifest.to_doc().to_string())?;
    Ok(path)
}

/// Loads a dataset from its manifest path.
pub fn read_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::parse(&std::fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let spec = manifest.spec.clone();
    let mut records = Vec::with_capacity(manifest.record_count as usize);
    for shard in &manifest.shards {
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(&shard.file))?.read_to_end(&mut bytes)?;
        let (header, recs) = decode_records(&bytes)?;
        if (header.height, header.width, header.channels, header.n_joints)
            != (spec.camera.height, spec.camera.width, spec.style.channels, spec.config.n_joints())
        {
            return Err(Error::Format(format!("shard {} shape disagrees with manifest", shard.file)));
        }
        if header.record_count != shard.records {
            return Err(Error::Format(format!("shard {} holds {} records, manifest says {}", shard.file, header.record_count, shard.records)));
        }
        records.extend(recs);
    }
    let steps = spec.steps_per_episode as u32;
    // Records are stored in whole episodes; ids are recovered positionally.
    let episode_ids = (0..records.len() as u32).map(|i| i / steps).collect();
    Ok(Dataset { spec, records, episode_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::ChainTaper;

    pub(crate) fn small_spec(episodes: usize, steps: usize, seed: u64) -> SelfPlaySpec {
        let config = ChainConfig::tapered(3, &ChainTaper::default()).unwrap();
        let camera = CameraModel::fit(&config, 32, 32, 32.0).unwrap();
        SelfPlaySpec {
            style: RenderStyle::default_for(3),
            config,
            camera,
            episodes,
            steps_per_episode: steps,
            law: ActionLaw::Uniform,
            delta_max: 0.12,
            seed,
        }
    }

    #[test]
    fn one_episode_one_step() {
        let ds = generate_selfplay(&small_spec(1, 1, 0)).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(generate_selfplay(&small_spec(0, 1, 0)).is_err());
    }

    #[test]
    fn records_satisfy_invariants() {
        let ds = generate_selfplay(&small_spec(3, 4, 9)).unwrap();
        for (i, r) in ds.records.iter().enumerate() {
            assert!(r.delta_a.iter().all(|d| d.abs() <= 0.12));
            let q_next: Vec<f64> = r.state_q.iter().zip(&r.delta_a).map(|(a, b)| a + b).collect();
            for (j, v) in q_next.iter().enumerate() {
                let (lo, hi) = ds.spec.config.joint_limits[j];
                assert!(*v >= lo && *v <= hi);
            }
            for v in r.delta_a.iter().chain(&r.state_q) {
                assert_eq!(*v as f32 as f64, *v, "value not f32-exact");
            }
            // Consecutive records in an episode chain together.
            if i + 1 < ds.len() && ds.episode_ids[i] == ds.episode_ids[i + 1] {
                assert_eq!(r.o_next, ds.records[i + 1].o_t);
                assert_eq!(q_next, ds.records[i + 1].state_q);
            }
        }
    }

    #[test]
    fn stored_flow_matches_recomputed_oracle() {
        let spec = small_spec(2, 3, 4);
        let ds = generate_selfplay(&spec).unwrap();
        for r in &ds.records {
            let of = oracle_flow(&spec.config, &spec.camera, &spec.style, &ChainState::new(r.state_q.clone()), &Action::new(r.delta_a.clone()));
            assert_eq!(of.flow.valid, r.flow.valid);
            assert!(of.flow.max_abs_diff(&r.flow) < 1e-6);
        }
    }

    #[test]
    fn uniform_law_mean_is_zero() {
        let spec = SelfPlaySpec { episodes: 100, steps_per_episode: 100, ..small_spec(1, 1, 17) };
        let ds = generate_selfplay(&spec).unwrap();
        let count = ds.len() as f64;
        let sigma = 0.12 / 3f64.sqrt();
        for j in 0..3 {
            let mean = ds.records.iter().map(|r| r.delta_a[j]).sum::<f64>() / count;
            assert!(mean.abs() < 3.0 * sigma / count.sqrt(), "joint {j}: mean {mean}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_selfplay(&small_spec(2, 2, 5)).unwrap();
        let b = generate_selfplay(&small_spec(2, 2, 5)).unwrap();
        let shape = (32, 32, 1);
        assert_eq!(encode_records(&a.records, 3, shape).unwrap(), encode_records(&b.records, 3, shape).unwrap());
        let c = generate_selfplay(&small_spec(2, 2, 6)).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn split_is_episode_level_and_deterministic() {
        let ds = generate_selfplay(&small_spec(10, 2, 1)).unwrap();
        let (tr, va) = split(&ds, 0.5, 3).unwrap();
        let eps = |d: &Dataset| {
            let mut e = d.episode_ids.clone();
            e.dedup();
            e
        };
        assert_eq!(eps(&tr).len(), 5);
        assert_eq!(eps(&va).len(), 5);
        assert!(eps(&tr).iter().all(|e| !eps(&va).contains(e)));
        assert_eq!(tr.len() + va.len(), ds.len());
        let (tr2, _) = split(&ds, 0.5, 3).unwrap();
        assert_eq!(tr.episode_ids, tr2.episode_ids);
        assert!(split(&ds, 0.01, 3).is_err());
        assert!(split(&ds, 1.0, 3).is_err());
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let ds = generate_selfplay(&small_spec(3, 2, 8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for shard in [None, Some(4)] {
            let path = write_dataset(&ds, dir.path(), "d", shard).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn decoder_rejects_corruption() {
        let ds = generate_selfplay(&small_spec(1, 1, 2)).unwrap();
        let bytes = encode_records(&ds.records, 3, (32, 32, 1)).unwrap();
        assert!(decode_records(&bytes).is_ok());
        assert!(decode_records(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_records(&bad).is_err());
        let mut huge = bytes.clone();
        huge[24..32].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_records(&huge).is_err());
    }

    #[test]
    fn action_law_parsing() {
        assert_eq!("uniform".parse::<ActionLaw>().unwrap(), ActionLaw::Uniform);
        assert_eq!("correlated(0.8)".parse::<ActionLaw>().unwrap(), ActionLaw::Correlated(0.8));
        assert!("correlated(1.5)".parse::<ActionLaw>().is_err());
        assert_eq!(ActionLaw::Correlated(0.8).to_string().parse::<ActionLaw>().unwrap(), ActionLaw::Correlated(0.8));
    }
}
