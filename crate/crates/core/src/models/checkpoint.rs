//! Parameter checkpoints.
//!
//! Layout, little-endian: magic `JPRM`, `u32` version, `u32` kind tag,
//! `u32` descriptor length, descriptor (UTF-8 key/value text), `u64`
//! parameter count, then the `f64` parameters.

use std::fs;
use std::path::Path;

use super::direct::{DirectIdm, DirectSpec};
use super::features::FeatureSpec;
use super::jidm::{FieldModelSpec, PatchFieldModel};
use super::{Model, ModelKind};
use crate::config::{ConfigDoc, Section};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"JPRM";
pub const VERSION: u32 = 1;
const MAX_DESCRIPTOR: usize = 1 << 16;

fn features_to(s: &mut Section, f: &FeatureSpec) {
    s.set("height", f.height);
    s.set("width", f.width);
    s.set("channels", f.channels);
    s.set("patch_size", f.patch_size);
    s.set("patch_stride", f.patch_stride);
    s.set("context_grid", f.context_grid);
    s.set("pyramid_levels", f.pyramid_levels);
}

fn hidden_to(s: &mut Section, h: &[usize]) {
    s.set("hidden", h.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "));
}

/// Descriptor section for a model.
pub fn descriptor(model: &Model) -> Section {
    let mut s = Section::new("model");
    s.set("kind", model.kind());
    match model {
        Model::Field(m) => {
            s.set("n_joints", m.spec.n_joints);
            features_to(&mut s, &m.spec.features);
            hidden_to(&mut s, &m.spec.hidden);
            s.set_f64("output_scale", m.spec.output_scale);
        }
        Model::Direct(m) => {
            s.set("n_joints", m.spec.n_joints);
            features_to(&mut s, &m.spec.features);
            hidden_to(&mut s, &m.spec.hidden);
            s.set("fusion_width", m.spec.fusion_width);
            s.set("pool_stride", m.spec.pool_stride);
            s.set_f64("delta_max", m.spec.delta_max);
            s.set_f64("flow_scale", m.spec.flow_scale);
        }
    }
    s
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut doc = ConfigDoc::new();
    doc.push(descriptor(model));
    let desc = doc.to_string().into_bytes();
    let params = model.params();
    let mut out = Vec::with_capacity(24 + desc.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.kind().tag().to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated checkpoint: missing {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut rest = bytes;
    if take(&mut rest, 4, "magic")? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32_at(&mut rest, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let tag = u32_at(&mut rest, "kind")?;
    let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown model kind tag {tag}")))?;
    let desc_len = u32_at(&mut rest, "descriptor length")? as usize;
    if desc_len > MAX_DESCRIPTOR {
        return Err(Error::Format(format!("descriptor of {desc_len} bytes is too large")));
    }
    let desc = std::str::from_utf8(take(&mut rest, desc_len, "descriptor")?)
        .map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
    let count = u64::from_le_bytes(take(&mut rest, 8, "parameter count")?.try_into().expect("8 bytes"));
    if (rest.len() as u64) != count.saturating_mul(8) || rest.len() % 8 != 0 {
        return Err(Error::Format(format!("expected {count} parameters, found {} bytes", rest.len())));
    }
    let params: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();

    let doc = ConfigDoc::parse(desc)?;
    doc.reject_unknown_sections(&["model"])?;
    let mut r = doc.require("model")?.reader();
    let named: ModelKind = r.get("kind")?;
    if named != kind {
        return Err(Error::Format(format!("descriptor says {named}, tag says {kind}")));
    }
    let n_joints: usize = r.get("n_joints")?;
    let features = FeatureSpec {
        height: r.get("height")?,
        width: r.get("width")?,
        channels: r.get("channels")?,
        patch_size: r.get("patch_size")?,
        patch_stride: r.get("patch_stride")?,
        context_grid: r.get("context_grid")?,
        pyramid_levels: r.get("pyramid_levels")?,
    };
    let hidden: Vec<usize> = r.list("hidden")?;
    // Bound the implied layer sizes before allocating anything from them.
    let too_big = |v: usize| v > 1 << 16;
    if too_big(n_joints) || too_big(features.height) || too_big(features.width) || too_big(features.patch_size) || hidden.iter().any(|h| too_big(*h)) {
        return Err(Error::Format("descriptor dimensions out of range".into()));
    }
    let model = match kind.direct_variant() {
        None => {
            let output_scale = r.get("output_scale")?;
            r.finish()?;
            let spec = FieldModelSpec { n_joints, features, hidden, output_scale };
            spec.validate()?;
            check_count(spec.param_count(), params.len())?;
            Model::Field(PatchFieldModel::from_params(spec, params)?)
        }
        Some(variant) => {
            let spec = DirectSpec {
                variant,
                n_joints,
                features,
                hidden,
                fusion_width: r.get("fusion_width")?,
                pool_stride: r.get("pool_stride")?,
                delta_max: r.get("delta_max")?,
                flow_scale: r.get("flow_scale")?,
            };
            r.finish()?;
            if too_big(spec.fusion_width) {
                return Err(Error::Format("descriptor dimensions out of range".into()));
            }
            spec.validate()?;
            check_count(spec.param_count(), params.len())?;
            Model::Direct(DirectIdm::from_params(spec, params)?)
        }
    };
    Ok(model)
}

fn check_count(want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::Format(format!("descriptor implies {want} parameters, file has {got}")));
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}
