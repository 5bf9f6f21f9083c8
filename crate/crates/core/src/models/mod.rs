//! Trainable inverse-dynamics models and their training loop.

pub mod adam;
pub mod checkpoint;
pub mod direct;
pub mod eval;
pub mod features;
pub mod jidm;
pub mod mlp;
pub mod train;

pub use direct::{DirectIdm, DirectInput, DirectSpec, DirectVariant};
pub use features::FeatureSpec;
pub use jidm::{FieldModelSpec, JidmLossConfig, JidmSample, PatchFieldModel};
pub use train::{train, LossPoint, TrainConfig};

use std::fmt;

/// Checkpoint tag of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Jidm,
    Unipi,
    DidmFlow,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Jidm, ModelKind::DidmFlow, ModelKind::Unipi];

    pub fn tag(self) -> u32 {
        match self {
            ModelKind::Jidm => 1,
            ModelKind::Unipi => 2,
            ModelKind::DidmFlow => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn direct_variant(self) -> Option<DirectVariant> {
        match self {
            ModelKind::Jidm => None,
            ModelKind::Unipi => Some(DirectVariant::FramePair),
            ModelKind::DidmFlow => Some(DirectVariant::FlowConditioned),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.direct_variant() {
            None => f.write_str("jidm"),
            Some(v) => v.fmt(f),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        if s == "jidm" {
            return Ok(ModelKind::Jidm);
        }
        match s.parse::<DirectVariant>()? {
            DirectVariant::FramePair => Ok(ModelKind::Unipi),
            DirectVariant::FlowConditioned => Ok(ModelKind::DidmFlow),
        }
    }
}

/// Any trainable inverse-dynamics model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Field(PatchFieldModel),
    Direct(DirectIdm),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Field(_) => ModelKind::Jidm,
            Model::Direct(d) => match d.spec.variant {
                DirectVariant::FramePair => ModelKind::Unipi,
                DirectVariant::FlowConditioned => ModelKind::DidmFlow,
            },
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Field(m) => &m.params,
            Model::Direct(m) => &m.params,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// A freshly initialized model of `kind`, with direct models matched in
    /// size to a field model built from `field`.
    pub fn build(kind: ModelKind, field: &FieldModelSpec, pool_stride: usize, delta_max: f64, seed: u64) -> crate::Result<Self> {
        match kind.direct_variant() {
            None => Ok(Model::Field(PatchFieldModel::new(field.clone(), seed)?)),
            Some(v) => Ok(Model::Direct(DirectIdm::new(DirectSpec::matched(v, field, pool_stride, delta_max), seed)?)),
        }
    }
}
