//! MBConv backbones, the patch / single-view / two-view heads, weight
//! transfer between cascade stages and the checkpoint archive.

mod checkpoint;
pub mod config;
pub mod layers;
mod model;
pub mod params;
mod scalar;
mod tensor;
mod transfer;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use config::{plan_backbone, plan_blocks, plan_two_view, BackboneConfig, BlockSpec, FusionMode, HeadKind, HeadSpec};
pub use model::{tower_prefix, ModelGraph, ModelSpec, Stage};
pub use params::{glob_match, Grads, ParamStore, Role};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use transfer::{transfer_weights, TransferReport};

use crate::error::Result;
use crate::pixelops::Plane;

/// One model input: a single view, or a (CC, MLO) pair for two-view models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Single(Plane),
    Pair { cc: Plane, mlo: Plane },
}

/// Bare backbone with seed-controlled He fan-in initialization.
pub fn build_backbone<T: Scalar>(cfg: &BackboneConfig, (h, w): (usize, usize), seed: u64) -> Result<ModelGraph<T>> {
    ModelGraph::build(ModelSpec { backbone: cfg.clone(), input_height: h, input_width: w, head: None }, seed)
}

fn attach<T: Scalar>(base: &ModelGraph<T>, head: HeadSpec, seed: u64) -> Result<(ModelGraph<T>, TransferReport)> {
    let spec = ModelSpec { head: Some(head), ..base.spec.clone() };
    let mut g = ModelGraph::build(spec, seed)?;
    let report = transfer_weights(base, &mut g)?;
    Ok((g, report))
}

/// Backbone, global average pooling, dense(5), softmax.
pub fn attach_patch_head<T: Scalar>(backbone: &ModelGraph<T>, seed: u64) -> Result<ModelGraph<T>> {
    Ok(attach(backbone, HeadSpec::patch(), seed)?.0)
}

/// Keeps the backbone of `base` (dropping any patch classifier) and adds
/// the single-view blocks and dense(2).
pub fn attach_single_view_head<T: Scalar>(base: &ModelGraph<T>, head: HeadSpec) -> Result<(ModelGraph<T>, TransferReport)> {
    attach_seeded(base, head, 0)
}

pub fn attach_seeded<T: Scalar>(base: &ModelGraph<T>, head: HeadSpec, seed: u64) -> Result<(ModelGraph<T>, TransferReport)> {
    attach(base, head, seed)
}

/// Two towers initialized from the single-view backbone, joined by the
/// fusion head.
pub fn fuse_two_view<T: Scalar>(single: &ModelGraph<T>, fusion: HeadSpec, seed: u64) -> Result<(ModelGraph<T>, TransferReport)> {
    attach(single, fusion, seed)
}

impl<T: Scalar> ModelGraph<T> {
    /// Same parameters with a different declared input size.
    pub fn with_input_dims(&self, h: usize, w: usize) -> Result<Self> {
        let spec = ModelSpec { input_height: h, input_width: w, ..self.spec.clone() };
        let mut g = ModelGraph::build(spec, 0)?;
        g.params = self.params.clone();
        Ok(g)
    }
}
