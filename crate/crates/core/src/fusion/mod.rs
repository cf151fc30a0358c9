//! Cross-modality fusion of paired RGB/thermal feature sequences.
//!
//! The block runs in two stages: [`shallow_swap`] exchanges half the channels
//! between the two streams, then [`fuse`] normalizes each stream, gates its
//! SS2D response with a SiLU-activated MLP and mixes both gated responses
//! through a shared output MLP with residuals. [`inject`] adds fused
//! features back into backbone levels, and [`attention_fusion_baseline`] is
//! the quadratic-cost comparison point used by the benchmark.

mod attention;
mod block;
mod ops;
mod patch;

pub use attention::{attention_fusion_baseline, attention_fusion_counted, attention_weights, AttentionParams};
pub use block::{cfm_block, fuse, fuse_counted, FusionBlockParams, LayerNorm, Linear, Mlp3, ResidualMode};
pub use ops::{attention_key_dim, count_ops, FusionPath};
pub use patch::{patch_embed, PatchEmbedding};

use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Paired `B×N×C` feature tensors for the RGB and thermal streams.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatures {
    f_r: Tensor,
    f_t: Tensor,
}

impl ModalityFeatures {
    pub fn new(f_r: Tensor, f_t: Tensor) -> Result<Self> {
        if f_r.rank() != 3 {
            return shape_err(format!("features must be B×N×C, got {:?}", f_r.shape()));
        }
        if f_r.shape() != f_t.shape() {
            return shape_err(format!("modality shapes differ: {:?} vs {:?}", f_r.shape(), f_t.shape()));
        }
        Ok(Self { f_r, f_t })
    }

    pub fn rgb(&self) -> &Tensor {
        &self.f_r
    }

    pub fn thermal(&self) -> &Tensor {
        &self.f_t
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.f_r, self.f_t)
    }

    /// `(B, N, C)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.f_r.shape();
        (s[0], s[1], s[2])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SwapMode {
    /// Exchanged halves are added onto the original stream.
    #[default]
    Residual,
    /// Half-channel exchange only.
    Pure,
}

/// Exchanges the back half of the channels between the two streams.
///
/// `r' = [r_front, t_back] (+ r)` and `t' = [t_front, r_back] (+ t)`.
pub fn shallow_swap(m: &ModalityFeatures, mode: SwapMode) -> Result<ModalityFeatures> {
    let (_, _, c) = m.dims();
    if c % 2 != 0 {
        return shape_err(format!("shallow swap needs an even channel count, got {c}"));
    }
    let (r_front, r_back) = m.f_r.split(2, c / 2)?;
    let (t_front, t_back) = m.f_t.split(2, c / 2)?;
    let mut r = Tensor::concat(&[&r_front, &t_back], 2)?;
    let mut t = Tensor::concat(&[&t_front, &r_back], 2)?;
    if mode == SwapMode::Residual {
        r = r.add(&m.f_r)?;
        t = t.add(&m.f_t)?;
    }
    ModalityFeatures::new(r, t)
}

/// Backbone levels that receive fused features.
pub const INJECTION_LEVELS: [u8; 3] = [2, 3, 4];

/// Adds `fused[i]` onto `backbone[i]` for every level present in `fused`.
pub fn inject(
    backbone: &BTreeMap<u8, ModalityFeatures>,
    fused: &BTreeMap<u8, ModalityFeatures>,
) -> Result<BTreeMap<u8, ModalityFeatures>> {
    for key in backbone.keys().chain(fused.keys()) {
        if !INJECTION_LEVELS.contains(key) {
            return shape_err(format!("level {key} is not an injection level (2, 3 or 4)"));
        }
    }
    let mut out = backbone.clone();
    for (level, f) in fused {
        let base = out
            .get_mut(level)
            .ok_or_else(|| crate::Error::Shape(format!("fused level {level} has no backbone features")))?;
        if base.f_r.shape() != f.f_r.shape() {
            return shape_err(format!(
                "level {level}: backbone {:?} vs fused {:?}",
                base.f_r.shape(),
                f.f_r.shape()
            ));
        }
        *base = ModalityFeatures::new(base.f_r.add(&f.f_r)?, base.f_t.add(&f.f_t)?)?;
    }
    Ok(out)
}
