use std::fmt;
use std::str::FromStr;

use super::block::Mlp3;
use crate::error::{arg_err, Error, Result};
use crate::ssm::selective::macs_per_token;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionPath {
    Ss2dFusion,
    AttentionFusion,
}

impl FusionPath {
    pub const ALL: [FusionPath; 2] = [FusionPath::Ss2dFusion, FusionPath::AttentionFusion];

    pub fn name(self) -> &'static str {
        match self {
            FusionPath::Ss2dFusion => "ss2d_fusion",
            FusionPath::AttentionFusion => "attention_fusion",
        }
    }
}

impl fmt::Display for FusionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionPath::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fusion path {s:?}")))
    }
}

/// Key width of the attention baseline for `C` channels.
pub fn attention_key_dim(channels: usize) -> usize {
    (channels / 4).max(1)
}

/// Exact multiply-accumulate count of one sample through `path`.
///
/// `ss2d_fusion` is [`fuse`](super::fuse) on `N` tokens per modality:
/// `N·(32C² + 22C + 56·N_state·C)`. `attention_fusion` is the baseline with
/// `d_k` from [`attention_key_dim`] and is independent of `N_state`.
pub fn count_ops(path: FusionPath, n: usize, channels: usize, state_size: usize) -> Result<u64> {
    if n == 0 || channels == 0 || state_size == 0 {
        return arg_err("count_ops needs positive N, C and state size");
    }
    let (n, c) = (n as u64, channels as u64);
    Ok(match path {
        FusionPath::Ss2dFusion => {
            let per_branch = 3 * c + Mlp3::macs_per_row(c) + 4 * macs_per_token(channels, state_size) + 2 * c;
            n * (2 * per_branch + Mlp3::macs_per_row(c))
        }
        FusionPath::AttentionFusion => {
            let dk = attention_key_dim(channels) as u64;
            2 * n * c * (2 * dk + c) + 4 * n * n * (dk + c + 2)
        }
    })
}
