// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small pre-LayerNorm decoder-only transformer.
//!
//! Every intermediate state that editing or tracing needs is addressable by
//! a [`SiteRef`]; the forward pass can capture those states and replace or
//! shift them ([`Patch`]), and the backward pass honours the same patches.

mod checkpoint;
mod decode;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, EditProvenance, TrainingMeta, CHECKPOINT_VERSION};
pub use decode::{
    greedy_decode, greedy_decode_batch, next_token_distribution, sequence_logprob,
    sequence_logprob_batch,
};
pub use model::{
    forward, forward_batch, log_softmax, loss_and_grads, Capture, ForwardOutput, GradRequest, LossGrads,
    Patch, PatchMode, Target,
};
pub use params::{LayerParams, Params};
pub use train::{continue_training, encode_lines, train, TrainConfig};

use crate::corpus::{TokenSeq, BOS_ID};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub seed: u64,
    /// Per-layer attention span counted in positions, the current one
    /// included; 0 means full causal attention. Missing entries are full.
    pub attn_windows: Vec<usize>,
}

impl ModelConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_mlp: 512,
            vocab_size,
            context_len: 32,
            seed: 0,
            attn_windows: vec![1, 2, 2, 0],
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every violated constraint, in one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            problems.push(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.attn_windows.len() > self.n_layers {
            problems.push(format!(
                "{} attention windows for {} layers",
                self.attn_windows.len(),
                self.n_layers
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LabError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Attention span of `layer`: `None` for full causal attention.
    pub fn window(&self, layer: usize) -> Option<usize> {
        self.attn_windows.get(layer).copied().filter(|&w| w > 0)
    }

    pub fn site_dim(&self, site: Site) -> usize {
        match site {
            Site::MlpIn => self.d_mlp,
            Site::Embed | Site::MlpOut | Site::BlockOut => self.d_model,
        }
    }
}

/// Named intermediate states of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Token plus position embedding; the layer index is ignored.
    Embed,
    /// Activation entering the MLP down-projection (the key `k`).
    MlpIn,
    /// Output of the MLP down-projection (where `m` lives).
    MlpOut,
    /// Residual stream after the layer.
    BlockOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SiteRef {
    pub layer: usize,
    pub site: Site,
    pub token: usize,
}

impl SiteRef {
    pub fn new(layer: usize, site: Site, token: usize) -> Self {
        Self { layer, site, token }
    }
}

/// Model input ids for `seq`: the BOS id followed by the sequence.
pub fn model_input(seq: &TokenSeq) -> Vec<usize> {
    std::iter::once(BOS_ID).chain(seq.ids.iter().copied()).collect()
}
