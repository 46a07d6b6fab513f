// SPDX-License-Identifier: MIT OR Apache-2.0

//! Locate-then-edit: keys, target states, the closed-form update and the
//! batch and sequential editing drivers.

mod apply;
mod solve;
mod target;

use std::ops::Range;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use apply::{
    apply_batch_edit, retention_texts, sequential_edit, BatchLog, EditLog, LayerSolveLog,
    Retention,
};
pub use solve::{objective, solve_update, solve_update_with_targets, Update};
pub use target::{solve_target_state, solve_target_states, MSearch, TargetState};

use crate::corpus::{FactRecord, Polarity, Tokenizer, BOS_ID};
use crate::error::{LabError, Result};
use crate::io::sha256_hex;
use crate::tinylm::{forward_batch, Capture, Checkpoint, Site, SiteRef};

/// One concrete edit: a rendered prompt (positive or negated) and the token
/// sequence it should be followed by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub record_id: u64,
    pub subject: String,
    pub prompt: String,
    pub polarity: Polarity,
    pub target: String,
    pub target_ids: Vec<usize>,
    /// Model input for the prompt, BOS first.
    pub input: Vec<usize>,
    /// Subject positions within `input`.
    pub subject_span: Range<usize>,
    /// Position whose key is edited; the last subject token by default.
    pub decisive_token: usize,
}

impl EditRequest {
    pub fn new(record: &FactRecord, polarity: Polarity, tokenizer: &Tokenizer) -> Result<Self> {
        let prompt = record.prompt_for(polarity)?;
        let start = prompt
            .find(&record.subject)
            .ok_or_else(|| LabError::SubjectNotFound {
                subject: record.subject.clone(),
                prompt: prompt.clone(),
            })?;
        let span = tokenizer.token_span(&prompt, start..start + record.subject.len())?;
        let mut input = vec![BOS_ID];
        input.extend(tokenizer.encode(&prompt)?);
        let target_ids = tokenizer.encode(&format!(" {}", record.target_new))?;
        if target_ids.is_empty() {
            return Err(LabError::EmptyContinuation);
        }
        let subject_span = span.start + 1..span.end + 1;
        Ok(Self {
            record_id: record.id,
            subject: record.subject.clone(),
            decisive_token: subject_span.end - 1,
            subject_span,
            prompt,
            polarity,
            target: record.target_new.clone(),
            target_ids,
            input,
        })
    }

    /// The request with another decisive position inside the subject.
    pub fn with_decisive_token(mut self, token: usize) -> Result<Self> {
        if !self.subject_span.contains(&token) {
            return Err(LabError::SiteOutOfRange(format!(
                "decisive token {token} outside subject span {:?}",
                self.subject_span
            )));
        }
        self.decisive_token = token;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub batch_size: usize,
    pub n_batches: usize,
    pub layers: Vec<usize>,
    pub lambda_reg: f64,
    /// Number of background keys `u`.
    pub retention_size: usize,
    pub m_search: MSearch,
    pub augment_retention_with_past_edits: bool,
    /// Seed for sampling background keys.
    pub seed: u64,
}

impl EditPlan {
    pub fn single_batch(batch_size: usize, layers: Vec<usize>) -> Self {
        Self {
            batch_size,
            n_batches: 1,
            layers,
            lambda_reg: 1.0,
            retention_size: 64 * batch_size,
            m_search: MSearch::default(),
            augment_retention_with_past_edits: true,
            seed: 0,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.lambda_reg >= 0.0) {
            problems.push(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if self.layers.is_empty() {
            problems.push("layers must not be empty".to_string());
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= n_layers) {
            problems.push(format!("layer {l} outside a {n_layers}-layer model"));
        }
        if self.m_search.step_size <= 0.0 {
            problems.push("m_search.step_size must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.m_search.early_stop_p) {
            problems.push("m_search.early_stop_p must lie in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LabError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Hex SHA-256 of the plan's JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("plan serializes"))
    }

    pub(crate) fn sorted_layers(&self) -> Vec<usize> {
        let mut l = self.layers.clone();
        l.sort_unstable();
        l.dedup();
        l
    }
}

/// The editable matrix of `layer` in column convention (`d_model × d_mlp`).
pub fn edit_matrix(ckpt: &Checkpoint, layer: usize) -> Array2<f64> {
    ckpt.params.layers[layer].w_out.t().to_owned()
}

/// Keys of several requests at `layer`, one column per request.
pub fn compute_keys(ckpt: &Checkpoint, requests: &[EditRequest], layer: usize) -> Result<Array2<f64>> {
    let cols = capture_at(ckpt, requests, layer, Site::MlpIn)?;
    Ok(stack_columns(&cols, ckpt.config.d_mlp))
}

/// The activation feeding the edited matrix at the decisive token.
pub fn compute_key(ckpt: &Checkpoint, request: &EditRequest, layer: usize) -> Result<Array1<f64>> {
    Ok(capture_at(ckpt, std::slice::from_ref(request), layer, Site::MlpIn)?.remove(0))
}

pub(crate) fn capture_at(
    ckpt: &Checkpoint,
    requests: &[EditRequest],
    layer: usize,
    site: Site,
) -> Result<Vec<Array1<f64>>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let seqs: Vec<&[usize]> = requests.iter().map(|r| r.input.as_slice()).collect();
    let captures: Vec<Capture> = requests
        .iter()
        .enumerate()
        .map(|(i, r)| Capture {
            seq: i,
            at: SiteRef::new(layer, site, r.decisive_token),
        })
        .collect();
    Ok(forward_batch(&ckpt.params, &ckpt.config, &seqs, &captures, &[])?.captured)
}

pub(crate) fn stack_columns(cols: &[Array1<f64>], rows: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).assign(c);
    }
    m
}
