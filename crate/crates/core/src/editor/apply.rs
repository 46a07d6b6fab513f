// SPDX-License-Identifier: MIT OR Apache-2.0

//! Batch and sequential editing.

use std::collections::HashSet;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    capture_at, compute_keys, edit_matrix, solve_target_states, solve_update_with_targets,
    stack_columns, EditPlan, EditRequest,
};
use crate::corpus::Corpus;
use crate::error::{LabError, Result};
use crate::linalg::frobenius;
use crate::tinylm::{forward_batch, Capture, Checkpoint, EditProvenance, Site, SiteRef};

/// Background keys per edited layer with their pinned target outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Retention {
    pub layers: Vec<usize>,
    /// `d_mlp × u` per layer.
    pub keys: Vec<Array2<f64>>,
    /// `d_model × u` per layer: the original model's outputs for the keys.
    pub targets: Vec<Array2<f64>>,
}

impl Retention {
    pub fn empty(ckpt: &Checkpoint, layers: &[usize]) -> Self {
        Self {
            layers: layers.to_vec(),
            keys: layers
                .iter()
                .map(|_| Array2::zeros((ckpt.config.d_mlp, 0)))
                .collect(),
            targets: layers
                .iter()
                .map(|_| Array2::zeros((ckpt.config.d_model, 0)))
                .collect(),
        }
    }

    /// Samples `u` positions (BOS excluded) from the background inputs and
    /// pins their keys and outputs under `ckpt`.
    pub fn pin(
        ckpt: &Checkpoint,
        layers: &[usize],
        inputs: &[Vec<usize>],
        u: usize,
        seed: u64,
    ) -> Result<Self> {
        let slots: Vec<(usize, usize)> = inputs
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| (1..seq.len()).map(move |p| (s, p)))
            .collect();
        let take = u.min(slots.len());
        if take == 0 {
            return Ok(Self::empty(ckpt, layers));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, slots.len(), take).into_vec();
        picked.sort_unstable();
        let seqs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let mut keys = Vec::with_capacity(layers.len());
        let mut targets = Vec::with_capacity(layers.len());
        for &layer in layers {
            let captures: Vec<Capture> = picked
                .iter()
                .map(|&i| Capture {
                    seq: slots[i].0,
                    at: SiteRef::new(layer, Site::MlpIn, slots[i].1),
                })
                .collect();
            let cols = forward_batch(&ckpt.params, &ckpt.config, &seqs, &captures, &[])?.captured;
            let k = stack_columns(&cols, ckpt.config.d_mlp);
            targets.push(edit_matrix(ckpt, layer).dot(&k));
            keys.push(k);
        }
        Ok(Self {
            layers: layers.to_vec(),
            keys,
            targets,
        })
    }

    pub fn size(&self) -> usize {
        self.keys.first().map_or(0, |k| k.ncols())
    }

    fn for_layer(&self, layer: usize, ckpt: &Checkpoint) -> (Array2<f64>, Array2<f64>) {
        match self.layers.iter().position(|&l| l == layer) {
            Some(i) => (self.keys[i].clone(), self.targets[i].clone()),
            None => (
                Array2::zeros((ckpt.config.d_mlp, 0)),
                Array2::zeros((ckpt.config.d_model, 0)),
            ),
        }
    }
}

/// Distinct training lines that mention a held-out subject, in corpus order.
pub fn retention_texts(corpus: &Corpus) -> Vec<String> {
    let subjects: Vec<&str> = corpus.heldout_facts().map(|f| f.subject.as_str()).collect();
    let mut seen = HashSet::new();
    corpus
        .training_lines()
        .filter(|l| subjects.iter().any(|s| l.contains(s)))
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSolveLog {
    pub layer: usize,
    /// `‖W K1 − M1‖_F` before the update.
    pub residual_before: f64,
    /// `‖(W+Δ) K1 − M1‖_F` after the update.
    pub residual_after: f64,
    pub delta_norm: f64,
    pub jitter: f64,
    pub n_retention: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub batch: usize,
    pub n_requests: usize,
    pub layers: Vec<LayerSolveLog>,
    /// Target probability reached by the search, per request.
    pub target_probs: Vec<f64>,
    pub search_steps: Vec<usize>,
    /// Wall time; left out of serialized logs so reruns compare equal.
    #[serde(skip)]
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EditLog {
    pub entries: Vec<BatchLog>,
}

/// Keys of already-edited requests, per plan layer.
type PastKeys = Vec<Array2<f64>>;

fn edit_one_batch(
    ckpt: &Checkpoint,
    requests: &[EditRequest],
    plan: &EditPlan,
    retention: &Retention,
    past: Option<&PastKeys>,
    batch: usize,
) -> Result<(Checkpoint, BatchLog)> {
    let timer = Instant::now();
    let layers = plan.sorted_layers();
    let mut model = ckpt.clone();
    let mut log = BatchLog {
        batch,
        n_requests: requests.len(),
        layers: Vec::new(),
        target_probs: Vec::new(),
        search_steps: Vec::new(),
        wall_ms: 0,
    };
    if requests.is_empty() {
        return Ok((model, log));
    }
    let last = *layers.last().expect("validated plan has layers");
    let states = solve_target_states(&model, requests, last, &plan.m_search)?;
    log.target_probs = states.iter().map(|s| s.prob).collect();
    log.search_steps = states.iter().map(|s| s.steps).collect();

    // hidden-state goal at the last edited layer; lower layers each take a
    // share of the remaining gap
    let h0 = stack_columns(&capture_at(&model, requests, last, Site::BlockOut)?, model.config.d_model);
    let shift = stack_columns(
        &states.iter().map(|s| &s.m - &s.start).collect::<Vec<_>>(),
        model.config.d_model,
    );
    let goal = &h0 + &shift;

    for (j, &layer) in layers.iter().enumerate() {
        let w = edit_matrix(&model, layer);
        let k1 = compute_keys(&model, requests, layer)?;
        let h = if j == 0 {
            h0.clone()
        } else {
            stack_columns(&capture_at(&model, requests, last, Site::BlockOut)?, model.config.d_model)
        };
        let remaining = (layers.len() - j) as f64;
        let m1 = w.dot(&k1) + (&goal - &h) / remaining;

        let (mut k0, mut m0) = retention.for_layer(layer, &model);
        if let Some(past) = past {
            let pi = plan.layers_index(layer);
            if let Some(pk) = past.get(pi).filter(|k| k.ncols() > 0) {
                m0 = concatenate![Axis(1), m0, w.dot(pk)];
                k0 = concatenate![Axis(1), k0, pk.clone()];
            }
        }
        let update = solve_update_with_targets(
            w.view(),
            k1.view(),
            m1.view(),
            k0.view(),
            m0.view(),
            plan.lambda_reg,
        )?;
        let w_new = &w + &update.delta;
        log.layers.push(LayerSolveLog {
            layer,
            residual_before: frobenius((&w.dot(&k1) - &m1).view()),
            residual_after: frobenius((&w_new.dot(&k1) - &m1).view()),
            delta_norm: frobenius(update.delta.view()),
            jitter: update.jitter,
            n_retention: k0.ncols(),
        });
        model.params.layers[layer].w_out = w_new.t().as_standard_layout().into_owned();
    }
    log.wall_ms = timer.elapsed().as_millis() as u64;
    Ok((model, log))
}

impl EditPlan {
    fn layers_index(&self, layer: usize) -> usize {
        self.sorted_layers()
            .iter()
            .position(|&l| l == layer)
            .expect("layer belongs to plan")
    }
}

fn provenance(base: &Checkpoint, plan: &EditPlan, batches: usize, n_requests: usize) -> EditProvenance {
    EditProvenance {
        base_hash: base.content_hash(),
        plan_hash: plan.hash(),
        batches,
        layers: plan.sorted_layers(),
        n_requests,
    }
}

/// Applies one batch of edits and returns the edited checkpoint.
pub fn apply_batch_edit(
    ckpt: &Checkpoint,
    requests: &[EditRequest],
    plan: &EditPlan,
    retention: &Retention,
) -> Result<(Checkpoint, BatchLog)> {
    plan.validate(ckpt.config.n_layers)?;
    if requests.is_empty() {
        return edit_one_batch(ckpt, requests, plan, retention, None, 0);
    }
    let (mut model, log) = edit_one_batch(ckpt, requests, plan, retention, None, 0)?;
    model
        .provenance
        .push(provenance(ckpt, plan, 1, requests.len()));
    Ok((model, log))
}

/// Applies `plan.n_batches` consecutive batches of `plan.batch_size`
/// requests, optionally protecting earlier batches' keys.
pub fn sequential_edit(
    ckpt: &Checkpoint,
    all_requests: &[EditRequest],
    plan: &EditPlan,
    retention: &Retention,
) -> Result<(Checkpoint, EditLog)> {
    plan.validate(ckpt.config.n_layers)?;
    let needed = plan.n_batches * plan.batch_size;
    if needed > all_requests.len() {
        return Err(LabError::InvalidConfig(format!(
            "{} batches of {} need {needed} requests, only {} available",
            plan.n_batches,
            plan.batch_size,
            all_requests.len()
        )));
    }
    let layers = plan.sorted_layers();
    let mut past: PastKeys = layers
        .iter()
        .map(|_| Array2::zeros((ckpt.config.d_mlp, 0)))
        .collect();
    let mut model = ckpt.clone();
    let mut log = EditLog::default();
    for b in 0..plan.n_batches {
        let batch = &all_requests[b * plan.batch_size..(b + 1) * plan.batch_size];
        let use_past = plan.augment_retention_with_past_edits.then_some(&past);
        let (next, entry) = edit_one_batch(&model, batch, plan, retention, use_past, b)?;
        model = next;
        log.entries.push(entry);
        if plan.augment_retention_with_past_edits {
            for (i, &layer) in layers.iter().enumerate() {
                let k = compute_keys(&model, batch, layer)?;
                past[i] = concatenate![Axis(1), past[i], k];
            }
        }
    }
    if needed > 0 {
        model
            .provenance
            .push(provenance(ckpt, plan, plan.n_batches, needed));
    }
    Ok((model, log))
}
