// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gradient search for the target output `m` of the edited matrix.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::EditRequest;
use crate::error::{LabError, Result};
use crate::tinylm::{loss_and_grads, Checkpoint, GradRequest, Patch, Site, SiteRef, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MSearch {
    pub steps: usize,
    /// Adam step size.
    pub step_size: f64,
    /// Stop once the target sequence probability reaches this value.
    pub early_stop_p: f64,
    /// Weight of `‖m − W k‖² / ‖W k‖²` in the search loss.
    pub weight_decay: f64,
}

impl Default for MSearch {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.1,
            early_stop_p: 0.95,
            weight_decay: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub m: Array1<f64>,
    /// The unedited output `W k` the search started from.
    pub start: Array1<f64>,
    /// Probability of the full target sequence with `m` patched in.
    pub prob: f64,
    pub steps: usize,
}

/// Model input with the target appended (minus its last token) and the
/// loss terms over the target tokens.
fn scored_input(req: &EditRequest, seq: usize) -> (Vec<usize>, Vec<Target>) {
    let mut input = req.input.clone();
    input.extend_from_slice(&req.target_ids[..req.target_ids.len() - 1]);
    let w = 1.0 / req.target_ids.len() as f64;
    let targets = req
        .target_ids
        .iter()
        .enumerate()
        .map(|(j, &token)| Target {
            seq,
            pos: req.input.len() - 1 + j,
            token,
            weight: w,
        })
        .collect();
    (input, targets)
}

struct Adam {
    m: Array1<f64>,
    v: Array1<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, grad: &Array1<f64>, lr: f64) -> Array1<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        self.m = &self.m * B1 + grad * (1.0 - B1);
        self.v = &self.v * B2 + &grad.mapv(|g| g * g) * (1.0 - B2);
        let bc1 = 1.0 - B1.powi(self.t);
        let bc2 = 1.0 - B2.powi(self.t);
        let v = &self.v;
        (&self.m / bc1).to_owned() * lr / v.mapv(|x| (x / bc2).sqrt() + 1e-8)
    }
}

/// Searches a target state for every request at once; each request is an
/// independent sequence with its own patch, so the searches do not interact.
pub fn solve_target_states(
    ckpt: &Checkpoint,
    requests: &[EditRequest],
    layer: usize,
    settings: &MSearch,
) -> Result<Vec<TargetState>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let site = |r: &EditRequest| SiteRef::new(layer, Site::MlpOut, r.decisive_token);
    let scored: Vec<(Vec<usize>, Vec<Target>)> = requests
        .iter()
        .map(|r| scored_input(r, 0))
        .collect();
    let start = {
        let refs: Vec<&[usize]> = scored.iter().map(|(s, _)| s.as_slice()).collect();
        let captures: Vec<_> = requests
            .iter()
            .enumerate()
            .map(|(i, r)| crate::tinylm::Capture { seq: i, at: site(r) })
            .collect();
        crate::tinylm::forward_batch(&ckpt.params, &ckpt.config, &refs, &captures, &[])?.captured
    };

    let mut current: Vec<Array1<f64>> = start.clone();
    let mut best: Vec<(f64, Array1<f64>, usize)> =
        start.iter().map(|s| (f64::NEG_INFINITY, s.clone(), 0)).collect();
    let mut adam: Vec<Adam> = start
        .iter()
        .map(|s| Adam {
            m: Array1::zeros(s.len()),
            v: Array1::zeros(s.len()),
            t: 0,
        })
        .collect();
    let mut active: Vec<usize> = (0..requests.len()).collect();

    for step in 0..=settings.steps {
        if active.is_empty() {
            break;
        }
        let mut seqs: Vec<&[usize]> = Vec::with_capacity(active.len());
        let mut patches = Vec::with_capacity(active.len());
        let mut targets = Vec::new();
        for (slot, &i) in active.iter().enumerate() {
            seqs.push(&scored[i].0);
            patches.push(Patch::replace(slot, site(&requests[i]), current[i].clone()));
            targets.extend(scored[i].1.iter().map(|t| Target { seq: slot, ..*t }));
        }
        let out = loss_and_grads(
            &ckpt.params,
            &ckpt.config,
            &seqs,
            &patches,
            &targets,
            GradRequest { params: false },
        )?;

        let mut still = Vec::with_capacity(active.len());
        for (slot, &i) in active.iter().enumerate() {
            let n = requests[i].target_ids.len() as f64;
            let mean_lp: f64 = targets
                .iter()
                .filter(|t| t.seq == slot)
                .map(|t| {
                    let row = out.output.row(slot, t.pos);
                    crate::tinylm::log_softmax(row)[t.token]
                })
                .sum::<f64>()
                / n;
            let prob = (mean_lp * n).exp();
            if prob > best[i].0 {
                best[i] = (prob, current[i].clone(), step);
            }
            if prob >= settings.early_stop_p || step == settings.steps {
                continue;
            }
            let shift = &current[i] - &start[i];
            let norm2 = start[i].dot(&start[i]).max(1e-12);
            let grad = &out.patches[slot] + &(&shift * (2.0 * settings.weight_decay / norm2));
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(LabError::NonFiniteGradient { step });
            }
            current[i] = &current[i] - &adam[i].step(&grad, settings.step_size);
            still.push(i);
        }
        active = still;
    }

    Ok(best
        .into_iter()
        .zip(start)
        .map(|((prob, m, steps), start)| TargetState {
            m,
            start,
            prob,
            steps,
        })
        .collect())
}

/// Target state of a single request.
pub fn solve_target_state(
    ckpt: &Checkpoint,
    request: &EditRequest,
    layer: usize,
    settings: &MSearch,
) -> Result<TargetState> {
    Ok(solve_target_states(ckpt, std::slice::from_ref(request), layer, settings)?.remove(0))
}
