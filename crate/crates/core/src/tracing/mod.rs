// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal tracing.
//!
//! Subject embeddings are corrupted with Gaussian noise; one hidden state at
//! a time is then restored from the clean run, and the recovered probability
//! of the clean answer is recorded per (token, layer) cell.

use std::ops::Range;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::tinylm::{forward_batch, log_softmax, Capture, Checkpoint, Patch, Site, SiteRef};

pub mod fixture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    /// Noise standard deviation in units of the embedding-entry std.
    pub noise_scale: f64,
    pub n_noise_samples: usize,
    pub seed: u64,
    /// Restored state: `BlockOut` by default, `MlpOut` as a variant.
    pub site: Site,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            noise_scale: 3.0,
            n_noise_samples: 8,
            seed: 0,
            site: Site::BlockOut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    /// Model input, BOS first.
    pub input: Vec<usize>,
    pub pieces: Vec<String>,
    pub target_token: usize,
    /// `grid[token][layer]`: mean recovered target probability.
    pub grid: Vec<Vec<f64>>,
    pub subject_span: Range<usize>,
    pub decisive_token: usize,
    pub decisive_layers: Vec<usize>,
    pub baseline_p: f64,
    pub corrupted_p: f64,
    /// Absolute noise standard deviation used.
    pub noise_std: f64,
    pub config: TraceConfig,
    pub warning: Option<String>,
}

impl TraceResult {
    pub fn n_layers(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    /// The grid as CSV: one row per token, one column per layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,piece");
        for l in 0..self.n_layers() {
            out.push_str(&format!(",layer_{l}"));
        }
        out.push('\n');
        for (t, row) in self.grid.iter().enumerate() {
            let piece = self.pieces.get(t).map_or("", String::as_str).trim();
            out.push_str(&format!("{t},\"{}\"", piece.replace('"', "\"\"")));
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Standard deviation of all token-embedding entries.
pub fn embedding_std(ckpt: &Checkpoint) -> f64 {
    let e = &ckpt.params.tok_emb;
    let n = e.len() as f64;
    let mean = e.sum() / n;
    (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn target_prob(out: &crate::tinylm::ForwardOutput, seq: usize, pos: usize, token: usize) -> f64 {
    log_softmax(out.row(seq, pos))[token].exp()
}

/// Traces `input` (BOS first) with the subject at `subject_span` (model
/// positions) and the answer token `target_token`.
pub fn causal_trace(
    ckpt: &Checkpoint,
    input: &[usize],
    subject_span: Range<usize>,
    target_token: usize,
    config: &TraceConfig,
) -> Result<TraceResult> {
    let cfg = &ckpt.config;
    if subject_span.is_empty() || subject_span.end > input.len() {
        return Err(LabError::SiteOutOfRange(format!(
            "subject span {subject_span:?} in an input of {} tokens",
            input.len()
        )));
    }
    if target_token >= cfg.vocab_size {
        return Err(LabError::Shape(format!(
            "target token {target_token} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    if config.n_noise_samples == 0 || !(config.noise_scale >= 0.0) {
        return Err(LabError::InvalidConfig(
            "tracing needs at least one noise sample and a non-negative noise scale".into(),
        ));
    }
    let (n_tok, n_layers) = (input.len(), cfg.n_layers);
    let last = n_tok - 1;
    let cells: Vec<SiteRef> = (0..n_tok)
        .flat_map(|t| (0..n_layers).map(move |l| SiteRef::new(l, config.site, t)))
        .collect();

    let clean = forward_batch(
        &ckpt.params,
        cfg,
        &[input],
        &cells.iter().map(|&at| Capture { seq: 0, at }).collect::<Vec<_>>(),
        &[],
    )?;
    let baseline_p = target_prob(&clean, 0, last, target_token);

    let noise_std = config.noise_scale * embedding_std(ckpt);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sums = vec![0.0; cells.len()];
    let mut corrupted_sum = 0.0;
    // sequence 0 is the corrupted run; sequence 1 + i restores cell i
    let seqs: Vec<&[usize]> = vec![input; cells.len() + 1];
    for _ in 0..config.n_noise_samples {
        let noise: Vec<Array1<f64>> = subject_span
            .clone()
            .map(|_| {
                Array1::from_shape_fn(cfg.d_model, |_| noise_std * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let mut patches = Vec::with_capacity(seqs.len() * (noise.len() + 1));
        for seq in 0..seqs.len() {
            for (t, n) in subject_span.clone().zip(&noise) {
                patches.push(Patch::add(seq, SiteRef::new(0, Site::Embed, t), n.clone()));
            }
        }
        for (i, &at) in cells.iter().enumerate() {
            patches.push(Patch::replace(i + 1, at, clean.captured[i].clone()));
        }
        let out = forward_batch(&ckpt.params, cfg, &seqs, &[], &patches)?;
        corrupted_sum += target_prob(&out, 0, last, target_token);
        for (i, s) in sums.iter_mut().enumerate() {
            *s += target_prob(&out, i + 1, last, target_token);
        }
    }
    let k = config.n_noise_samples as f64;
    let grid: Vec<Vec<f64>> = sums.chunks(n_layers).map(|r| r.iter().map(|s| s / k).collect()).collect();
    let corrupted_p = corrupted_sum / k;
    let warning = (baseline_p < 2.0 * corrupted_p).then(|| {
        format!("weak trace: baseline p {baseline_p:.4} is less than twice corrupted p {corrupted_p:.4}")
    });

    let mut result = TraceResult {
        input: input.to_vec(),
        pieces: input
            .iter()
            .map(|&id| ckpt.tokenizer.piece(id).unwrap_or("?").to_string())
            .collect(),
        target_token,
        grid,
        subject_span,
        decisive_token: 0,
        decisive_layers: Vec::new(),
        baseline_p,
        corrupted_p,
        noise_std,
        config: config.clone(),
        warning,
    };
    let (token, layers) = select_decisive(&result, 1);
    result.decisive_token = token;
    result.decisive_layers = layers;
    Ok(result)
}

/// Decisive token and a window of `n_layers_to_edit` layers ending at the
/// best layer for that token. Ties prefer later tokens and deeper layers.
pub fn select_decisive(trace: &TraceResult, n_layers_to_edit: usize) -> (usize, Vec<usize>) {
    let mut best = (trace.subject_span.end.saturating_sub(1), trace.n_layers().saturating_sub(1));
    let mut best_v = f64::NEG_INFINITY;
    for t in trace.subject_span.clone() {
        for (l, &v) in trace.grid[t].iter().enumerate() {
            if v >= best_v {
                best_v = v;
                best = (t, l);
            }
        }
    }
    (best.0, layer_window(best.1, n_layers_to_edit))
}

/// `n` contiguous layers ending at `top`, clamped at layer 0.
pub fn layer_window(top: usize, n: usize) -> Vec<usize> {
    let n = n.max(1);
    (top + 1 - n.min(top + 1)..=top).collect()
}

/// Decisive layers over several traces: each trace contributes its row at
/// its own decisive token; the mean row's best layer (deepest on ties) ends
/// the window.
pub fn aggregate_decisive_layers(traces: &[TraceResult], n_layers_to_edit: usize) -> Option<Vec<usize>> {
    let n_layers = traces.first()?.n_layers();
    let mut mean = vec![0.0; n_layers];
    for t in traces {
        for (m, v) in mean.iter_mut().zip(&t.grid[t.decisive_token]) {
            *m += v / traces.len() as f64;
        }
    }
    let top = (0..n_layers).fold(0, |b, l| if mean[l] >= mean[b] { l } else { b });
    Some(layer_window(top, n_layers_to_edit))
}
