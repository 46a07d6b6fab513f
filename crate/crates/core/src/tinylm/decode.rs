// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array1;

use super::model::{forward_batch, log_softmax};
use super::{model_input, Checkpoint};
use crate::corpus::TokenSeq;
use crate::error::{LabError, Result};

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    // first maximum wins, so ties resolve to the lower id
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy continuations of several prompts at once. Inputs are full model
/// inputs (BOS included); returns only the generated ids.
pub fn greedy_decode_batch(
    ckpt: &Checkpoint,
    inputs: &[Vec<usize>],
    max_new: usize,
) -> Result<Vec<Vec<usize>>> {
    let ctx = ckpt.config.context_len;
    for input in inputs {
        if input.len() + max_new.saturating_sub(1) > ctx {
            return Err(LabError::ContextOverflow {
                len: input.len() + max_new.saturating_sub(1),
                context: ctx,
            });
        }
    }
    let mut seqs: Vec<Vec<usize>> = inputs.to_vec();
    let mut generated = vec![Vec::with_capacity(max_new); inputs.len()];
    for _ in 0..max_new {
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let out = forward_batch(&ckpt.params, &ckpt.config, &refs, &[], &[])?;
        for (i, seq) in seqs.iter_mut().enumerate() {
            let next = argmax(out.row(i, seq.len() - 1));
            seq.push(next);
            generated[i].push(next);
        }
    }
    Ok(generated)
}

/// Greedy argmax decoding of `max_new` tokens after `prompt`.
pub fn greedy_decode(ckpt: &Checkpoint, prompt: &TokenSeq, max_new: usize) -> Result<TokenSeq> {
    let ids = greedy_decode_batch(ckpt, &[model_input(prompt)], max_new)?.remove(0);
    Ok(TokenSeq {
        text: ckpt.tokenizer.decode(&ids),
        ids,
    })
}

/// Next-token probabilities after `prompt`.
pub fn next_token_distribution(ckpt: &Checkpoint, prompt: &TokenSeq) -> Result<Array1<f64>> {
    let input = model_input(prompt);
    let out = forward_batch(&ckpt.params, &ckpt.config, &[&input], &[], &[])?;
    Ok(log_softmax(out.row(0, input.len() - 1)).mapv(f64::exp))
}

/// Mean per-token log-probability of each continuation under teacher
/// forcing. Inputs are `(model input, continuation ids)` pairs.
pub fn sequence_logprob_batch(
    ckpt: &Checkpoint,
    pairs: &[(Vec<usize>, Vec<usize>)],
) -> Result<Vec<f64>> {
    if pairs.iter().any(|(_, c)| c.is_empty()) {
        return Err(LabError::EmptyContinuation);
    }
    let full: Vec<Vec<usize>> = pairs
        .iter()
        .map(|(p, c)| {
            let mut s = p.clone();
            // the final continuation token is scored but never fed
            s.extend_from_slice(&c[..c.len() - 1]);
            s
        })
        .collect();
    let refs: Vec<&[usize]> = full.iter().map(Vec::as_slice).collect();
    let out = forward_batch(&ckpt.params, &ckpt.config, &refs, &[], &[])?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, (p, c))| {
            let total: f64 = c
                .iter()
                .enumerate()
                .map(|(j, &tok)| log_softmax(out.row(i, p.len() - 1 + j))[tok])
                .sum();
            total / c.len() as f64
        })
        .collect())
}

/// Mean log-probability of `continuation` following `prompt`.
pub fn sequence_logprob(ckpt: &Checkpoint, prompt: &TokenSeq, continuation: &TokenSeq) -> Result<f64> {
    if continuation.is_empty() {
        return Err(LabError::EmptyContinuation);
    }
    Ok(sequence_logprob_batch(ckpt, &[(model_input(prompt), continuation.ids.clone())])?[0])
}
