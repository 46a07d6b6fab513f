// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token training with AdamW, linear warmup and cosine decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grads, GradRequest, Target};
use super::{Checkpoint, ModelConfig, TrainingMeta};
use crate::corpus::{Tokenizer, BOS_ID};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Training lines per step.
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub min_lr_frac: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_size: 32,
            lr: 3e-3,
            min_lr_frac: 0.1,
            warmup: 40,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            grad_clip: 1.0,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.lr > 0.0) {
            problems.push("lr must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.min_lr_frac) {
            problems.push("min_lr_frac must lie in [0, 1]".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("betas must lie in [0, 1)".to_string());
        }
        if self.log_every == 0 {
            problems.push("log_every must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LabError::InvalidConfig(problems.join("; ")))
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = (self.steps - self.warmup).max(1) as f64;
        let t = (step - self.warmup) as f64 / span;
        let min = self.lr * self.min_lr_frac;
        min + 0.5 * (self.lr - min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Tokenizes each line as a model input (BOS first).
pub fn encode_lines<'a>(
    tokenizer: &Tokenizer,
    lines: impl IntoIterator<Item = &'a str>,
    context_len: usize,
) -> Result<Vec<Vec<usize>>> {
    lines
        .into_iter()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut ids = vec![BOS_ID];
            ids.extend(tokenizer.encode(l)?);
            if ids.len() > context_len {
                return Err(LabError::ContextOverflow {
                    len: ids.len(),
                    context: context_len,
                });
            }
            Ok(ids)
        })
        .collect()
}

/// Trains a fresh model on the non-empty lines of `corpus_text`.
pub fn train(
    corpus_text: &str,
    tokenizer: &Tokenizer,
    config: ModelConfig,
    hyper: &TrainConfig,
) -> Result<Checkpoint> {
    let ckpt = Checkpoint::init(config, tokenizer.clone())?;
    continue_training(ckpt, corpus_text, hyper)
}

/// Runs `hyper.steps` further optimizer steps on `ckpt` with fresh optimizer
/// state; the step count and loss log extend the checkpoint's own.
pub fn continue_training(mut ckpt: Checkpoint, corpus_text: &str, hyper: &TrainConfig) -> Result<Checkpoint> {
    hyper.validate()?;
    let data = encode_lines(&ckpt.tokenizer, corpus_text.lines(), ckpt.config.context_len)?;
    if data.is_empty() && hyper.steps > 0 {
        return Err(LabError::EmptyCorpus);
    }

    let n_values: Vec<usize> = ckpt.params.tensors().iter().map(|(_, _, v)| v.len()).collect();
    let decays: Vec<bool> = ckpt
        .params
        .tensors()
        .iter()
        .map(|(name, shape, _)| shape.len() == 2 && !name.ends_with("_emb"))
        .collect();
    let mut m1: Vec<Vec<f64>> = n_values.iter().map(|&n| vec![0.0; n]).collect();
    let mut m2 = m1.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut window = Vec::new();
    let prior_steps = ckpt.training_meta.steps;
    let mut meta = TrainingMeta {
        hyper: Some(hyper.clone()),
        steps: prior_steps,
        final_loss: ckpt.training_meta.final_loss,
        loss_log: std::mem::take(&mut ckpt.training_meta.loss_log),
    };

    for step in 0..hyper.steps {
        let mut batch: Vec<&[usize]> = Vec::with_capacity(hyper.batch_size);
        while batch.len() < hyper.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let n_targets: usize = batch.iter().map(|s| s.len() - 1).sum();
        let w = 1.0 / n_targets.max(1) as f64;
        let targets: Vec<Target> = batch
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                (0..s.len() - 1).map(move |p| Target {
                    seq: i,
                    pos: p,
                    token: s[p + 1],
                    weight: w,
                })
            })
            .collect();
        let out = loss_and_grads(
            &ckpt.params,
            &ckpt.config,
            &batch,
            &[],
            &targets,
            GradRequest { params: true },
        )?;
        if !out.loss.is_finite() {
            return Err(LabError::Diverged {
                step,
                loss: out.loss,
            });
        }
        let grads = out.params.expect("parameter gradients requested");
        let gviews = grads.tensors();
        let norm = gviews
            .iter()
            .flat_map(|(_, _, v)| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(LabError::Diverged {
                step,
                loss: out.loss,
            });
        }
        let clip = if hyper.grad_clip > 0.0 && norm > hyper.grad_clip {
            hyper.grad_clip / norm
        } else {
            1.0
        };

        let lr = hyper.lr_at(step);
        let t = (step + 1) as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        for (ti, values) in ckpt.params.tensors_mut().into_iter().enumerate() {
            let g = gviews[ti].2;
            let decay = if decays[ti] { hyper.weight_decay } else { 0.0 };
            for (i, v) in values.iter_mut().enumerate() {
                let gi = g[i] * clip;
                m1[ti][i] = hyper.beta1 * m1[ti][i] + (1.0 - hyper.beta1) * gi;
                m2[ti][i] = hyper.beta2 * m2[ti][i] + (1.0 - hyper.beta2) * gi * gi;
                let update = (m1[ti][i] / bc1) / ((m2[ti][i] / bc2).sqrt() + hyper.eps);
                *v -= lr * (update + decay * *v);
            }
        }

        window.push(out.loss);
        if window.len() == hyper.log_every {
            meta.loss_log.push(window.iter().sum::<f64>() / window.len() as f64);
            window.clear();
        }
        meta.final_loss = Some(out.loss);
        meta.steps = prior_steps + step + 1;
    }
    if !window.is_empty() {
        meta.loss_log.push(window.iter().sum::<f64>() / window.len() as f64);
    }
    ckpt.training_meta = meta;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "the cat sat\nthe dog ran\nthe cat ran\nthe dog sat\n";

    fn setup() -> (Tokenizer, ModelConfig) {
        let tok = Tokenizer::from_texts([TEXT]);
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_mlp: 32,
            vocab_size: tok.vocab_size(),
            context_len: 8,
            seed: 1,
            attn_windows: vec![2],
        };
        (tok, cfg)
    }

    fn hyper(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 4,
            lr: 1e-2,
            warmup: 5,
            log_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_equals_initialisation() {
        let (tok, cfg) = setup();
        let trained = train(TEXT, &tok, cfg.clone(), &hyper(0)).unwrap();
        let init = Checkpoint::init(cfg, tok).unwrap();
        assert_eq!(trained.params, init.params);
        assert_eq!(trained.training_meta.steps, 0);
    }

    #[test]
    fn same_seed_same_weights() {
        let (tok, cfg) = setup();
        let a = train(TEXT, &tok, cfg.clone(), &hyper(20)).unwrap();
        let b = train(TEXT, &tok, cfg, &hyper(20)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn loss_decreases_over_windows() {
        let (tok, cfg) = setup();
        let c = train(TEXT, &tok, cfg, &hyper(60)).unwrap();
        let log = &c.training_meta.loss_log;
        assert_eq!(log.len(), 6);
        for pair in log.windows(2) {
            assert!(pair[1] < pair[0], "{log:?}");
        }
    }

    #[test]
    fn divergence_reports_step() {
        let (tok, cfg) = setup();
        let h = TrainConfig {
            lr: f64::INFINITY,
            grad_clip: 0.0,
            ..hyper(5)
        };
        let err = train(TEXT, &tok, cfg, &h).unwrap_err();
        assert!(matches!(err, LabError::Diverged { step: 1, .. }), "{err}");
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let h = TrainConfig {
            steps: 100,
            warmup: 10,
            lr: 1.0,
            min_lr_frac: 0.1,
            ..TrainConfig::default()
        };
        assert!((h.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((h.lr_at(10) - 1.0).abs() < 1e-12);
        assert!(h.lr_at(50) < h.lr_at(20));
        assert!(h.lr_at(99) >= 0.1);
    }
}
