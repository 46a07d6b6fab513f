// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

pub mod oracle;

use editlab::corpus::{generate_synthetic_corpus, Corpus, CorpusSpec, Polarity};
use editlab::editor::EditRequest;
use editlab::tinylm::{Checkpoint, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_corpus() -> Corpus {
    generate_synthetic_corpus(&CorpusSpec {
        n_facts: 12,
        n_heldout: 8,
        n_relations: 3,
        seed: 4,
        repeats: 2,
        negation_repeats: 1,
        fact_check_repeats: 1,
    })
    .unwrap()
}

/// An untrained model with enlarged weights so every path carries signal.
pub fn lively_model(corpus: &Corpus) -> Checkpoint {
    let tokenizer = corpus.tokenizer();
    let config = ModelConfig {
        n_layers: 3,
        d_model: 16,
        n_heads: 2,
        d_mlp: 24,
        vocab_size: tokenizer.vocab_size(),
        context_len: 32,
        seed: 1,
        attn_windows: vec![1, 2, 0],
    };
    let mut ckpt = Checkpoint::init(config, tokenizer).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for t in ckpt.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    ckpt
}

pub fn requests(corpus: &Corpus, ckpt: &Checkpoint, polarity: Polarity) -> Vec<EditRequest> {
    corpus
        .edit_facts()
        .map(|f| EditRequest::new(f, polarity, &ckpt.tokenizer).unwrap())
        .collect()
}
