// SPDX-License-Identifier: MIT OR Apache-2.0

//! A hand-built associative model with a known decisive site.
//!
//! Vocabulary `<bos> A B is OBJ OTHER`, prompt `A B is`, answer ` OBJ`.
//! Every feature is a zero-mean pair of residual dimensions and every token
//! carries a shared offset pair, so layer norm rescales features roughly
//! uniformly. Layers 0, 1 and 3's MLP are empty. In layer 2, `B` attends to
//! `A` and stores an "A seen" flag; layer 2's MLP fires only on `B` plus the
//! flag and writes the object feature. In layer 3 the final position averages
//! the object feature over all positions. Restoring `B` after layer 2 is therefore the
//! only single-state restoration inside the subject that recovers the answer.

use ndarray::Array1;

use crate::corpus::Tokenizer;
use crate::tinylm::{Checkpoint, ModelConfig, Params};

pub const PLANTED_LAYER: usize = 2;

const D: usize = 17;
// feature pairs: (positive dim, negative dim)
const BOS_F: (usize, usize) = (0, 1);
const A_F: (usize, usize) = (2, 3);
const B_F: (usize, usize) = (4, 5);
const IS_F: (usize, usize) = (6, 7);
const FLAG_F: (usize, usize) = (8, 9);
const OBJ_F: (usize, usize) = (10, 11);
const OTHER_F: (usize, usize) = (12, 13);
const OFFSET_F: (usize, usize) = (14, 15);
// the layer-2 MLP norm replaces this dimension with a constant one
const BIAS_DIM: usize = 16;

const OFFSET: f64 = 3.0;
const ATTEND: f64 = 12.0;
const FLAG_GAIN: f64 = 3.0;
const MLP_B: f64 = 2.0;
const MLP_FLAG: f64 = 4.0;
const MLP_BIAS: f64 = 15.0;
const OBJ_GAIN: f64 = 6.0;
const READ_GAIN: f64 = 4.0;
const LOGIT_GAIN: f64 = 2.5;

/// The planted model, its input (BOS first), the subject span and the
/// answer token.
pub struct Planted {
    pub ckpt: Checkpoint,
    pub input: Vec<usize>,
    pub subject_span: std::ops::Range<usize>,
    pub target: usize,
}

fn set_pair(v: &mut ndarray::ArrayViewMut1<f64>, f: (usize, usize), x: f64) {
    v[f.0] = x;
    v[f.1] = -x;
}

pub fn planted_associative() -> Planted {
    let tokenizer = Tokenizer::from_pieces(
        ["<bos>", "A", " B", " is", " OBJ", " OTHER"].map(String::from).to_vec(),
    );
    let config = ModelConfig {
        n_layers: 4,
        d_model: D,
        n_heads: 1,
        d_mlp: 4,
        vocab_size: 6,
        context_len: 8,
        seed: 0,
        attn_windows: Vec::new(),
    };
    let mut p = Params::zeros(&config);
    for (id, f) in [BOS_F, A_F, B_F, IS_F, OBJ_F, OTHER_F].into_iter().enumerate() {
        let mut row = p.tok_emb.row_mut(id);
        set_pair(&mut row, f, 1.0);
        set_pair(&mut row, OFFSET_F, OFFSET);
    }
    for l in &mut p.layers {
        l.ln1_g = Array1::ones(D);
        l.ln2_g = Array1::ones(D);
    }
    p.lnf_g = Array1::ones(D);

    // layer 2: B (query) attends to A (key) and copies A as the flag
    let l2 = &mut p.layers[PLANTED_LAYER];
    l2.wq[[B_F.0, 0]] = ATTEND;
    l2.wq[[B_F.1, 0]] = -ATTEND;
    l2.wk[[A_F.0, 0]] = 1.0;
    l2.wk[[A_F.1, 0]] = -1.0;
    l2.wv[[A_F.0, FLAG_F.0]] = FLAG_GAIN;
    l2.wv[[A_F.1, FLAG_F.1]] = FLAG_GAIN;
    l2.wo[[FLAG_F.0, FLAG_F.0]] = 1.0;
    l2.wo[[FLAG_F.1, FLAG_F.1]] = 1.0;
    // MLP unit 0 fires on B together with the flag
    l2.w_in[[B_F.0, 0]] = MLP_B;
    l2.w_in[[B_F.1, 0]] = -MLP_B;
    l2.w_in[[FLAG_F.0, 0]] = MLP_FLAG;
    l2.w_in[[FLAG_F.1, 0]] = -MLP_FLAG;
    l2.w_out[[0, OBJ_F.0]] = OBJ_GAIN;
    l2.w_out[[0, OBJ_F.1]] = -OBJ_GAIN;
    l2.ln2_g[BIAS_DIM] = 0.0;
    l2.ln2_b[BIAS_DIM] = 1.0;
    l2.w_in[[BIAS_DIM, 0]] = -MLP_BIAS;

    // layer 3: uniform attention reads the object feature
    let l3 = &mut p.layers[3];
    l3.wv[[OBJ_F.0, OBJ_F.0]] = READ_GAIN;
    l3.wv[[OBJ_F.1, OBJ_F.1]] = READ_GAIN;
    l3.wo[[OBJ_F.0, OBJ_F.0]] = 1.0;
    l3.wo[[OBJ_F.1, OBJ_F.1]] = 1.0;

    p.unembed[[OBJ_F.0, 4]] = LOGIT_GAIN;
    p.unembed[[OBJ_F.1, 4]] = -LOGIT_GAIN;
    p.unembed[[OTHER_F.0, 5]] = LOGIT_GAIN;
    p.unembed[[OTHER_F.1, 5]] = -LOGIT_GAIN;

    let mut ckpt = Checkpoint::init(config, tokenizer).expect("fixture config is valid");
    ckpt.params = p;
    Planted {
        ckpt,
        input: vec![0, 1, 2, 3],
        subject_span: 1..3,
        target: 4,
    }
}
