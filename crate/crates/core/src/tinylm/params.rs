// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    /// `d_model × d_mlp` up-projection.
    pub w_in: Array2<f64>,
    /// `d_mlp × d_model` down-projection; rows are indexed by the key.
    pub w_out: Array2<f64>,
}

/// All weights. Activations are row vectors, so a linear map is `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub unembed: Array2<f64>,
}

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_mlp);
        Self {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w_in: Array2::zeros((d, f)),
            w_out: Array2::zeros((f, d)),
        }
    }
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.context_len, d)),
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            unembed: Array2::zeros((d, cfg.vocab_size)),
        }
    }

    /// Gaussian initialisation; residual-writing projections are scaled
    /// down with depth.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = 0.02;
        let resid_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        let mut fill = |a: &mut [f64], s: f64| {
            let n = Normal::new(0.0, s).expect("positive std");
            a.iter_mut().for_each(|v| *v = n.sample(&mut rng));
        };
        fill(slice_mut2(&mut p.tok_emb), std);
        fill(slice_mut2(&mut p.pos_emb), std);
        for l in &mut p.layers {
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
            fill(slice_mut2(&mut l.wq), std);
            fill(slice_mut2(&mut l.wk), std);
            fill(slice_mut2(&mut l.wv), std);
            fill(slice_mut2(&mut l.wo), resid_std);
            fill(slice_mut2(&mut l.w_in), std);
            fill(slice_mut2(&mut l.w_out), resid_std);
        }
        p.lnf_g.fill(1.0);
        fill(slice_mut2(&mut p.unembed), std);
        p
    }

    /// `(name, shape, values)` for every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = vec![
            view2("tok_emb".into(), &self.tok_emb),
            view2("pos_emb".into(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(view1(format!("layers.{i}.ln1_g"), &l.ln1_g));
            out.push(view1(format!("layers.{i}.ln1_b"), &l.ln1_b));
            out.push(view2(format!("layers.{i}.wq"), &l.wq));
            out.push(view2(format!("layers.{i}.wk"), &l.wk));
            out.push(view2(format!("layers.{i}.wv"), &l.wv));
            out.push(view2(format!("layers.{i}.wo"), &l.wo));
            out.push(view1(format!("layers.{i}.ln2_g"), &l.ln2_g));
            out.push(view1(format!("layers.{i}.ln2_b"), &l.ln2_b));
            out.push(view2(format!("layers.{i}.w_in"), &l.w_in));
            out.push(view2(format!("layers.{i}.w_out"), &l.w_out));
        }
        out.push(view1("lnf_g".into(), &self.lnf_g));
        out.push(view1("lnf_b".into(), &self.lnf_b));
        out.push(view2("unembed".into(), &self.unembed));
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![slice_mut2(&mut self.tok_emb), slice_mut2(&mut self.pos_emb)];
        for l in &mut self.layers {
            out.push(slice_mut1(&mut l.ln1_g));
            out.push(slice_mut1(&mut l.ln1_b));
            out.push(slice_mut2(&mut l.wq));
            out.push(slice_mut2(&mut l.wk));
            out.push(slice_mut2(&mut l.wv));
            out.push(slice_mut2(&mut l.wo));
            out.push(slice_mut1(&mut l.ln2_g));
            out.push(slice_mut1(&mut l.ln2_b));
            out.push(slice_mut2(&mut l.w_in));
            out.push(slice_mut2(&mut l.w_out));
        }
        out.push(slice_mut1(&mut self.lnf_g));
        out.push(slice_mut1(&mut self.lnf_b));
        out.push(slice_mut2(&mut self.unembed));
        out
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }
}

fn view2(name: String, a: &Array2<f64>) -> (String, Vec<usize>, &[f64]) {
    (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
}

fn view1(name: String, a: &Array1<f64>) -> (String, Vec<usize>, &[f64]) {
    (name, a.shape().to_vec(), a.as_slice().expect("contiguous"))
}

fn slice_mut2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice_mut1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("contiguous")
}
