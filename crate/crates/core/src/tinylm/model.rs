// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward and backward passes over a batch of variable-length sequences.
//!
//! All positions of all sequences are stacked into the rows of one matrix so
//! the dense projections run as single matrix products; attention is the only
//! per-sequence computation.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::{LayerParams, ModelConfig, Params, Site, SiteRef};
use crate::corpus::TokenSeq;
use crate::error::{LabError, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    /// The site takes the given value.
    Replace,
    /// The given value is added to the site.
    Add,
}

/// An intervention on one row of one site.
#[derive(Debug, Clone)]
pub struct Patch {
    pub seq: usize,
    pub at: SiteRef,
    pub value: Array1<f64>,
    pub mode: PatchMode,
}

impl Patch {
    pub fn replace(seq: usize, at: SiteRef, value: Array1<f64>) -> Self {
        Self {
            seq,
            at,
            value,
            mode: PatchMode::Replace,
        }
    }

    pub fn add(seq: usize, at: SiteRef, value: Array1<f64>) -> Self {
        Self {
            seq,
            at,
            value,
            mode: PatchMode::Add,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capture {
    pub seq: usize,
    pub at: SiteRef,
}

/// One next-token prediction term of a loss: `weight · −log p(token)` at
/// position `pos` of sequence `seq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub seq: usize,
    pub pos: usize,
    pub token: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One row per position, sequences stacked in order.
    pub logits: Array2<f64>,
    /// Row offset of each sequence; `offsets[n_seqs]` is the row count.
    pub offsets: Vec<usize>,
    /// Captured site values, in request order, taken after patching.
    pub captured: Vec<Array1<f64>>,
}

impl ForwardOutput {
    pub fn row(&self, seq: usize, pos: usize) -> ArrayView1<'_, f64> {
        self.logits.row(self.offsets[seq] + pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    /// Accumulate parameter gradients; when false only patch gradients are
    /// produced and the backward pass stops at the lowest patched layer.
    pub params: bool,
}

#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub params: Option<Params>,
    /// Gradient of the loss with respect to each patch value.
    pub patches: Vec<Array1<f64>>,
    pub output: ForwardOutput,
}

struct Layout {
    offsets: Vec<usize>,
    ids: Vec<usize>,
    pos: Vec<usize>,
}

impl Layout {
    fn new(cfg: &ModelConfig, seqs: &[&[usize]]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        for seq in seqs {
            if seq.is_empty() {
                return Err(LabError::Shape("empty input sequence".into()));
            }
            if seq.len() > cfg.context_len {
                return Err(LabError::ContextOverflow {
                    len: seq.len(),
                    context: cfg.context_len,
                });
            }
            for (p, &id) in seq.iter().enumerate() {
                if id >= cfg.vocab_size {
                    return Err(LabError::Shape(format!(
                        "token id {id} outside vocabulary of {}",
                        cfg.vocab_size
                    )));
                }
                ids.push(id);
                pos.push(p);
            }
            offsets.push(ids.len());
        }
        Ok(Self { offsets, ids, pos })
    }

    fn rows(&self) -> usize {
        self.ids.len()
    }

    fn n_seqs(&self) -> usize {
        self.offsets.len() - 1
    }

    fn seq_len(&self, seq: usize) -> usize {
        self.offsets[seq + 1] - self.offsets[seq]
    }

    fn row(&self, seq: usize, token: usize) -> usize {
        self.offsets[seq] + token
    }
}

fn check_site(cfg: &ModelConfig, layout: &Layout, seq: usize, at: &SiteRef) -> Result<()> {
    let ok = seq < layout.n_seqs()
        && at.token < layout.seq_len(seq)
        && (at.site == Site::Embed || at.layer < cfg.n_layers);
    if ok {
        Ok(())
    } else {
        Err(LabError::SiteOutOfRange(format!(
            "{:?} at layer {} token {} of sequence {seq}",
            at.site, at.layer, at.token
        )))
    }
}

fn site_key(at: &SiteRef) -> (Site, usize) {
    match at.site {
        Site::Embed => (Site::Embed, 0),
        s => (s, at.layer),
    }
}

type SiteIndex = HashMap<(Site, usize), Vec<usize>>;

struct Interventions<'a> {
    patches: &'a [Patch],
    captures: &'a [Capture],
    patch_index: SiteIndex,
    capture_index: SiteIndex,
}

impl<'a> Interventions<'a> {
    fn new(
        cfg: &ModelConfig,
        layout: &Layout,
        patches: &'a [Patch],
        captures: &'a [Capture],
    ) -> Result<Self> {
        let mut patch_index = SiteIndex::new();
        for (i, p) in patches.iter().enumerate() {
            check_site(cfg, layout, p.seq, &p.at)?;
            let dim = cfg.site_dim(p.at.site);
            if p.value.len() != dim {
                return Err(LabError::Shape(format!(
                    "patch for {:?} has length {}, expected {dim}",
                    p.at.site,
                    p.value.len()
                )));
            }
            patch_index.entry(site_key(&p.at)).or_default().push(i);
        }
        let mut capture_index = SiteIndex::new();
        for (i, c) in captures.iter().enumerate() {
            check_site(cfg, layout, c.seq, &c.at)?;
            capture_index.entry(site_key(&c.at)).or_default().push(i);
        }
        Ok(Self {
            patches,
            captures,
            patch_index,
            capture_index,
        })
    }

    fn apply(
        &self,
        layout: &Layout,
        site: Site,
        layer: usize,
        x: &mut Array2<f64>,
        captured: &mut [Array1<f64>],
    ) {
        if let Some(idx) = self.patch_index.get(&(site, layer)) {
            for &i in idx {
                let p = &self.patches[i];
                let mut row = x.row_mut(layout.row(p.seq, p.at.token));
                match p.mode {
                    PatchMode::Replace => row.assign(&p.value),
                    PatchMode::Add => row += &p.value,
                }
            }
        }
        if let Some(idx) = self.capture_index.get(&(site, layer)) {
            for &i in idx {
                let c = &self.captures[i];
                captured[i] = x.row(layout.row(c.seq, c.at.token)).to_owned();
            }
        }
    }

    /// Records patch gradients at a site and blocks gradient flow through
    /// replaced rows.
    fn back(
        &self,
        layout: &Layout,
        site: Site,
        layer: usize,
        grad: &mut Array2<f64>,
        patch_grads: &mut [Array1<f64>],
    ) {
        if let Some(idx) = self.patch_index.get(&(site, layer)) {
            for &i in idx {
                let p = &self.patches[i];
                let r = layout.row(p.seq, p.at.token);
                patch_grads[i] = &patch_grads[i] + &grad.row(r);
                if p.mode == PatchMode::Replace {
                    grad.row_mut(r).fill(0.0);
                }
            }
        }
    }

    fn lowest_patched_layer(&self) -> Option<usize> {
        self.patches
            .iter()
            .map(|p| match p.at.site {
                Site::Embed => 0,
                _ => p.at.layer,
            })
            .min()
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dg, db)) = grads {
        *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
        *db += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xh), &r) in dx
        .axis_iter_mut(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(cache.rstd.iter())
    {
        let mean = row.sum() / d;
        let dot = row.dot(&xh) / d;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|v, &x| *v = r * (*v - mean - x * dot));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LayerCache {
    ln1: LnCache,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per sequence, heads innermost.
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    a2: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct Pass {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    af: Array2<f64>,
    logits: Array2<f64>,
}

fn attention(
    cfg: &ModelConfig,
    layout: &Layout,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    window: Option<usize>,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let visible = |i: usize, j: usize| j <= i && window.is_none_or(|w| i - j < w);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(layout.n_seqs() * cfg.n_heads);
    for s in 0..layout.n_seqs() {
        let (r0, r1) = (layout.offsets[s], layout.offsets[s + 1]);
        for h in 0..cfg.n_heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qs = q.slice(s![r0..r1, c0..c1]);
            let ks = k.slice(s![r0..r1, c0..c1]);
            let vs = v.slice(s![r0..r1, c0..c1]);
            let mut p = qs.dot(&ks.t());
            for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
                let max = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| visible(i, j))
                    .fold(f64::NEG_INFINITY, |m, (_, &x)| m.max(x * scale));
                let mut z = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if visible(i, j) {
                        *x = (*x * scale - max).exp();
                        z += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                row /= z;
            }
            ctx.slice_mut(s![r0..r1, c0..c1]).assign(&p.dot(&vs));
            probs.push(p);
        }
    }
    (ctx, probs)
}

fn attention_back(
    cfg: &ModelConfig,
    layout: &Layout,
    cache: &LayerCache,
    dctx: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(dctx.raw_dim());
    let mut dk = Array2::zeros(dctx.raw_dim());
    let mut dv = Array2::zeros(dctx.raw_dim());
    for s in 0..layout.n_seqs() {
        let (r0, r1) = (layout.offsets[s], layout.offsets[s + 1]);
        for h in 0..cfg.n_heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let p = &cache.probs[s * cfg.n_heads + h];
            let d_o = dctx.slice(s![r0..r1, c0..c1]);
            let qs = cache.q.slice(s![r0..r1, c0..c1]);
            let ks = cache.k.slice(s![r0..r1, c0..c1]);
            let vs = cache.v.slice(s![r0..r1, c0..c1]);
            let dp = d_o.dot(&vs.t());
            dv.slice_mut(s![r0..r1, c0..c1]).assign(&p.t().dot(&d_o));
            let mut ds = &dp * p;
            for (mut row, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                let total = row.sum();
                Zip::from(&mut row)
                    .and(&prow)
                    .for_each(|x, &pij| *x = (*x - pij * total) * scale);
            }
            dq.slice_mut(s![r0..r1, c0..c1]).assign(&ds.dot(&ks));
            dk.slice_mut(s![r0..r1, c0..c1]).assign(&ds.t().dot(&qs));
        }
    }
    (dq, dk, dv)
}

fn run(
    params: &Params,
    cfg: &ModelConfig,
    layout: &Layout,
    iv: &Interventions,
    captured: &mut [Array1<f64>],
) -> Pass {
    let d = cfg.d_model;
    let mut x = Array2::zeros((layout.rows(), d));
    for (r, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(&params.tok_emb.row(layout.ids[r]));
        row += &params.pos_emb.row(layout.pos[r]);
    }
    iv.apply(layout, Site::Embed, 0, &mut x, captured);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let (a1, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
        let q = a1.dot(&lp.wq);
        let k = a1.dot(&lp.wk);
        let v = a1.dot(&lp.wv);
        let (ctx, probs) = attention(cfg, layout, &q, &k, &v, cfg.window(l));
        let h = &x + &ctx.dot(&lp.wo);
        let (a2, ln2) = layer_norm(&h, &lp.ln2_g, &lp.ln2_b);
        let pre = a2.dot(&lp.w_in);
        let mut act = pre.mapv(gelu);
        iv.apply(layout, Site::MlpIn, l, &mut act, captured);
        let mut mo = act.dot(&lp.w_out);
        iv.apply(layout, Site::MlpOut, l, &mut mo, captured);
        x = h + mo;
        iv.apply(layout, Site::BlockOut, l, &mut x, captured);
        layers.push(LayerCache {
            ln1,
            a1,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            a2,
            pre,
            act,
        });
    }
    let (af, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    let logits = af.dot(&params.unembed);
    Pass {
        layers,
        lnf,
        af,
        logits,
    }
}

/// Batched forward pass. Sequences are complete model inputs (a leading BOS
/// included by the caller); site token indices address those positions.
pub fn forward_batch(
    params: &Params,
    cfg: &ModelConfig,
    seqs: &[&[usize]],
    captures: &[Capture],
    patches: &[Patch],
) -> Result<ForwardOutput> {
    let layout = Layout::new(cfg, seqs)?;
    let iv = Interventions::new(cfg, &layout, patches, captures)?;
    let mut captured = vec![Array1::zeros(0); captures.len()];
    let pass = run(params, cfg, &layout, &iv, &mut captured);
    Ok(ForwardOutput {
        logits: pass.logits,
        offsets: layout.offsets,
        captured,
    })
}

/// Single-sequence forward pass over the model input for `tokens`
/// (BOS prepended, so token index 0 is BOS).
pub fn forward(
    ckpt: &super::Checkpoint,
    tokens: &TokenSeq,
    capture: &[SiteRef],
    patches: &[(SiteRef, Array1<f64>)],
) -> Result<(Array2<f64>, Vec<Array1<f64>>)> {
    let input = super::model_input(tokens);
    let captures: Vec<Capture> = capture.iter().map(|&at| Capture { seq: 0, at }).collect();
    let patches: Vec<Patch> = patches
        .iter()
        .map(|(at, v)| Patch::replace(0, *at, v.clone()))
        .collect();
    let out = forward_batch(&ckpt.params, &ckpt.config, &[&input], &captures, &patches)?;
    Ok((out.logits, out.captured))
}

/// Row-wise log-softmax.
pub fn log_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row.mapv(|x| x - lse)
}

/// Weighted next-token cross-entropy and its gradients.
pub fn loss_and_grads(
    params: &Params,
    cfg: &ModelConfig,
    seqs: &[&[usize]],
    patches: &[Patch],
    targets: &[Target],
    request: GradRequest,
) -> Result<LossGrads> {
    let layout = Layout::new(cfg, seqs)?;
    let iv = Interventions::new(cfg, &layout, patches, &[])?;
    let pass = run(params, cfg, &layout, &iv, &mut []);

    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(pass.logits.raw_dim());
    for t in targets {
        if t.seq >= layout.n_seqs() || t.pos >= layout.seq_len(t.seq) || t.token >= cfg.vocab_size
        {
            return Err(LabError::SiteOutOfRange(format!(
                "loss target at sequence {} position {} token {}",
                t.seq, t.pos, t.token
            )));
        }
        let r = layout.row(t.seq, t.pos);
        let lp = log_softmax(pass.logits.row(r));
        loss -= t.weight * lp[t.token];
        let mut drow = dlogits.row_mut(r);
        Zip::from(&mut drow)
            .and(&lp)
            .for_each(|g, &l| *g += t.weight * l.exp());
        drow[t.token] -= t.weight;
    }

    let mut grads = request.params.then(|| Params::zeros(cfg));
    let mut patch_grads: Vec<Array1<f64>> = patches
        .iter()
        .map(|p| Array1::zeros(p.value.len()))
        .collect();
    let stop = if request.params {
        None
    } else {
        match iv.lowest_patched_layer() {
            Some(l) => Some(l),
            None => {
                return Ok(LossGrads {
                    loss,
                    params: None,
                    patches: patch_grads,
                    output: ForwardOutput {
                        logits: pass.logits,
                        offsets: layout.offsets,
                        captured: Vec::new(),
                    },
                })
            }
        }
    };
    let needs_embed = request.params || patches.iter().any(|p| p.at.site == Site::Embed);

    if let Some(g) = grads.as_mut() {
        g.unembed = pass.af.t().dot(&dlogits);
    }
    let daf = dlogits.dot(&params.unembed.t());
    let mut dx = layer_norm_back(
        &daf,
        &pass.lnf,
        &params.lnf_g,
        grads.as_mut().map(|g| (&mut g.lnf_g, &mut g.lnf_b)),
    );

    for l in (0..cfg.n_layers).rev() {
        let cache = &pass.layers[l];
        let lp: &LayerParams = &params.layers[l];
        let mut gl = grads.as_mut().map(|g| &mut g.layers[l]);

        iv.back(&layout, Site::BlockOut, l, &mut dx, &mut patch_grads);
        let mut dmo = dx.clone();
        iv.back(&layout, Site::MlpOut, l, &mut dmo, &mut patch_grads);
        let mut dact = dmo.dot(&lp.w_out.t());
        if let Some(g) = gl.as_mut() {
            g.w_out = cache.act.t().dot(&dmo);
        }
        iv.back(&layout, Site::MlpIn, l, &mut dact, &mut patch_grads);
        if stop == Some(l) && !needs_embed {
            break;
        }
        let dpre = Zip::from(&dact)
            .and(&cache.pre)
            .map_collect(|&g, &x| g * gelu_grad(x));
        if let Some(g) = gl.as_mut() {
            g.w_in = cache.a2.t().dot(&dpre);
        }
        let da2 = dpre.dot(&lp.w_in.t());
        let dh = dx
            + layer_norm_back(
                &da2,
                &cache.ln2,
                &lp.ln2_g,
                gl.as_mut().map(|g| (&mut g.ln2_g, &mut g.ln2_b)),
            );
        if let Some(g) = gl.as_mut() {
            g.wo = cache.ctx.t().dot(&dh);
        }
        let dctx = dh.dot(&lp.wo.t());
        let (dq, dk, dv) = attention_back(cfg, &layout, cache, &dctx);
        if let Some(g) = gl.as_mut() {
            g.wq = cache.a1.t().dot(&dq);
            g.wk = cache.a1.t().dot(&dk);
            g.wv = cache.a1.t().dot(&dv);
        }
        let da1 = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        dx = dh
            + layer_norm_back(
                &da1,
                &cache.ln1,
                &lp.ln1_g,
                gl.as_mut().map(|g| (&mut g.ln1_g, &mut g.ln1_b)),
            );
    }

    if needs_embed {
        iv.back(&layout, Site::Embed, 0, &mut dx, &mut patch_grads);
        if let Some(g) = grads.as_mut() {
            for (r, row) in dx.axis_iter(Axis(0)).enumerate() {
                let mut te = g.tok_emb.row_mut(layout.ids[r]);
                te += &row;
                let mut pe = g.pos_emb.row_mut(layout.pos[r]);
                pe += &row;
            }
        }
    }

    Ok(LossGrads {
        loss,
        params: grads,
        patches: patch_grads,
        output: ForwardOutput {
            logits: pass.logits,
            offsets: layout.offsets,
            captured: Vec::new(),
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_mlp: 12,
            vocab_size: 7,
            context_len: 8,
            seed: 3,
            attn_windows: vec![2],
        }
    }

    /// Initialisation with larger weights so every path carries signal.
    pub(crate) fn lively_params(cfg: &ModelConfig) -> Params {
        let mut p = Params::init(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        p
    }

    fn seqs() -> Vec<Vec<usize>> {
        vec![vec![0, 3, 5, 2, 6], vec![0, 1, 4], vec![0, 6, 6, 2, 1, 3]]
    }

    fn all_targets(seqs: &[Vec<usize>]) -> Vec<Target> {
        let n: usize = seqs.iter().map(|s| s.len() - 1).sum();
        seqs.iter()
            .enumerate()
            .flat_map(|(i, s)| {
                (0..s.len() - 1).map(move |p| Target {
                    seq: i,
                    pos: p,
                    token: s[p + 1],
                    weight: 1.0 / n as f64,
                })
            })
            .collect()
    }

    fn refs(seqs: &[Vec<usize>]) -> Vec<&[usize]> {
        seqs.iter().map(Vec::as_slice).collect()
    }

    fn loss_of(p: &Params, cfg: &ModelConfig, patches: &[Patch]) -> f64 {
        let s = seqs();
        loss_and_grads(
            p,
            cfg,
            &refs(&s),
            patches,
            &all_targets(&s),
            GradRequest { params: false },
        )
        .unwrap()
        .loss
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let s = seqs();
        let g = loss_and_grads(
            &p,
            &cfg,
            &refs(&s),
            &[],
            &all_targets(&s),
            GradRequest { params: true },
        )
        .unwrap()
        .params
        .unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _, _)| n).collect();
        let grads: Vec<Vec<f64>> = g.tensors().into_iter().map(|(_, _, v)| v.to_vec()).collect();
        let h = 1e-6;
        for (ti, name) in names.iter().enumerate() {
            // probe the eight largest analytic entries of each group
            let mut order: Vec<usize> = (0..grads[ti].len()).collect();
            order.sort_by(|&a, &b| grads[ti][b].abs().total_cmp(&grads[ti][a].abs()));
            for &i in order.iter().take(8) {
                let mut plus = p.clone();
                plus.tensors_mut()[ti][i] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[ti][i] -= h;
                let fd = (loss_of(&plus, &cfg, &[]) - loss_of(&minus, &cfg, &[])) / (2.0 * h);
                let an = grads[ti][i];
                assert!(
                    rel_err(an, fd) < 1e-4,
                    "{name}[{i}]: analytic {an:e} vs numeric {fd:e}"
                );
            }
        }
    }

    #[test]
    fn patch_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand_vec = |n: usize| Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)));
        let patches = vec![
            Patch::replace(0, SiteRef::new(0, Site::MlpOut, 2), rand_vec(8)),
            Patch::add(2, SiteRef::new(1, Site::MlpIn, 3), rand_vec(12)),
            Patch::add(1, SiteRef::new(0, Site::Embed, 1), rand_vec(8)),
            Patch::replace(2, SiteRef::new(0, Site::BlockOut, 4), rand_vec(8)),
        ];
        let s = seqs();
        for request in [GradRequest { params: false }, GradRequest { params: true }] {
            let g = loss_and_grads(&p, &cfg, &refs(&s), &patches, &all_targets(&s), request)
                .unwrap()
                .patches;
            let h = 1e-6;
            for (pi, patch) in patches.iter().enumerate() {
                for i in 0..patch.value.len() {
                    let mut plus = patches.clone();
                    plus[pi].value[i] += h;
                    let mut minus = patches.clone();
                    minus[pi].value[i] -= h;
                    let fd = (loss_of(&p, &cfg, &plus) - loss_of(&p, &cfg, &minus)) / (2.0 * h);
                    let an = g[pi][i];
                    assert!(
                        rel_err(an, fd) < 1e-4 || (an.abs() < 1e-12 && fd.abs() < 1e-9),
                        "patch {pi}[{i}]: analytic {an:e} vs numeric {fd:e}"
                    );
                }
            }
        }
    }

    #[test]
    fn replaced_rows_block_upstream_gradient() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let s = vec![vec![0, 3, 5]];
        // replacing every block output of the last layer cuts the loss off
        // from all parameters below the final norm
        let captured = forward_batch(
            &p,
            &cfg,
            &refs(&s),
            &(0..3)
                .map(|t| Capture {
                    seq: 0,
                    at: SiteRef::new(1, Site::BlockOut, t),
                })
                .collect::<Vec<_>>(),
            &[],
        )
        .unwrap()
        .captured;
        let patches: Vec<Patch> = captured
            .into_iter()
            .enumerate()
            .map(|(t, v)| Patch::replace(0, SiteRef::new(1, Site::BlockOut, t), v))
            .collect();
        let g = loss_and_grads(
            &p,
            &cfg,
            &refs(&s),
            &patches,
            &all_targets(&s),
            GradRequest { params: true },
        )
        .unwrap()
        .params
        .unwrap();
        assert!(g.layers[0].w_out.iter().all(|&v| v == 0.0));
        assert!(g.tok_emb.iter().all(|&v| v == 0.0));
        assert!(g.unembed.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn self_patch_is_exact_noop() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let s = seqs();
        let plain = forward_batch(&p, &cfg, &refs(&s), &[], &[]).unwrap();
        for site in [Site::Embed, Site::MlpIn, Site::MlpOut, Site::BlockOut] {
            for layer in 0..cfg.n_layers {
                let at = SiteRef::new(layer, site, 2);
                let cap = forward_batch(&p, &cfg, &refs(&s), &[Capture { seq: 0, at }], &[])
                    .unwrap();
                assert_eq!(cap.logits, plain.logits);
                let patched = forward_batch(
                    &p,
                    &cfg,
                    &refs(&s),
                    &[],
                    &[Patch::replace(0, at, cap.captured[0].clone())],
                )
                .unwrap();
                assert_eq!(patched.logits, plain.logits, "{site:?} layer {layer}");
            }
        }
    }

    #[test]
    fn causal_prefix_independence() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let a = vec![0, 3, 5, 2];
        let b = vec![0, 3, 5, 6, 1];
        let out = forward_batch(&p, &cfg, &[&a, &b], &[], &[]).unwrap();
        for pos in 0..3 {
            assert_eq!(out.row(0, pos), out.row(1, pos));
        }
    }

    #[test]
    fn attention_window_limits_receptive_field() {
        // windows of 2 in both layers: position p sees back to p - 2
        let cfg = ModelConfig {
            attn_windows: vec![2, 2],
            ..tiny_config()
        };
        let p = lively_params(&cfg);
        let a = vec![0, 3, 5, 2, 4, 1];
        let b = vec![0, 6, 1, 2, 4, 1];
        let out = forward_batch(&p, &cfg, &[&a, &b], &[], &[]).unwrap();
        assert_eq!(out.row(0, 5), out.row(1, 5));
        assert_ne!(out.row(0, 4), out.row(1, 4));
    }

    #[test]
    fn batching_matches_single_runs() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let s = seqs();
        let batched = forward_batch(&p, &cfg, &refs(&s), &[], &[]).unwrap();
        for (i, seq) in s.iter().enumerate() {
            let single = forward_batch(&p, &cfg, &[seq], &[], &[]).unwrap();
            for pos in 0..seq.len() {
                let d = (&single.row(0, pos) - &batched.row(i, pos))
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(d < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_and_layer_norm_invariants() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let layout = Layout::new(&cfg, &refs(&seqs())).unwrap();
        let iv = Interventions::new(&cfg, &layout, &[], &[]).unwrap();
        let pass = run(&p, &cfg, &layout, &iv, &mut []);
        for cache in &pass.layers {
            for probs in &cache.probs {
                for row in probs.axis_iter(Axis(0)) {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
            for xh in [&cache.ln1.xhat, &cache.ln2.xhat] {
                for row in xh.axis_iter(Axis(0)) {
                    let n = row.len() as f64;
                    let mean = row.sum() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    assert!(mean.abs() < 1e-5);
                    assert!((var - 1.0).abs() < 1e-4, "variance {var}");
                }
            }
        }
        for row in pass.logits.axis_iter(Axis(0)) {
            let total: f64 = log_softmax(row).iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_sites_are_rejected() {
        let cfg = tiny_config();
        let p = lively_params(&cfg);
        let s = vec![0usize, 1, 2];
        for at in [
            SiteRef::new(2, Site::MlpOut, 0),
            SiteRef::new(0, Site::BlockOut, 3),
        ] {
            let err = forward_batch(&p, &cfg, &[&s], &[Capture { seq: 0, at }], &[]).unwrap_err();
            assert!(matches!(err, LabError::SiteOutOfRange(_)));
        }
        let bad = Patch::replace(0, SiteRef::new(0, Site::MlpIn, 0), Array1::zeros(8));
        assert!(matches!(
            forward_batch(&p, &cfg, &[&s], &[], &[bad]),
            Err(LabError::Shape(_))
        ));
        let long = vec![0usize; 9];
        assert!(matches!(
            forward_batch(&p, &cfg, &[&long], &[], &[]),
            Err(LabError::ContextOverflow { .. })
        ));
    }
}
