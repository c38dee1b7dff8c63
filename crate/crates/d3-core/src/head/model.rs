//! Trainable heads over frozen embedding pairs.
//!
//! Four classifier shapes share one interface: a plain linear probe, a
//! one-hidden-layer rectifier net, a single self-attention layer with output
//! projection (no residual, no normalization), and a two-layer pre-norm
//! transformer encoder. All gradients are written out by hand and checked
//! against finite differences.

use super::linalg::{gelu, gelu_prime, softmax_backward_rows, softmax_rows, Mat};
use crate::rng::derive_rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROB_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;
const TF_LAYERS: usize = 2;
const TF_HEADS: usize = 4;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("embedding has {got} dims, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("dim {0} unusable: {1}")]
    BadDim(usize, &'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    FcOnly,
    Mlp,
    SelfAttention,
    Transformer2,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] =
        [HeadKind::FcOnly, HeadKind::Mlp, HeadKind::SelfAttention, HeadKind::Transformer2];

    pub fn code(self) -> u8 {
        match self {
            HeadKind::FcOnly => 0,
            HeadKind::Mlp => 1,
            HeadKind::SelfAttention => 2,
            HeadKind::Transformer2 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    OriginalOnly,
    OriginalDisrupted,
    OriginalOriginal,
    DisruptedDisrupted,
}

impl PairMode {
    pub const ALL: [PairMode; 4] = [
        PairMode::OriginalOnly,
        PairMode::OriginalDisrupted,
        PairMode::OriginalOriginal,
        PairMode::DisruptedDisrupted,
    ];

    pub fn code(self) -> u8 {
        match self {
            PairMode::OriginalOnly => 0,
            PairMode::OriginalDisrupted => 1,
            PairMode::OriginalOriginal => 2,
            PairMode::DisruptedDisrupted => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn token_count(self) -> usize {
        match self {
            PairMode::OriginalOnly => 1,
            _ => 2,
        }
    }

    /// Builds the token stack (row 0 first) as one flat f64 vector.
    pub fn assemble(
        self,
        original: &[f32],
        disrupted: &[f32],
        dim: usize,
    ) -> Result<Vec<f64>, HeadError> {
        let take = |v: &[f32]| -> Result<Vec<f64>, HeadError> {
            if v.len() != dim {
                return Err(HeadError::DimMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(HeadError::NonFinite);
            }
            Ok(v.iter().map(|&x| x as f64).collect())
        };
        Ok(match self {
            PairMode::OriginalOnly => take(original)?,
            PairMode::OriginalDisrupted => {
                let mut t = take(original)?;
                t.extend(take(disrupted)?);
                t
            }
            PairMode::OriginalOriginal => {
                let mut t = take(original)?;
                t.extend_from_within(..);
                t
            }
            PairMode::DisruptedDisrupted => {
                let mut t = take(disrupted)?;
                t.extend_from_within(..);
                t
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct LnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LnParams {
    fn ones(dim: usize) -> Self {
        Self { gamma: vec![1.0; dim], beta: vec![0.0; dim] }
    }

    fn zeros(dim: usize) -> Self {
        Self { gamma: vec![0.0; dim], beta: vec![0.0; dim] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct Block {
    pub ln1: LnParams,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2: LnParams,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(super) enum Params {
    Fc { w: Vec<f64>, b: Vec<f64> },
    Mlp { w1: Mat, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64> },
    Sa { wq: Mat, wk: Mat, wv: Mat, wo: Mat, w: Vec<f64>, b: Vec<f64> },
    Tf { blocks: Vec<Block>, lnf: LnParams, w: Vec<f64>, b: Vec<f64> },
}

impl Params {
    fn zeros(kind: HeadKind, dim: usize, tokens: usize) -> Self {
        let input = tokens * dim;
        match kind {
            HeadKind::FcOnly => Params::Fc { w: vec![0.0; input], b: vec![0.0] },
            HeadKind::Mlp => Params::Mlp {
                w1: Mat::zeros(input, 2 * dim),
                b1: vec![0.0; 2 * dim],
                w2: vec![0.0; 2 * dim],
                b2: vec![0.0],
            },
            HeadKind::SelfAttention => Params::Sa {
                wq: Mat::zeros(dim, dim),
                wk: Mat::zeros(dim, dim),
                wv: Mat::zeros(dim, dim),
                wo: Mat::zeros(dim, dim),
                w: vec![0.0; input],
                b: vec![0.0],
            },
            HeadKind::Transformer2 => Params::Tf {
                blocks: (0..TF_LAYERS)
                    .map(|_| Block {
                        ln1: LnParams::zeros(dim),
                        wq: Mat::zeros(dim, dim),
                        wk: Mat::zeros(dim, dim),
                        wv: Mat::zeros(dim, dim),
                        wo: Mat::zeros(dim, dim),
                        ln2: LnParams::zeros(dim),
                        w1: Mat::zeros(dim, 4 * dim),
                        b1: vec![0.0; 4 * dim],
                        w2: Mat::zeros(4 * dim, dim),
                        b2: vec![0.0; dim],
                    })
                    .collect(),
                lnf: LnParams::zeros(dim),
                w: vec![0.0; input],
                b: vec![0.0],
            },
        }
    }

    /// Tensor order is the serialization and optimizer-state order.
    pub(super) fn tensors(&self) -> Vec<&Vec<f64>> {
        match self {
            Params::Fc { w, b } => vec![w, b],
            Params::Mlp { w1, b1, w2, b2 } => vec![&w1.data, b1, w2, b2],
            Params::Sa { wq, wk, wv, wo, w, b } => {
                vec![&wq.data, &wk.data, &wv.data, &wo.data, w, b]
            }
            Params::Tf { blocks, lnf, w, b } => {
                let mut out = Vec::new();
                for blk in blocks {
                    out.extend([
                        &blk.ln1.gamma,
                        &blk.ln1.beta,
                        &blk.wq.data,
                        &blk.wk.data,
                        &blk.wv.data,
                        &blk.wo.data,
                        &blk.ln2.gamma,
                        &blk.ln2.beta,
                        &blk.w1.data,
                        &blk.b1,
                        &blk.w2.data,
                        &blk.b2,
                    ]);
                }
                out.extend([&lnf.gamma, &lnf.beta, w, b]);
                out
            }
        }
    }

    pub(super) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Params::Fc { w, b } => vec![w, b],
            Params::Mlp { w1, b1, w2, b2 } => vec![&mut w1.data, b1, w2, b2],
            Params::Sa { wq, wk, wv, wo, w, b } => {
                vec![&mut wq.data, &mut wk.data, &mut wv.data, &mut wo.data, w, b]
            }
            Params::Tf { blocks, lnf, w, b } => {
                let mut out: Vec<&mut Vec<f64>> = Vec::new();
                for blk in blocks {
                    out.extend([
                        &mut blk.ln1.gamma,
                        &mut blk.ln1.beta,
                        &mut blk.wq.data,
                        &mut blk.wk.data,
                        &mut blk.wv.data,
                        &mut blk.wo.data,
                        &mut blk.ln2.gamma,
                        &mut blk.ln2.beta,
                        &mut blk.w1.data,
                        &mut blk.b1,
                        &mut blk.w2.data,
                        &mut blk.b2,
                    ]);
                }
                out.extend([&mut lnf.gamma, &mut lnf.beta, w, b]);
                out
            }
        }
    }
}

/// Gradient accumulator shaped like the model parameters.
#[derive(Clone, Debug)]
pub struct GradBuffer(pub(super) Params);

impl GradBuffer {
    pub fn zero(&mut self) {
        for t in self.0.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadModel {
    kind: HeadKind,
    pair_mode: PairMode,
    dim: usize,
    pub(super) params: Params,
}

impl HeadModel {
    /// Training initialization: projection weights drawn N(0, 1/fan_in),
    /// classifier and biases zero (so the first prediction is exactly 0.5),
    /// norm scales one.
    pub fn new(
        kind: HeadKind,
        pair_mode: PairMode,
        dim: usize,
        init_seed: u64,
    ) -> Result<Self, HeadError> {
        check_dim(kind, dim)?;
        let tokens = pair_mode.token_count();
        let mut params = Params::zeros(kind, dim, tokens);
        let mut rng = derive_rng(init_seed, "head_init", &[]);
        let mut fill = |m: &mut Mat, fan_in: usize| {
            let std = 1.0 / (fan_in as f64).sqrt();
            for v in m.data.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = g * std;
            }
        };
        match &mut params {
            Params::Fc { .. } => {}
            Params::Mlp { w1, .. } => fill(w1, tokens * dim),
            Params::Sa { wq, wk, wv, wo, .. } => {
                fill(wq, dim);
                fill(wk, dim);
                fill(wv, dim);
                fill(wo, dim);
            }
            Params::Tf { blocks, lnf, .. } => {
                for blk in blocks {
                    blk.ln1 = LnParams::ones(dim);
                    blk.ln2 = LnParams::ones(dim);
                    fill(&mut blk.wq, dim);
                    fill(&mut blk.wk, dim);
                    fill(&mut blk.wv, dim);
                    fill(&mut blk.wo, dim);
                    fill(&mut blk.w1, dim);
                    fill(&mut blk.w2, 4 * dim);
                }
                *lnf = LnParams::ones(dim);
            }
        }
        Ok(Self { kind, pair_mode, dim, params })
    }

    /// Every tensor randomized; used by gradient checks so no path is dead.
    pub fn new_randomized(
        kind: HeadKind,
        pair_mode: PairMode,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, HeadError> {
        check_dim(kind, dim)?;
        let mut model = Self::new(kind, pair_mode, dim, 0)?;
        for t in model.params.tensors_mut() {
            for v in t.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v = 0.3 * g;
            }
        }
        if let Params::Tf { blocks, lnf, .. } = &mut model.params {
            for blk in blocks {
                for g in blk.ln1.gamma.iter_mut().chain(blk.ln2.gamma.iter_mut()) {
                    *g += 1.0;
                }
            }
            for g in lnf.gamma.iter_mut() {
                *g += 1.0;
            }
        }
        Ok(model)
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn pair_mode(&self) -> PairMode {
        self.pair_mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.pair_mode.token_count()
    }

    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer(Params::zeros(self.kind, self.dim, self.token_count()))
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.token_count() * self.dim);
        self.forward(x).logit()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn probability_for_pair(
        &self,
        original: &[f32],
        disrupted: &[f32],
    ) -> Result<f64, HeadError> {
        let x = self.pair_mode.assemble(original, disrupted, self.dim)?;
        Ok(self.probability(&x))
    }

    /// Accumulates analytic gradients into `grads`; returns (loss, probability).
    pub fn loss_grad(&self, x: &[f64], y: f64, grads: &mut GradBuffer) -> (f64, f64) {
        assert_eq!(x.len(), self.token_count() * self.dim);
        let fwd = self.forward(x);
        let p = sigmoid(fwd.logit());
        let dz = bce_dlogit(p, y);
        self.backward(x, &fwd, dz, &mut grads.0);
        (bce_loss(p, y), p)
    }

    /// Flat views used by the optimizer and the checkpoint writer.
    pub(super) fn tensors(&self) -> Vec<&Vec<f64>> {
        self.params.tensors()
    }

    pub(super) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.params.tensors_mut()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let tokens = self.token_count();
        let dim = self.dim;
        match &self.params {
            Params::Fc { w, b } => Forward::Fc { logit: dot(w, x) + b[0] },
            Params::Mlp { w1, b1, w2, b2 } => {
                let mut hpre = b1.clone();
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (h, &wv) in hpre.iter_mut().zip(w1.row(i)) {
                        *h += xi * wv;
                    }
                }
                let h: Vec<f64> = hpre.iter().map(|&v| v.max(0.0)).collect();
                let logit = dot(w2, &h) + b2[0];
                Forward::Mlp { hpre, h, logit }
            }
            Params::Sa { wq, wk, wv, wo, w, b } => {
                let e = Mat::from_rows(tokens, dim, x.to_vec());
                let attn = attn_forward(&e, wq, wk, wv, 1);
                let o = attn.hcat.matmul(wo);
                let logit = dot(w, &o.data) + b[0];
                Forward::Sa { attn, o, logit }
            }
            Params::Tf { blocks, lnf, w, b } => {
                let mut cur = Mat::from_rows(tokens, dim, x.to_vec());
                let mut caches = Vec::with_capacity(blocks.len());
                for blk in blocks {
                    let (next, cache) = tf_block_forward(&cur, blk);
                    caches.push(cache);
                    cur = next;
                }
                let (yf, lnf_cache) = ln_forward(&cur, lnf);
                let logit = dot(w, &yf.data) + b[0];
                Forward::Tf { caches, lnf_cache, yf, logit }
            }
        }
    }

    fn backward(&self, x: &[f64], fwd: &Forward, dz: f64, grads: &mut Params) {
        let tokens = self.token_count();
        let dim = self.dim;
        match (&self.params, fwd, grads) {
            (Params::Fc { .. }, Forward::Fc { .. }, Params::Fc { w: dw, b: db }) => {
                axpy(dw, dz, x);
                db[0] += dz;
            }
            (
                Params::Mlp { w1: _, b1: _, w2, b2: _ },
                Forward::Mlp { hpre, h, .. },
                Params::Mlp { w1: dw1, b1: db1, w2: dw2, b2: db2 },
            ) => {
                axpy(dw2, dz, h);
                db2[0] += dz;
                for (i, &xi) in x.iter().enumerate() {
                    let dw1_row = dw1.row_mut(i);
                    for j in 0..dw1_row.len() {
                        if hpre[j] > 0.0 {
                            dw1_row[j] += dz * w2[j] * xi;
                        }
                    }
                }
                for (j, db) in db1.iter_mut().enumerate() {
                    if hpre[j] > 0.0 {
                        *db += dz * w2[j];
                    }
                }
            }
            (
                Params::Sa { wq, wk, wv, wo, w, b: _ },
                Forward::Sa { attn, o, logit: _ },
                Params::Sa { wq: dwq, wk: dwk, wv: dwv, wo: dwo, w: dw, b: db },
            ) => {
                axpy(dw, dz, &o.data);
                db[0] += dz;
                let mut dout = Mat::zeros(tokens, dim);
                for (d, &wv_) in dout.data.iter_mut().zip(w.iter()) {
                    *d = dz * wv_;
                }
                dwo.add_assign(&attn.hcat.t_matmul(&dout));
                let dhcat = dout.matmul_t(wo);
                attn_backward_with(&dhcat, attn, 1, wq, wk, wv, dwq, dwk, dwv);
            }
            (
                Params::Tf { blocks, lnf, w, b: _ },
                Forward::Tf { caches, lnf_cache, yf, .. },
                Params::Tf { blocks: dblocks, lnf: dlnf, w: dw, b: db },
            ) => {
                axpy(dw, dz, &yf.data);
                db[0] += dz;
                let mut dy = Mat::zeros(tokens, dim);
                for (d, &wv_) in dy.data.iter_mut().zip(w.iter()) {
                    *d = dz * wv_;
                }
                let mut dx = ln_backward(&dy, lnf_cache, lnf, dlnf);
                for i in (0..blocks.len()).rev() {
                    dx = tf_block_backward(&dx, &caches[i], &blocks[i], &mut dblocks[i]);
                }
            }
            _ => unreachable!("grads shaped like params by construction"),
        }
    }
}

fn check_dim(kind: HeadKind, dim: usize) -> Result<(), HeadError> {
    if dim == 0 {
        return Err(HeadError::BadDim(dim, "must be positive"));
    }
    if kind == HeadKind::Transformer2 && !dim.is_multiple_of(TF_HEADS) {
        return Err(HeadError::BadDim(dim, "must divide into 4 attention heads"));
    }
    Ok(())
}

enum Forward {
    Fc { logit: f64 },
    Mlp { hpre: Vec<f64>, h: Vec<f64>, logit: f64 },
    Sa { attn: AttnCache, o: Mat, logit: f64 },
    Tf { caches: Vec<BlockCache>, lnf_cache: LnCache, yf: Mat, logit: f64 },
}

impl Forward {
    fn logit(&self) -> f64 {
        match self {
            Forward::Fc { logit }
            | Forward::Mlp { logit, .. }
            | Forward::Sa { logit, .. }
            | Forward::Tf { logit, .. } => *logit,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability is clamped to [eps, 1-eps] before the logs.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

/// d(loss)/d(logit); zero on the clamp plateau so saturated samples are inert.
fn bce_dlogit(p: f64, y: f64) -> f64 {
    if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
        0.0
    } else {
        p - y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

struct LnCache {
    xhat: Mat,
    invstd: Vec<f64>,
}

fn ln_forward(x: &Mat, p: &LnParams) -> (Mat, LnCache) {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut invstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        invstd.push(inv);
        for (c, &v) in row.iter().enumerate() {
            let xh = (v - mean) * inv;
            *xhat.at_mut(r, c) = xh;
            *y.at_mut(r, c) = p.gamma[c] * xh + p.beta[c];
        }
    }
    (y, LnCache { xhat, invstd })
}

fn ln_backward(dy: &Mat, cache: &LnCache, p: &LnParams, grads: &mut LnParams) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xhr = cache.xhat.row(r);
        for c in 0..d {
            grads.gamma[c] += dyr[c] * xhr[c];
            grads.beta[c] += dyr[c];
        }
        let g: Vec<f64> = dyr.iter().zip(&p.gamma).map(|(dv, gv)| dv * gv).collect();
        let mg = g.iter().sum::<f64>() / d as f64;
        let mgx = g.iter().zip(xhr).map(|(gv, xv)| gv * xv).sum::<f64>() / d as f64;
        let inv = cache.invstd[r];
        let dxr = dx.row_mut(r);
        for c in 0..d {
            dxr[c] = inv * (g[c] - mg - xhr[c] * mgx);
        }
    }
    dx
}

struct AttnCache {
    u: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Softmax rows per head; every row sums to one.
    a: Vec<Mat>,
    hcat: Mat,
}

fn col_slice(m: &Mat, c0: usize, width: usize) -> Mat {
    let mut out = Mat::zeros(m.rows, width);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[c0..c0 + width]);
    }
    out
}

fn col_add(dst: &mut Mat, c0: usize, src: &Mat) {
    for r in 0..src.rows {
        let drow = dst.row_mut(r);
        for c in 0..src.cols {
            drow[c0 + c] += src.at(r, c);
        }
    }
}

fn attn_forward(u: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, heads: usize) -> AttnCache {
    let d = u.cols;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = u.matmul(wq);
    let k = u.matmul(wk);
    let v = u.matmul(wv);
    let mut a = Vec::with_capacity(heads);
    let mut hcat = Mat::zeros(u.rows, d);
    for h in 0..heads {
        let qh = col_slice(&q, h * hd, hd);
        let kh = col_slice(&k, h * hd, hd);
        let vh = col_slice(&v, h * hd, hd);
        let mut s = qh.matmul_t(&kh);
        for sv in s.data.iter_mut() {
            *sv *= scale;
        }
        softmax_rows(&mut s);
        let hh = s.matmul(&vh);
        col_add(&mut hcat, h * hd, &hh);
        a.push(s);
    }
    AttnCache { u: u.clone(), q, k, v, a, hcat }
}

struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    vv: Mat,
    f1: Mat,
    g: Mat,
}

fn tf_block_forward(x: &Mat, blk: &Block) -> (Mat, BlockCache) {
    let (u, ln1) = ln_forward(x, &blk.ln1);
    let attn = attn_forward(&u, &blk.wq, &blk.wk, &blk.wv, TF_HEADS);
    let m = attn.hcat.matmul(&blk.wo);
    let mut xm = x.clone();
    xm.add_assign(&m);
    let (vv, ln2) = ln_forward(&xm, &blk.ln2);
    let mut f1 = vv.matmul(&blk.w1);
    for r in 0..f1.rows {
        for (fv, bv) in f1.row_mut(r).iter_mut().zip(&blk.b1) {
            *fv += bv;
        }
    }
    let mut g = f1.clone();
    for v in g.data.iter_mut() {
        *v = gelu(*v);
    }
    let mut f2 = g.matmul(&blk.w2);
    for r in 0..f2.rows {
        for (fv, bv) in f2.row_mut(r).iter_mut().zip(&blk.b2) {
            *fv += bv;
        }
    }
    let mut out = xm;
    out.add_assign(&f2);
    (out, BlockCache { ln1, attn, ln2, vv, f1, g })
}

fn tf_block_backward(dout: &Mat, cache: &BlockCache, blk: &Block, grads: &mut Block) -> Mat {
    // FFN branch
    grads.w2.add_assign(&cache.g.t_matmul(dout));
    for r in 0..dout.rows {
        for (db, &dv) in grads.b2.iter_mut().zip(dout.row(r)) {
            *db += dv;
        }
    }
    let dg = dout.matmul_t(&blk.w2);
    let mut df1 = dg;
    for (dv, &pre) in df1.data.iter_mut().zip(&cache.f1.data) {
        *dv *= gelu_prime(pre);
    }
    grads.w1.add_assign(&cache.vv.t_matmul(&df1));
    for r in 0..df1.rows {
        for (db, &dv) in grads.b1.iter_mut().zip(df1.row(r)) {
            *db += dv;
        }
    }
    let dvv = df1.matmul_t(&blk.w1);
    let mut dxm = ln_backward(&dvv, &cache.ln2, &blk.ln2, &mut grads.ln2);
    dxm.add_assign(dout);

    // attention branch: m = hcat * wo feeds the xm adder
    grads.wo.add_assign(&cache.attn.hcat.t_matmul(&dxm));
    let dhcat = dxm.matmul_t(&blk.wo);
    let du = attn_backward_with(
        &dhcat,
        &cache.attn,
        TF_HEADS,
        &blk.wq,
        &blk.wk,
        &blk.wv,
        &mut grads.wq,
        &mut grads.wk,
        &mut grads.wv,
    );
    let dx_ln = ln_backward(&du, &cache.ln1, &blk.ln1, &mut grads.ln1);
    let mut dx = dxm;
    dx.add_assign(&dx_ln);
    dx
}

#[allow(clippy::too_many_arguments)]
fn attn_backward_with(
    dhcat: &Mat,
    cache: &AttnCache,
    heads: usize,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    dwq: &mut Mat,
    dwk: &mut Mat,
    dwv: &mut Mat,
) -> Mat {
    let d = cache.u.cols;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Mat::zeros(cache.u.rows, d);
    let mut dk = Mat::zeros(cache.u.rows, d);
    let mut dv = Mat::zeros(cache.u.rows, d);
    for h in 0..heads {
        let qh = col_slice(&cache.q, h * hd, hd);
        let kh = col_slice(&cache.k, h * hd, hd);
        let vh = col_slice(&cache.v, h * hd, hd);
        let dhh = col_slice(dhcat, h * hd, hd);
        let ah = &cache.a[h];
        let da = dhh.matmul_t(&vh);
        let dvh = ah.t_matmul(&dhh);
        let mut ds = softmax_backward_rows(ah, &da);
        for v in ds.data.iter_mut() {
            *v *= scale;
        }
        let dqh = ds.matmul(&kh);
        let dkh = ds.t_matmul(&qh);
        col_add(&mut dq, h * hd, &dqh);
        col_add(&mut dk, h * hd, &dkh);
        col_add(&mut dv, h * hd, &dvh);
    }
    dwq.add_assign(&cache.u.t_matmul(&dq));
    dwk.add_assign(&cache.u.t_matmul(&dk));
    dwv.add_assign(&cache.u.t_matmul(&dv));
    let mut du = dq.matmul_t(wq);
    du.add_assign(&dk.matmul_t(wk));
    du.add_assign(&dv.matmul_t(wv));
    du
}
