//! Decoder-only self-attention network with hand-written backpropagation and
//! AdamW.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, matmul, rows, trans, View};
use super::{draw, frame, read_state, softmax_t, write_state, ModelError, ModelKind, SequenceModel, TrainingBatch};
use crate::topology::euler::MAX_SEQUENCE_LEN;
use crate::topology::{EulerSequence, TRUNCATE};
use crate::util::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    /// Longest sequence (positions) the model accepts.
    pub max_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl TransformerConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: MAX_SEQUENCE_LEN,
            layers: 2,
            heads: 2,
            d_model: 64,
            learning_rate: 6e-5,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            grad_clip: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.vocab_size < 2 || self.max_len == 0 || self.layers == 0 {
            return bad("vocab_size >= 2, max_len >= 1 and layers >= 1 required");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("learning rate and betas out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIx {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wqkv: Range<usize>,
    bqkv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Ix {
    tok: Range<usize>,
    pos: Range<usize>,
    layers: Vec<LayerIx>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    wout: Range<usize>,
    bout: Range<usize>,
    total: usize,
    /// Ranges of two-dimensional weights (decayed).
    matrices: Vec<Range<usize>>,
}

impl Ix {
    fn new(c: &TransformerConfig) -> Self {
        let d = c.d_model;
        let f = 4 * d;
        let mut at = 0;
        let mut matrices = Vec::new();
        let mut take = |n: usize, matrix: bool, matrices: &mut Vec<Range<usize>>| {
            let r = at..at + n;
            at += n;
            if matrix {
                matrices.push(r.clone());
            }
            r
        };
        let tok = take(c.vocab_size * d, true, &mut matrices);
        let pos = take(c.max_len * d, true, &mut matrices);
        let layers = (0..c.layers)
            .map(|_| LayerIx {
                ln1_g: take(d, false, &mut matrices),
                ln1_b: take(d, false, &mut matrices),
                wqkv: take(d * 3 * d, true, &mut matrices),
                bqkv: take(3 * d, false, &mut matrices),
                wo: take(d * d, true, &mut matrices),
                bo: take(d, false, &mut matrices),
                ln2_g: take(d, false, &mut matrices),
                ln2_b: take(d, false, &mut matrices),
                w1: take(d * f, true, &mut matrices),
                b1: take(f, false, &mut matrices),
                w2: take(f * d, true, &mut matrices),
                b2: take(d, false, &mut matrices),
            })
            .collect();
        let lnf_g = take(d, false, &mut matrices);
        let lnf_b = take(d, false, &mut matrices);
        let wout = take(d * c.vocab_size, true, &mut matrices);
        let bout = take(c.vocab_size, false, &mut matrices);
        Self { tok, pos, layers, lnf_g, lnf_b, wout, bout, total: at, matrices }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    cfg: TransformerConfig,
    ix: Ix,
    params: Vec<f32>,
    adam_m: Vec<f32>,
    adam_v: Vec<f32>,
    step: u64,
}

struct Ln {
    xhat: Vec<f32>,
    rstd: Vec<f32>,
}

struct LayerCache {
    ln1: Ln,
    a: Vec<f32>,
    qkv: Vec<f32>,
    probs: Vec<f32>,
    attn: Vec<f32>,
    ln2: Ln,
    m: Vec<f32>,
    hpre: Vec<f32>,
    hact: Vec<f32>,
}

struct Cache {
    layers: Vec<LayerCache>,
    lnf: Ln,
    xf: Vec<f32>,
}

const LN_EPS: f32 = 1e-5;
const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &[f32], d: usize, g: &[f32], b: &[f32]) -> (Vec<f32>, Ln) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for i in 0..d {
            let h = (row[i] - mean) * s;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    (y, Ln { xhat, rstd })
}

/// Accumulates into `dx`, `dg` and `db`.
fn layer_norm_back(dy: &[f32], ln: &Ln, d: usize, g: &[f32], dg: &mut [f32], db: &mut [f32], dx: &mut [f32]) {
    let n = dy.len() / d;
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &ln.xhat[r * d..(r + 1) * d];
        let (mut mean_d, mut mean_dx) = (0.0, 0.0);
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
        }
        mean_d /= d as f32;
        mean_dx /= d as f32;
        for i in 0..d {
            dx[r * d + i] += ln.rstd[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
}

fn linear(x: &[f32], n: usize, din: usize, dout: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0; n * dout];
    matmul(n, din, dout, rows(x, din), rows(w, dout), 0.0, &mut y);
    for r in 0..n {
        for (yi, bi) in y[r * dout..(r + 1) * dout].iter_mut().zip(b) {
            *yi += bi;
        }
    }
    y
}

/// Accumulates `dW`, `db`; returns `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_back(
    dy: &[f32],
    x: &[f32],
    n: usize,
    din: usize,
    dout: usize,
    w: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
) -> Vec<f32> {
    matmul(din, n, dout, trans(x, din), rows(dy, dout), 1.0, dw);
    for r in 0..n {
        for (bi, g) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *bi += g;
        }
    }
    let mut dx = vec![0.0; n * din];
    matmul(n, dout, din, rows(dy, dout), trans(w, dout), 0.0, &mut dx);
    dx
}

impl Transformer {
    pub fn new(cfg: TransformerConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let ix = Ix::new(&cfg);
        let mut params = vec![0.0f32; ix.total];
        let mut rng = rng_from(cfg.seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
        let resid = Normal::new(0.0f32, 0.02 / (2.0 * cfg.layers as f32).sqrt()).expect("valid normal");
        for r in &ix.matrices {
            for p in &mut params[r.clone()] {
                *p = normal.sample(&mut rng);
            }
        }
        for l in &ix.layers {
            for r in [&l.wo, &l.w2] {
                for p in &mut params[r.clone()] {
                    *p = resid.sample(&mut rng);
                }
            }
            for r in [&l.ln1_g, &l.ln2_g] {
                params[r.clone()].fill(1.0);
            }
        }
        params[ix.lnf_g.clone()].fill(1.0);
        let n = ix.total;
        Ok(Self { cfg, ix, params, adam_m: vec![0.0; n], adam_v: vec![0.0; n], step: 0 })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.ix.total
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn p(&self, r: &Range<usize>) -> &[f32] {
        &self.params[r.clone()]
    }

    fn check_batch(&self, batch: &TrainingBatch) -> Result<(), ModelError> {
        batch.validate(self.cfg.vocab_size)?;
        if batch.width() > self.cfg.max_len {
            return Err(ModelError::InvalidConfig(format!(
                "batch width {} exceeds max_len {}",
                batch.width(),
                self.cfg.max_len
            )));
        }
        Ok(())
    }

    fn forward(&self, inputs: &[u32], nb: usize, t: usize) -> (Vec<f32>, Cache) {
        let d = self.cfg.d_model;
        let h = self.cfg.heads;
        let dh = d / h;
        let f = 4 * d;
        let n = nb * t;
        let scale = 1.0 / (dh as f32).sqrt();
        let (tok, pos) = (self.p(&self.ix.tok), self.p(&self.ix.pos));
        let mut x = vec![0.0f32; n * d];
        for (r, &id) in inputs.iter().enumerate() {
            let e = &tok[id as usize * d..(id as usize + 1) * d];
            let p = &pos[(r % t) * d..(r % t + 1) * d];
            for i in 0..d {
                x[r * d + i] = e[i] + p[i];
            }
        }
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for l in &self.ix.layers {
            let (a, ln1) = layer_norm(&x, d, self.p(&l.ln1_g), self.p(&l.ln1_b));
            let qkv = linear(&a, n, d, 3 * d, self.p(&l.wqkv), self.p(&l.bqkv));
            let mut probs = vec![0.0f32; nb * h * t * t];
            let mut attn = vec![0.0f32; n * d];
            for bi in 0..nb {
                let base = bi * t * 3 * d;
                for j in 0..h {
                    let pb = &mut probs[(bi * h + j) * t * t..(bi * h + j + 1) * t * t];
                    let q = View { data: &qkv[base + j * dh..], rs: 3 * d, cs: 1 };
                    let kt = View { data: &qkv[base + d + j * dh..], rs: 1, cs: 3 * d };
                    gemm(t, dh, t, q, kt, 0.0, pb, t, 1);
                    for r in 0..t {
                        let row = &mut pb[r * t..(r + 1) * t];
                        let mut max = f32::NEG_INFINITY;
                        for v in &mut row[..=r] {
                            *v *= scale;
                            max = max.max(*v);
                        }
                        let mut s = 0.0;
                        for v in &mut row[..=r] {
                            *v = (*v - max).exp();
                            s += *v;
                        }
                        for v in &mut row[..=r] {
                            *v /= s;
                        }
                        row[r + 1..].fill(0.0);
                    }
                    let v = View { data: &qkv[base + 2 * d + j * dh..], rs: 3 * d, cs: 1 };
                    gemm(t, t, dh, rows(pb, t), v, 0.0, &mut attn[bi * t * d + j * dh..], d, 1);
                }
            }
            let y = linear(&attn, n, d, d, self.p(&l.wo), self.p(&l.bo));
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi += yi;
            }
            let (m, ln2) = layer_norm(&x, d, self.p(&l.ln2_g), self.p(&l.ln2_b));
            let hpre = linear(&m, n, d, f, self.p(&l.w1), self.p(&l.b1));
            let hact: Vec<f32> = hpre.iter().map(|&v| gelu(v)).collect();
            let z = linear(&hact, n, f, d, self.p(&l.w2), self.p(&l.b2));
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += zi;
            }
            layers.push(LayerCache { ln1, a, qkv, probs, attn, ln2, m, hpre, hact });
        }
        let (xf, lnf) = layer_norm(&x, d, self.p(&self.ix.lnf_g), self.p(&self.ix.lnf_b));
        let logits = linear(&xf, n, d, self.cfg.vocab_size, self.p(&self.ix.wout), self.p(&self.ix.bout));
        (logits, Cache { layers, lnf, xf })
    }

    fn framed(batch: &TrainingBatch) -> (Vec<u32>, Vec<Option<u32>>) {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for row in &batch.sequences {
            let (i, t) = frame(row);
            inputs.extend(i);
            targets.extend(t);
        }
        (inputs, targets)
    }

    /// Mean masked cross-entropy and `d loss / d logits`.
    fn loss_and_grad(&self, logits: &[f32], targets: &[Option<u32>], want_grad: bool) -> (f64, Vec<f32>) {
        let v = self.cfg.vocab_size;
        let count = targets.iter().filter(|t| t.is_some()).count().max(1);
        let mut loss = 0.0f64;
        let mut grad = if want_grad { vec![0.0f32; logits.len()] } else { Vec::new() };
        for (r, tgt) in targets.iter().enumerate() {
            let Some(tgt) = *tgt else { continue };
            let row = &logits[r * v..(r + 1) * v];
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
            let sum: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
            let lse = max as f64 + sum.ln();
            loss += lse - row[tgt as usize] as f64;
            if want_grad {
                let g = &mut grad[r * v..(r + 1) * v];
                for (gi, &x) in g.iter_mut().zip(row) {
                    *gi = (((x as f64) - lse).exp() / count as f64) as f32;
                }
                g[tgt as usize] -= 1.0 / count as f32;
            }
        }
        (loss / count as f64, grad)
    }

    /// Loss and full parameter gradient for `batch`.
    pub fn gradients(&self, batch: &TrainingBatch) -> Result<(f64, Vec<f32>), ModelError> {
        self.check_batch(batch)?;
        let (nb, t) = (batch.len(), batch.width());
        let (inputs, targets) = Self::framed(batch);
        let (logits, cache) = self.forward(&inputs, nb, t);
        let (loss, dlogits) = self.loss_and_grad(&logits, &targets, true);
        Ok((loss, self.backward(&inputs, nb, t, &cache, &dlogits)))
    }

    fn backward(&self, inputs: &[u32], nb: usize, t: usize, cache: &Cache, dlogits: &[f32]) -> Vec<f32> {
        let d = self.cfg.d_model;
        let h = self.cfg.heads;
        let dh = d / h;
        let f = 4 * d;
        let n = nb * t;
        let v = self.cfg.vocab_size;
        let scale = 1.0 / (dh as f32).sqrt();
        let ix = &self.ix;
        let mut grad = vec![0.0f32; ix.total];

        let dxf = {
            let (dw, rest) = grad.split_at_mut(ix.bout.start);
            linear_back(dlogits, &cache.xf, n, d, v, self.p(&ix.wout), &mut dw[ix.wout.clone()], &mut rest[..v])
        };
        let mut dx = vec![0.0f32; n * d];
        {
            let (g, b) = split2(&mut grad, &ix.lnf_g, &ix.lnf_b);
            layer_norm_back(&dxf, &cache.lnf, d, self.p(&ix.lnf_g), g, b, &mut dx);
        }
        for (l, lc) in ix.layers.iter().zip(&cache.layers).rev() {
            // MLP branch.
            let dhact = {
                let (w, b) = split2(&mut grad, &l.w2, &l.b2);
                linear_back(&dx, &lc.hact, n, f, d, self.p(&l.w2), w, b)
            };
            let dhpre: Vec<f32> = dhact.iter().zip(&lc.hpre).map(|(g, &x)| g * gelu_grad(x)).collect();
            let dm = {
                let (w, b) = split2(&mut grad, &l.w1, &l.b1);
                linear_back(&dhpre, &lc.m, n, d, f, self.p(&l.w1), w, b)
            };
            {
                let (g, b) = split2(&mut grad, &l.ln2_g, &l.ln2_b);
                layer_norm_back(&dm, &lc.ln2, d, self.p(&l.ln2_g), g, b, &mut dx);
            }
            // Attention branch.
            let dattn = {
                let (w, b) = split2(&mut grad, &l.wo, &l.bo);
                linear_back(&dx, &lc.attn, n, d, d, self.p(&l.wo), w, b)
            };
            let mut dqkv = vec![0.0f32; n * 3 * d];
            let mut dp = vec![0.0f32; t * t];
            for bi in 0..nb {
                let base = bi * t * 3 * d;
                for j in 0..h {
                    let pb = &lc.probs[(bi * h + j) * t * t..(bi * h + j + 1) * t * t];
                    let d_o = View { data: &dattn[bi * t * d + j * dh..], rs: d, cs: 1 };
                    let vt = View { data: &lc.qkv[base + 2 * d + j * dh..], rs: 1, cs: 3 * d };
                    gemm(t, dh, t, d_o, vt, 0.0, &mut dp, t, 1);
                    gemm(t, t, dh, trans(pb, t), d_o, 0.0, &mut dqkv[base + 2 * d + j * dh..], 3 * d, 1);
                    for r in 0..t {
                        let pr = &pb[r * t..(r + 1) * t];
                        let dr = &mut dp[r * t..(r + 1) * t];
                        let s: f32 = pr[..=r].iter().zip(&dr[..=r]).map(|(a, b)| a * b).sum();
                        for c in 0..t {
                            dr[c] = if c <= r { pr[c] * (dr[c] - s) * scale } else { 0.0 };
                        }
                    }
                    let k = View { data: &lc.qkv[base + d + j * dh..], rs: 3 * d, cs: 1 };
                    let q = View { data: &lc.qkv[base + j * dh..], rs: 3 * d, cs: 1 };
                    gemm(t, t, dh, rows(&dp, t), k, 0.0, &mut dqkv[base + j * dh..], 3 * d, 1);
                    gemm(t, t, dh, trans(&dp, t), q, 0.0, &mut dqkv[base + d + j * dh..], 3 * d, 1);
                }
            }
            let da = {
                let (w, b) = split2(&mut grad, &l.wqkv, &l.bqkv);
                linear_back(&dqkv, &lc.a, n, d, 3 * d, self.p(&l.wqkv), w, b)
            };
            {
                let (g, b) = split2(&mut grad, &l.ln1_g, &l.ln1_b);
                layer_norm_back(&da, &lc.ln1, d, self.p(&l.ln1_g), g, b, &mut dx);
            }
        }
        for (r, &id) in inputs.iter().enumerate() {
            let te = ix.tok.start + id as usize * d;
            let pe = ix.pos.start + (r % t) * d;
            for i in 0..d {
                grad[te + i] += dx[r * d + i];
                grad[pe + i] += dx[r * d + i];
            }
        }
        grad
    }

    fn apply_adamw(&mut self, mut grad: Vec<f32>) {
        let c = &self.cfg;
        if c.grad_clip > 0.0 {
            let norm = grad.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
            if norm > c.grad_clip {
                let s = (c.grad_clip / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.step += 1;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32) as f32;
        let bc2 = 1.0 - c.beta2.powi(self.step as i32) as f32;
        let lr = c.learning_rate as f32;
        let eps = c.adam_eps as f32;
        let wd = c.weight_decay as f32;
        let mut decay = vec![false; self.ix.total];
        for r in &self.ix.matrices {
            decay[r.clone()].fill(true);
        }
        for i in 0..self.ix.total {
            let g = grad[i];
            self.adam_m[i] = b1 * self.adam_m[i] + (1.0 - b1) * g;
            self.adam_v[i] = b2 * self.adam_v[i] + (1.0 - b2) * g * g;
            let mhat = self.adam_m[i] / bc1;
            let vhat = self.adam_v[i] / bc2;
            let mut upd = mhat / (vhat.sqrt() + eps);
            if decay[i] {
                upd += wd * self.params[i];
            }
            self.params[i] -= lr * upd;
        }
    }

    /// Runs one token through the network at `pos`, extending `kv`.
    fn step_token(&self, kv: &mut KvCache, token: u32, pos: usize) -> Vec<f32> {
        let d = self.cfg.d_model;
        let h = self.cfg.heads;
        let dh = d / h;
        let f = 4 * d;
        let scale = 1.0 / (dh as f32).sqrt();
        let id = token as usize;
        let mut x: Vec<f32> = self.p(&self.ix.tok)[id * d..(id + 1) * d]
            .iter()
            .zip(&self.p(&self.ix.pos)[pos * d..(pos + 1) * d])
            .map(|(a, b)| a + b)
            .collect();
        for (li, l) in self.ix.layers.iter().enumerate() {
            let (a, _) = layer_norm(&x, d, self.p(&l.ln1_g), self.p(&l.ln1_b));
            let qkv = linear(&a, 1, d, 3 * d, self.p(&l.wqkv), self.p(&l.bqkv));
            kv.k[li].extend_from_slice(&qkv[d..2 * d]);
            kv.v[li].extend_from_slice(&qkv[2 * d..]);
            let mut o = vec![0.0f32; d];
            let mut scores = vec![0.0f32; pos + 1];
            for j in 0..h {
                let q = &qkv[j * dh..(j + 1) * dh];
                for (c, s) in scores.iter_mut().enumerate() {
                    let k = &kv.k[li][c * d + j * dh..c * d + (j + 1) * dh];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                let max = scores.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
                let mut sum = 0.0;
                for s in &mut scores {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for (c, s) in scores.iter().enumerate() {
                    let vv = &kv.v[li][c * d + j * dh..c * d + (j + 1) * dh];
                    for (oi, vi) in o[j * dh..(j + 1) * dh].iter_mut().zip(vv) {
                        *oi += s / sum * vi;
                    }
                }
            }
            let y = linear(&o, 1, d, d, self.p(&l.wo), self.p(&l.bo));
            x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
            let (m, _) = layer_norm(&x, d, self.p(&l.ln2_g), self.p(&l.ln2_b));
            let hid: Vec<f32> = linear(&m, 1, d, f, self.p(&l.w1), self.p(&l.b1)).into_iter().map(gelu).collect();
            let z = linear(&hid, 1, f, d, self.p(&l.w2), self.p(&l.b2));
            x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        }
        let (xf, _) = layer_norm(&x, d, self.p(&self.ix.lnf_g), self.p(&self.ix.lnf_b));
        linear(&xf, 1, d, self.cfg.vocab_size, self.p(&self.ix.wout), self.p(&self.ix.bout))
    }

    fn new_kv(&self) -> KvCache {
        KvCache { k: vec![Vec::new(); self.cfg.layers], v: vec![Vec::new(); self.cfg.layers] }
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (header, payload): (StateHeader, &[u8]) = read_state(bytes)?;
        let mut model = Self::new(header.config)?;
        let n = model.ix.total;
        if payload.len() != 3 * n * 4 {
            return Err(ModelError::Checkpoint("parameter payload has the wrong size".into()));
        }
        let floats: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        model.params.copy_from_slice(&floats[..n]);
        model.adam_m.copy_from_slice(&floats[n..2 * n]);
        model.adam_v.copy_from_slice(&floats[2 * n..]);
        model.step = header.step;
        Ok(model)
    }
}

fn split2<'a>(grad: &'a mut [f32], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f32], &'a mut [f32]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = grad.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.len()])
}

struct KvCache {
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    config: TransformerConfig,
    step: u64,
}

impl SequenceModel for Transformer {
    fn kind(&self) -> ModelKind {
        ModelKind::Transformer
    }

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn max_len(&self) -> usize {
        self.cfg.max_len
    }

    fn next_token_distribution(&self, context: &[u32], temperature: f64) -> Vec<f64> {
        if context.len() >= self.cfg.max_len || context.iter().any(|&t| t as usize >= self.cfg.vocab_size) {
            let mut p = vec![0.0; self.cfg.vocab_size];
            p[TRUNCATE as usize] = 1.0;
            return p;
        }
        let mut kv = self.new_kv();
        let mut logits = self.step_token(&mut kv, TRUNCATE, 0);
        for (i, &tok) in context.iter().enumerate() {
            logits = self.step_token(&mut kv, tok, i + 1);
        }
        softmax_t(&logits, temperature)
    }

    fn evaluate(&self, batch: &TrainingBatch) -> Result<f64, ModelError> {
        self.check_batch(batch)?;
        let (inputs, targets) = Self::framed(batch);
        let (logits, _) = self.forward(&inputs, batch.len(), batch.width());
        Ok(self.loss_and_grad(&logits, &targets, false).0)
    }

    fn train_step(&mut self, batch: &TrainingBatch) -> Result<f64, ModelError> {
        let (loss, grad) = self.gradients(batch)?;
        self.apply_adamw(grad);
        Ok(loss)
    }

    fn sample(&self, temperature: f64, max_len: usize, seed: u64) -> EulerSequence {
        let mut rng = rng_from(seed);
        let limit = max_len.min(self.cfg.max_len);
        let mut kv = self.new_kv();
        let mut tokens = Vec::new();
        let mut prev = TRUNCATE;
        while tokens.len() < limit {
            let logits = self.step_token(&mut kv, prev, tokens.len());
            let t = draw(&softmax_t(&logits, temperature), &mut rng);
            if t == TRUNCATE {
                tokens.push(t);
                break;
            }
            tokens.push(t);
            prev = t;
        }
        EulerSequence { tokens }
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    fn learning_rate(&self) -> Option<f64> {
        Some(self.cfg.learning_rate)
    }

    fn state_bytes(&self) -> Vec<u8> {
        let header = StateHeader { config: self.cfg.clone(), step: self.step };
        let mut payload = Vec::with_capacity(self.ix.total * 12);
        for v in [&self.params, &self.adam_m, &self.adam_v] {
            for x in v.iter() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_state(&header, &payload)
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}

/// Draws a random batch of `n` rows of `width` tokens for tests and benches.
pub fn random_batch(vocab: usize, n: usize, width: usize, seed: u64) -> TrainingBatch {
    let mut rng = rng_from(seed);
    let sequences = (0..n).map(|_| (0..width).map(|_| rng.gen_range(1..vocab as u32)).collect()).collect();
    TrainingBatch { sequences, weights: vec![1.0; n] }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> TransformerConfig {
        TransformerConfig { max_len: 16, d_model: 8, heads: 2, layers: 2, learning_rate: 1e-2, grad_clip: 0.0, ..TransformerConfig::new(vocab) }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = Transformer::new(TransformerConfig { seed: 4, ..tiny(7) }).unwrap();
        let mut batch = random_batch(7, 2, 6, 1);
        batch.sequences[1][4] = TRUNCATE;
        let (_, grad) = model.gradients(&batch).unwrap();
        let mut rng = rng_from(2);
        let mut checked = 0;
        for _ in 0..200 {
            let i = rng.gen_range(0..model.n_params());
            let h = 3e-3f32;
            let mut plus = model.clone();
            plus.params[i] += h;
            let mut minus = model.clone();
            minus.params[i] -= h;
            let fd = (plus.evaluate(&batch).unwrap() - minus.evaluate(&batch).unwrap()) / (2.0 * h as f64);
            let g = grad[i] as f64;
            if fd.abs() < 1e-4 && g.abs() < 1e-4 {
                continue;
            }
            checked += 1;
            assert!((fd - g).abs() <= 2e-3 + 0.05 * fd.abs().max(g.abs()), "param {i}: fd {fd} vs {g}");
        }
        assert!(checked > 30, "{checked}");
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let model = Transformer::new(TransformerConfig::new(60)).unwrap();
        let batch = random_batch(60, 4, 32, 3);
        let loss = model.evaluate(&batch).unwrap();
        assert!((loss - (60f64).ln()).abs() < 0.1, "{loss}");
    }

    #[test]
    fn cached_step_matches_batch_forward() {
        let model = Transformer::new(TransformerConfig { seed: 8, ..tiny(9) }).unwrap();
        let row = vec![3, 5, 1, 8, 2, 0];
        let (inputs, _) = frame(&row);
        let (logits, _) = model.forward(&inputs, 1, row.len());
        let mut kv = model.new_kv();
        for (p, &tok) in inputs.iter().enumerate() {
            let l = model.step_token(&mut kv, tok, p);
            for (a, b) in l.iter().zip(&logits[p * 9..(p + 1) * 9]) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn checkpoint_state_round_trips() {
        let mut model = Transformer::new(tiny(7)).unwrap();
        model.train_step(&random_batch(7, 2, 5, 0)).unwrap();
        let back = Transformer::from_state_bytes(&model.state_bytes()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn memorizes_a_sequence_and_replays_it_cold() {
        let mut model = Transformer::new(TransformerConfig { learning_rate: 3e-3, grad_clip: 1.0, seed: 1, ..TransformerConfig::new(12) }).unwrap();
        let row = vec![4, 9, 1, 7, 7, 3, 11, 2, 0];
        let batch = TrainingBatch { sequences: vec![row.clone()], weights: vec![1.0] };
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            loss = model.train_step(&batch).unwrap();
        }
        assert!(loss < 0.1, "{loss}");
        assert_eq!(model.sample(1e-4, 64, 3).tokens, row);
        let p = model.next_token_distribution(&row[..3], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p[7] > 0.9);
    }

    #[test]
    fn loss_is_invariant_to_row_order() {
        let model = Transformer::new(tiny(9)).unwrap();
        let b = random_batch(9, 4, 7, 5);
        let mut r = b.clone();
        r.sequences.reverse();
        assert!((model.evaluate(&b).unwrap() - model.evaluate(&r).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let run = || {
            let mut m = Transformer::new(TransformerConfig { seed: 11, ..tiny(9) }).unwrap();
            let b = random_batch(9, 3, 6, 2);
            let losses: Vec<f64> = (0..5).map(|_| m.train_step(&b).unwrap()).collect();
            (losses, m.sample(1.0, 16, 4))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_oversized_batches() {
        let model = Transformer::new(tiny(9)).unwrap();
        assert!(model.evaluate(&random_batch(9, 1, 17, 0)).is_err());
        assert!(matches!(model.evaluate(&random_batch(12, 1, 4, 0)), Err(ModelError::TokenOutOfRange { .. })));
    }
}
