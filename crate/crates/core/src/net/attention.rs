//! Multi-head self-attention encoder block (post-norm):
//! `x1 = LN(x + MHA(x))`, `y = LN(x1 + FFN(x1))`.

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;

use super::layers::{relu, relu_backward, softmax_rows, softmax_rows_backward, LayerNorm, LayerNormCache, Linear};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln1: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNorm,
}

impl MhaParams {
    pub fn zeros(d_model: usize, d_ffn: usize) -> Self {
        Self {
            wq: Linear::zeros(d_model, d_model),
            wk: Linear::zeros(d_model, d_model),
            wv: Linear::zeros(d_model, d_model),
            wo: Linear::zeros(d_model, d_model),
            ln1: LayerNorm::zeros(d_model),
            ffn1: Linear::zeros(d_model, d_ffn),
            ffn2: Linear::zeros(d_ffn, d_model),
            ln2: LayerNorm::zeros(d_model),
        }
    }

    pub(crate) fn init(rng: &mut ChaCha8Rng, d_model: usize, d_ffn: usize) -> Self {
        Self {
            wq: Linear::init(rng, d_model, d_model),
            wk: Linear::init(rng, d_model, d_model),
            wv: Linear::init(rng, d_model, d_model),
            wo: Linear::init(rng, d_model, d_model),
            ln1: LayerNorm::new(d_model),
            ffn1: Linear::init(rng, d_model, d_ffn),
            ffn2: Linear::init(rng, d_ffn, d_model),
            ln2: LayerNorm::new(d_model),
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.w.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head attention weights, n×n each.
    pub weights: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln1: LayerNormCache,
    x1: Array2<f64>,
    h: Array2<f64>,
    r: Array2<f64>,
    ln2: LayerNormCache,
}

impl MhaCache {
    pub fn ffn_preactivation(&self) -> &Array2<f64> {
        &self.h
    }
}

pub fn mha_forward(x: &Array2<f64>, p: &MhaParams, n_head: usize) -> Result<(Array2<f64>, MhaCache)> {
    let d = p.d_model();
    if x.ncols() != d {
        return Err(Error::Dimension(format!("attention expects width {d}, got {}", x.ncols())));
    }
    if n_head == 0 || d % n_head != 0 {
        return Err(Error::Config(format!("d_model {d} is not divisible by {n_head} heads")));
    }
    let dk = d / n_head;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = p.wq.forward(x.view());
    let k = p.wk.forward(x.view());
    let v = p.wv.forward(x.view());
    let mut o = Array2::zeros(x.raw_dim());
    let mut weights = Vec::with_capacity(n_head);
    for h in 0..n_head {
        let cols = s![.., h * dk..(h + 1) * dk];
        let logits = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let a = softmax_rows(&logits);
        o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        weights.push(a);
    }
    let attn = p.wo.forward(o.view());
    let (x1, ln1) = p.ln1.forward(&(x + &attn));
    let h = p.ffn1.forward(x1.view());
    let r = relu(&h);
    let f = p.ffn2.forward(r.view());
    let (y, ln2) = p.ln2.forward(&(&x1 + &f));
    Ok((
        y,
        MhaCache {
            x: x.clone(),
            q,
            k,
            v,
            weights,
            o,
            ln1,
            x1,
            h,
            r,
            ln2,
        },
    ))
}

/// Accumulates parameter gradients into `grad` and returns dL/dx.
pub fn mha_backward(p: &MhaParams, cache: &MhaCache, g: &Array2<f64>, grad: &mut MhaParams) -> Array2<f64> {
    let n_head = cache.weights.len();
    let dk = p.d_model() / n_head;
    let scale = 1.0 / (dk as f64).sqrt();
    let ds2 = p.ln2.backward(&cache.ln2, g, &mut grad.ln2);
    let dr = p.ffn2.backward(cache.r.view(), ds2.view(), &mut grad.ffn2);
    let dh = relu_backward(&cache.h, &dr);
    let dx1 = &ds2 + &p.ffn1.backward(cache.x1.view(), dh.view(), &mut grad.ffn1);
    let ds1 = p.ln1.backward(&cache.ln1, &dx1, &mut grad.ln1);
    let d_o = p.wo.backward(cache.o.view(), ds1.view(), &mut grad.wo);
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dkm = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, a) in cache.weights.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let doh = d_o.slice(cols);
        let da = doh.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&doh));
        let dlogits = softmax_rows_backward(a, &da) * scale;
        dq.slice_mut(cols).assign(&dlogits.dot(&cache.k.slice(cols)));
        dkm.slice_mut(cols).assign(&dlogits.t().dot(&cache.q.slice(cols)));
    }
    let x = cache.x.view();
    ds1 + p.wq.backward(x, dq.view(), &mut grad.wq)
        + p.wk.backward(x, dkm.view(), &mut grad.wk)
        + p.wv.backward(x, dv.view(), &mut grad.wv)
}
