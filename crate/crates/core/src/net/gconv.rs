//! 3D graph convolution with learnable unit support directions.
//!
//! `out[n,c] = <f_n, w_center[:,c]> + Σ_s max_j <f_j, w_support[s,:,c]> · cos(d_jn, k_s)`
//! with `d_jn = x_j − x_n` over the J neighbours of `n`.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::Graph;
use super::layers::uniform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GConvKernel {
    /// C_in×C_out.
    pub w_center: Array2<f64>,
    /// S×3 support directions.
    pub supports: Array2<f64>,
    /// S×C_in×C_out.
    pub w_support: Array3<f64>,
}

impl GConvKernel {
    pub fn zeros(c_in: usize, c_out: usize, s: usize) -> Self {
        Self {
            w_center: Array2::zeros((c_in, c_out)),
            supports: Array2::zeros((s, 3)),
            w_support: Array3::zeros((s, c_in, c_out)),
        }
    }

    pub(crate) fn init(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, s: usize) -> Self {
        let bound = 1.0 / (c_in as f64).sqrt();
        let mut k = Self {
            w_center: uniform(rng, (c_in, c_out), bound),
            supports: uniform(rng, (s, 3), 1.0),
            w_support: Array3::from_shape_fn((s, c_in, c_out), |_| rng.gen_range(-bound..bound)),
        };
        k.normalize_supports();
        k
    }

    pub fn c_in(&self) -> usize {
        self.w_center.nrows()
    }

    pub fn c_out(&self) -> usize {
        self.w_center.ncols()
    }

    pub fn n_supports(&self) -> usize {
        self.supports.nrows()
    }

    /// Rescales every support direction to unit length.
    pub fn normalize_supports(&mut self) {
        for mut row in self.supports.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            } else {
                row.assign(&ndarray::arr1(&[0.0, 0.0, 1.0]));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GConvCache {
    /// n×J×S cosines.
    cos: Vec<f64>,
    /// n×S×C_out winning neighbour slot.
    argmax: Vec<u32>,
    /// Per support, `feats · w_support[s]`.
    proj: Vec<Array2<f64>>,
}

impl GConvCache {
    /// Winning neighbour slots, for detecting kinks.
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

#[derive(Debug, Clone)]
pub struct GConvGrads {
    pub feats: Array2<f64>,
    pub coords: Array2<f64>,
    pub kernel: GConvKernel,
}

fn cosine(d: [f64; 3], k: [f64; 3]) -> f64 {
    let nd = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let nk = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    if nd == 0.0 || nk == 0.0 {
        return 0.0;
    }
    (d[0] * k[0] + d[1] * k[1] + d[2] * k[2]) / (nd * nk)
}

fn displacement(graph: &Graph, n: usize, m: usize) -> [f64; 3] {
    let (a, b) = (graph.point(n), graph.point(m));
    [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
}

fn support(k: &GConvKernel, s: usize) -> [f64; 3] {
    [k.supports[[s, 0]], k.supports[[s, 1]], k.supports[[s, 2]]]
}

pub fn gconv_forward(
    graph: &Graph,
    feats: ArrayView2<f64>,
    kernel: &GConvKernel,
) -> Result<(Array2<f64>, GConvCache)> {
    let (n, j, n_s, c_out) = (graph.len(), graph.j, kernel.n_supports(), kernel.c_out());
    if feats.nrows() != n || feats.ncols() != kernel.c_in() {
        return Err(Error::Dimension(format!(
            "gconv expects {n}×{} features, got {}×{}",
            kernel.c_in(),
            feats.nrows(),
            feats.ncols()
        )));
    }
    if kernel.w_support.dim() != (n_s, kernel.c_in(), c_out) || kernel.supports.ncols() != 3 {
        return Err(Error::Dimension("gconv kernel tensors disagree".into()));
    }
    let mut out = feats.dot(&kernel.w_center);
    let proj: Vec<Array2<f64>> = (0..n_s)
        .map(|s| feats.dot(&kernel.w_support.index_axis(Axis(0), s)))
        .collect();
    let mut cos = vec![0.0; n * j * n_s];
    for i in 0..n {
        for (t, &m) in graph.neighbors_of(i).iter().enumerate() {
            let d = displacement(graph, i, m);
            for s in 0..n_s {
                cos[(i * j + t) * n_s + s] = cosine(d, support(kernel, s));
            }
        }
    }
    let mut argmax = vec![0u32; n * n_s * c_out];
    let mut best = vec![0.0; c_out];
    for i in 0..n {
        let nbrs = graph.neighbors_of(i);
        for (s, p) in proj.iter().enumerate() {
            let slots = &mut argmax[(i * n_s + s) * c_out..(i * n_s + s + 1) * c_out];
            best.iter_mut().for_each(|b| *b = f64::NEG_INFINITY);
            for (t, &m) in nbrs.iter().enumerate() {
                let c_t = cos[(i * j + t) * n_s + s];
                for (c, &pv) in p.row(m).iter().enumerate() {
                    let v = pv * c_t;
                    let cur = slots[c] as usize;
                    if v > best[c] || (v == best[c] && m < nbrs[cur]) {
                        best[c] = v;
                        slots[c] = t as u32;
                    }
                }
            }
            for (o, b) in out.row_mut(i).iter_mut().zip(&best) {
                *o += b;
            }
        }
    }
    Ok((out, GConvCache { cos, argmax, proj }))
}

pub fn gconv_backward(
    graph: &Graph,
    feats: ArrayView2<f64>,
    kernel: &GConvKernel,
    cache: &GConvCache,
    upstream: ArrayView2<f64>,
) -> GConvGrads {
    let (n, j, n_s, c_out) = (graph.len(), graph.j, kernel.n_supports(), kernel.c_out());
    let mut grads = GConvGrads {
        feats: upstream.dot(&kernel.w_center.t()),
        coords: Array2::zeros((n, 3)),
        kernel: GConvKernel::zeros(kernel.c_in(), c_out, n_s),
    };
    grads.kernel.w_center = feats.t().dot(&upstream);
    let mut dcos = vec![0.0; n * j * n_s];
    for (s, p) in cache.proj.iter().enumerate() {
        let mut dp = Array2::<f64>::zeros((n, c_out));
        for i in 0..n {
            let nbrs = graph.neighbors_of(i);
            let slots = &cache.argmax[(i * n_s + s) * c_out..(i * n_s + s + 1) * c_out];
            for c in 0..c_out {
                let g = upstream[[i, c]];
                if g == 0.0 {
                    continue;
                }
                let t = slots[c] as usize;
                let m = nbrs[t];
                let idx = (i * j + t) * n_s + s;
                dp[[m, c]] += g * cache.cos[idx];
                dcos[idx] += g * p[[m, c]];
            }
        }
        grads
            .kernel
            .w_support
            .index_axis_mut(Axis(0), s)
            .assign(&feats.t().dot(&dp));
        grads.feats += &dp.dot(&kernel.w_support.index_axis(Axis(0), s).t());
    }
    for i in 0..n {
        for (t, &m) in graph.neighbors_of(i).iter().enumerate() {
            let d = displacement(graph, i, m);
            let nd = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            for s in 0..n_s {
                let g = dcos[(i * j + t) * n_s + s];
                let k = support(kernel, s);
                let nk = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
                if g == 0.0 || nd == 0.0 || nk == 0.0 {
                    continue;
                }
                let cv = cache.cos[(i * j + t) * n_s + s];
                for a in 0..3 {
                    let dk = d[a] / (nd * nk) - cv * k[a] / (nk * nk);
                    let dd = k[a] / (nd * nk) - cv * d[a] / (nd * nd);
                    grads.kernel.supports[[s, a]] += g * dk;
                    grads.coords[[m, a]] += g * dd;
                    grads.coords[[i, a]] -= g * dd;
                }
            }
        }
    }
    grads
}
