//! Dense building blocks with explicit backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// `y = x·w + b`, with `w` stored in×out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }

    pub(crate) fn init(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Self {
            w: uniform(rng, (d_in, d_out), 1.0 / (d_in as f64).sqrt()),
            b: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: ArrayView2<f64>, g: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(&g);
        grad.b += &g.sum_axis(Axis(0));
        g.dot(&self.w.t())
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its pre-activation.
pub fn relu_backward(pre: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut out = g.clone();
    out.zip_mut_with(pre, |o, p| {
        if *p <= 0.0 {
            *o = 0.0
        }
    });
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Gradient of a row-wise softmax given its output `a`.
pub fn softmax_rows_backward(a: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(a.raw_dim());
    for ((ar, gr), mut or) in a.rows().into_iter().zip(g.rows()).zip(out.rows_mut()) {
        let dot = ar.dot(&gr);
        or.assign(&(&ar * &(&gr - dot)));
    }
    out
}

/// `x / |x|`; the zero vector maps to itself.
pub fn l2_normalize(x: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let n = x.dot(&x).sqrt();
    if n > 0.0 {
        (x.mapv(|v| v / n), n)
    } else {
        (x.to_owned(), 0.0)
    }
}

/// Gradient of [`l2_normalize`] given its output `y` and the input norm.
pub fn l2_normalize_backward(y: ArrayView1<f64>, norm: f64, g: ArrayView1<f64>) -> Array1<f64> {
    if norm == 0.0 {
        return Array1::zeros(g.len());
    }
    let dot = y.dot(&g);
    (&g - &(&y * dot)) / norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_sigma: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_sigma = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_sigma.iter_mut()) {
            let mu = row.sum() / d;
            row.mapv_inplace(|v| v - mu);
            let var = row.dot(&row) / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            row *= *is;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_sigma })
    }

    pub fn backward(&self, cache: &LayerNormCache, g: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(g * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &g.sum_axis(Axis(0));
        let dxhat = g * &self.gamma;
        let d = g.ncols() as f64;
        let mut dx = Array2::zeros(g.raw_dim());
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let dh = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let m1 = dh.sum() / d;
            let m2 = dh.dot(&xh) / d;
            row.assign(&((&dh - m1 - &(&xh * m2)) * cache.inv_sigma[i]));
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_are_stochastic() {
        let a = softmax_rows(&array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -5.0]]);
        for r in a.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|v| *v >= 0.0));
        }
        assert!((a[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_output_is_standardised() {
        let ln = LayerNorm::new(4);
        let (y, _) = ln.forward(&array![[1.0, 2.0, 3.0, 4.0]]);
        assert!(y.row(0).sum().abs() < 1e-12);
        let var = y.row(0).dot(&y.row(0)) / 4.0;
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-9);
    }

    #[test]
    fn l2_normalize_zero_vector() {
        let (y, n) = l2_normalize(array![0.0, 0.0].view());
        assert_eq!(n, 0.0);
        assert_eq!(y, array![0.0, 0.0]);
    }
}
