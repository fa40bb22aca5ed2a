//! NetVLAD aggregation and the output projection.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::{l2_normalize, l2_normalize_backward, softmax_rows, softmax_rows_backward, uniform, Linear};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NetVladParams {
    /// Soft-assignment logits, d×K.
    pub assign: Linear,
    /// K×d cluster centres.
    pub centers: Array2<f64>,
}

impl NetVladParams {
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            assign: Linear::zeros(d, k),
            centers: Array2::zeros((k, d)),
        }
    }

    pub(crate) fn init(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Self {
        Self {
            assign: Linear::init(rng, d, k),
            centers: uniform(rng, (k, d), 1.0 / (d as f64).sqrt()),
        }
    }

    pub fn clusters(&self) -> usize {
        self.centers.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct NetVladCache {
    y: Array2<f64>,
    /// n×K soft assignment.
    pub assignment: Array2<f64>,
    /// Per cluster, normalised residual sum and its pre-normalisation norm.
    intra: Array2<f64>,
    intra_norms: Vec<f64>,
    out: Array1<f64>,
    out_norm: f64,
}

/// Intra-normalised, flattened and L2-normalised VLAD vector (K·d).
pub fn netvlad_forward(y: &Array2<f64>, p: &NetVladParams) -> Result<(Array1<f64>, NetVladCache)> {
    if y.ncols() != p.centers.ncols() {
        return Err(Error::Dimension(format!(
            "NetVLAD expects width {}, got {}",
            p.centers.ncols(),
            y.ncols()
        )));
    }
    let a = softmax_rows(&p.assign.forward(y.view()));
    let mass = a.sum_axis(Axis(0));
    let mut v = a.t().dot(y);
    for (k, mut row) in v.rows_mut().into_iter().enumerate() {
        row.scaled_add(-mass[k], &p.centers.row(k));
    }
    let mut intra_norms = Vec::with_capacity(v.nrows());
    for mut row in v.rows_mut() {
        let (u, n) = l2_normalize(row.view());
        row.assign(&u);
        intra_norms.push(n);
    }
    let flat = Array1::from_iter(v.iter().copied());
    let (out, out_norm) = l2_normalize(flat.view());
    Ok((
        out.clone(),
        NetVladCache {
            y: y.clone(),
            assignment: a,
            intra: v,
            intra_norms,
            out,
            out_norm,
        },
    ))
}

/// Accumulates parameter gradients into `grad` and returns dL/dy.
pub fn netvlad_backward(p: &NetVladParams, cache: &NetVladCache, g: &Array1<f64>, grad: &mut NetVladParams) -> Array2<f64> {
    let (k, d) = p.centers.dim();
    let dflat = l2_normalize_backward(cache.out.view(), cache.out_norm, g.view());
    let dflat = dflat.into_shape_with_order((k, d)).expect("VLAD shape");
    let mut dv = Array2::zeros((k, d));
    for c in 0..k {
        dv.row_mut(c).assign(&l2_normalize_backward(
            cache.intra.row(c),
            cache.intra_norms[c],
            dflat.row(c),
        ));
    }
    let a = &cache.assignment;
    let y = &cache.y;
    // v_k = Σ_i a_ik (y_i − c_k)
    let mut dy = a.dot(&dv);
    let mass = a.sum_axis(Axis(0));
    for c in 0..k {
        grad.centers.row_mut(c).scaled_add(-mass[c], &dv.row(c));
    }
    let mut da = y.dot(&dv.t());
    let cdot: Array1<f64> = (0..k).map(|c| p.centers.row(c).dot(&dv.row(c))).collect();
    da -= &cdot;
    let dlogits = softmax_rows_backward(a, &da);
    dy += &p.assign.backward(y.view(), dlogits.view(), &mut grad.assign);
    dy
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    v: Array1<f64>,
    desc: Array1<f64>,
    norm: f64,
}

/// Output projection followed by L2 normalisation.
pub fn head_forward(v: &Array1<f64>, out: &Linear) -> Result<(Array1<f64>, HeadCache)> {
    if v.len() != out.w.nrows() {
        return Err(Error::Dimension(format!(
            "output layer expects {} inputs, got {}",
            out.w.nrows(),
            v.len()
        )));
    }
    let z = v.dot(&out.w) + &out.b;
    let (desc, norm) = l2_normalize(z.view());
    Ok((
        desc.clone(),
        HeadCache {
            v: v.clone(),
            desc,
            norm,
        },
    ))
}

pub fn head_backward(out: &Linear, cache: &HeadCache, g: &Array1<f64>, grad: &mut Linear) -> Array1<f64> {
    let dz = l2_normalize_backward(cache.desc.view(), cache.norm, g.view());
    let v2 = cache.v.view().insert_axis(Axis(0));
    let dz2 = dz.view().insert_axis(Axis(0));
    out.backward(v2, dz2, grad).row(0).to_owned()
}
