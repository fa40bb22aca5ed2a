//! Central finite-difference checks of the analytic gradients.
//!
//! Every stage is reduced to the scalar `L = Σ r ⊙ output` with a fixed random
//! `r`. Each input and parameter scalar is perturbed by ±ε; perturbations that
//! change a discrete choice of the forward pass (a max winner or a ReLU sign)
//! sit on a kink, where the two-sided difference is not a derivative, and are
//! skipped and counted.

use ndarray::{Array1, Array2, Array3};
use rand_chacha::ChaCha8Rng;

use super::attention::{mha_backward, mha_forward, MhaParams};
use super::gconv::{gconv_backward, gconv_forward, GConvKernel};
use super::graph::Graph;
use super::layers::{relu, relu_backward, uniform, Linear};
use super::model::{backward, forward_with_feats, prepare_scene, NetParams};
use super::netvlad::{head_backward, head_forward, netvlad_backward, netvlad_forward, NetVladParams};
use super::pool::{maxpool_backward, maxpool_forward};
use super::{InputMask, NetConfig};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Absolute denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Denominator floor relative to the largest gradient of the whole stage, so
/// a tensor whose gradient is structurally zero (the key bias under softmax)
/// is measured against the stage scale rather than its own rounding noise.
pub const STAGE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Linear,
    GConv,
    /// gconv → max-pool → ReLU.
    PoolBlock,
    PositionalFfn,
    Attention,
    NetVlad,
    OutputMlp,
    Full,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Linear,
        Stage::GConv,
        Stage::PoolBlock,
        Stage::PositionalFfn,
        Stage::Attention,
        Stage::NetVlad,
        Stage::OutputMlp,
        Stage::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Linear => "linear",
            Stage::GConv => "gconv",
            Stage::PoolBlock => "pool-block",
            Stage::PositionalFfn => "positional-ffn",
            Stage::Attention => "attention",
            Stage::NetVlad => "netvlad",
            Stage::OutputMlp => "output-mlp",
            Stage::Full => "full",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub checked: usize,
    /// Perturbations that crossed a kink.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub stage: Stage,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }
}

type Eval<'a> = dyn Fn(&[Vec<f64>]) -> Result<(f64, u64)> + 'a;

fn check(names: &[String], point: Vec<Vec<f64>>, analytic: Vec<Vec<f64>>, eps: f64, eval: &Eval) -> Result<Vec<TensorCheck>> {
    let (_, base_pattern) = eval(&point)?;
    let mut x = point;
    let mut raw = Vec::with_capacity(names.len());
    for (t, name) in names.iter().enumerate() {
        let mut max_diff: f64 = 0.0;
        let mut max_a: f64 = 0.0;
        let mut max_n: f64 = 0.0;
        let (mut checked, mut skipped) = (0, 0);
        for i in 0..x[t].len() {
            let orig = x[t][i];
            x[t][i] = orig + eps;
            let (fp, pp) = eval(&x)?;
            x[t][i] = orig - eps;
            let (fm, pm) = eval(&x)?;
            x[t][i] = orig;
            if pp != base_pattern || pm != base_pattern {
                skipped += 1;
                continue;
            }
            let num = (fp - fm) / (2.0 * eps);
            let a = analytic[t][i];
            max_diff = max_diff.max((a - num).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(num.abs());
            checked += 1;
        }
        raw.push((name.clone(), max_diff, max_a.max(max_n), checked, skipped));
    }
    let scale = raw.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(raw
        .into_iter()
        .map(|(name, diff, own, checked, skipped)| TensorCheck {
            name,
            rel_error: diff / own.max(REL_FLOOR).max(STAGE_FLOOR * scale),
            checked,
            skipped,
        })
        .collect())
}

fn to_vec<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn arr2(v: &[f64], shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, v.to_vec()).expect("shape")
}

fn dot(r: &Array2<f64>, y: &Array2<f64>) -> f64 {
    (r * y).sum()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn hash_u32(parts: &[&[u32]]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in parts {
        p.hash(&mut h);
    }
    h.finish()
}

fn sign_pattern(a: &Array2<f64>) -> Vec<u32> {
    a.iter().map(|v| (*v > 0.0) as u32).collect()
}

/// Runs the finite-difference check of one stage on a random instance of at
/// most `nodes` nodes.
pub fn grad_check(stage: Stage, nodes: usize, eps: f64, seed: u64) -> Result<GradCheckReport> {
    if nodes > 64 || nodes < 8 {
        return Err(Error::Config("gradient checks use between 8 and 64 nodes".into()));
    }
    let mut rng = seeded(seed, 0x6c4e_c000 + stage as u64);
    let tensors = match stage {
        Stage::Linear => linear_check(&mut rng, nodes, eps)?,
        Stage::GConv => gconv_check(&mut rng, nodes, eps)?,
        Stage::PoolBlock => pool_check(&mut rng, nodes, eps)?,
        Stage::PositionalFfn => pe_check(&mut rng, nodes, eps)?,
        Stage::Attention => attention_check(&mut rng, nodes, eps)?,
        Stage::NetVlad => netvlad_check(&mut rng, nodes, eps)?,
        Stage::OutputMlp => head_check(&mut rng, eps)?,
        Stage::Full => full_check(&mut rng, nodes, eps, seed)?,
    };
    Ok(GradCheckReport { stage, tensors })
}

fn linear_check(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> Result<Vec<TensorCheck>> {
    let (di, dout) = (5, 4);
    let x = uniform(rng, (n, di), 1.0);
    let mut l = Linear::init(rng, di, dout);
    l.b = Array1::from_iter((0..dout).map(|i| 0.1 * i as f64));
    let r = uniform(rng, (n, dout), 1.0);
    let mut g = Linear::zeros(di, dout);
    let dx = l.backward(x.view(), r.view(), &mut g);
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let l = Linear {
            w: arr2(&t[1], (di, dout)),
            b: Array1::from(t[2].clone()),
        };
        Ok((dot(&r, &l.forward(arr2(&t[0], (n, di)).view())), 0))
    };
    check(
        &names(&["x", "w", "b"]),
        vec![to_vec(&x), to_vec(&l.w), to_vec(&l.b)],
        vec![to_vec(&dx), to_vec(&g.w), to_vec(&g.b)],
        eps,
        &eval,
    )
}

fn kernel_from(t: &[Vec<f64>], c_in: usize, c_out: usize, s: usize) -> GConvKernel {
    GConvKernel {
        w_center: arr2(&t[0], (c_in, c_out)),
        supports: arr2(&t[1], (s, 3)),
        w_support: Array3::from_shape_vec((s, c_in, c_out), t[2].clone()).expect("shape"),
    }
}

fn gconv_check(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> Result<Vec<TensorCheck>> {
    let (j, c_in, c_out, s) = (5, 5, 4, 2);
    let graph = Graph::from_coords(uniform(rng, (n, 3), 3.0), j)?;
    let feats = uniform(rng, (n, c_in), 1.0);
    let kernel = GConvKernel::init(rng, c_in, c_out, s);
    let r = uniform(rng, (n, c_out), 1.0);
    let (_, cache) = gconv_forward(&graph, feats.view(), &kernel)?;
    let g = gconv_backward(&graph, feats.view(), &kernel, &cache, r.view());
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let gr = Graph {
            coords: arr2(&t[4], (n, 3)),
            ..graph.clone()
        };
        let k = kernel_from(t, c_in, c_out, s);
        let (out, c) = gconv_forward(&gr, arr2(&t[3], (n, c_in)).view(), &k)?;
        Ok((dot(&r, &out), hash_u32(&[c.argmax()])))
    };
    check(
        &names(&["w_center", "supports", "w_support", "feats", "coords"]),
        vec![
            to_vec(&kernel.w_center),
            to_vec(&kernel.supports),
            to_vec(&kernel.w_support),
            to_vec(&feats),
            to_vec(&graph.coords),
        ],
        vec![
            to_vec(&g.kernel.w_center),
            to_vec(&g.kernel.supports),
            to_vec(&g.kernel.w_support),
            to_vec(&g.feats),
            to_vec(&g.coords),
        ],
        eps,
        &eval,
    )
}

fn pool_check(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> Result<Vec<TensorCheck>> {
    let (j, c_in, c_out, s) = (4, 4, 5, 1);
    let graph = Graph::from_coords(uniform(rng, (n, 3), 3.0), j)?;
    let survivors = super::graph::pool_survivors(&graph, 0.5)?;
    let m = survivors.len();
    let feats = uniform(rng, (n, c_in), 1.0);
    let kernel = GConvKernel::init(rng, c_in, c_out, s);
    let r = uniform(rng, (m, c_out), 1.0);
    let (h, gc) = gconv_forward(&graph, feats.view(), &kernel)?;
    let (pooled, pc) = maxpool_forward(&graph, &survivors, h.view())?;
    let dp = relu_backward(&pooled, &r);
    let dh = maxpool_backward(&pc, dp.view());
    let g = gconv_backward(&graph, feats.view(), &kernel, &gc, dh.view());
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let k = kernel_from(t, c_in, c_out, s);
        let (h, gc) = gconv_forward(&graph, arr2(&t[3], (n, c_in)).view(), &k)?;
        let (pooled, pc) = maxpool_forward(&graph, &survivors, h.view())?;
        let signs = sign_pattern(&pooled);
        Ok((dot(&r, &relu(&pooled)), hash_u32(&[gc.argmax(), pc.argmax(), &signs])))
    };
    check(
        &names(&["w_center", "supports", "w_support", "feats"]),
        vec![
            to_vec(&kernel.w_center),
            to_vec(&kernel.supports),
            to_vec(&kernel.w_support),
            to_vec(&feats),
        ],
        vec![
            to_vec(&g.kernel.w_center),
            to_vec(&g.kernel.supports),
            to_vec(&g.kernel.w_support),
            to_vec(&g.feats),
        ],
        eps,
        &eval,
    )
}

fn pe_check(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> Result<Vec<TensorCheck>> {
    let d = 6;
    let coords = uniform(rng, (n, 3), 3.0);
    let mut pe1 = Linear::init(rng, 3, d);
    pe1.b = uniform(rng, (1, d), 0.5).row(0).to_owned();
    let pe2 = Linear::init(rng, d, d);
    let r = uniform(rng, (n, d), 1.0);
    let h = pe1.forward(coords.view());
    let a = relu(&h);
    let (mut g1, mut g2) = (Linear::zeros(3, d), Linear::zeros(d, d));
    let da = pe2.backward(a.view(), r.view(), &mut g2);
    let dh = relu_backward(&h, &da);
    let dc = pe1.backward(coords.view(), dh.view(), &mut g1);
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let p1 = Linear {
            w: arr2(&t[0], (3, d)),
            b: Array1::from(t[1].clone()),
        };
        let p2 = Linear {
            w: arr2(&t[2], (d, d)),
            b: Array1::from(t[3].clone()),
        };
        let h = p1.forward(arr2(&t[4], (n, 3)).view());
        let out = p2.forward(relu(&h).view());
        Ok((dot(&r, &out), hash_u32(&[&sign_pattern(&h)])))
    };
    check(
        &names(&["pe1.w", "pe1.b", "pe2.w", "pe2.b", "coords"]),
        vec![to_vec(&pe1.w), to_vec(&pe1.b), to_vec(&pe2.w), to_vec(&pe2.b), to_vec(&coords)],
        vec![to_vec(&g1.w), to_vec(&g1.b), to_vec(&g2.w), to_vec(&g2.b), to_vec(&dc)],
        eps,
        &eval,
    )
}

fn mha_tensors(p: &MhaParams) -> Vec<Vec<f64>> {
    let mut v = Vec::new();
    for l in [&p.wq, &p.wk, &p.wv, &p.wo] {
        v.push(to_vec(&l.w));
        v.push(to_vec(&l.b));
    }
    v.push(to_vec(&p.ln1.gamma));
    v.push(to_vec(&p.ln1.beta));
    for l in [&p.ffn1, &p.ffn2] {
        v.push(to_vec(&l.w));
        v.push(to_vec(&l.b));
    }
    v.push(to_vec(&p.ln2.gamma));
    v.push(to_vec(&p.ln2.beta));
    v
}

fn mha_from(t: &[Vec<f64>], d: usize, d_ffn: usize) -> MhaParams {
    let lin = |w: &Vec<f64>, b: &Vec<f64>, i: usize, o: usize| Linear {
        w: arr2(w, (i, o)),
        b: Array1::from(b.clone()),
    };
    let ln = |g: &Vec<f64>, b: &Vec<f64>| super::layers::LayerNorm {
        gamma: Array1::from(g.clone()),
        beta: Array1::from(b.clone()),
    };
    MhaParams {
        wq: lin(&t[0], &t[1], d, d),
        wk: lin(&t[2], &t[3], d, d),
        wv: lin(&t[4], &t[5], d, d),
        wo: lin(&t[6], &t[7], d, d),
        ln1: ln(&t[8], &t[9]),
        ffn1: lin(&t[10], &t[11], d, d_ffn),
        ffn2: lin(&t[12], &t[13], d_ffn, d),
        ln2: ln(&t[14], &t[15]),
    }
}

fn attention_check(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> Result<Vec<TensorCheck>> {
    let (d, d_ffn, heads) = (8, 12, 2);
    let x = uniform(rng, (n, d), 1.0);
    let mut p = MhaParams::init(rng, d, d_ffn);
    p.ln1.gamma = uniform(rng, (1, d), 1.0).row(0).mapv(|v| 1.0 + 0.5 * v);
    p.ln2.beta = uniform(rng, (1, d), 0.3).row(0).to_owned();
    let r = uniform(rng, (n, d), 1.0);
    let (_, cache) = mha_forward(&x, &p, heads)?;
    let mut g = MhaParams::zeros(d, d_ffn);
    let dx = mha_backward(&p, &cache, &r, &mut g);
    let mut point = mha_tensors(&p);
    point.push(to_vec(&x));
    let mut analytic = mha_tensors(&g);
    analytic.push(to_vec(&dx));
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let p = mha_from(t, d, d_ffn);
        let (y, c) = mha_forward(&arr2(&t[16], (n, d)), &p, heads)?;
        Ok((dot(&r, &y), hash_u32(&[&sign_pattern(c.ffn_preactivation())])))
    };
    check(
        &names(&[
            "wq.w", "wq.b", "wk.w", "wk.b", "wv.w", "wv.b", "wo.w", "wo.b", "ln1.gamma", "ln1.beta", "ffn1.w",
            "ffn1.b", "ffn2.w", "ffn2.b", "ln2.gamma", "ln2.beta", "x",
        ]),
        point,
        analytic,
        eps,
        &eval,
    )
}

fn netvlad_check(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> Result<Vec<TensorCheck>> {
    let (d, k) = (6, 4);
    let y = uniform(rng, (n, d), 1.0);
    let mut p = NetVladParams::init(rng, d, k);
    p.assign.b = uniform(rng, (1, k), 0.5).row(0).to_owned();
    let r = Array1::from_iter(uniform(rng, (1, k * d), 1.0).iter().copied());
    let (_, cache) = netvlad_forward(&y, &p)?;
    let mut g = NetVladParams::zeros(d, k);
    let dy = netvlad_backward(&p, &cache, &r, &mut g);
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let p = NetVladParams {
            assign: Linear {
                w: arr2(&t[0], (d, k)),
                b: Array1::from(t[1].clone()),
            },
            centers: arr2(&t[2], (k, d)),
        };
        let (v, _) = netvlad_forward(&arr2(&t[3], (n, d)), &p)?;
        Ok((r.dot(&v), 0))
    };
    check(
        &names(&["assign.w", "assign.b", "centers", "y"]),
        vec![to_vec(&p.assign.w), to_vec(&p.assign.b), to_vec(&p.centers), to_vec(&y)],
        vec![to_vec(&g.assign.w), to_vec(&g.assign.b), to_vec(&g.centers), to_vec(&dy)],
        eps,
        &eval,
    )
}

fn head_check(rng: &mut ChaCha8Rng, eps: f64) -> Result<Vec<TensorCheck>> {
    let (din, dout) = (24, 8);
    let v = Array1::from_iter(uniform(rng, (1, din), 1.0).iter().copied());
    let mut out = Linear::init(rng, din, dout);
    out.b = uniform(rng, (1, dout), 0.2).row(0).to_owned();
    let r = Array1::from_iter(uniform(rng, (1, dout), 1.0).iter().copied());
    let (_, cache) = head_forward(&v, &out)?;
    let mut g = Linear::zeros(din, dout);
    let dv = head_backward(&out, &cache, &r, &mut g);
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let l = Linear {
            w: arr2(&t[0], (din, dout)),
            b: Array1::from(t[1].clone()),
        };
        let (d, _) = head_forward(&Array1::from(t[2].clone()), &l)?;
        Ok((r.dot(&d), 0))
    };
    check(
        &names(&["out.w", "out.b", "v"]),
        vec![to_vec(&out.w), to_vec(&out.b), to_vec(&v)],
        vec![to_vec(&g.w), to_vec(&g.b), to_vec(&dv)],
        eps,
        &eval,
    )
}

/// Network configuration used by the whole-pipeline check.
pub fn gradcheck_config(seed: u64) -> NetConfig {
    NetConfig {
        j: 4,
        supports: 1,
        r_pool: 0.75,
        widths: vec![6, 6, 8],
        d_pe: 8,
        d_model: 8,
        d_ffn: 12,
        n_head: 2,
        clusters: 3,
        d_out: 6,
        init_seed: seed,
    }
}

fn full_check(rng: &mut ChaCha8Rng, n: usize, eps: f64, seed: u64) -> Result<Vec<TensorCheck>> {
    use rand::Rng;
    let config = gradcheck_config(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = [0.0; crate::scene_io::GAUSSIAN_DIM];
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in row[..3].iter_mut() {
            *v *= 10.0;
        }
        rows.push(row);
    }
    let vs = crate::voxel::VoxelizedScene::from_rows(&rows, 0);
    let scene = prepare_scene(&vs, &config, &InputMask::all())?;
    let mut params = NetParams::init(&config)?;
    // move biases and gains away from their initial constants
    let names_: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
    for (name, data) in names_.iter().zip(params.tensors_mut()) {
        if name.ends_with(".b") || name.ends_with(".beta") {
            data.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        }
        if name.ends_with(".gamma") {
            data.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        }
    }
    let r = Array1::from_iter((0..config.d_out).map(|_| rng.gen_range(-1.0..1.0)));
    let (_, cache) = forward_with_feats(&params, &scene, scene.feats.view())?;
    let (grad, dfeats) = backward(&params, &scene, &cache, &r);
    let mut point: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.data.to_vec()).collect();
    point.push(to_vec(&scene.feats));
    let mut analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.data.to_vec()).collect();
    analytic.push(to_vec(&dfeats));
    let mut all_names = names_;
    all_names.push("input.feats".into());
    let feat_shape = scene.feats.dim();
    let eval = |t: &[Vec<f64>]| -> Result<(f64, u64)> {
        let mut p = params.clone();
        for (dst, src) in p.tensors_mut().into_iter().zip(t) {
            dst.copy_from_slice(src);
        }
        let feats = arr2(t.last().unwrap(), feat_shape);
        let (d, c) = forward_with_feats(&p, &scene, feats.view())?;
        Ok((r.dot(&d), c.pattern()))
    };
    check(&all_names, point, analytic, eps, &eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_near_exact() {
        let r = grad_check(Stage::Linear, 16, 1e-5, 0).unwrap();
        assert!(r.max_rel_error() <= 1e-8, "{r:?}");
    }

    #[test]
    fn every_stage_passes_one_seed() {
        for stage in Stage::ALL {
            let r = grad_check(stage, 32, 1e-5, 3).unwrap();
            assert!(r.max_rel_error() <= 1e-4, "{}: {:?}", stage.name(), r.tensors);
            assert!(r.tensors.iter().all(|t| t.checked > 0), "{}: {:?}", stage.name(), r.tensors);
        }
    }
}
