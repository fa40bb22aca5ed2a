//! Full descriptor network: parameters, forward pass with caches, and the
//! matching backward pass.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2, ArrayView2};

use super::attention::{mha_backward, mha_forward, MhaCache, MhaParams};
use super::gconv::{gconv_backward, gconv_forward, GConvCache, GConvKernel};
use super::graph::{build_graph, GraphPyramid, INPUT_CHANNELS};
use super::layers::{relu, relu_backward, LayerNorm, Linear};
use super::netvlad::{
    head_backward, head_forward, netvlad_backward, netvlad_forward, HeadCache, NetVladCache, NetVladParams,
};
use super::pool::{maxpool_backward, maxpool_forward, PoolCache};
use super::{Descriptor, InputMask, NetConfig};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::voxel::VoxelizedScene;

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    /// One kernel per conv/pool block.
    pub convs: Vec<GConvKernel>,
    /// Backbone width → d_model.
    pub proj: Linear,
    pub pe1: Linear,
    pub pe2: Linear,
    /// The two fusion convolutions after the positional embedding.
    pub fuse: Vec<GConvKernel>,
    pub attn: MhaParams,
    pub vlad: NetVladParams,
    pub out: Linear,
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

fn flat_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

fn push<'a, D: ndarray::Dimension>(out: &mut Vec<TensorRef<'a>>, name: String, a: &'a ndarray::Array<f64, D>) {
    out.push(TensorRef {
        name,
        shape: a.shape().to_vec(),
        data: flat(a),
    });
}

fn push_linear<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a Linear) {
    push(out, format!("{name}.w"), &l.w);
    push(out, format!("{name}.b"), &l.b);
}

fn push_ln<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a LayerNorm) {
    push(out, format!("{name}.gamma"), &l.gamma);
    push(out, format!("{name}.beta"), &l.beta);
}

fn push_kernel<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, k: &'a GConvKernel) {
    push(out, format!("{name}.w_center"), &k.w_center);
    push(out, format!("{name}.supports"), &k.supports);
    push(out, format!("{name}.w_support"), &k.w_support);
}

fn linear_mut<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut Linear) {
    out.push(flat_mut(&mut l.w));
    out.push(flat_mut(&mut l.b));
}

fn ln_mut<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut LayerNorm) {
    out.push(flat_mut(&mut l.gamma));
    out.push(flat_mut(&mut l.beta));
}

fn kernel_mut<'a>(out: &mut Vec<&'a mut [f64]>, k: &'a mut GConvKernel) {
    out.push(flat_mut(&mut k.w_center));
    out.push(flat_mut(&mut k.supports));
    out.push(flat_mut(&mut k.w_support));
}

impl NetParams {
    /// Zero tensors of the right shapes (used for gradient buffers).
    pub fn zeros(config: &NetConfig) -> Self {
        let s = config.supports;
        let mut convs = Vec::new();
        let mut c_in = INPUT_CHANNELS;
        for &w in &config.widths {
            convs.push(GConvKernel::zeros(c_in, w, s));
            c_in = w;
        }
        let d = config.d_model;
        Self {
            config: config.clone(),
            convs,
            proj: Linear::zeros(c_in, d),
            pe1: Linear::zeros(3, config.d_pe),
            pe2: Linear::zeros(config.d_pe, config.d_pe),
            fuse: vec![GConvKernel::zeros(d, d, s), GConvKernel::zeros(d, d, s)],
            attn: MhaParams::zeros(d, config.d_ffn),
            vlad: NetVladParams::zeros(d, config.clusters),
            out: Linear::zeros(config.clusters * d, config.d_out),
        }
    }

    /// Uniform ±1/√fan_in weights, zero biases, unit LayerNorm gains and
    /// random unit support directions, all drawn from `config.init_seed`.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.init_seed, 0x1417);
        let s = config.supports;
        let mut convs = Vec::new();
        let mut c_in = INPUT_CHANNELS;
        for &w in &config.widths {
            convs.push(GConvKernel::init(&mut rng, c_in, w, s));
            c_in = w;
        }
        let d = config.d_model;
        Ok(Self {
            config: config.clone(),
            convs,
            proj: Linear::init(&mut rng, c_in, d),
            pe1: Linear::init(&mut rng, 3, config.d_pe),
            pe2: Linear::init(&mut rng, config.d_pe, config.d_pe),
            fuse: vec![GConvKernel::init(&mut rng, d, d, s), GConvKernel::init(&mut rng, d, d, s)],
            attn: MhaParams::init(&mut rng, d, config.d_ffn),
            vlad: NetVladParams::init(&mut rng, d, config.clusters),
            out: Linear::init(&mut rng, config.clusters * d, config.d_out),
        })
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, k) in self.convs.iter().enumerate() {
            push_kernel(&mut out, &format!("conv{i}"), k);
        }
        push_linear(&mut out, "proj", &self.proj);
        push_linear(&mut out, "pe1", &self.pe1);
        push_linear(&mut out, "pe2", &self.pe2);
        for (i, k) in self.fuse.iter().enumerate() {
            push_kernel(&mut out, &format!("fuse{i}"), k);
        }
        let a = &self.attn;
        for (name, l) in [("attn.wq", &a.wq), ("attn.wk", &a.wk), ("attn.wv", &a.wv), ("attn.wo", &a.wo)] {
            push_linear(&mut out, name, l);
        }
        push_ln(&mut out, "attn.ln1", &a.ln1);
        push_linear(&mut out, "attn.ffn1", &a.ffn1);
        push_linear(&mut out, "attn.ffn2", &a.ffn2);
        push_ln(&mut out, "attn.ln2", &a.ln2);
        push_linear(&mut out, "vlad.assign", &self.vlad.assign);
        push(&mut out, "vlad.centers".into(), &self.vlad.centers);
        push_linear(&mut out, "out", &self.out);
        out
    }

    /// Mutable views in the same order as [`NetParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let NetParams {
            convs,
            proj,
            pe1,
            pe2,
            fuse,
            attn,
            vlad,
            out: head,
            ..
        } = self;
        let mut out = Vec::new();
        for k in convs.iter_mut() {
            kernel_mut(&mut out, k);
        }
        linear_mut(&mut out, proj);
        linear_mut(&mut out, pe1);
        linear_mut(&mut out, pe2);
        for k in fuse.iter_mut() {
            kernel_mut(&mut out, k);
        }
        let MhaParams {
            wq,
            wk,
            wv,
            wo,
            ln1,
            ffn1,
            ffn2,
            ln2,
        } = attn;
        for l in [wq, wk, wv, wo] {
            linear_mut(&mut out, l);
        }
        ln_mut(&mut out, ln1);
        linear_mut(&mut out, ffn1);
        linear_mut(&mut out, ffn2);
        ln_mut(&mut out, ln2);
        linear_mut(&mut out, &mut vlad.assign);
        out.push(flat_mut(&mut vlad.centers));
        linear_mut(&mut out, head);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &NetParams, scale: f64) {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.data.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }

    pub fn normalize_supports(&mut self) {
        for k in self.convs.iter_mut().chain(self.fuse.iter_mut()) {
            k.normalize_supports();
        }
    }
}

fn add_kernel(dst: &mut GConvKernel, src: &GConvKernel) {
    dst.w_center += &src.w_center;
    dst.supports += &src.supports;
    dst.w_support += &src.w_support;
}

/// Per-scene network input: graph pyramid plus level-0 features. Depends on
/// the coordinates only, so it is built once per scene and reused.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub pyramid: GraphPyramid,
    pub feats: Array2<f64>,
    pub place_id: i64,
}

pub fn prepare_scene(vs: &VoxelizedScene, config: &NetConfig, mask: &InputMask) -> Result<PreparedScene> {
    config.validate()?;
    let vs = mask.apply(vs);
    let g = build_graph(&vs, config.j)?;
    let pyramid = GraphPyramid::build(g.graph, config.widths.len(), config.r_pool)?;
    Ok(PreparedScene {
        pyramid,
        feats: g.feats,
        place_id: vs.place_id,
    })
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    gconv: GConvCache,
    pool: PoolCache,
    pooled: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    proj_in: Array2<f64>,
    pe_hidden: Array2<f64>,
    pe_act: Array2<f64>,
    fused: Array2<f64>,
    fuse0: GConvCache,
    fuse0_out: Array2<f64>,
    fuse1_in: Array2<f64>,
    fuse1: GConvCache,
    pub attn: MhaCache,
    pub vlad: NetVladCache,
    head: HeadCache,
}

impl ForwardCache {
    /// Hash of every discrete choice made in the forward pass (max winners
    /// and ReLU activity). Equal patterns mean the network is locally smooth
    /// between two evaluations.
    pub fn pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let signs = |a: &Array2<f64>, h: &mut DefaultHasher| {
            for v in a.iter() {
                (*v > 0.0).hash(h);
            }
        };
        for b in &self.blocks {
            b.gconv.argmax().hash(&mut h);
            b.pool.argmax().hash(&mut h);
            signs(&b.pooled, &mut h);
        }
        signs(&self.pe_hidden, &mut h);
        self.fuse0.argmax().hash(&mut h);
        signs(&self.fuse0_out, &mut h);
        self.fuse1.argmax().hash(&mut h);
        signs(self.attn.ffn_preactivation(), &mut h);
        h.finish()
    }
}

/// Runs the network on a prepared scene; returns the unit descriptor.
pub fn forward(params: &NetParams, scene: &PreparedScene) -> Result<(Array1<f64>, ForwardCache)> {
    forward_with_feats(params, scene, scene.feats.view())
}

pub(crate) fn forward_with_feats(
    params: &NetParams,
    scene: &PreparedScene,
    feats: ArrayView2<f64>,
) -> Result<(Array1<f64>, ForwardCache)> {
    let levels = &scene.pyramid.levels;
    if levels.len() != params.convs.len() + 1 {
        return Err(Error::Config(format!(
            "scene prepared for {} pooling levels, network has {}",
            levels.len() - 1,
            params.convs.len()
        )));
    }
    let mut x = feats.to_owned();
    let mut blocks = Vec::with_capacity(params.convs.len());
    for (b, kernel) in params.convs.iter().enumerate() {
        let (h, gconv) = gconv_forward(&levels[b], x.view(), kernel)?;
        let (pooled, pool) = maxpool_forward(&levels[b], &scene.pyramid.survivors[b], h.view())?;
        let next = relu(&pooled);
        blocks.push(BlockCache {
            input: x,
            gconv,
            pool,
            pooled,
        });
        x = next;
    }
    let top = levels.last().unwrap();
    let proj_out = params.proj.forward(x.view());
    let pe_hidden = params.pe1.forward(top.coords.view());
    let pe_act = relu(&pe_hidden);
    let pe = params.pe2.forward(pe_act.view());
    let fused = proj_out + &pe;
    let (fuse0_out, fuse0) = gconv_forward(top, fused.view(), &params.fuse[0])?;
    let fuse1_in = relu(&fuse0_out);
    let (fuse1_out, fuse1) = gconv_forward(top, fuse1_in.view(), &params.fuse[1])?;
    let (y, attn) = mha_forward(&fuse1_out, &params.attn, params.config.n_head)?;
    let (v, vlad) = netvlad_forward(&y, &params.vlad)?;
    let (desc, head) = head_forward(&v, &params.out)?;
    Ok((
        desc,
        ForwardCache {
            blocks,
            proj_in: x,
            pe_hidden,
            pe_act,
            fused,
            fuse0,
            fuse0_out,
            fuse1_in,
            fuse1,
            attn,
            vlad,
            head,
        },
    ))
}

/// Gradients of `⟨upstream, descriptor⟩` for every parameter and for the
/// level-0 input features.
pub fn backward(
    params: &NetParams,
    scene: &PreparedScene,
    cache: &ForwardCache,
    upstream: &Array1<f64>,
) -> (NetParams, Array2<f64>) {
    let levels = &scene.pyramid.levels;
    let top = levels.last().unwrap();
    let mut grad = NetParams::zeros(&params.config);
    let dv = head_backward(&params.out, &cache.head, upstream, &mut grad.out);
    let dy = netvlad_backward(&params.vlad, &cache.vlad, &dv, &mut grad.vlad);
    let d = mha_backward(&params.attn, &cache.attn, &dy, &mut grad.attn);
    let g1 = gconv_backward(top, cache.fuse1_in.view(), &params.fuse[1], &cache.fuse1, d.view());
    add_kernel(&mut grad.fuse[1], &g1.kernel);
    let d = relu_backward(&cache.fuse0_out, &g1.feats);
    let g0 = gconv_backward(top, cache.fused.view(), &params.fuse[0], &cache.fuse0, d.view());
    add_kernel(&mut grad.fuse[0], &g0.kernel);
    let d = g0.feats;
    let dpe_act = params.pe2.backward(cache.pe_act.view(), d.view(), &mut grad.pe2);
    let dpe_hidden = relu_backward(&cache.pe_hidden, &dpe_act);
    params.pe1.backward(top.coords.view(), dpe_hidden.view(), &mut grad.pe1);
    let mut d = params.proj.backward(cache.proj_in.view(), d.view(), &mut grad.proj);
    for (b, block) in cache.blocks.iter().enumerate().rev() {
        let dp = relu_backward(&block.pooled, &d);
        let dh = maxpool_backward(&block.pool, dp.view());
        let g = gconv_backward(&levels[b], block.input.view(), &params.convs[b], &block.gconv, dh.view());
        add_kernel(&mut grad.convs[b], &g.kernel);
        d = g.feats;
    }
    (grad, d)
}

/// Voxelized scene → unit descriptor.
pub fn descriptor_forward(vs: &VoxelizedScene, params: &NetParams) -> Result<Descriptor> {
    descriptor_forward_masked(vs, params, &InputMask::all())
}

pub fn descriptor_forward_masked(vs: &VoxelizedScene, params: &NetParams, mask: &InputMask) -> Result<Descriptor> {
    if !params.is_finite() {
        return Err(Error::Numeric("network parameters are not finite".into()));
    }
    let scene = prepare_scene(vs, &params.config, mask)?;
    describe(params, &scene)
}

pub fn describe(params: &NetParams, scene: &PreparedScene) -> Result<Descriptor> {
    let (v, _) = forward(params, scene)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite descriptor for place {}", scene.place_id)));
    }
    Ok(Descriptor {
        vector: v.to_vec(),
        place_id: scene.place_id,
        pose: None,
    })
}
