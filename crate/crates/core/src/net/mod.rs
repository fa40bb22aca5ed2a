//! Descriptor network: graph convolution backbone with max-pooling,
//! positional fusion, self-attention and a NetVLAD head, all with analytic
//! gradients.

pub mod attention;
pub mod checkpoint;
pub mod gconv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod netvlad;
pub mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::scene_io::layout;
use crate::voxel::VoxelizedScene;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use gconv::{gconv_backward, gconv_forward, GConvKernel};
pub use graph::{build_graph, knn, farthest_point_sample, GaussianGraph, Graph, GraphPyramid};
pub use model::{describe, descriptor_forward, prepare_scene, ForwardCache, NetParams, PreparedScene};
pub use pool::graph_maxpool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Neighbours per receptive field.
    pub j: usize,
    /// Support directions per graph convolution.
    pub supports: usize,
    pub r_pool: f64,
    /// Output widths of the conv/pool blocks.
    pub widths: Vec<usize>,
    pub d_pe: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub n_head: usize,
    pub clusters: usize,
    pub d_out: usize,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            j: 25,
            supports: 1,
            r_pool: 0.25,
            widths: vec![64, 128, 256],
            d_pe: 512,
            d_model: 512,
            d_ffn: 1024,
            n_head: 8,
            clusters: 64,
            d_out: 256,
            init_seed: 0x6a09_e667,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.j == 0 {
            return bad("j must be >= 1");
        }
        if !(self.r_pool > 0.0 && self.r_pool <= 1.0) {
            return bad("r_pool must lie in (0, 1]");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be a non-empty list of positive widths");
        }
        if self.d_pe != self.d_model {
            return bad("d_pe must equal d_model");
        }
        if self.n_head == 0 || self.d_model % self.n_head != 0 {
            return bad("d_model must be divisible by n_head");
        }
        if self.d_model == 0 || self.d_ffn == 0 || self.clusters == 0 || self.d_out == 0 {
            return bad("network dimensions must be positive");
        }
        Ok(())
    }

    /// Smallest voxel count the pooling pyramid accepts.
    pub fn min_nodes(&self) -> usize {
        let mut n = self.j + 1;
        for _ in 0..self.widths.len() {
            let mut m = n;
            while graph::pooled_count(m, self.r_pool) < n {
                m += 1;
            }
            n = m;
        }
        n
    }
}

/// Unit-norm global descriptor of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub vector: Vec<f64>,
    pub place_id: i64,
    /// Ground-truth pose, carried for evaluation only.
    pub pose: Option<RigidTransform>,
}

impl Descriptor {
    pub fn distance(&self, other: &Descriptor) -> f64 {
        euclidean(&self.vector, &other.vector)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Input feature groups; a disabled group is zeroed with shapes kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputMask {
    pub position: bool,
    pub scale: bool,
    pub rotation: bool,
    pub sh: bool,
    pub opacity: bool,
}

impl Default for InputMask {
    fn default() -> Self {
        Self::all()
    }
}

impl InputMask {
    pub fn all() -> Self {
        Self {
            position: true,
            scale: true,
            rotation: true,
            sh: true,
            opacity: true,
        }
    }

    pub fn sh_only() -> Self {
        Self {
            position: false,
            scale: false,
            rotation: false,
            sh: true,
            opacity: false,
        }
    }

    pub fn is_all(&self) -> bool {
        *self == Self::all()
    }

    pub fn label(&self) -> String {
        let names = [
            (self.sh, "sh"),
            (self.opacity, "opacity"),
            (self.rotation, "rotation"),
            (self.scale, "scale"),
            (self.position, "position"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }

    pub fn apply(&self, vs: &VoxelizedScene) -> VoxelizedScene {
        if self.is_all() {
            return vs.clone();
        }
        let mut ranges = Vec::new();
        if !self.position {
            ranges.push(layout::POSITION);
        }
        if !self.scale {
            ranges.push(layout::SCALE);
        }
        if !self.rotation {
            ranges.push(layout::ROTATION);
        }
        if !self.sh {
            ranges.push(layout::SH);
        }
        if !self.opacity {
            ranges.push(layout::OPACITY..layout::OPACITY + 1);
        }
        let mut out = vs.clone();
        let dim = crate::scene_io::GAUSSIAN_DIM;
        for row in out.encoded.chunks_mut(dim) {
            for r in &ranges {
                row[r.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }
}
