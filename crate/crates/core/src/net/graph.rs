//! Gaussian graphs: zero-mean coordinates, exact kNN tables, farthest-point
//! sampling and the pooling pyramid.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scene_io::{layout, GAUSSIAN_DIM};
use crate::voxel::VoxelizedScene;

/// Input channels: every attribute except position.
pub const INPUT_CHANNELS: usize = GAUSSIAN_DIM - 3;

/// Node coordinates plus a J-nearest-neighbour table.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub coords: Array2<f64>,
    /// Row-major n×J; each row sorted by (distance, index).
    pub neighbors: Vec<usize>,
    pub j: usize,
}

impl Graph {
    pub fn from_coords(coords: Array2<f64>, j: usize) -> Result<Self> {
        let neighbors = knn(coords.view(), j)?;
        Ok(Self { coords, neighbors, j })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.j..(i + 1) * self.j]
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.coords[[i, 0]], self.coords[[i, 1]], self.coords[[i, 2]]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGraph {
    pub graph: Graph,
    /// n×56: scale, rotation, SH, opacity.
    pub feats: Array2<f64>,
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn points(coords: ArrayView2<f64>) -> Vec<[f64; 3]> {
    coords
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect()
}

/// Exact J nearest neighbours of every node, excluding the node itself;
/// ties go to the smaller index.
pub fn knn(coords: ArrayView2<f64>, j: usize) -> Result<Vec<usize>> {
    let n = coords.nrows();
    if coords.ncols() != 3 {
        return Err(Error::Dimension(format!("coords must be n×3, got n×{}", coords.ncols())));
    }
    if j == 0 || n <= j {
        return Err(Error::Config(format!("kNN needs J >= 1 and n > J (n = {n}, J = {j})")));
    }
    let pts = points(coords);
    let mut out = Vec::with_capacity(n * j);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for (i, p) in pts.iter().enumerate() {
        cand.clear();
        cand.extend(
            pts.iter()
                .enumerate()
                .filter(|(m, _)| *m != i)
                .map(|(m, q)| (dist2(*p, *q), m)),
        );
        if j < cand.len() {
            cand.select_nth_unstable_by(j - 1, order);
            cand.truncate(j);
        }
        cand.sort_by(order);
        out.extend(cand.iter().map(|c| c.1));
    }
    Ok(out)
}

/// Zero-mean coordinates, non-position features and the kNN table.
pub fn build_graph(vs: &VoxelizedScene, j: usize) -> Result<GaussianGraph> {
    let n = vs.len();
    if n <= j {
        return Err(Error::Config(format!("graph needs more than J = {j} nodes, got {n}")));
    }
    let rows = Array2::from_shape_vec((n, GAUSSIAN_DIM), vs.encoded.clone())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let mut coords = rows.slice(s![.., layout::POSITION]).to_owned();
    let mean = coords.sum_axis(ndarray::Axis(0)) / n as f64;
    coords -= &mean;
    let feats = rows.slice(s![.., 3..]).to_owned();
    Ok(GaussianGraph {
        graph: Graph::from_coords(coords, j)?,
        feats,
    })
}

/// Number of pooling centres kept from `n` nodes.
pub fn pooled_count(n: usize, r_pool: f64) -> usize {
    ((r_pool * n as f64).ceil() as usize).clamp(1, n)
}

/// Farthest-point sampling of `m` nodes, started at the node nearest the
/// centroid. Returned in selection order; ties go to the smaller index.
pub fn farthest_point_sample(coords: ArrayView2<f64>, m: usize) -> Vec<usize> {
    let pts = points(coords);
    let n = pts.len();
    let m = m.min(n);
    if m == 0 {
        return Vec::new();
    }
    let mut centroid = [0.0; 3];
    for p in &pts {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    centroid.iter_mut().for_each(|v| *v /= n as f64);
    let argbest = |score: &dyn Fn(usize) -> Option<f64>, better: &dyn Fn(f64, f64) -> bool| {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if let Some(v) = score(i) {
                if best.map_or(true, |(_, b)| better(v, b)) {
                    best = Some((i, v));
                }
            }
        }
        best.map(|b| b.0)
    };
    let start = argbest(&|i| Some(dist2(pts[i], centroid)), &|v, b| v < b).unwrap();
    let mut selected = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(m);
    let mut next = start;
    loop {
        selected[next] = true;
        order.push(next);
        if order.len() == m {
            break;
        }
        for i in 0..n {
            let d = dist2(pts[i], pts[next]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
        next = argbest(&|i| (!selected[i]).then(|| min_d[i]), &|v, b| v > b).unwrap();
    }
    order
}

/// Graphs of every resolution used by the network, all derived from the
/// level-0 coordinates alone.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPyramid {
    /// `levels[0]` is the input graph; `levels[l + 1]` pools `levels[l]`.
    pub levels: Vec<Graph>,
    /// Surviving node indices of each pooling step, ascending.
    pub survivors: Vec<Vec<usize>>,
}

/// Pooling centres of `graph`, ascending.
pub fn pool_survivors(graph: &Graph, r_pool: f64) -> Result<Vec<usize>> {
    if !(r_pool > 0.0 && r_pool <= 1.0) {
        return Err(Error::Config(format!("r_pool must lie in (0, 1], got {r_pool}")));
    }
    let m = pooled_count(graph.len(), r_pool);
    if m < graph.j + 1 {
        return Err(Error::Config(format!(
            "pooling {} nodes at rate {r_pool} leaves {m} < J + 1 = {}",
            graph.len(),
            graph.j + 1
        )));
    }
    let mut keep = farthest_point_sample(graph.coords.view(), m);
    keep.sort_unstable();
    Ok(keep)
}

impl GraphPyramid {
    pub fn build(base: Graph, pools: usize, r_pool: f64) -> Result<Self> {
        let mut levels = vec![base];
        let mut survivors = Vec::with_capacity(pools);
        for _ in 0..pools {
            let g = levels.last().unwrap();
            let keep = pool_survivors(g, r_pool)?;
            let coords = g.coords.select(ndarray::Axis(0), &keep);
            let next = Graph::from_coords(coords, g.j)?;
            survivors.push(keep);
            levels.push(next);
        }
        Ok(Self { levels, survivors })
    }
}
