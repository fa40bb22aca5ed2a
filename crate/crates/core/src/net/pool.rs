//! Graph max-pooling: each surviving centre takes the element-wise maximum
//! over itself and its J neighbours.

use ndarray::{Array2, ArrayView2};

use super::graph::{pool_survivors, Graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// m×C winning source node.
    argmax: Vec<u32>,
    n_in: usize,
}

impl PoolCache {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// Pools `feats` over the neighbourhoods of `survivors`; ties go to the
/// smaller node index.
pub fn maxpool_forward(
    graph: &Graph,
    survivors: &[usize],
    feats: ArrayView2<f64>,
) -> Result<(Array2<f64>, PoolCache)> {
    if feats.nrows() != graph.len() {
        return Err(Error::Dimension(format!(
            "pooling expects {} rows, got {}",
            graph.len(),
            feats.nrows()
        )));
    }
    let c = feats.ncols();
    let mut out = Array2::zeros((survivors.len(), c));
    let mut argmax = vec![0u32; survivors.len() * c];
    for (r, &centre) in survivors.iter().enumerate() {
        let slots = &mut argmax[r * c..(r + 1) * c];
        let mut row = out.row_mut(r);
        row.assign(&feats.row(centre));
        slots.iter_mut().for_each(|s| *s = centre as u32);
        for &m in graph.neighbors_of(centre) {
            for (k, &v) in feats.row(m).iter().enumerate() {
                if v > row[k] || (v == row[k] && (m as u32) < slots[k]) {
                    row[k] = v;
                    slots[k] = m as u32;
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            argmax,
            n_in: graph.len(),
        },
    ))
}

pub fn maxpool_backward(cache: &PoolCache, upstream: ArrayView2<f64>) -> Array2<f64> {
    let c = upstream.ncols();
    let mut grad = Array2::zeros((cache.n_in, c));
    for (r, row) in upstream.rows().into_iter().enumerate() {
        for (k, &g) in row.iter().enumerate() {
            grad[[cache.argmax[r * c + k] as usize, k]] += g;
        }
    }
    grad
}

/// Coarsens a graph: farthest-point centres, neighbourhood max features,
/// and a kNN table rebuilt over the survivors.
pub fn graph_maxpool(graph: &Graph, feats: ArrayView2<f64>, r_pool: f64) -> Result<(Graph, Array2<f64>)> {
    let keep = pool_survivors(graph, r_pool)?;
    let (pooled, _) = maxpool_forward(graph, &keep, feats)?;
    let coords = graph.coords.select(ndarray::Axis(0), &keep);
    Ok((Graph::from_coords(coords, graph.j)?, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::layers::uniform;

    fn instance(n: usize, j: usize, c: usize) -> (Graph, Array2<f64>) {
        let mut rng = crate::rng::seeded(11, 0);
        let g = Graph::from_coords(uniform(&mut rng, (n, 3), 4.0), j).unwrap();
        (g, uniform(&mut rng, (n, c), 1.0))
    }

    #[test]
    fn full_rate_keeps_nodes_and_takes_neighbourhood_max() {
        let (g, f) = instance(30, 4, 3);
        let (pg, pf) = graph_maxpool(&g, f.view(), 1.0).unwrap();
        assert_eq!(pg.coords, g.coords);
        for i in 0..30 {
            for k in 0..3 {
                let expected = g
                    .neighbors_of(i)
                    .iter()
                    .map(|&m| f[[m, k]])
                    .fold(f[[i, k]], f64::max);
                assert_eq!(pf[[i, k]], expected);
            }
        }
    }

    #[test]
    fn identical_features_stay_identical() {
        let (g, _) = instance(40, 4, 3);
        let f = Array2::from_elem((40, 3), 0.7);
        let (_, pf) = graph_maxpool(&g, f.view(), 0.25).unwrap();
        assert!(pf.iter().all(|v| *v == 0.7));
        assert_eq!(pf.nrows(), 10);
    }

    #[test]
    fn too_few_survivors_is_config_error() {
        let (g, f) = instance(16, 6, 2);
        assert!(matches!(graph_maxpool(&g, f.view(), 0.25), Err(Error::Config(_))));
        assert!(matches!(graph_maxpool(&g, f.view(), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn backward_routes_to_winner() {
        let (g, f) = instance(20, 3, 2);
        let keep: Vec<usize> = (0..20).step_by(2).collect();
        let (out, cache) = maxpool_forward(&g, &keep, f.view()).unwrap();
        let up = Array2::ones(out.raw_dim());
        let grad = maxpool_backward(&cache, up.view());
        assert_eq!(grad.sum(), out.len() as f64);
    }
}
