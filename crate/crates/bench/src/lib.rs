//! Shared fixtures for the pipeline benchmarks.

use gspr_core::scene_io::{generate_synthetic_scene, SyntheticSpec};
use gspr_core::voxel::voxelize;
use gspr_core::{CylGridConfig, GaussianScene, NetConfig, VoxelizedScene};

/// A synthetic scene of `count` splats for place 0.
pub fn scene(count: usize) -> GaussianScene {
    generate_synthetic_scene(
        1,
        &SyntheticSpec {
            count,
            ..Default::default()
        },
    )
}

/// `scene(count)` voxelized down to `n` rows.
pub fn voxels(count: usize, n: usize) -> VoxelizedScene {
    let cfg = CylGridConfig {
        n_target: n,
        ..Default::default()
    };
    voxelize(&scene(count), &cfg, 0).expect("synthetic scene voxelizes")
}

/// The reduced network used for desk-scale runs.
pub fn small_net() -> NetConfig {
    NetConfig {
        j: 8,
        widths: vec![16, 32, 64],
        d_pe: 32,
        d_model: 32,
        d_ffn: 64,
        n_head: 4,
        clusters: 8,
        ..NetConfig::default()
    }
}
