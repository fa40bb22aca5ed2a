//! Disk round trips through the full scene → voxel → descriptor pipeline.

use gspr_core::net::{
    descriptor_forward, load_checkpoint, save_checkpoint, attention::mha_forward, euclidean,
    netvlad::{head_forward, netvlad_forward},
};
use gspr_core::scene_io::{generate_synthetic_scene, read_gaussian_ply, write_gaussian_ply, SyntheticSpec};
use gspr_core::voxel::{read_voxel_blob, voxelize, write_voxel_blob};
use gspr_core::{CylGridConfig, GaussianScene, NetConfig, NetParams, VoxelizedScene};
use ndarray::Array2;

fn small_net() -> NetConfig {
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

fn scene(place: i64, seed: u64) -> GaussianScene {
    generate_synthetic_scene(
        seed,
        &SyntheticSpec {
            place_id: place,
            ..Default::default()
        },
    )
}

fn grid(n: usize) -> CylGridConfig {
    CylGridConfig {
        n_target: n,
        ..Default::default()
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn duplicated(vs: &VoxelizedScene) -> VoxelizedScene {
    let mut encoded = vs.encoded.clone();
    encoded.extend_from_slice(&vs.encoded);
    VoxelizedScene {
        encoded,
        place_id: vs.place_id,
    }
}

#[test]
fn ply_round_trip_keeps_the_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let params = NetParams::init(&small_net()).unwrap();
    for place in 0..3 {
        let s = scene(place, 11);
        let path = dir.path().join(format!("p{place}.ply"));
        write_gaussian_ply(&s, &path).unwrap();
        let back = read_gaussian_ply(&path).unwrap();
        assert_eq!(back.len(), s.len());
        let a = descriptor_forward(&voxelize(&s, &grid(1024), 3).unwrap(), &params).unwrap();
        let b = descriptor_forward(&voxelize(&back, &grid(1024), 3).unwrap(), &params).unwrap();
        let d = euclidean(&a.vector, &b.vector);
        assert!(d < 1e-4, "place {place}: descriptor moved by {d}");
    }
}

#[test]
fn checkpoint_round_trip_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_net();
    let params = NetParams::init(&cfg).unwrap();
    let first = dir.path().join("a.bin");
    let second = dir.path().join("b.bin");
    save_checkpoint(&params, &first).unwrap();
    let loaded = load_checkpoint(&first, Some(&cfg)).unwrap();
    save_checkpoint(&loaded, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let vs = voxelize(&scene(2, 5), &grid(1024), 1).unwrap();
    let a = descriptor_forward(&vs, &params).unwrap();
    let b = descriptor_forward(&vs, &loaded).unwrap();
    let d = euclidean(&a.vector, &b.vector);
    assert!(d < 1e-5, "f32 storage moved the descriptor by {d}");
}

#[test]
fn voxel_blob_round_trip_keeps_the_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let params = NetParams::init(&small_net()).unwrap();
    let vs = voxelize(&scene(4, 2), &grid(1024), 9).unwrap();
    let path = dir.path().join("v.blob");
    write_voxel_blob(&vs, &path).unwrap();
    let back = read_voxel_blob(&path, vs.place_id).unwrap();
    assert_eq!(back.len(), vs.len());
    for (x, y) in vs.encoded.iter().zip(&back.encoded) {
        assert_eq!(*y, *x as f32 as f64);
    }
    let a = descriptor_forward(&vs, &params).unwrap();
    let b = descriptor_forward(&back, &params).unwrap();
    assert!(euclidean(&a.vector, &b.vector) < 1e-5);
}

#[test]
fn attention_and_netvlad_ignore_row_duplication() {
    let cfg = small_net();
    let params = NetParams::init(&cfg).unwrap();
    let n = 40;
    let x = Array2::from_shape_fn((n, cfg.d_model), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let mut twice = Array2::zeros((2 * n, cfg.d_model));
    twice.slice_mut(ndarray::s![..n, ..]).assign(&x);
    twice.slice_mut(ndarray::s![n.., ..]).assign(&x);

    let head = |x: &Array2<f64>| {
        let (y, _) = mha_forward(x, &params.attn, cfg.n_head).unwrap();
        let (v, _) = netvlad_forward(&y, &params.vlad).unwrap();
        head_forward(&v, &params.out).unwrap().0.to_vec()
    };
    let d = cosine_distance(&head(&x), &head(&twice));
    assert!(d.abs() < 1e-12, "cosine distance {d}");
}

// The kNN graph has a fixed neighbour count J, so duplicating every row
// gives each node its own copy as a neighbour and halves the number of
// distinct points it sees. The gconv stages are therefore not
// duplication-insensitive, and the measured cosine distance is about 5e-3
// with the default network and 1e-2 to 4e-2 with the small one.
#[test]
#[ignore = "fails: the fixed-J kNN graph changes under row duplication (cosine distance ~5e-3)"]
fn duplicating_every_voxel_barely_moves_the_descriptor() {
    let params = NetParams::init(&NetConfig::default()).unwrap();
    for seed in 0..3 {
        let vs = voxelize(&scene(seed as i64, seed), &grid(4096), seed).unwrap();
        let a = descriptor_forward(&vs, &params).unwrap();
        let b = descriptor_forward(&duplicated(&vs), &params).unwrap();
        let d = cosine_distance(&a.vector, &b.vector);
        assert!(d < 1e-3, "seed {seed}: cosine distance {d}");
    }
}
