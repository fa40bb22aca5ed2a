//! Cylindrical voxel partitioning and mean encoding of Gaussian scenes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scene_io::{layout, Gaussian, GaussianScene, GAUSSIAN_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylGridConfig {
    /// Horizontal range cap, meters.
    pub max_range: f64,
    pub n_rho: usize,
    pub n_theta: usize,
    pub n_z: usize,
    pub z_min: f64,
    pub z_max: f64,
    /// Maximum Gaussians kept per voxel (H).
    pub max_per_voxel: usize,
    /// Voxel count after selection; set per phase by the pipeline config.
    #[serde(skip)]
    pub n_target: usize,
}

impl Default for CylGridConfig {
    fn default() -> Self {
        Self {
            max_range: 40.0,
            n_rho: 40,
            n_theta: 120,
            n_z: 10,
            z_min: -3.0,
            z_max: 7.0,
            max_per_voxel: 16,
            n_target: 8192,
        }
    }
}

impl CylGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rho == 0 || self.n_theta == 0 || self.n_z == 0 {
            return Err(Error::Config("voxel bin counts must be >= 1".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("max_range must be positive".into()));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::Config("z_max must exceed z_min".into()));
        }
        if self.max_per_voxel == 0 {
            return Err(Error::Config("max_per_voxel must be >= 1".into()));
        }
        if self.n_target == 0 {
            return Err(Error::Config("n_target must be >= 1".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.n_rho * self.n_theta * self.n_z
    }

    /// `(rho, theta, z)` bins of a point, or `None` outside the range cap or
    /// the vertical slab.
    pub fn bin(&self, xyz: [f64; 3]) -> Option<[usize; 3]> {
        let (rho, theta, z) = to_cylindrical(xyz);
        if rho > self.max_range || z < self.z_min || z > self.z_max {
            return None;
        }
        let clamp = |v: f64, n: usize| (v.floor() as usize).min(n - 1);
        Some([
            clamp(rho / self.max_range * self.n_rho as f64, self.n_rho),
            clamp(theta / std::f64::consts::TAU * self.n_theta as f64, self.n_theta),
            clamp((z - self.z_min) / (self.z_max - self.z_min) * self.n_z as f64, self.n_z),
        ])
    }

    pub fn linear_index(&self, bin: [usize; 3]) -> usize {
        (bin[0] * self.n_theta + bin[1]) * self.n_z + bin[2]
    }
}

/// `(rho, theta ∈ [0, 2π), z)`.
pub fn to_cylindrical(xyz: [f64; 3]) -> (f64, f64, f64) {
    let [x, y, z] = xyz;
    let rho = x.hypot(y);
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += std::f64::consts::TAU;
    }
    if theta >= std::f64::consts::TAU {
        theta = 0.0;
    }
    (rho, theta, z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub index: usize,
    /// Kept occupants as `(original index, gaussian)`, at most H.
    pub members: Vec<(usize, Gaussian)>,
    /// Occupancy before the H cap.
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMap {
    /// Non-empty voxels ordered by linear index.
    pub voxels: Vec<Voxel>,
    pub dropped: usize,
    pub place_id: i64,
}

impl VoxelMap {
    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Assigns every Gaussian inside the range cap to exactly one voxel. Voxels
/// over capacity keep their `max_per_voxel` most opaque members (ties by
/// original index).
pub fn partition(scene: &GaussianScene, cfg: &CylGridConfig) -> Result<VoxelMap> {
    cfg.validate()?;
    if scene.is_empty() {
        return Err(Error::Input("cannot partition an empty scene".into()));
    }
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut dropped = 0;
    for (i, g) in scene.gaussians.iter().enumerate() {
        match cfg.bin(g.position.map(|v| v as f64)) {
            Some(b) => cells.entry(cfg.linear_index(b)).or_default().push(i),
            None => dropped += 1,
        }
    }
    if cells.is_empty() {
        log::warn!(
            "place {}: all {} Gaussians fall outside the voxel grid",
            scene.place_id,
            scene.len()
        );
    }
    let voxels = cells
        .into_iter()
        .map(|(index, mut members)| {
            let occupancy = members.len();
            if occupancy > cfg.max_per_voxel {
                members.sort_by(|&a, &b| {
                    let (oa, ob) = (scene.gaussians[a].opacity, scene.gaussians[b].opacity);
                    ob.total_cmp(&oa).then(a.cmp(&b))
                });
                members.truncate(cfg.max_per_voxel);
                members.sort_unstable();
            }
            Voxel {
                index,
                members: members
                    .into_iter()
                    .map(|i| (i, scene.gaussians[i].clone()))
                    .collect(),
                occupancy,
            }
        })
        .collect();
    Ok(VoxelMap {
        voxels,
        dropped,
        place_id: scene.place_id,
    })
}

/// N mean-encoded Gaussians; each row is the 59-vector
/// `[position, scale, rotation, sh, opacity]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizedScene {
    pub encoded: Vec<f64>,
    pub place_id: i64,
}

impl VoxelizedScene {
    pub fn from_rows(rows: &[[f64; GAUSSIAN_DIM]], place_id: i64) -> Self {
        Self {
            encoded: rows.iter().flatten().copied().collect(),
            place_id,
        }
    }

    pub fn len(&self) -> usize {
        self.encoded.len() / GAUSSIAN_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.encoded.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.encoded[i * GAUSSIAN_DIM..(i + 1) * GAUSSIAN_DIM]
    }

    pub fn coords(&self, i: usize) -> [f64; 3] {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }

    fn select_rows(&self, idx: &[usize]) -> VoxelizedScene {
        let mut encoded = Vec::with_capacity(idx.len() * GAUSSIAN_DIM);
        for &i in idx {
            encoded.extend_from_slice(self.row(i));
        }
        VoxelizedScene {
            encoded,
            place_id: self.place_id,
        }
    }
}

/// Attribute-wise mean per voxel. Quaternions are sign-aligned to the first
/// occupant before averaging, then renormalised and put in the w ≥ 0 form.
pub fn encode(map: &VoxelMap) -> VoxelizedScene {
    let mut encoded = Vec::with_capacity(map.voxels.len() * GAUSSIAN_DIM);
    for voxel in &map.voxels {
        let mut acc = [0.0f64; GAUSSIAN_DIM];
        let first_q = voxel.members[0].1.rotation.map(|v| v as f64);
        for (_, g) in &voxel.members {
            let f = g.to_features();
            let q = &f[layout::ROTATION];
            let dot: f64 = q.iter().zip(&first_q).map(|(a, b)| *a as f64 * b).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for (k, v) in f.iter().enumerate() {
                let v = *v as f64;
                acc[k] += if layout::ROTATION.contains(&k) { sign * v } else { v };
            }
        }
        let n = voxel.members.len() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        let q = &mut acc[layout::ROTATION];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        if norm > 0.0 {
            q.iter_mut().for_each(|v| *v *= sign / norm);
        } else {
            q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        encoded.extend_from_slice(&acc);
    }
    VoxelizedScene {
        encoded,
        place_id: map.place_id,
    }
}

/// Fixes the voxel count to `n_target`: a seeded subset (original order
/// kept) when there are more voxels, or every voxel followed by seeded
/// resamples with replacement when there are fewer.
pub fn select_voxels(vs: &VoxelizedScene, n_target: usize, seed: u64) -> Result<VoxelizedScene> {
    let n = vs.len();
    if n == 0 {
        return Err(Error::Input("cannot select from an empty voxel set".into()));
    }
    if n_target == 0 {
        return Err(Error::Config("n_target must be >= 1".into()));
    }
    let mut rng = seeded(seed, 0x5e1ec7);
    let idx: Vec<usize> = if n == n_target {
        (0..n).collect()
    } else if n > n_target {
        let mut s = sample(&mut rng, n, n_target).into_vec();
        s.sort_unstable();
        s
    } else {
        let mut s: Vec<usize> = (0..n).collect();
        s.extend((n..n_target).map(|_| rng.gen_range(0..n)));
        s
    };
    Ok(vs.select_rows(&idx))
}

/// Partition, encode and select `cfg.n_target` voxels in one call.
pub fn voxelize(scene: &GaussianScene, cfg: &CylGridConfig, seed: u64) -> Result<VoxelizedScene> {
    let map = partition(scene, cfg)?;
    if map.is_empty() {
        return Err(Error::Input(format!(
            "place {}: no Gaussian inside the voxel grid",
            scene.place_id
        )));
    }
    select_voxels(&encode(&map), cfg.n_target, seed)
}

const BLOB_MAGIC: &[u8; 4] = b"GSVX";
const BLOB_VERSION: u32 = 1;

/// 16-byte header (magic, version, N, 59) then N×59 little-endian f32.
pub fn write_voxel_blob(vs: &VoxelizedScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + vs.encoded.len() * 4);
    bytes.extend_from_slice(BLOB_MAGIC);
    bytes.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(vs.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(GAUSSIAN_DIM as u32).to_le_bytes());
    for v in &vs.encoded {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_voxel_blob(path: impl AsRef<Path>, place_id: i64) -> Result<VoxelizedScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != BLOB_MAGIC {
        return Err(Error::Format(format!("{}: not a voxel blob", path.display())));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    if word(4) != BLOB_VERSION as usize {
        return Err(Error::Format(format!("unsupported voxel blob version {}", word(4))));
    }
    let (n, dim) = (word(8), word(12));
    if dim != GAUSSIAN_DIM || bytes.len() != 16 + n * dim * 4 {
        return Err(Error::Format(format!("{}: inconsistent blob size", path.display())));
    }
    let encoded = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(VoxelizedScene { encoded, place_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::scene_io::{generate_synthetic_scene, SceneSource, SyntheticSpec, SH_DIM};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gaussian_at(x: f64, y: f64, z: f64, opacity: f32) -> Gaussian {
        Gaussian {
            position: [x as f32, y as f32, z as f32],
            scale: [0.1, 0.2, 0.3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            sh: [0.1; SH_DIM],
            opacity,
        }
    }

    fn scene(gaussians: Vec<Gaussian>) -> GaussianScene {
        GaussianScene {
            gaussians,
            ego_pose: RigidTransform::identity(),
            place_id: 9,
            source: SceneSource::Synthetic,
        }
    }

    #[test]
    fn cylindrical_examples() {
        assert_eq!(to_cylindrical([1.0, 0.0, 0.0]), (1.0, 0.0, 0.0));
        let (r, t, z) = to_cylindrical([0.0, 1.0, 2.0]);
        assert!((r - 1.0).abs() < 1e-15 && (t - PI / 2.0).abs() < 1e-15 && z == 2.0);
        let (r, t, _) = to_cylindrical([-1.0, -1.0, 0.0]);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!((t - 5.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn single_gaussian_single_voxel_and_range_cap() {
        let cfg = CylGridConfig::default();
        let map = partition(&scene(vec![gaussian_at(10.0, 0.0, 0.0, 0.5)]), &cfg).unwrap();
        assert_eq!(map.voxels.len(), 1);
        assert_eq!(map.voxels[0].members.len(), 1);
        let map = partition(
            &scene(vec![gaussian_at(41.0, 0.0, 0.0, 0.5), gaussian_at(1.0, 0.0, 0.0, 0.5)]),
            &cfg,
        )
        .unwrap();
        assert_eq!(map.dropped, 1);
        assert_eq!(map.voxels.len(), 1);
    }

    #[test]
    fn over_capacity_keeps_most_opaque() {
        let cfg = CylGridConfig {
            max_per_voxel: 2,
            ..Default::default()
        };
        let gs = vec![
            gaussian_at(10.0, 0.1, 0.0, 0.3),
            gaussian_at(10.1, 0.1, 0.0, 0.9),
            gaussian_at(10.2, 0.1, 0.0, 0.6),
            gaussian_at(10.3, 0.1, 0.0, 0.9),
        ];
        let map = partition(&scene(gs), &cfg).unwrap();
        let kept: Vec<usize> = map.voxels[0].members.iter().map(|(i, _)| *i).collect();
        assert_eq!(kept, vec![1, 3]);
        assert_eq!(map.voxels[0].occupancy, 4);
    }

    #[test]
    fn partition_matches_binning_oracle_and_conserves_counts() {
        let cfg = CylGridConfig::default();
        let s = generate_synthetic_scene(3, &SyntheticSpec::default());
        let map = partition(&s, &cfg).unwrap();
        let mut oracle: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut dropped = 0;
        for (i, g) in s.gaussians.iter().enumerate() {
            let [x, y, z] = g.position.map(|v| v as f64);
            let rho = (x * x + y * y).sqrt();
            if rho > 40.0 || !(-3.0..=7.0).contains(&z) {
                dropped += 1;
                continue;
            }
            let mut th = y.atan2(x);
            if th < 0.0 {
                th += 2.0 * PI;
            }
            let ir = ((rho / 40.0 * 40.0).floor() as usize).min(39);
            let it = ((th / (2.0 * PI) * 120.0).floor() as usize).min(119);
            let iz = (((z + 3.0) / 10.0 * 10.0).floor() as usize).min(9);
            oracle.entry((ir * 120 + it) * 10 + iz).or_default().push(i);
        }
        assert_eq!(map.dropped, dropped);
        let occupancy: usize = map.voxels.iter().map(|v| v.occupancy).sum();
        assert_eq!(dropped + occupancy, s.len());
        for v in &map.voxels {
            let expected = &oracle[&v.index];
            assert_eq!(v.occupancy, expected.len());
            assert!(v.members.iter().all(|(i, _)| expected.contains(i)));
        }
        assert_eq!(map.voxels.len(), oracle.len());
    }

    #[test]
    fn encode_mean_of_one_and_two() {
        let cfg = CylGridConfig::default();
        let g = gaussian_at(10.0, 0.0, 0.0, 0.5);
        let vs = encode(&partition(&scene(vec![g.clone()]), &cfg).unwrap());
        let f = g.to_features();
        for k in 0..GAUSSIAN_DIM {
            assert_eq!(vs.row(0)[k], f[k] as f64);
        }
        let vs = encode(
            &partition(
                &scene(vec![gaussian_at(10.0, 0.0, 0.0, 0.2), gaussian_at(10.1, 0.0, 0.0, 0.6)]),
                &cfg,
            )
            .unwrap(),
        );
        assert!((vs.row(0)[layout::OPACITY] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn encode_matches_loop_oracle() {
        let cfg = CylGridConfig::default();
        let s = generate_synthetic_scene(8, &SyntheticSpec::default());
        let map = partition(&s, &cfg).unwrap();
        let vs = encode(&map);
        for (r, voxel) in map.voxels.iter().enumerate() {
            let q0: Vec<f64> = voxel.members[0].1.rotation.iter().map(|v| *v as f64).collect();
            let mut mean = vec![0.0; GAUSSIAN_DIM];
            for (_, g) in &voxel.members {
                let f = g.to_features();
                let dot: f64 = (0..4).map(|k| f[6 + k] as f64 * q0[k]).sum();
                for k in 0..GAUSSIAN_DIM {
                    let s = if (6..10).contains(&k) && dot < 0.0 { -1.0 } else { 1.0 };
                    mean[k] += s * f[k] as f64 / voxel.members.len() as f64;
                }
            }
            let qn: f64 = (6..10).map(|k| mean[k] * mean[k]).sum::<f64>().sqrt();
            let qs = if mean[6] < 0.0 { -1.0 } else { 1.0 };
            for k in 6..10 {
                mean[k] *= qs / qn;
            }
            for k in 0..GAUSSIAN_DIM {
                assert!((vs.row(r)[k] - mean[k]).abs() < 1e-12, "voxel {r} attr {k}");
            }
        }
    }

    #[test]
    fn single_occupancy_encoding_is_identity() {
        let cfg = CylGridConfig::default();
        // one Gaussian per rho ring, all distinct voxels
        let gs: Vec<Gaussian> = (0..20)
            .map(|i| {
                let mut g = gaussian_at(1.5 + 2.0 * i as f64, 0.3, 0.5, 0.3 + 0.01 * i as f32);
                g.rotation = crate::scene_io::canonical_quaternion([0.9, 0.1, -0.3, 0.2]).unwrap();
                g
            })
            .collect();
        let vs = encode(&partition(&scene(gs.clone()), &cfg).unwrap());
        assert_eq!(vs.len(), gs.len());
        for (i, g) in gs.iter().enumerate() {
            let f = g.to_features();
            let q: Vec<f64> = g.rotation.iter().map(|v| *v as f64).collect();
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..GAUSSIAN_DIM {
                let expected = if layout::ROTATION.contains(&k) {
                    q[k - 6] / qn
                } else {
                    f[k] as f64
                };
                assert_eq!(vs.row(i)[k], expected);
            }
        }
    }

    #[test]
    fn rotation_by_one_bin_permutes_voxels() {
        let cfg = CylGridConfig::default();
        let width = 2.0 * PI / cfg.n_theta as f64;
        let mut gs = Vec::new();
        for ir in [3usize, 10, 25] {
            for it in [0usize, 7, 60, 119] {
                let rho = (ir as f64 + 0.5) * 1.0;
                let th = (it as f64 + 0.5) * width;
                gs.push(gaussian_at(rho * th.cos(), rho * th.sin(), 0.5, 0.5));
                gs.push(gaussian_at(rho * th.cos(), rho * th.sin(), 2.5, 0.4));
            }
        }
        let rotated: Vec<Gaussian> = gs
            .iter()
            .map(|g| {
                let [x, y, z] = g.position.map(|v| v as f64);
                let (s, c) = width.sin_cos();
                gaussian_at(c * x - s * y, s * x + c * y, z, g.opacity)
            })
            .collect();
        let a = partition(&scene(gs), &cfg).unwrap();
        let b = partition(&scene(rotated), &cfg).unwrap();
        let shift = |idx: usize| {
            let iz = idx % cfg.n_z;
            let it = (idx / cfg.n_z) % cfg.n_theta;
            let ir = idx / cfg.n_z / cfg.n_theta;
            (ir * cfg.n_theta + (it + 1) % cfg.n_theta) * cfg.n_z + iz
        };
        let members = |m: &VoxelMap| -> BTreeMap<usize, Vec<usize>> {
            m.voxels
                .iter()
                .map(|v| (v.index, v.members.iter().map(|(i, _)| *i).collect()))
                .collect()
        };
        let ma = members(&a);
        let mb = members(&b);
        assert_eq!(ma.len(), mb.len());
        for (idx, occ) in &ma {
            assert_eq!(&mb[&shift(*idx)], occ);
        }
    }

    #[test]
    fn select_identity_determinism_and_padding() {
        let rows: Vec<[f64; GAUSSIAN_DIM]> = (0..10).map(|i| [i as f64; GAUSSIAN_DIM]).collect();
        let vs = VoxelizedScene::from_rows(&rows, 1);
        assert_eq!(select_voxels(&vs, 10, 5).unwrap(), vs);
        let a = select_voxels(&vs, 4, 42).unwrap();
        assert_eq!(a, select_voxels(&vs, 4, 42).unwrap());
        assert_eq!(a.len(), 4);

        let small = VoxelizedScene::from_rows(&rows[..3], 1);
        let padded = select_voxels(&small, 8, 1).unwrap();
        assert_eq!(padded.len(), 8);
        for i in 0..8 {
            assert!((0..3).any(|j| padded.row(i) == small.row(j)));
        }
    }

    #[test]
    fn blob_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_synthetic_scene(2, &SyntheticSpec { count: 300, ..Default::default() });
        let cfg = CylGridConfig { n_target: 64, ..Default::default() };
        let vs = voxelize(&s, &cfg, 0).unwrap();
        let path = dir.path().join("v.bin");
        write_voxel_blob(&vs, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"GSVX");
        assert_eq!(bytes.len(), 16 + 64 * 59 * 4);
        let back = read_voxel_blob(&path, vs.place_id).unwrap();
        for (a, b) in vs.encoded.iter().zip(&back.encoded) {
            assert_eq!(*b, *a as f32 as f64);
        }
    }

    proptest! {
        #[test]
        fn select_always_hits_target(n in 1usize..60, target in 1usize..80, seed in 0u64..1000) {
            let rows: Vec<[f64; GAUSSIAN_DIM]> = (0..n).map(|i| [i as f64; GAUSSIAN_DIM]).collect();
            let vs = VoxelizedScene::from_rows(&rows, 0);
            let out = select_voxels(&vs, target, seed).unwrap();
            prop_assert_eq!(out.len(), target);
        }
    }
}
