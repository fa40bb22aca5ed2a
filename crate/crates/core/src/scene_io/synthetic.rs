//! Deterministic synthetic Gaussian scenes.
//!
//! Every place owns a landmark template (a handful of boxy structures between
//! the near field and the maximum range) derived from `(template_seed,
//! place_id)`. A traversal seed controls everything that changes between
//! visits: the exact splats sampled around each landmark, a small ego-pose
//! jitter, a global illumination shift of the colours, and a near field of
//! generic clutter whose distribution is the same for every place.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{canonical_quaternion, Gaussian, GaussianScene, SceneSource, SH_DIM};
use crate::geometry::RigidTransform;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub place_id: i64,
    /// Shared by all places of one synthetic world.
    pub template_seed: u64,
    /// Maximum horizontal range of generated splats, meters.
    pub extent: f64,
    pub landmarks: usize,
    /// Radius of the place-agnostic near field, meters.
    pub near_radius: f64,
    pub near_fraction: f64,
    /// Places sit on a straight track along world x, this far apart.
    pub place_spacing: f64,
    pub pose_jitter: f64,
    pub color_shift: f64,
    pub position_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 2000,
            place_id: 0,
            template_seed: 0x5eed,
            extent: 45.0,
            landmarks: 12,
            near_radius: 10.0,
            near_fraction: 0.3,
            place_spacing: 25.0,
            pose_jitter: 0.5,
            color_shift: 0.3,
            position_noise: 0.1,
        }
    }
}

struct Landmark {
    center: Vector3<f64>,
    half_size: Vector3<f64>,
    scale: f64,
    opacity: f64,
    rotation: UnitQuaternion<f64>,
    color: [f64; 3],
}

fn template(spec: &SyntheticSpec) -> Vec<Landmark> {
    let mut rng = seeded(spec.template_seed, 0x7e3a_0000 ^ spec.place_id as u64);
    let inner = spec.near_radius + 2.0;
    let outer = (spec.extent - 3.0).max(inner + 1.0);
    (0..spec.landmarks.max(1))
        .map(|_| {
            let rho = rng.gen_range(inner..outer);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            Landmark {
                center: Vector3::new(rho * theta.cos(), rho * theta.sin(), rng.gen_range(-1.0..4.0)),
                half_size: Vector3::new(
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..2.0),
                ),
                scale: rng.gen_range(0.08..0.6),
                opacity: rng.gen_range(0.3..0.95),
                rotation: UnitQuaternion::from_euler_angles(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-3.0..3.0),
                ),
                color: [rng.gen(), rng.gen(), rng.gen()],
            }
        })
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f32; 4] {
    let q = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    canonical_quaternion(q).unwrap_or([1.0, 0.0, 0.0, 0.0])
}

/// SH DC coefficient that renders as `rgb` under the 3D-GS colour convention.
pub(crate) fn rgb_to_sh_dc(rgb: f64) -> f64 {
    const SH_C0: f64 = 0.282_094_791_773_878_14;
    (rgb - 0.5) / SH_C0
}

/// Generates one traversal of `spec.place_id`; a pure function of `(seed, spec)`.
pub fn generate_synthetic_scene(seed: u64, spec: &SyntheticSpec) -> GaussianScene {
    let landmarks = template(spec);
    let mut rng = seeded(seed, 0x5ca1_e000 ^ spec.place_id as u64);
    let noise = Normal::new(0.0, 1.0).unwrap();

    let jitter = RigidTransform::from_xy_yaw(
        rng.gen_range(-spec.pose_jitter..=spec.pose_jitter),
        rng.gen_range(-spec.pose_jitter..=spec.pose_jitter),
        rng.gen_range(-0.05..=0.05),
    );
    // Landmarks live in the place frame; splats are stored in the jittered ego frame.
    let place_to_ego = jitter.inverse().expect("planar pose is invertible");
    let illumination: [f64; 3] = [0, 1, 2].map(|_| spec.color_shift * noise.sample(&mut rng));

    let near_count = ((spec.count as f64) * spec.near_fraction).round() as usize;
    let near_count = near_count.min(spec.count);
    let mut gaussians = Vec::with_capacity(spec.count);

    for _ in 0..near_count {
        let r = spec.near_radius * rng.gen::<f64>().sqrt();
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = if rng.gen_bool(0.7) {
            -1.8 + 0.05 * noise.sample(&mut rng)
        } else {
            rng.gen_range(-1.8..1.0)
        };
        let mut sh = [0.0f32; SH_DIM];
        for v in sh.iter_mut().take(3) {
            *v = rgb_to_sh_dc(rng.gen()) as f32;
        }
        for v in sh.iter_mut().skip(3) {
            *v = (0.05 * noise.sample(&mut rng)) as f32;
        }
        gaussians.push(Gaussian {
            position: [(r * t.cos()) as f32, (r * t.sin()) as f32, z as f32],
            scale: [0, 1, 2].map(|_| rng.gen_range(0.03..0.3) as f32),
            rotation: random_rotation(&mut rng),
            sh,
            opacity: rng.gen_range(0.05..0.95) as f32,
        });
    }

    for i in 0..spec.count - near_count {
        let lm = &landmarks[i % landmarks.len()];
        let local = Vector3::new(
            rng.gen_range(-1.0..=1.0) * lm.half_size[0],
            rng.gen_range(-1.0..=1.0) * lm.half_size[1],
            rng.gen_range(-1.0..=1.0) * lm.half_size[2],
        );
        let jitter_pos = Vector3::new(
            noise.sample(&mut rng),
            noise.sample(&mut rng),
            noise.sample(&mut rng),
        ) * spec.position_noise;
        let p = place_to_ego.apply(&(lm.center + local + jitter_pos));
        let scale =
            [0, 1, 2].map(|_| (lm.scale * (1.0 + 0.1 * rng.gen_range(-1.0..1.0))) as f32);
        let wobble = UnitQuaternion::from_euler_angles(
            0.05 * noise.sample(&mut rng),
            0.05 * noise.sample(&mut rng),
            0.05 * noise.sample(&mut rng),
        );
        let q = wobble * lm.rotation;
        let rotation = canonical_quaternion([q.w, q.i, q.j, q.k]).unwrap();
        let mut sh = [0.0f32; SH_DIM];
        for c in 0..3 {
            let rgb = lm.color[c] + illumination[c] + 0.1 * noise.sample(&mut rng);
            sh[c] = rgb_to_sh_dc(rgb) as f32;
        }
        for v in sh.iter_mut().skip(3) {
            *v = (0.05 * noise.sample(&mut rng)) as f32;
        }
        let opacity = (lm.opacity + 0.03 * noise.sample(&mut rng)).clamp(0.02, 0.98);
        gaussians.push(Gaussian {
            position: [p[0] as f32, p[1] as f32, p[2] as f32],
            scale,
            rotation,
            sh,
            opacity: opacity as f32,
        });
    }

    let place_pose = RigidTransform::from_translation(spec.place_id as f64 * spec.place_spacing, 0.0, 0.0);
    GaussianScene {
        gaussians,
        ego_pose: place_pose.compose(&jitter),
        place_id: spec.place_id,
        source: SceneSource::Synthetic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticSpec {
            count: 100,
            ..Default::default()
        };
        let a = generate_synthetic_scene(7, &spec);
        let b = generate_synthetic_scene(7, &spec);
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
    }

    #[test]
    fn every_gaussian_is_valid() {
        for place in 0..4 {
            let spec = SyntheticSpec {
                count: 500,
                place_id: place,
                ..Default::default()
            };
            generate_synthetic_scene(place as u64 + 3, &spec)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn traversals_share_the_template_but_differ() {
        let spec = SyntheticSpec {
            count: 400,
            place_id: 3,
            ..Default::default()
        };
        let a = generate_synthetic_scene(1, &spec);
        let b = generate_synthetic_scene(2, &spec);
        assert_ne!(a, b);
        assert!(a.ego_pose.planar_distance(&b.ego_pose) < 2.0);
        let other = generate_synthetic_scene(
            1,
            &SyntheticSpec {
                place_id: 4,
                ..spec.clone()
            },
        );
        assert!(a.ego_pose.planar_distance(&other.ego_pose) > 9.0);
    }

    #[test]
    fn splats_stay_within_extent() {
        let spec = SyntheticSpec::default();
        let s = generate_synthetic_scene(5, &spec);
        for g in &s.gaussians {
            let r = ((g.position[0] as f64).powi(2) + (g.position[1] as f64).powi(2)).sqrt();
            assert!(r < spec.extent + 2.0, "{r}");
        }
    }
}
