use rand::seq::index::sample;

use super::TrainConfig;
use crate::geometry::RigidTransform;
use crate::rng::seeded;

/// One query with its sampled positives and negatives (indices into the
/// training set).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub query: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

pub fn planar_distance(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let d = a.translation - b.translation;
    d.x.hypot(d.y)
}

/// All positives (within `radius`, planar) and negatives of sample `i`.
pub fn eligibility(poses: &[RigidTransform], i: usize, radius: f64) -> (Vec<usize>, Vec<usize>) {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (j, p) in poses.iter().enumerate() {
        if j == i {
            continue;
        }
        if planar_distance(&poses[i], p) <= radius {
            pos.push(j);
        } else {
            neg.push(j);
        }
    }
    (pos, neg)
}

/// Seeded uniform choice of `k_pos` positives and `k_neg` negatives for
/// every sample; samples without enough candidates are skipped.
pub fn mine_triplets(poses: &[RigidTransform], cfg: &TrainConfig, seed: u64) -> Vec<Triplet> {
    let mut rng = seeded(seed, 0x7121);
    let mut out = Vec::with_capacity(poses.len());
    for i in 0..poses.len() {
        let (pos, neg) = eligibility(poses, i, cfg.positive_radius);
        if pos.len() < cfg.k_pos || neg.len() < cfg.k_neg {
            log::warn!(
                "sample {i}: {} positives / {} negatives available, need {} / {}; skipped",
                pos.len(),
                neg.len(),
                cfg.k_pos,
                cfg.k_neg
            );
            continue;
        }
        let positives = sample(&mut rng, pos.len(), cfg.k_pos).iter().map(|k| pos[k]).collect();
        let negatives = sample(&mut rng, neg.len(), cfg.k_neg).iter().map(|k| neg[k]).collect();
        out.push(Triplet {
            query: i,
            positives,
            negatives,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn at(x: f64, y: f64) -> RigidTransform {
        RigidTransform::from_xy_yaw(x, y, 0.0)
    }

    #[test]
    fn five_and_twenty_meters() {
        let poses = [at(0.0, 0.0), at(5.0, 0.0), at(25.0, 0.0)];
        assert_eq!(eligibility(&poses, 0, 9.0), (vec![1], vec![2]));
        assert_eq!(eligibility(&poses, 1, 9.0), (vec![0], vec![2]));
    }

    #[test]
    fn height_is_ignored() {
        let mut p = at(3.0, 0.0);
        p.translation.z = 50.0;
        assert_eq!(eligibility(&[at(0.0, 0.0), p], 0, 9.0).0, vec![1]);
    }

    #[test]
    fn triplets_respect_the_radius_and_are_deterministic() {
        let mut rng = crate::rng::seeded(5, 0);
        let poses: Vec<RigidTransform> = (0..60).map(|_| at(rng.gen_range(0.0..60.0), rng.gen_range(0.0..10.0))).collect();
        let cfg = TrainConfig::default();
        let t = mine_triplets(&poses, &cfg, 3);
        assert_eq!(t, mine_triplets(&poses, &cfg, 3));
        assert!(!t.is_empty());
        for tr in &t {
            assert_eq!((tr.positives.len(), tr.negatives.len()), (2, 6));
            for &p in &tr.positives {
                assert!(planar_distance(&poses[tr.query], &poses[p]) <= 9.0);
            }
            for &n in &tr.negatives {
                assert!(planar_distance(&poses[tr.query], &poses[n]) > 9.0);
            }
        }
    }

    #[test]
    fn starved_queries_are_skipped() {
        let poses = [at(0.0, 0.0), at(100.0, 0.0)];
        assert!(mine_triplets(&poses, &TrainConfig::default(), 0).is_empty());
    }
}
