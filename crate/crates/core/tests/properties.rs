//! Randomised invariants over the prep, loss and retrieval layers.

use gspr_core::prep::{erase_boxes, mgs_loss, Mask};
use gspr_core::retrieval::{downsample_track, recall_at_k, DbEntry, DescriptorDb};
use gspr_core::scene_io::RgbImage;
use gspr_core::train::{lazy_triplet_loss, planar_distance};
use gspr_core::{Box3d, RigidTransform};
use nalgebra::Vector3;
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.into_iter().map(|x| x / n).collect()
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    (-10.0..10.0f64, -10.0..10.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn image(w: usize, h: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(0.0..1.0f64, w * h * 3).prop_map(move |data| RgbImage {
        width: w,
        height: h,
        channels: 3,
        data,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erase_boxes_is_permutation_equivariant(
        points in prop::collection::vec(point(), 1..80),
        centers in prop::collection::vec(point(), 0..4),
        shuffle in any::<u64>(),
    ) {
        let boxes: Vec<Box3d> = centers
            .iter()
            .enumerate()
            .map(|(i, c)| Box3d::new(*c, Vector3::new(4.0, 3.0, 2.0), i as f64 * 0.4, 13))
            .collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut state = shuffle;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Vector3<f64>> = order.iter().map(|&i| points[i]).collect();
        let mut kept: Vec<usize> = erase_boxes(&points, &boxes);
        let mut kept_permuted: Vec<usize> = erase_boxes(&permuted, &boxes).into_iter().map(|i| order[i]).collect();
        kept.sort_unstable();
        kept_permuted.sort_unstable();
        prop_assert_eq!(kept, kept_permuted);
    }

    #[test]
    fn detaching_more_pixels_never_increases_mgs_loss(
        render in image(16, 16),
        gt in image(16, 16),
        base in prop::collection::vec(any::<bool>(), 256),
        extra in prop::collection::vec(any::<bool>(), 256),
        lambda in prop::sample::select(vec![0.0, 0.2, 1.0]),
    ) {
        let small = Mask { width: 16, height: 16, data: base.clone() };
        let large = Mask {
            width: 16,
            height: 16,
            data: base.iter().zip(&extra).map(|(a, b)| *a || *b).collect(),
        };
        let a = mgs_loss(&render, &gt, lambda, &small).unwrap();
        let b = mgs_loss(&render, &gt, lambda, &large).unwrap();
        prop_assert!(b <= a + 1e-12, "lambda {}: {} -> {}", lambda, a, b);
    }

    #[test]
    fn lazy_loss_is_nonnegative_and_monotone_in_beta(
        raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 5),
        beta in 0.0..2.0f64,
        bump in 0.0..1.0f64,
        hard in any::<bool>(),
    ) {
        let d: Vec<Vec<f64>> = raw.into_iter().map(unit).collect();
        let pos = [d[1].as_slice(), d[2].as_slice()];
        let neg = [d[3].as_slice(), d[4].as_slice()];
        let low = lazy_triplet_loss(&d[0], &pos, &neg, beta, hard).unwrap();
        let high = lazy_triplet_loss(&d[0], &pos, &neg, beta + bump, hard).unwrap();
        prop_assert!(low >= 0.0);
        prop_assert!(high >= low);
    }

    #[test]
    fn scaling_descriptors_scales_the_zero_margin_loss(
        raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 7),
        s in 0.1..10.0f64,
        hard in any::<bool>(),
    ) {
        // Every distance scales by s, so the selected positive and negative stay
        // the same and with β = 0 the hinged loss scales by s too.
        let d: Vec<Vec<f64>> = raw.into_iter().map(unit).collect();
        let scaled: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|x| x * s).collect()).collect();
        let loss = |d: &[Vec<f64>]| {
            let pos: Vec<&[f64]> = d[1..4].iter().map(|v| v.as_slice()).collect();
            let neg: Vec<&[f64]> = d[4..7].iter().map(|v| v.as_slice()).collect();
            lazy_triplet_loss(&d[0], &pos, &neg, 0.0, hard).unwrap()
        };
        prop_assert!((loss(&scaled) - s * loss(&d)).abs() < 1e-9 * s.max(1.0));
    }

    #[test]
    fn recall_is_monotone_in_k(
        db_raw in prop::collection::vec((prop::collection::vec(-1.0..1.0f64, 4), 0.0..60.0f64), 12),
        q_raw in prop::collection::vec((prop::collection::vec(-1.0..1.0f64, 4), 0.0..60.0f64), 1..8),
    ) {
        let entry = |(i, (v, x)): (usize, (Vec<f64>, f64)), key: u64| DbEntry {
            vector: unit(v),
            pose: RigidTransform::from_xy_yaw(x, 0.0, 0.0),
            place_id: i as i64,
            key,
        };
        let mut db = DescriptorDb::new();
        for (i, e) in db_raw.into_iter().enumerate() {
            db.insert(entry((i, e), i as u64)).unwrap();
        }
        let queries: Vec<DbEntry> = q_raw.into_iter().enumerate().map(|(i, e)| entry((i, e), 1000 + i as u64)).collect();
        let report = recall_at_k(&db, &queries, &[1, 5, 10], 9.0).unwrap();
        prop_assert!(report.recall[0] <= report.recall[1] && report.recall[1] <= report.recall[2]);
    }

    #[test]
    fn downsampled_poses_respect_the_interval(
        steps in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..60),
        interval in 0.5..10.0f64,
    ) {
        let mut poses = Vec::new();
        let (mut x, mut y) = (0.0, 0.0);
        for (dx, dy) in steps {
            x += dx;
            y += dy;
            poses.push(RigidTransform::from_xy_yaw(x, y, 0.0));
        }
        let keep = downsample_track(&poses, interval).unwrap();
        prop_assert_eq!(keep[0], 0);
        for w in keep.windows(2) {
            prop_assert!(planar_distance(&poses[w[0]], &poses[w[1]]) >= interval);
        }
    }
}
