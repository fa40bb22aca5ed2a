//! Dominant-plane ground removal by seeded random consensus.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundFilter {
    pub distance_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Largest accepted angle between the plane normal and +z, degrees.
    pub max_tilt_deg: f64,
}

impl Default for GroundFilter {
    fn default() -> Self {
        Self {
            distance_threshold: 0.2,
            iterations: 200,
            seed: 0x9a0d,
            max_tilt_deg: 30.0,
        }
    }
}

/// Plane `normal · p + offset = 0` with a unit normal pointing to +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    fn through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if !(len > 1e-12) {
            return None;
        }
        Some(Plane::oriented(n / len, a))
    }

    fn oriented(normal: Vector3<f64>, on_plane: &Vector3<f64>) -> Plane {
        let normal = if normal.z < 0.0 { -normal } else { normal };
        Plane {
            normal,
            offset: -normal.dot(on_plane),
        }
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) + self.offset).abs()
    }

    pub fn tilt_deg(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

fn lexicographic_order(points: &[Vector3<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
    });
    order
}

/// Fits the plane with the most inliers and refines it by least squares on
/// those inliers. Candidate triples are drawn from the points in
/// lexicographic order, so the result does not depend on input order.
pub fn fit_ground_plane(points: &[Vector3<f64>], cfg: &GroundFilter) -> Result<Option<Plane>> {
    if points.len() < 3 {
        return Err(Error::Input(format!(
            "ground fitting needs at least 3 points, got {}",
            points.len()
        )));
    }
    let order = lexicographic_order(points);
    let sorted: Vec<Vector3<f64>> = order.iter().map(|&i| points[i]).collect();
    let mut rng = seeded(cfg.seed, 0x6a0);
    let n = sorted.len();

    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..cfg.iterations {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.gen_range(0..n - 2);
        for taken in [a.min(b), a.max(b)] {
            if c >= taken {
                c += 1;
            }
        }
        let Some(plane) = Plane::through(&sorted[a], &sorted[b], &sorted[c]) else {
            continue;
        };
        let count = sorted
            .iter()
            .filter(|p| plane.distance(p) <= cfg.distance_threshold)
            .count();
        if best.map_or(true, |(bc, _)| count > bc) {
            best = Some((count, plane));
        }
    }
    let Some((_, plane)) = best else {
        return Ok(None);
    };

    let inliers: Vec<&Vector3<f64>> = sorted
        .iter()
        .filter(|p| plane.distance(p) <= cfg.distance_threshold)
        .collect();
    if inliers.len() < 3 {
        return Ok(Some(plane));
    }
    let centroid = inliers.iter().fold(Vector3::zeros(), |acc, p| acc + *p) / inliers.len() as f64;
    let cov = inliers.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = *p - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(k).into_owned();
    Ok(Some(Plane::oriented(normal.normalize(), &centroid)))
}

/// [`filter_ground_with`] using the default consensus settings.
pub fn filter_ground(points: &[Vector3<f64>], distance_threshold: f64) -> Result<Vec<usize>> {
    filter_ground_with(
        points,
        &GroundFilter {
            distance_threshold,
            ..GroundFilter::default()
        },
    )
}

/// Indices of non-ground points. Nothing is removed when the dominant plane
/// is steeper than `max_tilt_deg`.
pub fn filter_ground_with(points: &[Vector3<f64>], cfg: &GroundFilter) -> Result<Vec<usize>> {
    let plane = fit_ground_plane(points, cfg)?;
    Ok(match plane {
        Some(plane) if plane.tilt_deg() <= cfg.max_tilt_deg => (0..points.len())
            .filter(|&i| plane.distance(&points[i]) > cfg.distance_threshold)
            .collect(),
        _ => (0..points.len()).collect(),
    })
}
