use nalgebra::Vector3;

use crate::error::{Error, Result};

/// `n_dome` points on the upper hemisphere of radius
/// `radius_factor × max range`, centred on the ego origin, laid out on a
/// Fibonacci lattice (equal-area bands in z, golden-angle azimuth steps).
pub fn generate_dome(
    points: &[Vector3<f64>],
    n_dome: usize,
    radius_factor: f64,
) -> Result<Vec<Vector3<f64>>> {
    if points.is_empty() {
        return Err(Error::Input("dome needs a non-empty point cloud".into()));
    }
    if n_dome == 0 {
        return Err(Error::Input("n_dome must be positive".into()));
    }
    if !(radius_factor >= 1.0) {
        return Err(Error::Input(format!(
            "radius_factor must be >= 1, got {radius_factor}"
        )));
    }
    let max_range = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let radius = radius_factor * max_range;
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    Ok((0..n_dome)
        .map(|i| {
            let z = (i as f64 + 0.5) / n_dome as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_follows_max_range() {
        let pts = vec![Vector3::new(30.0, 40.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let dome = generate_dome(&pts, 300, 1.2).unwrap();
        for p in &dome {
            assert!((p.norm() - 60.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn count_and_upper_hemisphere() {
        let dome = generate_dome(&[Vector3::new(0.0, 10.0, 0.0)], 500, 1.0).unwrap();
        assert_eq!(dome.len(), 500);
        assert!(dome.iter().all(|p| p.z >= 0.0));
    }

    #[test]
    fn nearest_neighbour_spacing_is_uniform() {
        let dome = generate_dome(&[Vector3::new(1.0, 0.0, 0.0)], 2000, 1.0).unwrap();
        let nn: Vec<f64> = dome
            .iter()
            .enumerate()
            .map(|(i, p)| {
                dome.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        let var = nn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / nn.len() as f64;
        let cv = var.sqrt() / mean;
        assert!(cv < 0.25, "coefficient of variation {cv}");
    }

    #[test]
    fn invalid_inputs() {
        assert!(generate_dome(&[], 10, 1.2).is_err());
        assert!(generate_dome(&[Vector3::x()], 0, 1.2).is_err());
        assert!(generate_dome(&[Vector3::x()], 10, 0.5).is_err());
    }
}
