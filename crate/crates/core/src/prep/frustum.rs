use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::scene_io::{CameraView, RgbImage};

/// Indices of points with positive camera depth projecting into `[0,W)×[0,H)`.
pub fn frustum_cull(points: &[Vector3<f64>], camera: &Camera) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| camera.project(p).is_some_and(|pr| camera.in_image(&pr)))
        .map(|(i, _)| i)
        .collect()
}

/// Bilinear sample at continuous pixel coordinates; pixel centers are at
/// integer coordinates and reads are clamped to the image.
pub fn bilinear(image: &RgbImage, u: f64, v: f64) -> Vec<f64> {
    let max_x = (image.width - 1) as f64;
    let max_y = (image.height - 1) as f64;
    let u = u.clamp(0.0, max_x);
    let v = v.clamp(0.0, max_y);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(image.width - 1);
    let y1 = (y0 + 1).min(image.height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    (0..image.channels)
        .map(|c| {
            let top = image.get(x0, y0, c) * (1.0 - fx) + image.get(x1, y0, c) * fx;
            let bottom = image.get(x0, y1, c) * (1.0 - fx) + image.get(x1, y1, c) * fx;
            top * (1.0 - fy) + bottom * fy
        })
        .collect()
}

/// Colours every point from one camera view. All points must be inside the
/// view's frustum.
pub fn colorize_points(points: &[Vector3<f64>], view: &CameraView) -> Result<Vec<[f64; 3]>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let proj = view
                .camera
                .project(p)
                .filter(|pr| view.camera.in_image(pr))
                .ok_or_else(|| Error::Input(format!("point {i} is outside the camera frustum")))?;
            let c = bilinear(&view.image, proj.u, proj.v);
            Ok([c[0], c[1], c[2]].map(|v| v.clamp(0.0, 1.0)))
        })
        .collect()
}

/// Colour per point from the view where it has the smallest depth, or
/// `None` when no view sees it.
pub fn colorize_views(points: &[Vector3<f64>], views: &[&CameraView]) -> Vec<Option<[f64; 3]>> {
    points
        .iter()
        .map(|p| {
            let best = views
                .iter()
                .filter_map(|view| {
                    view.camera
                        .project(p)
                        .filter(|pr| view.camera.in_image(pr))
                        .map(|pr| (pr, *view))
                })
                .min_by(|a, b| a.0.depth.total_cmp(&b.0.depth))?;
            let c = bilinear(&best.1.image, best.0.u, best.0.v);
            Some([c[0], c[1], c[2]].map(|v| v.clamp(0.0, 1.0)))
        })
        .collect()
}
