//! Scene preparation: the LiDAR/camera initialisation prior, the static and
//! dynamic masks, and the image reconstruction losses.

mod dome;
mod frustum;
mod ground;
mod loss;
mod masks;
mod sequence;

pub use dome::generate_dome;
pub use frustum::{bilinear, colorize_points, colorize_views, frustum_cull};
pub use ground::{filter_ground, filter_ground_with, fit_ground_plane, GroundFilter, Plane};
pub use loss::{dssim_loss, l1_loss, mgs_loss, ssim, SSIM_WINDOW};
pub use masks::{make_dynamic_mask, make_static_mask, overlay_background, Mask, MaskBundle};
pub use sequence::{
    assemble_sequence, prior_to_scene, InitPrior, InitStrategy, PointSource, PrepConfig,
};

use nalgebra::Vector3;

use crate::geometry::Box3d;

/// Cityscapes train ids, the label space the semantic maps are expected in.
pub mod classes {
    pub const ROAD: u16 = 0;
    pub const SIDEWALK: u16 = 1;
    pub const BUILDING: u16 = 2;
    pub const VEGETATION: u16 = 8;
    pub const SKY: u16 = 10;
    pub const PERSON: u16 = 11;
    pub const CAR: u16 = 13;
    pub const TRUCK: u16 = 14;
    pub const BUS: u16 = 15;
}

/// Indices of points outside every box (inclusive box boundaries erase).
pub fn erase_boxes(points: &[Vector3<f64>], boxes: &[Box3d]) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| !boxes.iter().any(|b| b.contains(p)))
        .map(|(i, _)| i)
        .collect()
}
