//! Three-frame window assembly into one coloured initialisation prior.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    classes, colorize_views, erase_boxes, filter_ground_with, generate_dome, make_static_mask,
    overlay_background, GroundFilter,
};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::rng::seeded;
use crate::scene_io::{CalibratedFrame, CameraView, Gaussian, GaussianScene, SceneSource, SH_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    Lidar,
    Dome,
}

/// Coloured points in the center frame's ego coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InitPrior {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub provenance: Vec<PointSource>,
}

impl InitPrior {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Where the non-dome points of the prior come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Lidar,
    /// Same number of points drawn uniformly in the bounding box of the
    /// filtered LiDAR cloud (the no-LiDAR-prior baseline).
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub ground: GroundFilter,
    pub filter_ground: bool,
    pub erase_boxes: bool,
    pub init: InitStrategy,
    pub dome: bool,
    pub n_dome: usize,
    pub radius_factor: f64,
    pub dome_fallback_color: [f64; 3],
    pub static_mask: bool,
    pub dynamic_mask: bool,
    pub static_classes: BTreeSet<u16>,
    /// Renderer background colour used for static-mask overlay.
    pub background: f64,
    /// Blend weight of D-SSIM in the reconstruction loss.
    pub lambda: f64,
    /// Isotropic scale (meters) and opacity given to initialisation-grade Gaussians.
    pub init_scale: f64,
    pub init_opacity: f64,
    pub seed: u64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            ground: GroundFilter::default(),
            filter_ground: true,
            erase_boxes: true,
            init: InitStrategy::Lidar,
            dome: true,
            n_dome: 2000,
            radius_factor: 1.2,
            dome_fallback_color: [0.5, 0.5, 0.5],
            static_mask: true,
            dynamic_mask: true,
            static_classes: [classes::SKY, classes::ROAD].into(),
            background: 0.0,
            lambda: 0.2,
            init_scale: 0.1,
            init_opacity: 0.1,
            seed: 0x1a17,
        }
    }
}

fn views_for_coloring(frame: &CalibratedFrame, cfg: &PrepConfig) -> Vec<CameraView> {
    frame
        .views
        .iter()
        .map(|v| {
            if cfg.static_mask {
                let m = make_static_mask(&v.semantic, &cfg.static_classes);
                CameraView {
                    image: overlay_background(&v.image, &m, cfg.background),
                    ..v.clone()
                }
            } else {
                v.clone()
            }
        })
        .collect()
}

/// Merges a previous/current/next window into the current frame's ego
/// coordinates. Per frame: ground removal, box erasing, and colouring from
/// that frame's own views (points no view sees are dropped); then dome
/// points sized from the merged cloud and coloured from the center views.
pub fn assemble_sequence(
    frames: &[CalibratedFrame],
    poses: &[RigidTransform],
    cfg: &PrepConfig,
) -> Result<InitPrior> {
    if frames.len() != 3 || poses.len() != 3 {
        return Err(Error::Input(format!(
            "a window needs exactly 3 frames and poses, got {} and {}",
            frames.len(),
            poses.len()
        )));
    }
    let center_inv = poses[1].inverse()?;
    let mut prior = InitPrior {
        points: Vec::new(),
        colors: Vec::new(),
        provenance: Vec::new(),
    };
    let mut rng = seeded(cfg.seed, 0xf4a3e);

    for (frame, pose) in frames.iter().zip(poses) {
        pose.inverse()?;
        let to_center = center_inv.compose(pose);
        let mut keep: Vec<usize> = (0..frame.lidar.len()).collect();
        if cfg.filter_ground && frame.lidar.len() >= 3 {
            keep = filter_ground_with(&frame.lidar, &cfg.ground)?;
        }
        if cfg.erase_boxes {
            let pts: Vec<Vector3<f64>> = keep.iter().map(|&i| frame.lidar[i]).collect();
            keep = erase_boxes(&pts, &frame.boxes)
                .into_iter()
                .map(|k| keep[k])
                .collect();
        }
        let mut pts: Vec<Vector3<f64>> = keep.iter().map(|&i| frame.lidar[i]).collect();
        if cfg.init == InitStrategy::Random && !pts.is_empty() {
            let (lo, hi) = pts.iter().fold(
                (Vector3::repeat(f64::MAX), Vector3::repeat(f64::MIN)),
                |(lo, hi), p| (lo.inf(p), hi.sup(p)),
            );
            for p in pts.iter_mut() {
                *p = Vector3::from_fn(|k, _| {
                    if hi[k] > lo[k] {
                        rng.gen_range(lo[k]..=hi[k])
                    } else {
                        lo[k]
                    }
                });
            }
        }
        let views = views_for_coloring(frame, cfg);
        let view_refs: Vec<&CameraView> = views.iter().collect();
        for (p, c) in pts.iter().zip(colorize_views(&pts, &view_refs)) {
            if let Some(c) = c {
                prior.points.push(to_center.apply(p));
                prior.colors.push(c);
                prior.provenance.push(PointSource::Lidar);
            }
        }
    }

    if cfg.dome && !prior.points.is_empty() {
        let dome = generate_dome(&prior.points, cfg.n_dome, cfg.radius_factor)?;
        // dome lives in the center frame, which is the center frame's LiDAR frame
        let views = views_for_coloring(&frames[1], cfg);
        let view_refs: Vec<&CameraView> = views.iter().collect();
        let colors = colorize_views(&dome, &view_refs);
        for (p, c) in dome.into_iter().zip(colors) {
            prior.points.push(p);
            prior.colors.push(c.unwrap_or(cfg.dome_fallback_color));
            prior.provenance.push(PointSource::Dome);
        }
    }
    Ok(prior)
}

/// Initialisation-grade Gaussian scene from a prior: one isotropic splat per
/// point with the colour in the SH DC terms.
pub fn prior_to_scene(
    prior: &InitPrior,
    ego_pose: RigidTransform,
    place_id: i64,
    cfg: &PrepConfig,
) -> GaussianScene {
    let gaussians = prior
        .points
        .iter()
        .zip(&prior.colors)
        .map(|(p, c)| {
            let mut sh = [0.0f32; SH_DIM];
            for k in 0..3 {
                sh[k] = crate::scene_io::rgb_to_sh_dc(c[k]) as f32;
            }
            Gaussian {
                position: [p[0] as f32, p[1] as f32, p[2] as f32],
                scale: [cfg.init_scale as f32; 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                sh,
                opacity: cfg.init_opacity as f32,
            }
        })
        .collect();
    GaussianScene {
        gaussians,
        ego_pose,
        place_id,
        source: SceneSource::InitializationOnly,
    }
}
