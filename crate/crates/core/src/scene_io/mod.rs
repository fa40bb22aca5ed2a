//! Gaussian scenes, dataset frames and their on-disk formats.

mod frames;
mod ply;
mod synthetic;

pub use frames::{
    read_boxes, read_calib, read_frame_manifest, read_lidar_bin, read_rgb_png, read_semantic_png,
    write_boxes, write_calib, write_frame_manifest, write_lidar_bin, write_rgb_png,
    write_semantic_png, CalibratedFrame, CameraView, FrameRecord, ManifestRow, RgbImage,
    SemanticMap,
};
pub use ply::{
    read_colored_points_ply, read_gaussian_ply, write_colored_points_ply, write_gaussian_ply,
    GAUSSIAN_PLY_PROPERTIES,
};
pub use synthetic::{generate_synthetic_scene, SyntheticSpec};
pub(crate) use synthetic::rgb_to_sh_dc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Number of scalars in one Gaussian: position 3, scale 3, rotation 4, SH 48, opacity 1.
pub const GAUSSIAN_DIM: usize = 59;
pub const SH_DIM: usize = 48;

/// Offsets of each attribute group inside the 59-vector.
pub mod layout {
    pub const POSITION: std::ops::Range<usize> = 0..3;
    pub const SCALE: std::ops::Range<usize> = 3..6;
    pub const ROTATION: std::ops::Range<usize> = 6..10;
    pub const SH: std::ops::Range<usize> = 10..58;
    pub const OPACITY: usize = 58;
}

/// One splat primitive in activated space.
///
/// `sh` follows the 3D-GS file order: the three DC terms (r, g, b) followed by
/// the 45 higher-order terms stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    /// Unit quaternion (w, x, y, z) with w ≥ 0.
    pub rotation: [f32; 4],
    pub sh: [f32; SH_DIM],
    pub opacity: f32,
}

impl Gaussian {
    pub fn to_features(&self) -> [f32; GAUSSIAN_DIM] {
        let mut out = [0.0f32; GAUSSIAN_DIM];
        out[layout::POSITION].copy_from_slice(&self.position);
        out[layout::SCALE].copy_from_slice(&self.scale);
        out[layout::ROTATION].copy_from_slice(&self.rotation);
        out[layout::SH].copy_from_slice(&self.sh);
        out[layout::OPACITY] = self.opacity;
        out
    }

    pub fn from_features(f: &[f32]) -> Self {
        let mut g = Gaussian {
            position: [0.0; 3],
            scale: [0.0; 3],
            rotation: [0.0; 4],
            sh: [0.0; SH_DIM],
            opacity: f[layout::OPACITY],
        };
        g.position.copy_from_slice(&f[layout::POSITION]);
        g.scale.copy_from_slice(&f[layout::SCALE]);
        g.rotation.copy_from_slice(&f[layout::ROTATION]);
        g.sh.copy_from_slice(&f[layout::SH]);
        g
    }

    /// Checks every per-Gaussian invariant.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = self.to_features();
        if all.iter().any(|v| !v.is_finite()) {
            return Err("non-finite attribute".into());
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err("scale must be strictly positive".into());
        }
        let norm = self
            .rotation
            .iter()
            .map(|&q| (q as f64) * (q as f64))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {norm} is not 1"));
        }
        if self.rotation[0] < 0.0 {
            return Err("quaternion w must be non-negative".into());
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(format!("opacity {} outside (0,1)", self.opacity));
        }
        Ok(())
    }
}

/// Normalises a quaternion and flips it to the w ≥ 0 hemisphere.
pub fn canonical_quaternion(q: [f64; 4]) -> Option<[f32; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    Some(q.map(|v| (sign * v / norm) as f32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    ExternalOptimized,
    InitializationOnly,
    Synthetic,
}

/// Gaussians expressed in the ego frame of the center observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub ego_pose: RigidTransform,
    pub place_id: i64,
    pub source: SceneSource,
}

impl GaussianScene {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate().map_err(|message| Error::Data { index: i, message })?;
        }
        Ok(())
    }
}
