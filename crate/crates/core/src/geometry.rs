//! Rigid transforms, pinhole cameras and oriented 3D boxes.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation + translation, meters. Maps points from the local frame into the
/// parent frame: `p_parent = rotation * p_local + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Planar pose: yaw about +z then translation.
    pub fn from_xy_yaw(x: f64, y: f64, yaw: f64) -> Self {
        let rotation = *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix();
        Self::new(rotation, Vector3::new(x, y, 0.0))
    }

    /// Parses 12 row-major floats `[r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2]`.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::Format(format!(
                "pose needs 12 values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("pose contains non-finite values".into()));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Ok(Self::new(rotation, translation))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.apply(&p.coords))
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Inverse transform. Fails when the rotation block is singular or far
    /// from orthonormal.
    pub fn inverse(&self) -> Result<RigidTransform> {
        let det = self.rotation.determinant();
        if !det.is_finite() || det.abs() < 1e-9 {
            return Err(Error::Input(format!(
                "pose is not invertible (det = {det:e})"
            )));
        }
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if orth > 1e-6 {
            return Err(Error::Input(format!(
                "pose rotation is not orthonormal (|RᵀR - I| = {orth:e})"
            )));
        }
        let rt = self.rotation.transpose();
        Ok(RigidTransform::new(rt, -(rt * self.translation)))
    }

    pub fn planar_distance(&self, other: &RigidTransform) -> f64 {
        let dx = self.translation[0] - other.translation[0];
        let dy = self.translation[1] - other.translation[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Pinhole camera with LiDAR→camera extrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

/// A point projected onto the image plane; pixel centers sit on integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Simple camera looking down +x of the LiDAR frame (x forward, y left,
    /// z up) with camera axes x right, y down, z forward.
    pub fn forward_looking(fx: f64, fy: f64, width: usize, height: usize) -> Self {
        let intrinsics = Matrix3::new(
            fx,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            fy,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        let rotation = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Self {
            intrinsics,
            rotation,
            translation: Vector3::zeros(),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Input("intrinsics need positive focal terms".into()));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Input("intrinsics bottom row must be [0 0 1]".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Input("camera image has zero size".into()));
        }
        Ok(())
    }

    pub fn to_camera_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a LiDAR-frame point. Returns `None` when the point is not in
    /// front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Projection> {
        let pc = self.to_camera_frame(p);
        if pc[2] <= 0.0 {
            return None;
        }
        let h = self.intrinsics * pc;
        Some(Projection {
            u: h[0] / h[2],
            v: h[1] / h[2],
            depth: pc[2],
        })
    }

    pub fn in_image(&self, proj: &Projection) -> bool {
        proj.u >= 0.0
            && proj.u < self.width as f64
            && proj.v >= 0.0
            && proj.v < self.height as f64
    }
}

/// Yaw-rotated box: `size` holds full extents along the box's local x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3d {
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub class_id: u16,
}

impl Box3d {
    pub fn new(center: Vector3<f64>, size: Vector3<f64>, yaw: f64, class_id: u16) -> Self {
        Self {
            center,
            size,
            yaw,
            class_id,
        }
    }

    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2])
    }

    /// Inclusive containment test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= self.size[i] / 2.0)
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        let h = self.size / 2.0;
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let lx = if i & 1 == 0 { -h[0] } else { h[0] };
            let ly = if i & 2 == 0 { -h[1] } else { h[1] };
            let lz = if i & 4 == 0 { -h[2] } else { h[2] };
            *corner = self.center + Vector3::new(c * lx - s * ly, s * lx + c * ly, lz);
        }
        out
    }

    /// Same box expressed in another frame; only the yaw part of the
    /// rotation is kept.
    pub fn transformed(&self, tf: &RigidTransform) -> Box3d {
        let center = tf.apply(&self.center);
        let heading = tf.rotation * Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0);
        Box3d::new(center, self.size, heading[1].atan2(heading[0]), self.class_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn row_major_round_trip() {
        let tf = RigidTransform::from_xy_yaw(3.0, -2.0, 0.7);
        let back = RigidTransform::from_row_major(&tf.to_row_major()).unwrap();
        assert_eq!(tf, back);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let tf = RigidTransform::from_xy_yaw(1.0, 2.0, 1.1);
        let id = tf.compose(&tf.inverse().unwrap());
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn singular_pose_is_rejected() {
        let tf = RigidTransform::new(Matrix3::zeros(), Vector3::zeros());
        assert!(tf.inverse().is_err());
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = Camera::forward_looking(100.0, 100.0, 64, 48);
        let p = cam.project(&Vector3::new(5.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(p.u, 31.5);
        assert_relative_eq!(p.v, 23.5);
        assert_relative_eq!(p.depth, 5.0);
        assert!(cam.project(&Vector3::new(-1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn box_corners_are_inside() {
        let b = Box3d::new(Vector3::new(1.0, 2.0, 0.5), Vector3::new(4.0, 2.0, 1.5), 0.4, 13);
        for c in b.corners() {
            // inclusive boundary up to rounding
            let shrunk = b.center + (c - b.center) * (1.0 - 1e-9);
            assert!(b.contains(&shrunk));
        }
        assert!(b.contains(&b.center));
        assert!(!b.contains(&Vector3::new(10.0, 0.0, 0.0)));
    }
}
