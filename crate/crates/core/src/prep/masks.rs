use std::collections::BTreeSet;

use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Box3d, Camera};
use crate::scene_io::{RgbImage, SemanticMap};

/// H×W boolean grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// 8-bit grayscale PNG, 255 where set.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::Dimension("mask buffer size".into()))?;
        buf.save(path.as_ref())?;
        Ok(())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Mask> {
        let img = image::open(path.as_ref())?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Mask {
            width: w as usize,
            height: h as usize,
            data: img.into_raw().into_iter().map(|v| v >= 128).collect(),
        })
    }
}

/// Static mask (overlaid with the background colour) and dynamic mask
/// (excluded from the reconstruction loss). They may overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBundle {
    pub static_mask: Mask,
    pub dynamic_mask: Mask,
}

pub fn make_static_mask(semantic: &SemanticMap, static_classes: &BTreeSet<u16>) -> Mask {
    Mask {
        width: semantic.width,
        height: semantic.height,
        data: semantic
            .data
            .iter()
            .map(|c| static_classes.contains(c))
            .collect(),
    }
}

/// Marks pixels inside the 2D hull of each box's projected corners whose
/// semantic class equals the box class. Corners behind the camera are
/// ignored; a box with no corner in front contributes nothing.
pub fn make_dynamic_mask(boxes: &[Box3d], semantic: &SemanticMap, camera: &Camera) -> Mask {
    let mut mask = Mask::empty(semantic.width, semantic.height);
    for b in boxes {
        let projected: Vec<(f64, f64)> = b
            .corners()
            .iter()
            .filter_map(|c: &Vector3<f64>| camera.project(c))
            .map(|p| (p.u, p.v))
            .collect();
        if projected.is_empty() {
            continue;
        }
        let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (u, v) in projected {
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let clip = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
            let lo = lo.ceil().max(0.0);
            let hi = hi.floor().min(n as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let (Some((x0, x1)), Some((y0, y1))) =
            (clip(u0, u1, semantic.width), clip(v0, v1, semantic.height))
        else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if semantic.get(x, y) == b.class_id {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Copy of `image` with masked pixels replaced by `background`.
pub fn overlay_background(image: &RgbImage, mask: &Mask, background: f64) -> RgbImage {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            if mask.get(x, y) {
                for c in 0..image.channels {
                    out.set(x, y, c, background);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::classes::{BUILDING, CAR, SKY};

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Mask::empty(7, 5);
        m.set(3, 2, true);
        m.set(6, 4, true);
        let path = dir.path().join("m.png");
        m.write_png(&path).unwrap();
        assert_eq!(Mask::read_png(&path).unwrap(), m);
    }

    #[test]
    fn static_mask_membership() {
        let all_sky = SemanticMap::filled(8, 6, SKY);
        assert_eq!(make_static_mask(&all_sky, &[SKY].into()), Mask::full(8, 6));
        assert_eq!(make_static_mask(&all_sky, &BTreeSet::new()), Mask::empty(8, 6));

        let mut checker = SemanticMap::filled(9, 7, SKY);
        for y in 0..7 {
            for x in 0..9 {
                if (x + y) % 2 == 1 {
                    checker.set(x, y, BUILDING);
                }
            }
        }
        let m = make_static_mask(&checker, &[SKY].into());
        for y in 0..7 {
            for x in 0..9 {
                assert_eq!(m.get(x, y), checker.get(x, y) == SKY);
            }
        }
    }

    fn test_camera() -> Camera {
        // fx = 10, principal point (20, 15): u = 20 + 10·(-y)/x
        let mut cam = Camera::forward_looking(10.0, 10.0, 41, 31);
        cam.intrinsics[(0, 2)] = 20.0;
        cam.intrinsics[(1, 2)] = 15.0;
        cam
    }

    #[test]
    fn box_behind_camera_masks_nothing() {
        let sem = SemanticMap::filled(41, 31, CAR);
        let b = Box3d::new(Vector3::new(-10.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0), 0.0, CAR);
        assert_eq!(make_dynamic_mask(&[b], &sem, &test_camera()).count(), 0);
    }

    #[test]
    fn hull_covers_expected_columns() {
        // u = 20 - 10·y/x for a box face at depth x = 10
        let b = Box3d::new(
            Vector3::new(10.0, 0.5, 0.0),
            Vector3::new(1e-9, 1.0, 0.4),
            0.0,
            CAR,
        );
        // y ∈ {0, 1} → u ∈ {20, 19}
        let sem = SemanticMap::filled(41, 31, CAR);
        let m = make_dynamic_mask(&[b], &sem, &test_camera());
        let cols: BTreeSet<usize> = (0..31)
            .flat_map(|y| (0..41).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x, y))
            .map(|(x, _)| x)
            .collect();
        assert_eq!(cols, (19..=20).collect());

        // Hand-computed hull for a wider box: y ∈ [0, 10] at x = 10 → u ∈ [10, 20].
        let wide = Box3d::new(
            Vector3::new(10.0, 5.0, 0.0),
            Vector3::new(1e-9, 10.0, 0.4),
            0.0,
            CAR,
        );
        let m = make_dynamic_mask(&[wide], &sem, &test_camera());
        let cols: BTreeSet<usize> = (0..31)
            .flat_map(|y| (0..41).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x, y))
            .map(|(x, _)| x)
            .collect();
        assert_eq!(cols, (10..=20).collect());
        // rows: z ∈ [-0.2, 0.2] → v = 15 ∓ 0.2 → only row 15
        assert_eq!(m.count(), 11);
    }

    #[test]
    fn class_mismatch_masks_nothing() {
        let sem = SemanticMap::filled(41, 31, BUILDING);
        let b = Box3d::new(Vector3::new(10.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0), 0.0, CAR);
        assert_eq!(make_dynamic_mask(&[b], &sem, &test_camera()).count(), 0);
    }
}
