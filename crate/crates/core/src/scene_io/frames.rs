//! Calibrated dataset frames and the directory-manifest format.
//!
//! A manifest is UTF-8 text with one camera view per line and tab-separated
//! fields:
//!
//! ```text
//! frame_id  image.png  semantic.png  calib.txt  lidar.bin  boxes.txt  r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
//! ```
//!
//! Lines sharing a `frame_id` are the camera views of one frame and must agree
//! on the LiDAR scan, boxes and pose. Relative paths resolve against the
//! manifest's directory. Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Box3d, Camera, RigidTransform};

/// Row-major H×W×C image with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Per-pixel class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl SemanticMap {
    pub fn filled(width: usize, height: usize, class: u16) -> Self {
        Self {
            width,
            height,
            data: vec![class; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: u16) {
        self.data[y * self.width + x] = class;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub image: RgbImage,
    pub semantic: SemanticMap,
    pub camera: Camera,
}

impl CameraView {
    pub fn new(image: RgbImage, semantic: SemanticMap, camera: Camera) -> Result<Self> {
        if image.width != semantic.width || image.height != semantic.height {
            return Err(Error::Dimension(format!(
                "image {}x{} vs semantic map {}x{}",
                image.width, image.height, semantic.width, semantic.height
            )));
        }
        if camera.width != image.width || camera.height != image.height {
            return Err(Error::Dimension("camera size differs from image size".into()));
        }
        camera.validate()?;
        Ok(Self {
            image,
            semantic,
            camera,
        })
    }
}

/// One timestamp: camera views, the LiDAR scan (LiDAR frame), 3D boxes
/// (LiDAR frame) and the LiDAR-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedFrame {
    pub views: Vec<CameraView>,
    pub lidar: Vec<Vector3<f64>>,
    pub boxes: Vec<Box3d>,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub frame_id: usize,
    pub image: PathBuf,
    pub semantic: PathBuf,
    pub calib: PathBuf,
    pub lidar: PathBuf,
    pub boxes: PathBuf,
    pub pose: RigidTransform,
}

/// Manifest rows grouped by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub views: Vec<(PathBuf, PathBuf, PathBuf)>,
    pub lidar: PathBuf,
    pub boxes: PathBuf,
    pub pose: RigidTransform,
}

impl FrameRecord {
    pub fn load(&self) -> Result<CalibratedFrame> {
        let views = self
            .views
            .iter()
            .map(|(img, sem, calib)| {
                let image = read_rgb_png(img)?;
                let semantic = read_semantic_png(sem)?;
                let camera = read_calib(calib, image.width, image.height)?;
                CameraView::new(image, semantic, camera)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CalibratedFrame {
            views,
            lidar: read_lidar_bin(&self.lidar)?,
            boxes: read_boxes(&self.boxes)?,
            pose: self.pose,
        })
    }

    pub fn paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.lidar, &self.boxes];
        for (a, b, c) in &self.views {
            out.extend([a.as_path(), b.as_path(), c.as_path()]);
        }
        out
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}: '{tok}' is not a number")))
}

pub fn read_frame_manifest(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| {
        let p = Path::new(p.trim());
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    let mut frames: Vec<FrameRecord> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 18 {
            return Err(Error::Format(format!(
                "line {lineno}: expected 18 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let frame_id = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("line {lineno}: bad frame id '{}'", fields[0])))?;
        let pose_vals = fields[6..18]
            .iter()
            .map(|t| parse_f64(t, lineno))
            .collect::<Result<Vec<_>>>()?;
        let row = ManifestRow {
            frame_id,
            image: resolve(fields[1]),
            semantic: resolve(fields[2]),
            calib: resolve(fields[3]),
            lidar: resolve(fields[4]),
            boxes: resolve(fields[5]),
            pose: RigidTransform::from_row_major(&pose_vals)?,
        };
        match frames.iter_mut().find(|f| f.frame_id == frame_id) {
            Some(f) => {
                if f.lidar != row.lidar || f.boxes != row.boxes || f.pose != row.pose {
                    return Err(Error::Format(format!(
                        "line {lineno}: views of frame {frame_id} disagree on lidar, boxes or pose"
                    )));
                }
                f.views.push((row.image, row.semantic, row.calib));
            }
            None => frames.push(FrameRecord {
                frame_id,
                views: vec![(row.image, row.semantic, row.calib)],
                lidar: row.lidar,
                boxes: row.boxes,
                pose: row.pose,
            }),
        }
    }
    Ok(frames)
}

pub fn write_frame_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in rows {
        let mut fields = vec![
            r.frame_id.to_string(),
            r.image.display().to_string(),
            r.semantic.display().to_string(),
            r.calib.display().to_string(),
            r.lidar.display().to_string(),
            r.boxes.display().to_string(),
        ];
        fields.extend(r.pose.to_row_major().iter().map(|v| format!("{v:?}")));
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `K`, `R` and `t` lines (9, 9 and 3 row-major floats).
pub fn read_calib(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Camera> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut k = None;
    let mut r = None;
    let mut t = None;
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else { continue };
        let vals = tok
            .map(|v| parse_f64(v, lineno + 1))
            .collect::<Result<Vec<_>>>()?;
        match (key, vals.len()) {
            ("K", 9) => k = Some(Matrix3::from_row_slice(&vals)),
            ("R", 9) => r = Some(Matrix3::from_row_slice(&vals)),
            ("t", 3) => t = Some(Vector3::from_row_slice(&vals)),
            _ => {
                return Err(Error::Format(format!(
                    "{}: unexpected calibration line '{line}'",
                    path.display()
                )))
            }
        }
    }
    let missing = |name: &str| Error::Format(format!("{}: missing {name}", path.display()));
    Camera::new(
        k.ok_or_else(|| missing("K"))?,
        r.ok_or_else(|| missing("R"))?,
        t.ok_or_else(|| missing("t"))?,
        width,
        height,
    )
}

pub fn write_calib(path: impl AsRef<Path>, camera: &Camera) -> Result<()> {
    let path = path.as_ref();
    let row = |m: &Matrix3<f64>| {
        (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| format!("{:?}", m[(i, j)]))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let t = &camera.translation;
    let text = format!(
        "K {}\nR {}\nt {:?} {:?} {:?}\n",
        row(&camera.intrinsics),
        row(&camera.rotation),
        t[0],
        t[1],
        t[2]
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// KITTI-style scan: little-endian f32 quadruples `x y z intensity`.
pub fn read_lidar_bin(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "{}: size {} is not a multiple of 16",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
            Vector3::new(f(0), f(1), f(2))
        })
        .collect())
}

pub fn write_lidar_bin(path: impl AsRef<Path>, points: &[Vector3<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p[0], p[1], p[2], 0.0] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One box per line: `cx cy cz sx sy sz yaw class_id`.
pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<Box3d>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let v = line
            .split_whitespace()
            .map(|t| parse_f64(t, lineno + 1))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 8 {
            return Err(Error::Format(format!(
                "{}:{}: a box needs 8 values",
                path.display(),
                lineno + 1
            )));
        }
        let size = Vector3::new(v[3], v[4], v[5]);
        if size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Data {
                index: out.len(),
                message: "box sizes must be positive".into(),
            });
        }
        out.push(Box3d::new(Vector3::new(v[0], v[1], v[2]), size, v[6], v[7] as u16));
    }
    Ok(out)
}

pub fn write_boxes(path: impl AsRef<Path>, boxes: &[Box3d]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for b in boxes {
        writeln!(
            f,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {}",
            b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2], b.yaw, b.class_id
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        channels: 3,
        data: img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    })
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Dimension("PNG export needs 3 channels".into()));
    }
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
            .ok_or_else(|| Error::Dimension("image buffer size".into()))?;
    buf.save(path.as_ref())?;
    Ok(())
}

pub fn read_semantic_png(path: impl AsRef<Path>) -> Result<SemanticMap> {
    let img = image::open(path.as_ref())?.to_luma16();
    let (w, h) = img.dimensions();
    Ok(SemanticMap {
        width: w as usize,
        height: h as usize,
        data: img.into_raw(),
    })
}

pub fn write_semantic_png(path: impl AsRef<Path>, map: &SemanticMap) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, map.data.clone())
            .ok_or_else(|| Error::Dimension("semantic buffer size".into()))?;
    buf.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_groups_views_by_frame() {
        let dir = tempfile::tempdir().unwrap();
        let pose = RigidTransform::from_xy_yaw(1.0, 2.0, 0.3);
        let row = |id: usize, img: &str| ManifestRow {
            frame_id: id,
            image: img.into(),
            semantic: "s.png".into(),
            calib: "c.txt".into(),
            lidar: format!("l{id}.bin").into(),
            boxes: "b.txt".into(),
            pose,
        };
        let path = dir.path().join("manifest.tsv");
        write_frame_manifest(&path, &[row(0, "a.png"), row(0, "b.png"), row(1, "c.png")]).unwrap();
        let frames = read_frame_manifest(&path).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].views.len(), 2);
        assert_eq!(frames[0].pose, pose);
        assert_eq!(frames[1].lidar, dir.path().join("l1.bin"));
    }

    #[test]
    fn manifest_rejects_short_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "0\ta.png\tb.png\n").unwrap();
        assert!(matches!(read_frame_manifest(&path), Err(Error::Format(_))));
    }

    #[test]
    fn file_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cam = Camera::forward_looking(50.0, 60.0, 32, 24);
        write_calib(dir.path().join("c.txt"), &cam).unwrap();
        assert_eq!(read_calib(dir.path().join("c.txt"), 32, 24).unwrap(), cam);

        let pts = vec![Vector3::new(1.5, -2.0, 0.25), Vector3::new(10.0, 0.0, -1.0)];
        write_lidar_bin(dir.path().join("l.bin"), &pts).unwrap();
        assert_eq!(read_lidar_bin(dir.path().join("l.bin")).unwrap(), pts);

        let boxes = vec![Box3d::new(Vector3::new(5.0, 1.0, 0.0), Vector3::new(4.0, 2.0, 1.5), 0.25, 13)];
        write_boxes(dir.path().join("b.txt"), &boxes).unwrap();
        assert_eq!(read_boxes(dir.path().join("b.txt")).unwrap(), boxes);

        let mut sem = SemanticMap::filled(5, 4, 2);
        sem.set(1, 1, 1000);
        write_semantic_png(dir.path().join("s.png"), &sem).unwrap();
        assert_eq!(read_semantic_png(dir.path().join("s.png")).unwrap(), sem);

        let mut img = RgbImage::new(5, 4, 3);
        img.set(2, 3, 1, 1.0);
        write_rgb_png(dir.path().join("i.png"), &img).unwrap();
        assert_eq!(read_rgb_png(dir.path().join("i.png")).unwrap(), img);
    }
}
