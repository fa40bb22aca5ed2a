//! Minimal PLY support for the two layouts this crate exchanges: 3D-GS
//! Gaussian clouds and coloured point clouds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{canonical_quaternion, Gaussian, GaussianScene, SceneSource, SH_DIM};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Property order of the community 3D-GS export.
pub const GAUSSIAN_PLY_PROPERTIES: [&str; 62] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "f_rest_0", "f_rest_1",
    "f_rest_2", "f_rest_3", "f_rest_4", "f_rest_5", "f_rest_6", "f_rest_7", "f_rest_8",
    "f_rest_9", "f_rest_10", "f_rest_11", "f_rest_12", "f_rest_13", "f_rest_14", "f_rest_15",
    "f_rest_16", "f_rest_17", "f_rest_18", "f_rest_19", "f_rest_20", "f_rest_21", "f_rest_22",
    "f_rest_23", "f_rest_24", "f_rest_25", "f_rest_26", "f_rest_27", "f_rest_28", "f_rest_29",
    "f_rest_30", "f_rest_31", "f_rest_32", "f_rest_33", "f_rest_34", "f_rest_35", "f_rest_36",
    "f_rest_37", "f_rest_38", "f_rest_39", "f_rest_40", "f_rest_41", "f_rest_42", "f_rest_43",
    "f_rest_44", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug)]
struct ElementHeader {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    elements: Vec<ElementHeader>,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::Format(format!("reading PLY header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<ElementHeader> = Vec::new();
    loop {
        let l = next_line(reader)?;
        let mut tok = l.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    Some("ascii") => Encoding::Ascii,
                    other => {
                        return Err(Error::Format(format!(
                            "unsupported PLY format {other:?}"
                        )))
                    }
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::Format("element without name".into()))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::Format(format!("element {name} without count")))?;
                elements.push(ElementHeader {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let ty = tok
                    .next()
                    .ok_or_else(|| Error::Format("property without type".into()))?;
                if ty == "list" {
                    return Err(Error::Format("list properties are not supported".into()));
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type {ty}")))?;
                let name = tok
                    .next()
                    .ok_or_else(|| Error::Format("property without name".into()))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?
                    .properties
                    .push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(Error::Format(format!("unexpected header keyword {other}")))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| Error::Format("missing format line".into()))?;
    Ok(Header { encoding, elements })
}

/// Rows of the `vertex` element as f64, in file property order.
struct VertexTable {
    names: Vec<String>,
    rows: Vec<f64>,
    count: usize,
}

impl VertexTable {
    fn column(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("missing vertex property '{name}'")))
    }

    fn row(&self, i: usize) -> &[f64] {
        let w = self.names.len();
        &self.rows[i * w..(i + 1) * w]
    }
}

fn read_vertex_table(path: &Path) -> Result<VertexTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = parse_header(&mut reader)?;

    let mut vertex = None;
    let mut skip_bytes = 0usize;
    let mut skip_lines = 0usize;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        skip_bytes += el.count * el.properties.iter().map(|(_, s)| s.size()).sum::<usize>();
        skip_lines += el.count;
    }
    let vertex = vertex.ok_or_else(|| Error::Format("no 'vertex' element".into()))?;
    let width = vertex.properties.len();
    let mut rows = Vec::with_capacity(vertex.count * width);

    match header.encoding {
        Encoding::BinaryLittleEndian => {
            let mut skip = vec![0u8; skip_bytes];
            reader
                .read_exact(&mut skip)
                .map_err(|e| Error::Format(format!("truncated PLY body: {e}")))?;
            let stride: usize = vertex.properties.iter().map(|(_, s)| s.size()).sum();
            let mut buf = vec![0u8; stride];
            for _ in 0..vertex.count {
                reader
                    .read_exact(&mut buf)
                    .map_err(|e| Error::Format(format!("truncated PLY body: {e}")))?;
                let mut off = 0;
                for (_, s) in &vertex.properties {
                    rows.push(s.read_le(&buf[off..]));
                    off += s.size();
                }
            }
        }
        Encoding::Ascii => {
            let mut lines = reader.lines().skip(skip_lines);
            for i in 0..vertex.count {
                let l = lines
                    .next()
                    .ok_or_else(|| Error::Format("truncated PLY body".into()))?
                    .map_err(|e| Error::Format(format!("reading PLY body: {e}")))?;
                let before = rows.len();
                for tok in l.split_whitespace() {
                    rows.push(tok.parse::<f64>().map_err(|_| Error::Data {
                        index: i,
                        message: format!("unparsable value '{tok}'"),
                    })?);
                }
                if rows.len() - before != width {
                    return Err(Error::Data {
                        index: i,
                        message: format!("expected {width} values"),
                    });
                }
            }
        }
    }
    Ok(VertexTable {
        names: vertex.properties.iter().map(|(n, _)| n.clone()).collect(),
        rows,
        count: vertex.count,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reads a 3D-GS PLY file and returns the scene in activated space
/// (`exp` on scale, sigmoid on opacity, canonical unit quaternion).
///
/// The returned scene carries an identity pose and `place_id` 0; callers that
/// track those attach them afterwards.
pub fn read_gaussian_ply(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let table = read_vertex_table(path.as_ref())?;
    let cols = GAUSSIAN_PLY_PROPERTIES
        .iter()
        .map(|name| table.column(name))
        .collect::<Result<Vec<_>>>()?;

    let mut gaussians = Vec::with_capacity(table.count);
    for i in 0..table.count {
        let row = table.row(i);
        let raw: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
        if let Some(k) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                index: i,
                message: format!("non-finite value in '{}'", GAUSSIAN_PLY_PROPERTIES[k]),
            });
        }
        // raw order: x y z nx ny nz f_dc(3) f_rest(45) opacity scale(3) rot(4)
        let mut sh = [0.0f32; SH_DIM];
        for (k, v) in sh.iter_mut().enumerate() {
            *v = raw[6 + k] as f32;
        }
        let scale = [raw[55], raw[56], raw[57]].map(|s| s.exp() as f32);
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Data {
                index: i,
                message: "activated scale underflows or overflows f32".into(),
            });
        }
        let opacity = sigmoid(raw[54]) as f32;
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::Data {
                index: i,
                message: "activated opacity saturates at 0 or 1".into(),
            });
        }
        let rotation = canonical_quaternion([raw[58], raw[59], raw[60], raw[61]]).ok_or(
            Error::Data {
                index: i,
                message: "zero quaternion".into(),
            },
        )?;
        gaussians.push(Gaussian {
            position: [raw[0] as f32, raw[1] as f32, raw[2] as f32],
            scale,
            rotation,
            sh,
            opacity,
        });
    }
    Ok(GaussianScene {
        gaussians,
        ego_pose: RigidTransform::identity(),
        place_id: 0,
        source: SceneSource::ExternalOptimized,
    })
}

/// Writes a scene in the 62-property binary little-endian 3D-GS layout with
/// inverse activations (log scale, logit opacity). Normals are written as 0.
pub fn write_gaussian_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.opacity <= 0.0 || g.opacity >= 1.0 {
            return Err(Error::Data {
                index: i,
                message: format!("opacity {} has no finite logit", g.opacity),
            });
        }
        g.validate()
            .map_err(|message| Error::Data { index: i, message })?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.gaussians.len()));
    for name in GAUSSIAN_PLY_PROPERTIES {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    let io = |e| Error::io(path, e);
    w.write_all(header.as_bytes()).map_err(io)?;

    let mut record = Vec::with_capacity(62 * 4);
    for g in &scene.gaussians {
        record.clear();
        let mut put = |v: f32| record.extend_from_slice(&v.to_le_bytes());
        g.position.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        g.sh.iter().for_each(|&v| put(v));
        let a = g.opacity as f64;
        put((a / (1.0 - a)).ln() as f32);
        g.scale.iter().for_each(|&s| put((s as f64).ln() as f32));
        g.rotation.iter().for_each(|&q| put(q));
        w.write_all(&record).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `x y z` (float) and `red green blue` (uchar) per point; colours are
/// in [0,1] and quantised to 8 bits.
pub fn write_colored_points_ply(
    points: &[Vector3<f64>],
    colors: &[[f64; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if points.len() != colors.len() {
        return Err(Error::Dimension(format!(
            "{} points but {} colors",
            points.len(),
            colors.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    w.write_all(header.as_bytes()).map_err(io)?;
    for (p, c) in points.iter().zip(colors) {
        for v in p.iter() {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
        let rgb = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        w.write_all(&rgb).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a coloured point cloud; colours are returned in [0,1].
pub fn read_colored_points_ply(
    path: impl AsRef<Path>,
) -> Result<(Vec<Vector3<f64>>, Vec<[f64; 3]>)> {
    let table = read_vertex_table(path.as_ref())?;
    let cols = ["x", "y", "z", "red", "green", "blue"]
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(table.count);
    let mut colors = Vec::with_capacity(table.count);
    for i in 0..table.count {
        let r = table.row(i);
        points.push(Vector3::new(r[cols[0]], r[cols[1]], r[cols[2]]));
        colors.push([r[cols[3]] / 255.0, r[cols[4]] / 255.0, r[cols[5]] / 255.0]);
    }
    Ok((points, colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::{generate_synthetic_scene, SyntheticSpec, GAUSSIAN_DIM};

    fn unit_gaussian() -> Gaussian {
        Gaussian {
            position: [1.0, 2.0, 3.0],
            scale: [1.0, 1.0, 1.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            sh: [0.0; SH_DIM],
            opacity: 0.5,
        }
    }

    fn scene_of(gaussians: Vec<Gaussian>) -> GaussianScene {
        GaussianScene {
            gaussians,
            ego_pose: RigidTransform::identity(),
            place_id: 0,
            source: SceneSource::Synthetic,
        }
    }

    fn write_raw_ply(path: &Path, names: &[&str], rows: &[Vec<f32>]) {
        let mut bytes = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
            rows.len()
        )
        .into_bytes();
        for n in names {
            bytes.extend_from_slice(format!("property float {n}\n").as_bytes());
        }
        bytes.extend_from_slice(b"end_header\n");
        for r in rows {
            for v in r {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn activation_of_zero_raw_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        let mut row = vec![0.0f32; 62];
        row[58] = 1.0; // rot_0
        write_raw_ply(&path, &GAUSSIAN_PLY_PROPERTIES, &[row]);
        let scene = read_gaussian_ply(&path).unwrap();
        let g = &scene.gaussians[0];
        assert_eq!(g.scale, [1.0, 1.0, 1.0]);
        assert_eq!(g.opacity, 0.5);
    }

    #[test]
    fn quaternion_is_normalised_and_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        let mut row = vec![0.0f32; 62];
        row[58..62].copy_from_slice(&[-2.0, 0.0, 0.0, 0.0]);
        write_raw_ply(&path, &GAUSSIAN_PLY_PROPERTIES, &[row]);
        let g = &read_gaussian_ply(&path).unwrap().gaussians[0];
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_property_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        let names: Vec<&str> = GAUSSIAN_PLY_PROPERTIES
            .iter()
            .copied()
            .filter(|n| *n != "opacity")
            .collect();
        write_raw_ply(&path, &names, &[vec![0.0; 61]]);
        let err = read_gaussian_ply(&path).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("'opacity'")), "{err}");
    }

    #[test]
    fn nan_field_reports_record_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        let mut good = vec![0.0f32; 62];
        good[58] = 1.0;
        let mut bad = good.clone();
        bad[7] = f32::NAN;
        write_raw_ply(&path, &GAUSSIAN_PLY_PROPERTIES, &[good.clone(), good, bad]);
        match read_gaussian_ply(&path).unwrap_err() {
            Error::Data { index, .. } => assert_eq!(index, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn write_single_gaussian_header_and_raw_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        write_gaussian_ply(&scene_of(vec![unit_gaussian()]), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 1\n"));
        let body = &bytes[text.find("end_header\n").unwrap() + 11..];
        assert_eq!(body.len(), 62 * 4);
        let field = |k: usize| f32::from_le_bytes(body[k * 4..k * 4 + 4].try_into().unwrap());
        assert_eq!(field(55), 0.0);
        assert_eq!(field(56), 0.0);
        assert_eq!(field(57), 0.0);
        assert_eq!(field(54), 0.0);
    }

    #[test]
    fn saturated_opacity_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for a in [0.0f32, 1.0] {
            let mut g = unit_gaussian();
            g.opacity = a;
            let err = write_gaussian_ply(&scene_of(vec![g]), dir.path().join("x.ply"));
            assert!(err.is_err());
        }
    }

    #[test]
    fn round_trip_preserves_activated_attributes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.ply");
        let spec = SyntheticSpec {
            count: 300,
            ..SyntheticSpec::default()
        };
        let scene = generate_synthetic_scene(11, &spec);
        write_gaussian_ply(&scene, &path).unwrap();
        let back = read_gaussian_ply(&path).unwrap();
        assert_eq!(back.len(), scene.len());
        for (a, b) in scene.gaussians.iter().zip(&back.gaussians) {
            let (fa, fb) = (a.to_features(), b.to_features());
            for k in 0..GAUSSIAN_DIM {
                let (x, y) = (fa[k] as f64, fb[k] as f64);
                assert!(
                    (x - y).abs() <= 1e-6 * x.abs().max(1.0),
                    "attribute {k}: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn ascii_ply_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let mut text = String::from("ply\nformat ascii 1.0\nelement vertex 1\n");
        for n in GAUSSIAN_PLY_PROPERTIES {
            text.push_str(&format!("property float {n}\n"));
        }
        text.push_str("end_header\n");
        let mut vals = vec!["0"; 62];
        vals[58] = "1";
        text.push_str(&vals.join(" "));
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_gaussian_ply(&path).unwrap().len(), 1);
    }

    #[test]
    fn colored_points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let pts = vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-4.0, 0.5, 0.25)];
        let cols = vec![[0.0, 0.5, 1.0], [1.0, 1.0, 0.0]];
        write_colored_points_ply(&pts, &cols, &path).unwrap();
        let (p2, c2) = read_colored_points_ply(&path).unwrap();
        assert_eq!(p2, pts);
        for (a, b) in cols.iter().zip(&c2) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
