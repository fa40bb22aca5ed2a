//! Synthetic datasets for trying the pipeline without real recordings:
//! Gaussian-scene traversals (for train/eval) and calibrated frame sequences
//! with LiDAR, camera views, semantic maps and boxes (for prep).

use std::path::{Path, PathBuf};

use anyhow::Result;
use gspr_core::geometry::{Box3d, Camera, RigidTransform};
use gspr_core::prep::classes;
use gspr_core::scene_io::{
    generate_synthetic_scene, write_boxes, write_calib, write_frame_manifest, write_gaussian_ply, write_lidar_bin,
    write_rgb_png, write_semantic_png, ManifestRow, RgbImage, SemanticMap, SyntheticSpec,
};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::index::SceneEntry;
use crate::run::RunDir;

pub struct SceneSpec {
    pub places: usize,
    pub traversals: u32,
    pub count: usize,
    pub seed: u64,
}

/// Writes `scenes/t{t}_p{p}.ply` for every traversal and place, and returns
/// the index entries (paths relative to the run root).
pub fn write_scenes(run: &mut RunDir, spec: &SceneSpec) -> Result<Vec<SceneEntry>> {
    let mut entries = Vec::new();
    for t in 0..spec.traversals {
        for p in 0..spec.places {
            let scene = generate_synthetic_scene(
                spec.seed.wrapping_add(t as u64),
                &SyntheticSpec {
                    count: spec.count,
                    place_id: p as i64,
                    template_seed: spec.seed ^ 0x5eed,
                    ..Default::default()
                },
            );
            let name = format!("scenes/t{t}_p{p:03}.ply");
            write_gaussian_ply(&scene, run.prepare(&name)?)?;
            run.record(&name)?;
            entries.push(SceneEntry {
                path: run.path(&name),
                place_id: p as i64,
                traversal: t,
                pose: scene.ego_pose,
            });
        }
    }
    Ok(entries)
}

pub struct FrameSpec {
    pub frames: usize,
    pub traversals: u32,
    pub spacing: f64,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            frames: 5,
            traversals: 2,
            spacing: 4.0,
            width: 64,
            height: 48,
            seed: 0,
        }
    }
}

struct Structure {
    center: Vector3<f64>,
    half: Vector3<f64>,
    color: [f64; 3],
    class: u16,
}

const SENSOR_HEIGHT: f64 = 1.8;
const LIDAR_RANGE: f64 = 35.0;

fn structures(spec: &FrameSpec) -> Vec<Structure> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x57c7);
    let length = spec.frames as f64 * spec.spacing;
    let n = ((length + 60.0) / 3.0) as usize;
    (0..n)
        .map(|_| {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let half = Vector3::new(rng.gen_range(1.0..4.0), rng.gen_range(1.0..3.0), rng.gen_range(1.0..5.0));
            Structure {
                center: Vector3::new(rng.gen_range(-30.0..length + 30.0), side * rng.gen_range(7.0..18.0), half.z),
                half,
                color: [rng.gen(), rng.gen(), rng.gen()],
                class: if rng.gen_bool(0.7) { classes::BUILDING } else { classes::VEGETATION },
            }
        })
        .collect()
}

fn on_surface(rng: &mut ChaCha8Rng, center: &Vector3<f64>, half: &Vector3<f64>) -> Vector3<f64> {
    let mut p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let axis = rng.gen_range(0..3);
    p[axis] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    center + p.component_mul(half)
}

/// Camera mounted at the sensor origin looking along `yaw`.
fn view_camera(spec: &FrameSpec, yaw: f64) -> Camera {
    let mut cam = Camera::forward_looking(spec.width as f64 * 0.4, spec.width as f64 * 0.4, spec.width, spec.height);
    let turn: Matrix3<f64> = *Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw).matrix();
    cam.rotation *= turn;
    cam
}

struct Point {
    p: Vector3<f64>,
    color: [f64; 3],
    class: u16,
}

/// Depth-sorted 3×3 splats over a sky/road backdrop.
fn render(cam: &Camera, points: &[Point]) -> (RgbImage, SemanticMap) {
    let (w, h) = (cam.width, cam.height);
    let mut img = RgbImage::new(w, h, 3);
    let mut sem = SemanticMap::filled(w, h, classes::SKY);
    for y in 0..h {
        let (c, class) = if y < h / 2 { ([0.55, 0.7, 0.95], classes::SKY) } else { ([0.35, 0.35, 0.37], classes::ROAD) };
        for x in 0..w {
            for k in 0..3 {
                img.set(x, y, k, c[k]);
            }
            sem.set(x, y, class);
        }
    }
    let mut visible: Vec<(f64, usize, usize, &Point)> = points
        .iter()
        .filter_map(|pt| {
            let pr = cam.project(&pt.p)?;
            cam.in_image(&pr).then(|| (pr.depth, pr.u.round() as usize, pr.v.round() as usize, pt))
        })
        .collect();
    visible.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, u, v, pt) in visible {
        for y in v.saturating_sub(1)..(v + 2).min(h) {
            for x in u.saturating_sub(1)..(u + 2).min(w) {
                for k in 0..3 {
                    img.set(x, y, k, pt.color[k]);
                }
                sem.set(x, y, pt.class);
            }
        }
    }
    (img, sem)
}

/// Writes `frames/t{t}/…` and one manifest per traversal; returns the
/// manifest paths in traversal order.
pub fn write_frames(run: &mut RunDir, spec: &FrameSpec) -> Result<Vec<PathBuf>> {
    let world = structures(spec);
    let mut manifests = Vec::new();
    for t in 0..spec.traversals {
        let mut trng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1 + t as u64));
        let light: [f64; 3] = [0, 1, 2].map(|_| trng.gen_range(-0.1..0.1));
        let mut rows = Vec::new();
        for i in 0..spec.frames {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((t as u64) << 32) ^ i as u64);
            let mut pose = RigidTransform::from_xy_yaw(
                i as f64 * spec.spacing + rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.03..0.03),
            );
            pose.translation.z = SENSOR_HEIGHT;
            let to_sensor = pose.inverse()?;
            let mut world_pts: Vec<Point> = Vec::new();
            for s in &world {
                let planar = (s.center.xy() - pose.translation.xy()).norm();
                if planar > LIDAR_RANGE {
                    continue;
                }
                for _ in 0..60 {
                    let c = s.color.map(|v| v + rng.gen_range(-0.05..0.05));
                    world_pts.push(Point {
                        p: on_surface(&mut rng, &s.center, &s.half),
                        color: [0, 1, 2].map(|k| (c[k] + light[k]).clamp(0.0, 1.0)),
                        class: s.class,
                    });
                }
            }
            for _ in 0..800 {
                let r = LIDAR_RANGE * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                world_pts.push(Point {
                    p: pose.translation + Vector3::new(r * a.cos(), r * a.sin(), -SENSOR_HEIGHT),
                    color: [0.35, 0.35, 0.37],
                    class: classes::ROAD,
                });
            }
            // one passing car per frame, seen only in this traversal
            let car = Box3d::new(
                pose.translation + Vector3::new(rng.gen_range(4.0..15.0), rng.gen_range(-3.0..3.0), 0.75 - SENSOR_HEIGHT),
                Vector3::new(4.0, 1.8, 1.5),
                rng.gen_range(-0.3..0.3),
                classes::CAR,
            );
            let car_color = [rng.gen_range(0.5..1.0), 0.1, 0.1];
            for _ in 0..150 {
                let local = on_surface(&mut rng, &Vector3::zeros(), &(car.size * 0.49));
                let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), car.yaw);
                world_pts.push(Point {
                    p: car.center + rot * local,
                    color: car_color,
                    class: classes::CAR,
                });
            }
            let sensor_pts: Vec<Point> = world_pts
                .into_iter()
                .map(|pt| Point {
                    p: to_sensor.apply(&pt.p),
                    ..pt
                })
                .collect();

            let stem = format!("frames/t{t}/f{i:05}");
            let lidar: Vec<Vector3<f64>> = sensor_pts.iter().map(|p| p.p).collect();
            write_lidar_bin(run.prepare(&format!("{stem}.bin"))?, &lidar)?;
            run.record(&format!("{stem}.bin"))?;
            write_boxes(run.prepare(&format!("{stem}.boxes.txt"))?, &[car.transformed(&to_sensor)])?;
            run.record(&format!("{stem}.boxes.txt"))?;
            for v in 0..4 {
                let cam = view_camera(spec, v as f64 * std::f64::consts::FRAC_PI_2);
                let (img, sem) = render(&cam, &sensor_pts);
                let names = [format!("{stem}_v{v}.png"), format!("{stem}_v{v}.sem.png"), format!("{stem}_v{v}.calib.txt")];
                write_rgb_png(run.prepare(&names[0])?, &img)?;
                write_semantic_png(run.prepare(&names[1])?, &sem)?;
                write_calib(run.prepare(&names[2])?, &cam)?;
                for n in &names {
                    run.record(n)?;
                }
                let rel = |n: &str| PathBuf::from(Path::new(n).strip_prefix("frames").unwrap());
                rows.push(ManifestRow {
                    frame_id: i,
                    image: rel(&names[0]),
                    semantic: rel(&names[1]),
                    calib: rel(&names[2]),
                    lidar: rel(&format!("{stem}.bin")),
                    boxes: rel(&format!("{stem}.boxes.txt")),
                    pose,
                });
            }
        }
        let name = format!("frames/manifest_t{t}.tsv");
        let path = run.prepare(&name)?;
        write_frame_manifest(&path, &rows)?;
        run.record(&name)?;
        manifests.push(path);
    }
    Ok(manifests)
}
