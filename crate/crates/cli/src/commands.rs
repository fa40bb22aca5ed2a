use std::fmt;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gspr_core::config::Phase;
use gspr_core::net::checkpoint::{checkpoint_bytes, load_checkpoint};
use gspr_core::net::{describe, prepare_scene, InputMask, NetParams, PreparedScene};
use gspr_core::prep::{
    assemble_sequence, make_dynamic_mask, make_static_mask, prior_to_scene, InitPrior, InitStrategy, Mask, MaskBundle,
    PrepConfig,
};
use gspr_core::retrieval::{
    downsample_track, recall_at_k, reports_csv, reports_table, sweep_csv, DbEntry, DescriptorDb,
    RecallReport,
};
use gspr_core::scene_io::{read_frame_manifest, read_gaussian_ply, write_colored_points_ply, write_gaussian_ply};
use gspr_core::train::{loss_csv, train, TrainOutcome};
use gspr_core::voxel::voxelize;
use gspr_core::{GaussianScene, PipelineConfig, RigidTransform};

use crate::index::{check_exists, filter_traversals, index_text, read_index, SceneEntry};
use crate::run::RunDir;

/// No database or no query survived the track downsampling.
#[derive(Debug)]
pub struct EmptyEval(pub String);

impl fmt::Display for EmptyEval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "empty evaluation: {}", self.0)
    }
}

impl std::error::Error for EmptyEval {}

/// Scenes together with the index rows they came from.
pub struct SceneSet {
    pub entries: Vec<SceneEntry>,
    pub scenes: Vec<GaussianScene>,
}

impl SceneSet {
    pub fn load(index: &PathBuf, traversals: &[u32]) -> Result<Self> {
        let entries = filter_traversals(read_index(index)?, traversals);
        check_exists(&entries)?;
        let scenes = entries
            .iter()
            .map(|e| {
                let mut s = read_gaussian_ply(&e.path).with_context(|| format!("reading {}", e.path.display()))?;
                s.place_id = e.place_id;
                s.ego_pose = e.pose;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, scenes })
    }

    pub fn poses(&self) -> Vec<RigidTransform> {
        self.entries.iter().map(|e| e.pose).collect()
    }
}

/// Config as recorded in a run directory; the directory itself is left out so
/// the artifact does not depend on where the run was written.
fn recorded_config(cfg: &PipelineConfig) -> String {
    let mut c = cfg.clone();
    c.paths.out_dir = PathBuf::from(".");
    c.to_toml_string()
}

fn scenes_index(cfg: &PipelineConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    match flag.as_ref().or(cfg.paths.scenes.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => bail!(gspr_core::Error::Input("no scene index: set paths.scenes or pass --scenes".into())),
    }
}

/// Voxel sampling seed of one scene; independent of the scene's position in
/// the index.
fn voxel_seed(seed: u64, e: &SceneEntry) -> u64 {
    seed ^ ((e.traversal as u64) << 40) ^ (e.place_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn prepare_all(cfg: &PipelineConfig, set: &SceneSet, phase: Phase, mask: &InputMask) -> Result<Vec<PreparedScene>> {
    let grid = cfg.grid_for(phase);
    set.scenes
        .iter()
        .zip(&set.entries)
        .map(|(s, e)| {
            let vs = voxelize(s, &grid, voxel_seed(cfg.train.seed, e))
                .with_context(|| format!("voxelizing {}", e.path.display()))?;
            Ok(prepare_scene(&vs, &cfg.net, mask)?)
        })
        .collect()
}

pub fn train_model(cfg: &PipelineConfig, set: &SceneSet, mask: &InputMask) -> Result<TrainOutcome> {
    if set.scenes.is_empty() {
        bail!(gspr_core::Error::Input("no training scenes".into()));
    }
    let prepared = prepare_all(cfg, set, Phase::Train, mask)?;
    let init = NetParams::init(&cfg.net)?;
    Ok(train(&prepared, &set.poses(), init, &cfg.train)?)
}

/// Database from `eval.db_traversal` at `db_interval` spacing, queries from
/// every other traversal at `query_interval` spacing.
pub fn evaluate(cfg: &PipelineConfig, params: &NetParams, set: &SceneSet, mask: &InputMask) -> Result<RecallReport> {
    let prepared = prepare_all(cfg, set, Phase::Infer, mask)?;
    let entries: Vec<DbEntry> = prepared
        .iter()
        .zip(&set.entries)
        .enumerate()
        .map(|(k, (p, e))| {
            Ok(DbEntry {
                vector: describe(params, p)?.vector,
                pose: e.pose,
                place_id: e.place_id,
                key: k as u64,
            })
        })
        .collect::<Result<_>>()?;
    let mut traversals: Vec<u32> = set.entries.iter().map(|e| e.traversal).collect();
    traversals.sort_unstable();
    traversals.dedup();
    let track = |t: u32, interval: f64| -> Result<Vec<DbEntry>> {
        let members: Vec<&DbEntry> = entries.iter().zip(&set.entries).filter(|(_, e)| e.traversal == t).map(|(d, _)| d).collect();
        let poses: Vec<RigidTransform> = members.iter().map(|d| d.pose).collect();
        Ok(downsample_track(&poses, interval)?.into_iter().map(|i| members[i].clone()).collect())
    };
    let mut db = DescriptorDb::new();
    for e in track(cfg.eval.db_traversal, cfg.eval.db_interval)? {
        db.insert(e)?;
    }
    let mut queries = Vec::new();
    for &t in traversals.iter().filter(|&&t| t != cfg.eval.db_traversal) {
        queries.extend(track(t, cfg.eval.query_interval)?);
    }
    if db.len() == 0 {
        bail!(EmptyEval(format!("no database scenes in traversal {}", cfg.eval.db_traversal)));
    }
    if queries.is_empty() {
        bail!(EmptyEval("no query scenes outside the database traversal".into()));
    }
    log::info!("evaluating {} queries against {} database scenes", queries.len(), db.len());
    Ok(recall_at_k(&db, &queries, &cfg.eval.ks, cfg.eval.success_radius)?)
}

pub fn cmd_train(cfg: &PipelineConfig, scenes: &Option<PathBuf>, traversals: &[u32]) -> Result<()> {
    let set = SceneSet::load(&scenes_index(cfg, scenes)?, traversals)?;
    let out = train_model(cfg, &set, &InputMask::all())?;
    let mut run = RunDir::create(&cfg.paths.out_dir)?;
    run.write("config.toml", recorded_config(cfg).as_bytes())?;
    run.write("checkpoint.bin", &checkpoint_bytes(&out.params))?;
    run.write("loss.csv", loss_csv(&out.trace).as_bytes())?;
    let last = out.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained on {} scenes: {} steps over {} epochs, final epoch loss {last:.6}",
        set.scenes.len(),
        out.trace.len(),
        out.epoch_losses.len()
    );
    println!("checkpoint: {}", run.path("checkpoint.bin").display());
    run.finish()
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    checkpoint: &Option<PathBuf>,
    scenes: &Option<PathBuf>,
    traversals: &[u32],
    sweep: bool,
) -> Result<()> {
    let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.paths.out_dir.join("checkpoint.bin"));
    let params = load_checkpoint(&ckpt, Some(&cfg.net)).with_context(|| format!("loading {}", ckpt.display()))?;
    let set = SceneSet::load(&scenes_index(cfg, scenes)?, traversals)?;
    let mut run = RunDir::create(&cfg.paths.out_dir)?;
    let label = cfg.variant.to_string();
    println!("variant {label}: {} voxels per scene", cfg.grid_for(Phase::Infer).n_target);
    let report = evaluate(cfg, &params, &set, &InputMask::all())?;
    let rows = vec![(label.clone(), report.clone())];
    run.write(&format!("recall_{label}.csv"), reports_csv(&rows).as_bytes())?;
    run.write(&format!("hits_{label}.csv"), report.hits_csv().as_bytes())?;
    print!("{}", reports_table(&rows));
    if sweep {
        let mut sweep = Vec::new();
        for &r in &cfg.eval.max_ranges {
            let mut c = cfg.clone();
            c.grid.max_range = r;
            sweep.push((r, evaluate(&c, &params, &set, &InputMask::all())?));
        }
        run.write(&format!("sweep_{label}.csv"), sweep_csv(&sweep).as_bytes())?;
        print!("{}", sweep_csv(&sweep));
    }
    run.finish()
}

/// The five cumulative input-feature rows, from SH alone to all groups.
pub fn feature_rows() -> Vec<InputMask> {
    let mut m = InputMask::sh_only();
    let mut rows = vec![m];
    for step in 0..4 {
        match step {
            0 => m.opacity = true,
            1 => m.rotation = true,
            2 => m.scale = true,
            _ => m.position = true,
        }
        rows.push(m);
    }
    rows
}

/// The five cumulative preparation rows: no LiDAR prior, then LiDAR
/// initialisation, dome, static mask and dynamic mask added in turn.
pub fn prep_rows(base: &PrepConfig) -> Vec<(String, PrepConfig)> {
    let mut c = PrepConfig {
        init: InitStrategy::Random,
        dome: false,
        static_mask: false,
        dynamic_mask: false,
        ..base.clone()
    };
    let mut rows = vec![("random-init".to_string(), c.clone())];
    c.init = InitStrategy::Lidar;
    rows.push(("lidar".into(), c.clone()));
    c.dome = true;
    rows.push(("lidar+dome".into(), c.clone()));
    c.static_mask = true;
    rows.push(("lidar+dome+static".into(), c.clone()));
    c.dynamic_mask = true;
    rows.push(("lidar+dome+static+dynamic".into(), c));
    rows
}

pub fn cmd_ablate(cfg: &PipelineConfig, kind: AblateKind, scenes: &Option<PathBuf>, train_t: &[u32], eval_t: &[u32]) -> Result<()> {
    let mut run = RunDir::create(&cfg.paths.out_dir)?;
    if matches!(kind, AblateKind::Features | AblateKind::All) {
        let index = scenes_index(cfg, scenes)?;
        let (train_set, eval_set) = (SceneSet::load(&index, train_t)?, SceneSet::load(&index, eval_t)?);
        let mut rows = Vec::new();
        for mask in feature_rows() {
            let out = train_model(cfg, &train_set, &mask)?;
            let report = evaluate(cfg, &out.params, &eval_set, &mask)?;
            log::info!("{}: AR@{} {:.2}", mask.label(), report.ks[0], report.recall[0]);
            rows.push((mask.label(), report));
        }
        run.write("ablation_features.csv", reports_csv(&rows).as_bytes())?;
        print!("{}", reports_table(&rows));
    }
    if matches!(kind, AblateKind::Prep | AblateKind::All) {
        let mut rows = Vec::new();
        for (label, prep) in prep_rows(&cfg.prep) {
            let mut c = cfg.clone();
            c.prep = prep;
            let windows = prep_windows(&c)?;
            let all = SceneSet {
                entries: windows.iter().map(|w| w.entry(PathBuf::new())).collect(),
                scenes: windows.into_iter().map(|w| w.scene).collect(),
            };
            let pick = |keep: &[u32]| {
                let idx: Vec<usize> = (0..all.entries.len()).filter(|&i| keep.is_empty() || keep.contains(&all.entries[i].traversal)).collect();
                SceneSet {
                    entries: idx.iter().map(|&i| all.entries[i].clone()).collect(),
                    scenes: idx.iter().map(|&i| all.scenes[i].clone()).collect(),
                }
            };
            let out = train_model(&c, &pick(train_t), &InputMask::all())?;
            let report = evaluate(&c, &out.params, &pick(eval_t), &InputMask::all())?;
            rows.push((label, report));
        }
        run.write("ablation_prep.csv", reports_csv(&rows).as_bytes())?;
        print!("{}", reports_table(&rows));
    }
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblateKind {
    Features,
    Prep,
    All,
}

/// One prepared sliding window.
pub struct Window {
    pub traversal: u32,
    pub frame_id: usize,
    pub pose: RigidTransform,
    pub prior: InitPrior,
    pub masks: Vec<MaskBundle>,
    pub scene: GaussianScene,
}

impl Window {
    fn stem(&self) -> String {
        format!("t{}/w{:05}", self.traversal, self.frame_id)
    }

    fn entry(&self, path: PathBuf) -> SceneEntry {
        SceneEntry {
            path,
            place_id: self.frame_id as i64,
            traversal: self.traversal,
            pose: self.pose,
        }
    }
}

/// Runs the window assembly over every manifest; windows are centred on
/// every frame that has a predecessor and a successor.
pub fn prep_windows(cfg: &PipelineConfig) -> Result<Vec<Window>> {
    if cfg.paths.manifests.is_empty() {
        bail!(gspr_core::Error::Input("no frame manifests: set paths.manifests".into()));
    }
    let mut out = Vec::new();
    for (t, manifest) in cfg.paths.manifests.iter().enumerate() {
        let mut records = read_frame_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
        records.sort_by_key(|r| r.frame_id);
        for r in &records {
            for p in r.paths() {
                if !p.exists() {
                    bail!(gspr_core::Error::Input(format!("missing file {}", p.display())));
                }
            }
        }
        if records.len() < 3 {
            bail!(gspr_core::Error::Input(format!("{} lists {} frames; a window needs 3", manifest.display(), records.len())));
        }
        let frames = records.iter().map(|r| r.load()).collect::<gspr_core::Result<Vec<_>>>()?;
        for c in 1..frames.len() - 1 {
            let window = &frames[c - 1..=c + 1];
            let poses: Vec<RigidTransform> = window.iter().map(|f| f.pose).collect();
            let prior = assemble_sequence(window, &poses, &cfg.prep)?;
            let center = &frames[c];
            let masks = center
                .views
                .iter()
                .map(|v| MaskBundle {
                    static_mask: if cfg.prep.static_mask {
                        make_static_mask(&v.semantic, &cfg.prep.static_classes)
                    } else {
                        Mask::empty(v.semantic.width, v.semantic.height)
                    },
                    dynamic_mask: if cfg.prep.dynamic_mask {
                        make_dynamic_mask(&center.boxes, &v.semantic, &v.camera)
                    } else {
                        Mask::empty(v.semantic.width, v.semantic.height)
                    },
                })
                .collect();
            let frame_id = records[c].frame_id;
            let scene = prior_to_scene(&prior, center.pose, frame_id as i64, &cfg.prep);
            out.push(Window {
                traversal: t as u32,
                frame_id,
                pose: center.pose,
                prior,
                masks,
                scene,
            });
        }
    }
    Ok(out)
}

pub fn cmd_prep(cfg: &PipelineConfig) -> Result<()> {
    let windows = prep_windows(cfg)?;
    let mut run = RunDir::create(&cfg.paths.out_dir)?;
    let mut entries = Vec::new();
    for w in &windows {
        let stem = format!("prep/{}", w.stem());
        let prior_name = format!("{stem}.prior.ply");
        write_colored_points_ply(&w.prior.points, &w.prior.colors, run.prepare(&prior_name)?)?;
        run.record(&prior_name)?;
        for (k, m) in w.masks.iter().enumerate() {
            for (tag, mask) in [("static", &m.static_mask), ("dynamic", &m.dynamic_mask)] {
                let name = format!("{stem}_v{k}.{tag}.png");
                mask.write_png(run.prepare(&name)?)?;
                run.record(&name)?;
            }
        }
        let scene_name = format!("{stem}.gaussians.ply");
        write_gaussian_ply(&w.scene, run.prepare(&scene_name)?)?;
        entries.push(w.entry(run.record(&scene_name)?));
    }
    run.write("prep/scenes.tsv", index_text(&entries, &run.path("prep")).as_bytes())?;
    run.write("config.toml", recorded_config(cfg).as_bytes())?;
    println!("prepared {} windows; scene index {}", windows.len(), run.path("prep/scenes.tsv").display());
    run.finish()
}
