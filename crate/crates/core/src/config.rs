//! Pipeline configuration, loaded from TOML. Every field has a default, so
//! an empty file yields the reference setup.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::prep::PrepConfig;
use crate::train::TrainConfig;
use crate::voxel::CylGridConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Gspr,
    /// Lightweight variant: half the inference voxel budget.
    GsprL,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gspr" => Ok(Variant::Gspr),
            "gspr_l" => Ok(Variant::GsprL),
            other => Err(Error::Config(format!("unknown variant '{other}' (expected gspr or gspr_l)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Gspr => "gspr",
            Variant::GsprL => "gspr_l",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Frame manifests consumed by `prep`, one per traversal; the position in
    /// the list is the traversal index.
    pub manifests: Vec<PathBuf>,
    /// Scene index consumed by `train`, `eval` and `ablate`.
    pub scenes: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifests: Vec::new(),
            scenes: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoxelBudget {
    pub train: usize,
    pub infer: usize,
}

impl Default for VoxelBudget {
    fn default() -> Self {
        Self { train: 4096, infer: 8192 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Database track spacing, meters.
    pub db_interval: f64,
    /// Query track spacing, meters.
    pub query_interval: f64,
    pub success_radius: f64,
    pub ks: Vec<usize>,
    pub max_ranges: Vec<f64>,
    /// Traversal index forming the database; all others are queries.
    pub db_traversal: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            db_interval: 3.0,
            query_interval: 9.0,
            success_radius: 9.0,
            ks: vec![1, 5, 10],
            max_ranges: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            db_traversal: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub paths: PathsConfig,
    pub grid: CylGridConfig,
    pub voxels: VoxelBudget,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub prep: PrepConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.paths.manifests.iter_mut().for_each(fix);
        cfg.paths.scenes.as_mut().map(fix);
        fix(&mut cfg.paths.out_dir);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.voxels.train == 0 || self.voxels.infer < 2 {
            return Err(Error::Config("voxel budgets must be positive".into()));
        }
        for n in [self.voxels.train, self.infer_voxels()] {
            if n < self.net.min_nodes() {
                return Err(Error::Config(format!(
                    "{n} voxels are too few for the network (needs at least {})",
                    self.net.min_nodes()
                )));
            }
        }
        let e = &self.eval;
        if !(e.db_interval > 0.0 && e.query_interval > 0.0 && e.success_radius > 0.0) {
            return Err(Error::Config("evaluation distances must be positive".into()));
        }
        if e.ks.is_empty() || e.ks.contains(&0) {
            return Err(Error::Config("eval.ks must list positive K values".into()));
        }
        if e.max_ranges.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("eval.max_ranges must be positive".into()));
        }
        Ok(())
    }

    pub fn train_voxels(&self) -> usize {
        self.voxels.train
    }

    pub fn infer_voxels(&self) -> usize {
        match self.variant {
            Variant::Gspr => self.voxels.infer,
            Variant::GsprL => self.voxels.infer / 2,
        }
    }

    /// Grid with the voxel budget of `phase` filled in.
    pub fn grid_for(&self, phase: Phase) -> CylGridConfig {
        CylGridConfig {
            n_target: match phase {
                Phase::Train => self.train_voxels(),
                Phase::Infer => self.infer_voxels(),
            },
            ..self.grid.clone()
        }
    }
}
