//! Scene index: one Gaussian scene per line,
//! `path \t place_id \t traversal \t 12 row-major pose floats`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gspr_core::RigidTransform;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub path: PathBuf,
    pub place_id: i64,
    pub traversal: u32,
    pub pose: RigidTransform,
}

pub fn read_index(path: &Path) -> Result<Vec<SceneEntry>> {
    let text = fs::read_to_string(path).map_err(|e| gspr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 15 {
            bail!(gspr_core::Error::Format(format!(
                "{}:{}: expected 15 tab-separated fields, got {}",
                path.display(),
                n + 1,
                f.len()
            )));
        }
        let bad = |what: &str| gspr_core::Error::Format(format!("{}:{}: bad {what}", path.display(), n + 1));
        let pose: Vec<f64> = f[3..]
            .iter()
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("pose"))?;
        let p = Path::new(f[0].trim());
        out.push(SceneEntry {
            path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
            place_id: f[1].trim().parse().map_err(|_| bad("place id"))?,
            traversal: f[2].trim().parse().map_err(|_| bad("traversal"))?,
            pose: RigidTransform::from_row_major(&pose)?,
        });
    }
    Ok(out)
}

/// Paths are written relative to `base` when they live below it.
pub fn index_text(entries: &[SceneEntry], base: &Path) -> String {
    let mut s = String::new();
    for e in entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        let mut fields = vec![p.display().to_string(), e.place_id.to_string(), e.traversal.to_string()];
        fields.extend(e.pose.to_row_major().iter().map(|v| format!("{v:?}")));
        s.push_str(&fields.join("\t"));
        s.push('\n');
    }
    s
}

/// Keeps the entries whose traversal is listed; an empty list keeps all.
pub fn filter_traversals(entries: Vec<SceneEntry>, keep: &[u32]) -> Vec<SceneEntry> {
    if keep.is_empty() {
        return entries;
    }
    entries.into_iter().filter(|e| keep.contains(&e.traversal)).collect()
}

pub fn check_exists(entries: &[SceneEntry]) -> Result<()> {
    for e in entries {
        if !e.path.exists() {
            return Err(gspr_core::Error::Input(format!("missing scene file {}", e.path.display())))
                .context("reading scene index");
        }
    }
    Ok(())
}
