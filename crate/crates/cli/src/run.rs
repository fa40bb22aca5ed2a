//! Run directory: every artifact is written through [`RunDir`], which keeps
//! a sorted `manifest.tsv` of SHA-256 hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use sha2::{Digest, Sha256};

pub struct RunDir {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

fn io_err(path: &Path, e: std::io::Error) -> gspr_core::Error {
    gspr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        let mut hashes = BTreeMap::new();
        // keep entries of earlier subcommands in the same directory
        if let Ok(text) = fs::read_to_string(root.join("manifest.tsv")) {
            for line in text.lines() {
                if let Some((name, hash)) = line.split_once('\t') {
                    if root.join(name).exists() {
                        hashes.insert(name.to_string(), hash.to_string());
                    }
                }
            }
        }
        Ok(Self { root, hashes })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Records a file that a library writer already produced at `name`.
    pub fn record(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        self.hashes.insert(name.to_string(), sha256_hex(&bytes));
        Ok(path)
    }

    /// Parent directories for a library writer.
    pub fn prepare(&self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        Ok(path)
    }

    pub fn finish(self) -> Result<()> {
        let mut text = String::new();
        for (name, hash) in &self.hashes {
            text.push_str(&format!("{name}\t{hash}\n"));
        }
        let path = self.root.join("manifest.tsv");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(())
    }
}
