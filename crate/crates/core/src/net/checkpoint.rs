//! Flat binary parameter checkpoints.
//!
//! Layout (little-endian): magic `GSPRNET\0`, version u32, SHA-256 of the
//! network config (32 bytes), config TOML length u32 and bytes, tensor count
//! u32, then per tensor: name length u16, name, rank u8, dims u32 each,
//! values as f32.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{NetConfig, NetParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GSPRNET\0";
const VERSION: u32 = 1;

pub fn config_hash(config: &NetConfig) -> [u8; 32] {
    let text = toml::to_string(config).expect("network config serialises");
    Sha256::digest(text.as_bytes()).into()
}

pub fn checkpoint_bytes(params: &NetParams) -> Vec<u8> {
    let text = toml::to_string(&params.config).expect("network config serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash(&params.config));
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint; when `expected` is given its hash must match the
/// stored one.
pub fn parse_checkpoint(bytes: &[u8], expected: Option<&NetConfig>) -> Result<NetParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("config text is not UTF-8".into()))?;
    let config: NetConfig = toml::from_str(text).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if config_hash(&config) != hash {
        return Err(Error::Format("checkpoint config hash mismatch".into()));
    }
    if let Some(exp) = expected {
        if config_hash(exp) != hash {
            return Err(Error::Config("checkpoint was trained with a different network config".into()));
        }
    }
    let mut params = NetParams::zeros(&config);
    let layout: Vec<(String, Vec<usize>)> = params.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(Error::Format(format!("expected {} tensors, found {count}", layout.len())));
    }
    for ((name, shape), dst) in layout.iter().zip(params.tensors_mut()) {
        let n = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let got = std::str::from_utf8(r.take(n)?).unwrap_or("?");
        if got != name {
            return Err(Error::Format(format!("expected tensor '{name}', found '{got}'")));
        }
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if &dims != shape {
            return Err(Error::Format(format!("tensor '{name}' has shape {dims:?}, expected {shape:?}")));
        }
        let raw = r.take(dst.len() * 4)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(params)
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&NetConfig>) -> Result<NetParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetConfig {
        NetConfig {
            j: 4,
            r_pool: 0.5,
            widths: vec![4, 4, 4],
            d_pe: 4,
            d_model: 4,
            d_ffn: 6,
            n_head: 2,
            clusters: 2,
            d_out: 5,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let p = NetParams::init(&cfg()).unwrap();
        let back = parse_checkpoint(&checkpoint_bytes(&p), Some(&cfg())).unwrap();
        for (a, b) in p.tensors().iter().zip(back.tensors().iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        // f32-exact parameters survive bit for bit
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&p));
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let p = NetParams::init(&cfg()).unwrap();
        let other = NetConfig { init_seed: 99, ..cfg() };
        assert!(matches!(parse_checkpoint(&checkpoint_bytes(&p), Some(&other)), Err(Error::Config(_))));
        let mut bytes = checkpoint_bytes(&p);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_checkpoint(&bytes, None), Err(Error::Format(_))));
    }
}
