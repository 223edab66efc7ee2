//! Binary checkpoint: magic, format version, JSON header, f32 tensors.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::params::EncoderParams;
use crate::error::{ForgeError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FRGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: EncoderConfig,
    pub vocab_hash: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn checkpoint_bytes(params: &EncoderParams, vocab_hash: &str) -> Result<Vec<u8>> {
    let views = params.tensors();
    let header = CheckpointHeader {
        config: params.config,
        vocab_hash: vocab_hash.to_string(),
        tensors: views.iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &views {
        for &x in t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, params: &EncoderParams, vocab_hash: &str) -> Result<()> {
    let bytes = checkpoint_bytes(params, vocab_hash)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = buf.get(*at..*at + n).ok_or_else(|| ForgeError::Format("checkpoint is truncated".into()))?;
    *at += n;
    Ok(s)
}

fn u32_at(buf: &[u8], at: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, at, 4)?.try_into().expect("four bytes")))
}

pub fn parse_checkpoint(buf: &[u8]) -> Result<(EncoderParams, CheckpointHeader)> {
    let mut at = 0;
    if take(buf, &mut at, 8)? != CHECKPOINT_MAGIC {
        return Err(ForgeError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32_at(buf, &mut at)?;
    if version != CHECKPOINT_VERSION {
        return Err(ForgeError::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32_at(buf, &mut at)? as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(buf, &mut at, hlen)?)?;
    let mut params = EncoderParams::init(header.config, 0)?;
    let expected: Vec<TensorEntry> =
        params.tensors().into_iter().map(|t| TensorEntry { name: t.name, shape: t.shape }).collect();
    if expected != header.tensors {
        return Err(ForgeError::Format("tensor table does not match the configured architecture".into()));
    }
    for (_, dst) in params.tensors_mut() {
        let raw = take(buf, &mut at, 4 * dst.len())?;
        for (x, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f64::from(f32::from_le_bytes(b.try_into().expect("four bytes")));
        }
    }
    if at != buf.len() {
        return Err(ForgeError::Format(format!("{} trailing bytes after tensors", buf.len() - at)));
    }
    params.check_finite()?;
    Ok((params, header))
}

pub fn read_checkpoint(path: &Path) -> Result<(EncoderParams, CheckpointHeader)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    parse_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let cfg = EncoderConfig { vocab_size: 12, d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_len: 8, ..Default::default() };
        let p = EncoderParams::init(cfg, 4).unwrap();
        let bytes = checkpoint_bytes(&p, "abc").unwrap();
        let (q, h) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(h.vocab_hash, "abc");
        assert_eq!(h.config, cfg);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(b.data).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        assert_eq!(checkpoint_bytes(&q, "abc").unwrap(), bytes);
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_checkpoint(&bad), Err(ForgeError::Format(_))));
    }
}
