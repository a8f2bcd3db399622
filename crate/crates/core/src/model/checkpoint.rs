//! Binary checkpoint files.
//!
//! Layout:
//!
//! ```text
//! "D2S1"                magic, 4 bytes
//! u8                    format version (1)
//! u32 LE                header length in bytes
//! header                UTF-8 text, one `key value` pair per line
//! payload               f32 LE values of every parameter, manifest order
//! ```
//!
//! Header keys, in order: `model`, `widths` (comma separated), `dropout`,
//! `epoch`, `best_iou`, `seed`, `params` (count), then one
//! `param <name> <d0,d1,...>` line per parameter or buffer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::build::build;
use super::graph::ModelGraph;
use super::{ModelConfig, ModelKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D2S1";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Training metadata stored next to the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub best_iou: f64,
    pub seed: u64,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn encode_checkpoint(model: &mut ModelGraph<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let cfg = model.config.clone();
    let state = model.state();
    let mut header = String::new();
    header += &format!("model {}\n", cfg.kind.name());
    header += &format!("widths {}\n", join(&cfg.widths));
    header += &format!("dropout {}\n", cfg.dropout);
    header += &format!("epoch {}\n", meta.epoch);
    header += &format!("best_iou {}\n", meta.best_iou);
    header += &format!("seed {}\n", meta.seed);
    header += &format!("params {}\n", state.len());
    for (name, dims, _) in &state {
        header += &format!("param {name} {}\n", join(dims));
    }
    let payload: usize = state.iter().map(|(_, _, v)| v.len() * 4).sum();
    let mut out = Vec::with_capacity(9 + header.len() + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, _, values) in &state {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    manifest: Vec<(String, Vec<usize>)>,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines();
    let mut field = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| format_err(format!("header ends before '{key}'")))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| format_err(format!("expected '{key}', found '{line}'")))
    };
    let num = |s: String, what: &str| -> Result<u64> { s.parse().map_err(|_| format_err(format!("bad {what} '{s}'"))) };
    let kind: ModelKind = field("model")?.parse().map_err(|e: Error| format_err(e.to_string()))?;
    let widths = parse_dims(&field("widths")?)?;
    let dropout_s = field("dropout")?;
    let dropout: f64 = dropout_s
        .parse()
        .map_err(|_| format_err(format!("bad dropout '{dropout_s}'")))?;
    let epoch = num(field("epoch")?, "epoch")?;
    let iou_s = field("best_iou")?;
    let best_iou: f64 = iou_s
        .parse()
        .map_err(|_| format_err(format!("bad best_iou '{iou_s}'")))?;
    let seed = num(field("seed")?, "seed")?;
    let count = num(field("params")?, "param count")? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = field("param")?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| format_err(format!("bad param line '{line}'")))?;
        manifest.push((name.to_owned(), parse_dims(dims)?));
    }
    if lines.next().is_some() {
        return Err(format_err("trailing header lines"));
    }
    Ok(Header {
        config: ModelConfig {
            kind,
            widths,
            dropout,
            seed,
        },
        meta: CheckpointMeta { epoch, best_iou, seed },
        manifest,
    })
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| d.parse().map_err(|_| format_err(format!("bad dims '{s}'"))))
        .collect()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelGraph<f32>, CheckpointMeta)> {
    if bytes.len() < 9 {
        return Err(format_err("file too short for a checkpoint"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic"));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported version {}", bytes[4])));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes.get(9..9 + hlen).ok_or_else(|| format_err("truncated header"))?;
    let text = std::str::from_utf8(header_bytes).map_err(|_| format_err("header is not UTF-8"))?;
    let header = parse_header(text)?;

    let mut model: ModelGraph<f32> =
        build(&header.config).map_err(|e| Error::Shape(format!("checkpoint architecture: {e}")))?;
    let mut payload = &bytes[9 + hlen..];
    {
        let slots = model.slots();
        if slots.len() != header.manifest.len() {
            return Err(Error::Shape(format!(
                "{} expects {} tensors, checkpoint lists {}",
                header.config.kind,
                slots.len(),
                header.manifest.len()
            )));
        }
        for (slot, (name, dims)) in slots.into_iter().zip(&header.manifest) {
            if &slot.name != name || &slot.dims != dims {
                return Err(Error::Shape(format!(
                    "{} expects {} {:?}, checkpoint has {name} {dims:?}",
                    header.config.kind, slot.name, slot.dims
                )));
            }
            let n = slot.value.len() * 4;
            if payload.len() < n {
                return Err(format_err(format!("truncated payload at {name}")));
            }
            for (v, chunk) in slot.value.iter_mut().zip(payload[..n].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            payload = &payload[n..];
        }
    }
    if !payload.is_empty() {
        return Err(format_err(format!("{} trailing payload bytes", payload.len())));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(model: &mut ModelGraph<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, meta);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelGraph<f32>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}

/// Loads a checkpoint and checks that it holds the expected architecture.
pub fn load_checkpoint_as(path: &Path, kind: ModelKind) -> Result<(ModelGraph<f32>, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    if model.config.kind != kind {
        return Err(Error::Shape(format!(
            "{}: checkpoint holds {}, expected {kind}",
            path.display(),
            model.config.kind
        )));
    }
    Ok((model, meta))
}
