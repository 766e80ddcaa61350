//! Checkpoint container: one JSON header line, then raw little-endian
//! tensor payloads in header order. The header carries the element dtype,
//! arbitrary caller metadata, and the name/shape of every entry, so a
//! file is self-describing without reading any payload bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dtype::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    meta: serde_json::Value,
    entries: Vec<EntryDesc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryDesc {
    name: String,
    shape: Vec<usize>,
}

/// Loaded checkpoint: caller metadata plus named tensors in file order.
#[derive(Debug)]
pub struct Checkpoint<E: Element> {
    pub meta: serde_json::Value,
    entries: Vec<(String, Tensor<E>)>,
}

impl<E: Element> Checkpoint<E> {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<E>> {
        let idx = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing entry '{name}'")))?;
        Ok(self.entries.remove(idx).1)
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<E>)> {
        self.entries
    }
}

pub fn save_checkpoint<E: Element>(
    path: &Path,
    meta: &serde_json::Value,
    entries: &[(String, &Tensor<E>)],
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: E::DTYPE.name().to_string(),
        meta: meta.clone(),
        entries: entries
            .iter()
            .map(|(name, t)| EntryDesc {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| TensorError::Checkpoint(format!("header encode failed: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf: Vec<u8> = Vec::with_capacity(1 << 16);
    for (_, t) in entries {
        for &v in t.data() {
            v.write_le(&mut buf);
            if buf.len() >= 1 << 16 {
                w.write_all(&buf)?;
                buf.clear();
            }
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Header peek: dtype and metadata without touching payloads. Used to
/// pick the element type before a full load.
pub fn read_checkpoint_info(path: &Path) -> Result<(DType, serde_json::Value)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    let dtype = DType::parse(&header.dtype)
        .ok_or_else(|| TensorError::Checkpoint(format!("unknown dtype '{}'", header.dtype)))?;
    Ok((dtype, header.meta))
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<Checkpoint<E>> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    if header.format_version != FORMAT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported format version {} (expected {})",
            header.format_version, FORMAT_VERSION
        )));
    }
    if header.dtype != E::DTYPE.name() {
        return Err(TensorError::Checkpoint(format!(
            "dtype mismatch: file holds {}, load requested {}",
            header.dtype,
            E::DTYPE.name()
        )));
    }
    let mut entries = Vec::with_capacity(header.entries.len());
    let mut buf = vec![0u8; 0];
    for desc in header.entries {
        let numel: usize = desc.shape.iter().product();
        buf.resize(numel * E::BYTE_WIDTH, 0);
        r.read_exact(&mut buf).map_err(|e| {
            TensorError::Checkpoint(format!("payload for '{}' truncated: {e}", desc.name))
        })?;
        let data = buf
            .chunks_exact(E::BYTE_WIDTH)
            .map(E::read_le)
            .collect::<Vec<_>>();
        entries.push((desc.name, Tensor::new(desc.shape, data)?));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(TensorError::Checkpoint(
            "trailing bytes after final payload".into(),
        ));
    }
    Ok(Checkpoint {
        meta: header.meta,
        entries,
    })
}

fn read_header(r: &mut impl Read) -> Result<Header> {
    // read up to the first newline byte by byte; headers are small
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(TensorError::Checkpoint("missing header line".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 24 {
            return Err(TensorError::Checkpoint("header line exceeds 16 MiB".into()));
        }
    }
    serde_json::from_slice(&line)
        .map_err(|e| TensorError::Checkpoint(format!("header decode failed: {e}")))
}
