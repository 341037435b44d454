//! `DMRK` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DMRK" | u32 version | u32 stride | u32 entry count
//! per entry: u16 name length | name (utf-8) | u32 channels | u32 height | u32 width | u64 payload offset
//! payload: f32 values, row-major, channel-outermost
//! ```
//!
//! Offsets are relative to the start of the payload, in bytes.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::tensor::{HeadTensorSet, TENSOR_NAMES};

pub const MAGIC: [u8; 4] = *b"DMRK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub name: String,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    pub offset: u64,
}

impl DirectoryEntry {
    fn byte_len(&self) -> u64 {
        self.channels as u64 * self.height as u64 * self.width as u64 * 4
    }
}

/// Serializes the tensors; values are narrowed to `f32`.
pub fn write_container(tensors: &HeadTensorSet) -> Vec<u8> {
    let named = tensors.named();
    let payload_len: usize = named.iter().map(|(_, g)| g.len() * 4).sum();
    let mut out = Vec::with_capacity(64 + 32 * named.len() + payload_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&tensors.stride.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, grid) in &named {
        let (c, h, w) = grid.dim();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += grid.len() as u64 * 4;
    }
    for (_, grid) in &named {
        for v in grid.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Container(format!(
                "header truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses the header and directory; returns `(stride, entries, payload start)`.
pub fn read_directory(bytes: &[u8]) -> Result<(u32, Vec<DirectoryEntry>, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Container(format!("bad magic {magic:?} at byte 0, expected \"DMRK\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Container(format!(
            "unsupported format version {version} at byte 4, expected {VERSION}"
        )));
    }
    let stride = r.u32("stride")?;
    let count = r.u32("entry count")?;
    let mut entries = Vec::with_capacity(count.min(64) as usize);
    for i in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Container(format!("entry {i} at byte {at}: name is not utf-8")))?
            .to_string();
        let entry = DirectoryEntry {
            name,
            channels: r.u32("channels")?,
            height: r.u32("height")?,
            width: r.u32("width")?,
            offset: r.u64("offset")?,
        };
        entries.push(entry);
    }
    let mut spans: Vec<(u64, u64, &str)> = entries
        .iter()
        .map(|e| (e.offset, e.offset + e.byte_len(), e.name.as_str()))
        .collect();
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Container(format!(
                "directory entries {} and {} overlap",
                w[0].2, w[1].2
            )));
        }
    }
    Ok((stride, entries, r.pos))
}

pub fn read_container(bytes: &[u8]) -> Result<HeadTensorSet> {
    let (stride, entries, start) = read_directory(bytes)?;
    let payload = &bytes[start..];
    let expected = entries.iter().map(|e| e.offset + e.byte_len()).max().unwrap_or(0) as usize;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Container(format!(
            "{} trailing bytes after payload at byte {}",
            payload.len() - expected,
            start + expected
        )));
    }

    let mut grids: Vec<Option<Array3<f64>>> = vec![None; TENSOR_NAMES.len()];
    for e in &entries {
        let Some(slot) = TENSOR_NAMES.iter().position(|n| *n == e.name) else {
            return Err(Error::Container(format!("unknown tensor {:?}", e.name)));
        };
        if grids[slot].is_some() {
            return Err(Error::Container(format!("duplicate tensor {:?}", e.name)));
        }
        let begin = e.offset as usize;
        let data: Vec<f64> = payload[begin..begin + e.byte_len() as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let shape = (e.channels as usize, e.height as usize, e.width as usize);
        grids[slot] = Some(Array3::from_shape_vec(shape, data).expect("length checked"));
    }
    let mut it = grids.into_iter().zip(TENSOR_NAMES);
    let mut next = || {
        let (g, name) = it.next().unwrap();
        g.ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))
    };
    Ok(HeadTensorSet {
        stride,
        center: next()?,
        wh: next()?,
        center_offset: next()?,
        kp_offset: next()?,
        kp_heatmap: next()?,
        kp_refine_offset: next()?,
    })
}

pub fn write_container_file(path: &Path, tensors: &HeadTensorSet) -> Result<()> {
    std::fs::write(path, write_container(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_container_file(path: &Path) -> Result<HeadTensorSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_container(&bytes).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}
