//! Sidecar binary payloads for frames, flows and masks.
//!
//! All three share a layout: four magic bytes, little-endian `u32` header
//! fields, then the payload row-major.
//!
//! | magic  | header                                   | payload                        |
//! |--------|------------------------------------------|--------------------------------|
//! | `WEMV` | width, height, channels, count           | `f32` samples, interleaved     |
//! | `WEMF` | width, height, count                     | `(u, v)` pairs of `f32`        |
//! | `WEMM` | width, height, count                     | `u8` values in `{0, 1}`        |

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Frame, WorldEgoMask};
use crate::flowlab::FlowField;

pub const FRAME_MAGIC: &[u8; 4] = b"WEMV";
pub const FLOW_MAGIC: &[u8; 4] = b"WEMF";
pub const MASK_MAGIC: &[u8; 4] = b"WEMM";

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("expected magic {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("payload truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("all items in one file must share dimensions")]
    MixedDims,
    #[error("mask value {0} is not 0 or 1")]
    NonBinary(f32),
    #[error("dimension {0} does not fit in u32")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &'static [u8; 4]) -> Result<Self, CodecError> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(CodecError::BadMagic { expected: std::str::from_utf8(magic).unwrap() });
        }
        Ok(Self { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated { needed: usize::MAX, have: self.buf.len() })?;
        if end > self.buf.len() {
            return Err(CodecError::Truncated { needed: end, have: self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CodecError> {
        let bytes = self.take(n.checked_mul(4).ok_or(CodecError::TooLarge(n))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CodecError> {
    let v = u32::try_from(v).map_err(|_| CodecError::TooLarge(v))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_frames(frames: &[Frame]) -> Result<Vec<u8>, CodecError> {
    let (w, h, c) = frames.first().map_or((0, 0, 1), |f| (f.width, f.height, f.channels));
    let mut out = Vec::with_capacity(20 + frames.len() * w * h * c * 4);
    out.extend_from_slice(FRAME_MAGIC);
    for v in [w, h, c, frames.len()] {
        put_u32(&mut out, v)?;
    }
    for f in frames {
        if (f.width, f.height, f.channels) != (w, h, c) || f.data.len() != w * h * c {
            return Err(CodecError::MixedDims);
        }
        for v in &f.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_frames(buf: &[u8]) -> Result<Vec<Frame>, CodecError> {
    let mut r = Reader::new(buf, FRAME_MAGIC)?;
    let (w, h, c, count) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        frames.push(Frame::new(w, h, c, r.f32s(w * h * c)?));
    }
    r.finish()?;
    Ok(frames)
}

pub fn encode_flows(flows: &[FlowField]) -> Result<Vec<u8>, CodecError> {
    let (w, h) = flows.first().map_or((0, 0), FlowField::dims);
    let mut out = Vec::with_capacity(16 + flows.len() * w * h * 8);
    out.extend_from_slice(FLOW_MAGIC);
    for v in [w, h, flows.len()] {
        put_u32(&mut out, v)?;
    }
    for f in flows {
        if f.dims() != (w, h) || f.u.len() != w * h || f.v.len() != w * h {
            return Err(CodecError::MixedDims);
        }
        for (u, v) in f.u.iter().zip(&f.v) {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_flows(buf: &[u8]) -> Result<Vec<FlowField>, CodecError> {
    let mut r = Reader::new(buf, FLOW_MAGIC)?;
    let (w, h, count) = (r.u32()?, r.u32()?, r.u32()?);
    let mut flows = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let pairs = r.f32s(w * h * 2)?;
        let (u, v) = pairs.chunks_exact(2).map(|p| (p[0], p[1])).unzip();
        flows.push(FlowField::new(w, h, u, v));
    }
    r.finish()?;
    Ok(flows)
}

pub fn encode_masks(masks: &[WorldEgoMask]) -> Result<Vec<u8>, CodecError> {
    let (w, h) = masks.first().map_or((0, 0), |m| (m.width, m.height));
    let mut out = Vec::with_capacity(16 + masks.len() * w * h);
    out.extend_from_slice(MASK_MAGIC);
    for v in [w, h, masks.len()] {
        put_u32(&mut out, v)?;
    }
    for m in masks {
        if (m.width, m.height) != (w, h) || m.data.len() != w * h {
            return Err(CodecError::MixedDims);
        }
        for &v in &m.data {
            match v {
                0.0 => out.push(0),
                1.0 => out.push(1),
                other => return Err(CodecError::NonBinary(other)),
            }
        }
    }
    Ok(out)
}

/// Decodes masks. Bytes other than 0/1 are kept as-is so validation can
/// report them.
pub fn decode_masks(buf: &[u8]) -> Result<Vec<WorldEgoMask>, CodecError> {
    let mut r = Reader::new(buf, MASK_MAGIC)?;
    let (w, h, count) = (r.u32()?, r.u32()?, r.u32()?);
    let mut masks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let bytes = r.take(w * h)?;
        masks.push(WorldEgoMask::new(w, h, bytes.iter().map(|&b| b as f32).collect()));
    }
    r.finish()?;
    Ok(masks)
}

pub fn read_flows(path: &Path) -> Result<Vec<FlowField>, CodecError> {
    decode_flows(&fs::read(path)?)
}

pub fn write_flows(path: &Path, flows: &[FlowField]) -> Result<(), CodecError> {
    Ok(fs::write(path, encode_flows(flows)?)?)
}
