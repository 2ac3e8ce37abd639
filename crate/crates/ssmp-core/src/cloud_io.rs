//! Point-cloud serialization.
//!
//! Binary format: magic `SSMPPC01` (8 bytes), `u32` point count
//! (little-endian), then `count * 3` `f32` coordinates (little-endian).
//! Text format: one `x y z` triple per line, `.`-decimal, no header.
//!
//! The binary round trip is bit-exact; coordinates pass through `f32`, so a
//! cloud whose coordinates are exactly representable in `f32` reloads
//! identically, and readback of any written file is always byte-stable.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CLOUD_MAGIC: &[u8; 8] = b"SSMPPC01";

/// File extension used by dataset layouts for the binary format.
pub const CLOUD_EXT: &str = "ssmppc";

pub fn encode_cloud(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + pc.len() * 12);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&(pc.len() as u32).to_le_bytes());
    for p in pc.points() {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 8 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "file too short for magic header".into(),
        });
    }
    if &bytes[..8] != CLOUD_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected {:?}", &bytes[..8], CLOUD_MAGIC),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "truncated before point count".into(),
        });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::Format {
            offset: 8,
            message: "point count is zero".into(),
        });
    }
    let expected = 12 + n * 12;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!(
                "payload length {} does not match count {n} (expected {expected} bytes)",
                bytes.len()
            ),
        });
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let base = 12 + i * 12;
        let mut p = [0.0f64; 3];
        for axis in 0..3 {
            let off = base + axis * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: off as u64,
                    message: format!("non-finite coordinate in payload: {v}"),
                });
            }
            p[axis] = v as f64;
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn save_cloud(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cloud(pc);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes)
}

/// Writes the text format: one `x y z` line per point.
pub fn save_cloud_text(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for p in pc.points() {
        buf.push_str(&format!("{:.9} {:.9} {:.9}\n", p[0], p[1], p[2]));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_cloud_text(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Format {
                    offset,
                    message: format!("expected 3 fields per line, got {}", fields.len()),
                });
            }
            let mut p = [0.0f64; 3];
            for (axis, f) in fields.iter().enumerate() {
                p[axis] = f.parse::<f64>().map_err(|_| Error::Format {
                    offset,
                    message: format!("unparseable coordinate {f:?}"),
                })?;
                if !p[axis].is_finite() {
                    return Err(Error::Format {
                        offset,
                        message: format!("non-finite coordinate {f:?}"),
                    });
                }
            }
            points.push(p);
        }
        offset += line.len() as u64 + 1;
    }
    PointCloud::new(points)
}
