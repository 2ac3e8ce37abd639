//! Checkpoint files: a named parameter tree with a shape manifest and the
//! config hash of the network that produced it.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "SSMPCKPT"            8 bytes
//! version u32                   currently 1
//! config  u32 len + utf8        canonical network config string
//! count   u32                   number of entries
//! entry   u32 name len + utf8
//!         u8  trainable flag
//!         u32 ndim, u32 * ndim  shape
//!         f64 * prod(shape)     row-major data
//! ```
//!
//! The round trip is bit-exact; data is stored as IEEE f64 bits.

use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::nn::{ParamSet, Tensor};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"SSMPCKPT";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub params: ParamSet,
}

pub fn encode_checkpoint(config: &NetConfig, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_string(config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in params.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.trainable as u8);
        out.extend_from_slice(&(e.value.shape().len() as u32).to_le_bytes());
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
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
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_pos = r.pos as u64;
    let cfg_bytes = r.take(cfg_len, "config")?;
    let config: NetConfig = serde_json::from_slice(cfg_bytes).map_err(|e| Error::Format {
        offset: cfg_pos,
        message: format!("config parse error: {e}"),
    })?;
    let count = r.u32("entry count")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|e| {
            Error::Format {
                offset: r.pos as u64,
                message: format!("non-utf8 parameter name: {e}"),
            }
        })?;
        let trainable = r.take(1, "trainable flag")?[0] != 0;
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dim")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8, "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        params.add(name, Tensor::from_vec(&shape, data), trainable);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: "trailing bytes after last entry".into(),
        });
    }
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &NetConfig, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ReconNet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = NetConfig {
            n_points: 8,
            img_size: 8,
            conv_channels: vec![4],
            d_img: 8,
            stage_dims: [8, 8, 8],
            z_dim: 2,
            heads: 2,
            hidden: 8,
            ..NetConfig::default()
        };
        let mut ps = ParamSet::new();
        ReconNet::build(&cfg, &mut ps, 5).unwrap();
        // Perturb a value to something non-representable in f32.
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let noisy = Tensor::uniform(ps.get(0).shape(), -0.1, 0.1, &mut rng);
        ps.set(0, noisy);

        let bytes = encode_checkpoint(&cfg, &ps);
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.params.checksum(), ps.checksum());
        assert_eq!(encode_checkpoint(&ck.config, &ck.params), bytes);
    }

    #[test]
    fn truncation_is_reported() {
        let cfg = NetConfig::default();
        let ps = {
            let mut ps = ParamSet::new();
            ps.add("x", Tensor::zeros(&[4]), true);
            ps
        };
        let bytes = encode_checkpoint(&cfg, &ps);
        for cut in [4usize, 10, bytes.len() - 3] {
            match decode_checkpoint(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("expected format error at cut {cut}, got {other:?}"),
            }
        }
    }
}
