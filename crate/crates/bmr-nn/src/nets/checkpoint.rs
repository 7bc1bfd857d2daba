//! Checkpoint container.
//!
//! One binary format covers point-weight and guide checkpoints: a `BMRW`
//! header (magic, version, architecture hash) followed by tagged sections of
//! tensors, each tensor as extents plus raw little-endian 64-bit floats. The
//! architecture itself travels inside the file so checkpoints are
//! self-describing; the header hash must match the embedded architecture.

use std::io::{Read, Write};
use std::path::Path;

use super::{NetworkArch, NetworkWeights};
use crate::models::{GuideParams, GuideSite, SiteKind, SiteSpec};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BMRW";
pub const VERSION: u32 = 1;

/// Which training scheme produced the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodTag {
    Map = 0,
    FlatFf = 1,
    TieredFf = 2,
    Bmr = 3,
}

impl MethodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Map => "map",
            MethodTag::FlatFf => "flat-ff",
            MethodTag::TieredFf => "tiered-ff",
            MethodTag::Bmr => "bmr",
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => MethodTag::Map,
            1 => MethodTag::FlatFf,
            2 => MethodTag::TieredFf,
            3 => MethodTag::Bmr,
            _ => {
                return Err(Error::Parse {
                    what: "checkpoint",
                    why: format!("unknown method tag {b}"),
                })
            }
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "map" => MethodTag::Map,
            "flat-ff" => MethodTag::FlatFf,
            "tiered-ff" => MethodTag::TieredFf,
            "bmr" => MethodTag::Bmr,
            _ => {
                return Err(Error::Config(format!(
                    "unknown method {s:?} (expected map, flat-ff, tiered-ff, or bmr)"
                )))
            }
        })
    }
}

/// Checkpoint payload: a point estimate or a variational guide.
#[derive(Clone, Debug)]
pub enum CheckpointPayload {
    PointWeights(NetworkWeights),
    Guide(GuideParams),
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub arch: NetworkArch,
    pub method: MethodTag,
    /// Index of the evaluation pass this checkpoint corresponds to; `eval`
    /// reuses it to reproduce the training-side metrics draw for draw.
    pub eval_index: u32,
    pub seed: u64,
    pub payload: CheckpointPayload,
}

/// Stable fingerprint of an architecture.
pub fn arch_hash(arch: &NetworkArch) -> u64 {
    let json = serde_json::to_string(arch).expect("arch serializes");
    crate::fnv1a(json.as_bytes())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                what: "checkpoint",
                why: format!(
                    "truncated: wanted {n} bytes at offset {}, file holds {}",
                    self.pos,
                    self.buf.len()
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let nd = self.u32()? as usize;
        if nd > 8 {
            return Err(Error::Parse {
                what: "checkpoint",
                why: format!("implausible tensor rank {nd}"),
            });
        }
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(&shape, data)
    }
}

/// Serialize a checkpoint to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let arch_json = serde_json::to_vec(&ckpt.arch).expect("arch serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, crate::fnv1a(&arch_json));
    out.push(ckpt.method as u8);
    put_u32(&mut out, ckpt.eval_index);
    put_u64(&mut out, ckpt.seed);
    put_u32(&mut out, arch_json.len() as u32);
    out.extend_from_slice(&arch_json);
    match &ckpt.payload {
        CheckpointPayload::PointWeights(w) => {
            put_u32(&mut out, 1);
            let name = b"weights";
            out.push(name.len() as u8);
            out.extend_from_slice(name);
            out.push(255);
            put_u32(&mut out, w.layers.len() as u32);
            for t in &w.layers {
                put_tensor(&mut out, t);
            }
        }
        CheckpointPayload::Guide(g) => {
            put_u32(&mut out, g.sites.len() as u32);
            for site in &g.sites {
                let name = site.spec.name.as_bytes();
                out.push(name.len() as u8);
                out.extend_from_slice(name);
                out.push(match site.spec.kind {
                    SiteKind::Normal => 0,
                    SiteKind::LogNormal => 1,
                });
                put_u32(&mut out, 2);
                put_tensor(&mut out, &site.mu);
                put_tensor(&mut out, &site.log_sigma);
            }
        }
    }
    Ok(out)
}

/// Parse a checkpoint from bytes, verifying magic, version, and that the
/// header hash matches the embedded architecture.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Parse {
            what: "checkpoint",
            why: format!("bad magic {magic:02x?}, expected {MAGIC:02x?}"),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            what: "checkpoint",
            why: format!("unsupported version {version}"),
        });
    }
    let header_hash = cur.u64()?;
    let method = MethodTag::from_byte(cur.u8()?)?;
    let eval_index = cur.u32()?;
    let seed = cur.u64()?;
    let json_len = cur.u32()? as usize;
    let arch_json = cur.take(json_len)?;
    let found = crate::fnv1a(arch_json);
    if found != header_hash {
        return Err(Error::HashMismatch {
            found,
            expected: header_hash,
        });
    }
    let arch: NetworkArch = serde_json::from_slice(arch_json).map_err(|e| Error::Parse {
        what: "checkpoint",
        why: format!("architecture json: {e}"),
    })?;
    let n_sections = cur.u32()? as usize;
    let mut sites = Vec::new();
    let mut weights: Option<NetworkWeights> = None;
    for _ in 0..n_sections {
        let name_len = cur.u8()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| Error::Parse {
            what: "checkpoint",
            why: "section name is not utf-8".into(),
        })?;
        let kind = cur.u8()?;
        let n_tensors = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            tensors.push(cur.tensor()?);
        }
        if kind == 255 {
            weights = Some(NetworkWeights { layers: tensors });
        } else {
            if tensors.len() != 2 {
                return Err(Error::Parse {
                    what: "checkpoint",
                    why: format!("guide section {name} holds {} tensors, wanted 2", tensors.len()),
                });
            }
            let log_sigma = tensors.pop().unwrap();
            let mu = tensors.pop().unwrap();
            let site_kind = if kind == 0 {
                SiteKind::Normal
            } else {
                SiteKind::LogNormal
            };
            sites.push(GuideSite {
                spec: SiteSpec {
                    name,
                    kind: site_kind,
                    shape: mu.shape().to_vec(),
                },
                mu,
                log_sigma,
            });
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            what: "checkpoint",
            why: format!("{} surplus bytes after payload", bytes.len() - cur.pos),
        });
    }
    let payload = match (weights, sites.is_empty()) {
        (Some(w), true) => CheckpointPayload::PointWeights(w),
        (None, false) => CheckpointPayload::Guide(GuideParams { sites }),
        _ => {
            return Err(Error::Parse {
                what: "checkpoint",
                why: "expected either one weights section or only guide sections".into(),
            })
        }
    };
    Ok(Checkpoint {
        arch,
        method,
        eval_index,
        seed,
        payload,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_weights;
    use crate::stats::RngStream;

    #[test]
    fn weights_roundtrip() {
        let arch = NetworkArch::mlp_default(6, 3);
        let w = init_weights(&arch, &RngStream::new(1, 100));
        let ckpt = Checkpoint {
            arch: arch.clone(),
            method: MethodTag::Map,
            eval_index: 4,
            seed: 9,
            payload: CheckpointPayload::PointWeights(w.clone()),
        };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        assert_eq!(&bytes[..4], b"BMRW");
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.arch, arch);
        assert_eq!(back.eval_index, 4);
        assert_eq!(back.seed, 9);
        match back.payload {
            CheckpointPayload::PointWeights(w2) => assert_eq!(w2, w),
            _ => panic!("wrong payload"),
        }
    }

    #[test]
    fn corrupted_arch_fails_hash_check() {
        let arch = NetworkArch::mlp_default(6, 3);
        let ckpt = Checkpoint {
            arch: arch.clone(),
            method: MethodTag::Map,
            eval_index: 0,
            seed: 0,
            payload: CheckpointPayload::PointWeights(NetworkWeights::zeros(&arch)),
        };
        let mut bytes = encode_checkpoint(&ckpt).unwrap();
        // flip a byte inside the embedded arch json
        let off = 4 + 4 + 8 + 1 + 4 + 8 + 4 + 3;
        bytes[off] ^= 0x20;
        match decode_checkpoint(&bytes) {
            Err(Error::HashMismatch { .. }) | Err(Error::Parse { .. }) => {}
            other => panic!("expected failure, got {:?}", other.map(|c| c.eval_index)),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let err = decode_checkpoint(b"NOPE....").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
