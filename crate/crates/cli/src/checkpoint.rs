//! Versioned binary checkpoint. Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CWTNCKPT"
//! version      u32      1
//! config_len   u64
//! config       config_len bytes of RunConfig JSON
//! step         u64      completed training steps
//! adam_step    u64      optimizer step counter
//! param_count  u32
//! per parameter, in layout order:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   shape      4 x u32  (n, c, h, w)
//!   offset     u64      byte offset of this parameter inside the payload
//! payload_len  u64
//! payload      f32 values: all parameters, then all Adam first moments,
//!              then all Adam second moments, each in layout order
//! checksum     32 bytes SHA-256 of every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use cwtnet_core::{AdamState, CwtNet, Error, Parameters, Result, Shape4, Tensor};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 8] = b"CWTNCKPT";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: Parameters,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (_, name, value) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in value.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * value.numel() as u64;
        }
        let tensors: Vec<&Tensor> = self
            .params
            .iter()
            .map(|(_, _, t)| t)
            .chain(self.adam.m.iter())
            .chain(self.adam.v.iter())
            .collect();
        let payload_len: usize = tensors.iter().map(|t| 4 * t.numel()).sum();
        out.extend_from_slice(&(payload_len as u64).to_le_bytes());
        out.reserve(payload_len + CHECKSUM_LEN);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses and verifies a checkpoint; `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |detail: String| Error::data(origin, detail);
        if bytes.len() < MAGIC.len() + CHECKSUM_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != stored {
            return Err(bad("checksum mismatch; file is corrupted".into()));
        }
        let mut r = Reader { bytes: body, pos: MAGIC.len(), origin };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let config_len = r.len_u64()?;
        let config: RunConfig =
            serde_json::from_slice(r.take(config_len)?).map_err(|e| bad(format!("config: {e}")))?;
        let step = r.u64()?;
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("parameter name is not UTF-8".into()))?
                .to_string();
            let d = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
            let offset = r.u64()?;
            manifest.push((name, Shape4::new(d[0], d[1], d[2], d[3]), offset));
        }
        let payload_len = r.len_u64()?;
        let payload = r.take(payload_len)?;
        if r.pos != body.len() {
            return Err(bad("trailing bytes after payload".into()));
        }
        let param_bytes: usize = manifest.iter().map(|(_, s, _)| 4 * s.numel()).sum();
        if payload_len != 3 * param_bytes {
            return Err(bad(format!("payload of {payload_len} bytes, expected {}", 3 * param_bytes)));
        }
        let section = |base: usize| -> Result<Vec<Tensor>> {
            manifest
                .iter()
                .map(|(name, shape, offset)| {
                    let start = base + *offset as usize;
                    let end = start + 4 * shape.numel();
                    if end > base + param_bytes {
                        return Err(bad(format!("parameter {name} runs past the payload")));
                    }
                    let data = payload[start..end]
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    Tensor::from_vec(*shape, data)
                })
                .collect()
        };
        let values = section(0)?;
        let m = section(param_bytes)?;
        let v = section(2 * param_bytes)?;
        let net = CwtNet::new(config.network.clone())?;
        let entries = manifest.into_iter().map(|(n, _, _)| n).zip(values).collect();
        let params = Parameters::from_entries(net.layout(), entries).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint {
            config,
            step,
            params,
            adam: AdamState { step: adam_step, m, v },
        })
    }

    /// Writes through a temporary sibling and renames, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::data(self.origin, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::data(self.origin, format!("length {v} out of range")))
    }
}
