//! Binary checkpoint codec.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "LDLE" version count
//! count x { name_len name rank extents[rank] crc32(payload) payload(f32 LE) }
//! meta_count
//! meta_count x { key_len key value_len value }
//! crc32(all preceding bytes)
//! ```
//!
//! Decoding checks every per-tensor checksum and the trailing checksum, so
//! truncation and corruption are both reported as integrity errors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{bail, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{shape_for_dims, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LDLE";
pub const VERSION: u32 = 1;

pub type Meta = Vec<(String, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: ParamStore<f32>,
    pub meta: Meta,
}

pub fn meta_get<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn meta_parse<V: FromStr>(meta: &[(String, String)], key: &str) -> Result<Option<V>> {
    match meta_get(meta, key) {
        None => Ok(None),
        Some(v) => match v.parse() {
            Ok(x) => Ok(Some(x)),
            Err(_) => bail!(Format, "metadata {key}={v} does not parse"),
        },
    }
}

impl Checkpoint {
    pub fn new(tensors: ParamStore<f32>, meta: Meta) -> Self {
        Checkpoint { tensors, meta }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        meta_get(&self.meta, key)
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    /// Appends optimizer moments as `adam/m/<name>` and `adam/v/<name>`.
    pub fn attach_adam(&mut self, weights: &ParamStore<f32>, adam: &AdamState<f32>) -> Result<()> {
        for (i, e) in weights.iter().enumerate() {
            let shape = e.value.shape();
            self.tensors.insert(format!("adam/m/{}", e.name), &e.dims, Tensor::new(shape, adam.m[i].clone())?)?;
            self.tensors.insert(format!("adam/v/{}", e.name), &e.dims, Tensor::new(shape, adam.v[i].clone())?)?;
        }
        self.set_meta("optimizer_state", true);
        self.set_meta("adam.t", adam.t);
        self.set_meta("adam.lr", adam.config.lr);
        Ok(())
    }

    /// Restores optimizer moments for `weights`, if the checkpoint has them.
    pub fn adam_state(&self, weights: &ParamStore<f32>) -> Result<Option<AdamState<f32>>> {
        if meta_parse::<bool>(&self.meta, "optimizer_state")? != Some(true) {
            return Ok(None);
        }
        let t = meta_parse(&self.meta, "adam.t")?.unwrap_or(0);
        let lr = meta_parse(&self.meta, "adam.lr")?.unwrap_or(AdamConfig::default().lr);
        let mut state = AdamState::new(weights, AdamConfig::with_lr(lr));
        state.t = t;
        for (i, e) in weights.iter().enumerate() {
            for (kind, buf) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let name = format!("adam/{kind}/{}", e.name);
                let Some(t) = self.tensors.get(&name) else {
                    bail!(Format, "optimizer state lacks {name}");
                };
                if t.shape() != e.value.shape() {
                    bail!(Shape, "{name}: {} vs {}", t.shape(), e.value.shape());
                }
                buf.copy_from_slice(t.data());
            }
        }
        Ok(Some(state))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.tensors.len() as u32);
        for e in self.tensors.iter() {
            put_str(&mut out, &e.name);
            put_u32(&mut out, e.dims.len() as u32);
            for &d in &e.dims {
                put_u32(&mut out, d as u32);
            }
            let mut payload = Vec::with_capacity(4 * e.value.numel());
            for v in e.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            put_u32(&mut out, crc32fast::hash(&payload));
            out.extend_from_slice(&payload);
        }
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            bail!(Format, "not a checkpoint (bad magic)");
        }
        let version = r.u32()?;
        if version != VERSION {
            bail!(Format, "unsupported checkpoint version {version} (this build reads {VERSION})");
        }
        let count = r.u32()? as usize;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 4 {
                bail!(Format, "{name}: rank {rank} exceeds 4");
            }
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let shape = shape_for_dims(&dims)?;
            let crc = r.u32()?;
            let Some(len) = shape.numel().checked_mul(4) else {
                bail!(Format, "{name}: extents overflow");
            };
            let payload = r.take(len)?;
            if crc32fast::hash(payload) != crc {
                bail!(Integrity, "checksum mismatch in tensor {name}");
            }
            let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            tensors.insert(name, &dims, Tensor::new(shape, data)?).map_err(|e| match e {
                crate::Error::Format(m) => crate::Error::Format(format!("name collision: {m}")),
                other => other,
            })?;
        }
        let meta_count = r.u32()? as usize;
        let mut meta = Vec::with_capacity(meta_count.min(1024));
        for _ in 0..meta_count {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        let body_end = r.pos;
        let crc = r.u32()?;
        if crc32fast::hash(&bytes[..body_end]) != crc {
            bail!(Integrity, "trailing checksum mismatch");
        }
        if r.pos != bytes.len() {
            bail!(Integrity, "{} unexpected trailing bytes", bytes.len() - r.pos);
        }
        Ok(Checkpoint { tensors, meta })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            bail!(Integrity, "truncated checkpoint: needed {n} bytes at offset {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        match core::str::from_utf8(b) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => bail!(Format, "non-UTF-8 name at offset {}", self.pos - n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::StoreBuilder;

    fn sample() -> Checkpoint {
        let mut b = StoreBuilder::<f32>::new(11);
        b.conv("net/a", 3, 4, 3, 1.0).unwrap();
        b.layer_norm("net/ln", 4, 1.0).unwrap();
        Checkpoint::new(b.finish(), alloc::vec![("phase".into(), "one".into())])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn payload_corruption_detected() {
        let bytes = sample().encode();
        // first payload byte sits after magic, version, count, name, rank, dims, crc
        let first_payload = 4 + 4 + 4 + 4 + "net/a/kernel".len() + 4 + 16 + 4;
        let mut bad = bytes.clone();
        bad[first_payload + 5] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&bad), Err(crate::Error::Integrity(m)) if m.contains("net/a/kernel")));
    }

    #[test]
    fn truncation_and_version() {
        let bytes = sample().encode();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(crate::Error::Integrity(_)) | Err(crate::Error::Format(_))));
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::decode(&v2), Err(crate::Error::Format(m)) if m.contains("version 2")));
    }

    #[test]
    fn adam_state_round_trip() {
        let ck = sample();
        let mut adam = AdamState::new(&ck.tensors, AdamConfig::default());
        let grads: Vec<_> = ck.tensors.iter().map(|e| e.value.map(|v| v + 0.5)).collect();
        let mut w = ck.tensors.clone();
        adam.step(&mut w, &grads).unwrap();
        let mut full = Checkpoint::new(w.clone(), Meta::new());
        full.attach_adam(&w, &adam).unwrap();
        let back = Checkpoint::decode(&full.encode()).unwrap();
        assert_eq!(back.adam_state(&w).unwrap().unwrap(), adam);
        assert_eq!(back.tensors.conform_to(&w).unwrap(), w);
    }
}
