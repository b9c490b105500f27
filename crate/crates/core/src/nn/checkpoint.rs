//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "PINGPONG"
//! version    u32 LE
//! count      u32 LE
//! count x  { name_len u32 | name utf-8 | rows u32 | cols u32 | rows*cols f64 LE }
//! sha256     32 bytes over everything before it
//! ```
//!
//! Tensor names carry a prefix: `param:`, `buffer:`, `adam_m:`, `adam_v:`;
//! the optimizer step counter is stored as the 1x1 tensor `adam_step`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::store::{EntryKind, ParameterStore};
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PINGPONG";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rows() as u32);
    put_u32(out, t.cols() as u32);
    for x in t.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(store: &ParameterStore) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for e in &store.entries {
        match e.kind {
            EntryKind::Trainable => tensors.push((format!("param:{}", e.name), &e.value)),
            EntryKind::Buffer => tensors.push((format!("buffer:{}", e.name), &e.value)),
        }
    }
    for e in store.entries.iter().filter(|e| e.kind == EntryKind::Trainable) {
        tensors.push((format!("adam_m:{}", e.name), &e.m));
        tensors.push((format!("adam_v:{}", e.name), &e.v));
    }
    let step = Tensor::row_vector(vec![store.step as f64]);
    tensors.push(("adam_step".into(), &step));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterStore> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {VERSION})"
        )));
    }
    let body_end = bytes.len() - 32;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Checkpoint("checksum mismatch (file corrupt or truncated)".into()));
    }
    let r_bytes = &bytes[..body_end];
    let mut r = Reader { bytes: r_bytes, pos: r.pos };
    let count = r.u32()? as usize;
    let mut store = ParameterStore::new();
    let mut moments = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(rows, cols, data)?;
        if let Some(n) = name.strip_prefix("param:") {
            store.add_param(n, t)?;
        } else if let Some(n) = name.strip_prefix("buffer:") {
            store.add_buffer(n, t)?;
        } else if name == "adam_step" {
            store.step = t.as_slice().first().copied().unwrap_or(0.0) as u64;
        } else {
            moments.push((name, t));
        }
    }
    if r.pos != r_bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the tensor table".into()));
    }
    for (name, t) in moments {
        let (slot, base) = if let Some(n) = name.strip_prefix("adam_m:") {
            (0, n)
        } else if let Some(n) = name.strip_prefix("adam_v:") {
            (1, n)
        } else {
            return Err(Error::Checkpoint(format!("unknown tensor `{name}`")));
        };
        let id = store
            .id(base)
            .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter `{base}`")))?;
        let e = &mut store.entries[id.0];
        if t.shape() != e.value.shape() {
            return Err(Error::Checkpoint(format!("moment shape mismatch for `{base}`")));
        }
        if slot == 0 {
            e.m = t;
        } else {
            e.v = t;
        }
    }
    Ok(store)
}

pub fn save(store: &ParameterStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParameterStore> {
    decode(&std::fs::read(path)?)
}

/// Loads a checkpoint into a freshly built store, requiring identical names,
/// kinds and shapes.
pub fn load_into(store: &mut ParameterStore, path: &Path) -> Result<()> {
    let loaded = load(path)?;
    restore_into(store, loaded)
}

pub fn restore_into(store: &mut ParameterStore, loaded: ParameterStore) -> Result<()> {
    if loaded.len() != store.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {} tensors, the policy expects {}",
            loaded.len(),
            store.len()
        )));
    }
    for (a, b) in store.entries.iter().zip(&loaded.entries) {
        if a.name != b.name || a.kind != b.kind || a.value.shape() != b.value.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "expected `{}` {:?}, found `{}` {:?}",
                a.name,
                a.value.shape(),
                b.name,
                b.value.shape()
            )));
        }
    }
    *store = loaded;
    Ok(())
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
