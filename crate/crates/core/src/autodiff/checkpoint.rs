//! Parameter checkpoints: `GMAEP1`, `u64` count, then per parameter a
//! `u64`-length-prefixed UTF-8 id, `u64` rows, `u64` cols and the
//! little-endian `f64` values. All integers are little-endian.

use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PARAM_MAGIC: &[u8; 6] = b"GMAEP1";

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.id.len() as u64).to_le_bytes());
        out.extend_from_slice(p.id.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }
}

/// Decodes a checkpoint into `(id, tensor)` pairs in file order.
pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(PARAM_MAGIC.len()).ok() != Some(PARAM_MAGIC.as_slice()) {
        return Err(Error::Format("missing GMAEP1 magic".into()));
    }
    let count = r.len()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let id_len = r.len()?;
        let id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Format("parameter id is not UTF-8".into()))?;
        let rows = r.len()?;
        let cols = r.len()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((id, Tensor::from_vec(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Overwrites every parameter in `store` from checkpoint bytes. The
/// checkpoint must hold exactly the store's ids with matching shapes.
pub fn load_params_into(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    let entries = decode_params(bytes)?;
    if entries.len() != store.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint has {} parameters, architecture expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (id, value) in entries {
        let pid = store
            .find(&id)
            .ok_or_else(|| Error::ArchitectureMismatch(format!("unexpected parameter {id}")))?;
        let p = store.get_mut(pid);
        if p.value.shape() != value.shape() {
            return Err(Error::ArchitectureMismatch(format!(
                "{id}: checkpoint shape {:?}, architecture shape {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
    }
    Ok(())
}
