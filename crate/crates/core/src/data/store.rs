//! Embedding store file: magic `XMEB`, `u32` version, `u64` count, `u32`
//! dim, row-major LE `f32` matrix, then `u32`-length-prefixed UTF-8 ids.

use std::collections::HashSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::kernels::l2_norm;
use crate::numerics::Tensor2;

pub const MAGIC: &[u8; 4] = b"XMEB";
pub const VERSION: u32 = 1;
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    vectors: Tensor2,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, vectors: Tensor2) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::dim(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.rows()
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate store id `{id}`")));
            }
        }
        for r in 0..vectors.rows() {
            let n = l2_norm(vectors.row(r));
            if !((n - 1.0).abs() <= NORM_TOL) {
                return Err(Error::Contract(format!(
                    "store row `{}` has norm {n}",
                    ids[r]
                )));
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        let mut t = Tensor2::zeros(rows.len(), dim);
        for (r, v) in rows.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::dim(format!("row of length {} in a {dim}-dim store", v.len())));
            }
            t.row_mut(r).copy_from_slice(v);
        }
        Self::new(ids, t)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Tensor2 {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.vectors.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::StoreFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::StoreFormat(format!("unsupported version {version}")));
        }
        let count = usize::try_from(r.u64()?).map_err(|_| Error::Corruption("count overflows".into()))?;
        let dim = r.u32()? as usize;
        let n = count
            .checked_mul(dim)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Corruption("matrix larger than file".into()))?;
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            ids.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::Corruption("id is not UTF-8".into()))?,
            );
        }
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let vectors = Tensor2::from_vec(count, dim, data)?;
        Self::new(ids, vectors).map_err(|e| match e {
            Error::Contract(m) | Error::Data(m) => Error::Corruption(m),
            other => other,
        })
    }
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
            .ok_or_else(|| Error::Corruption("store file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Hex SHA-256 of the encoded store.
pub fn store_checksum(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn store_write(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<String> {
    let path = path.as_ref();
    let bytes = store.encode();
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(store_checksum(&bytes))
}

/// Reads a store and returns it with the checksum of the file bytes.
pub fn store_read(path: impl AsRef<Path>) -> Result<(EmbeddingStore, String)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((EmbeddingStore::decode(&bytes)?, store_checksum(&bytes)))
}
