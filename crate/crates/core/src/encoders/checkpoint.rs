//! Checkpoint layout: `u64` LE header length, UTF-8 JSON header, then every
//! tensor listed in the header as row-major little-endian `f64`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::text::{Vocabulary, WordVectorTable};

pub const FORMAT: &str = "tmr-checkpoint";
pub const VERSION: u32 = 1;
const WORD_VECTORS: &str = "text_bow.word_vectors";

/// Run information echoed into the header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub objective: Option<String>,
    pub text_rep: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    meta: CheckpointMeta,
    spec: ModelSpec,
    vocab: Vec<String>,
    /// Row order of the frozen word-vector tensor, when present.
    word_vector_tokens: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload: Vec<&[f64]> = Vec::new();
    for (_, p) in model.store.iter() {
        entries.push(TensorEntry {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
        });
        payload.push(p.value.data());
    }
    let mut wv_data = Vec::new();
    let word_vector_tokens = model.word_vectors().map(|t| {
        let tokens: Vec<String> = t.sorted_tokens().into_iter().map(String::from).collect();
        for tok in &tokens {
            wv_data.extend_from_slice(t.get(tok).expect("token listed by table"));
        }
        entries.push(TensorEntry {
            name: WORD_VECTORS.into(),
            rows: tokens.len(),
            cols: t.dim(),
        });
        tokens
    });
    if word_vector_tokens.is_some() {
        payload.push(&wv_data);
    }
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        meta: meta.clone(),
        spec: model.spec.clone(),
        vocab: model.vocab.tokens().to_vec(),
        word_vector_tokens,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.iter().map(|p| p.len() * 8).sum::<usize>());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for chunk in payload {
        for v in chunk {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Corruption("checkpoint shorter than its length prefix".into()))?;
    let hlen = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::Corruption("header length overflows".into()))?;
    let json = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| Error::Corruption("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| Error::StoreFormat(format!("checkpoint header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::StoreFormat(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }

    let mut cursor = 8 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n = e.rows.checked_mul(e.cols).ok_or_else(|| Error::Corruption("tensor size overflows".into()))?;
        let end = cursor + n * 8;
        let raw = bytes
            .get(cursor..end)
            .ok_or_else(|| Error::Corruption(format!("tensor `{}` truncated", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((e.name.as_str(), Tensor2::from_vec(e.rows, e.cols, data)?));
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after tensors",
            bytes.len() - cursor
        )));
    }

    let table = match &header.word_vector_tokens {
        Some(tokens) => {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == WORD_VECTORS)
                .ok_or_else(|| Error::StoreFormat("word-vector tensor missing".into()))?;
            if t.rows() != tokens.len() {
                return Err(Error::StoreFormat("word-vector row count mismatch".into()));
            }
            let mut table = WordVectorTable::new(t.cols());
            for (r, tok) in tokens.iter().enumerate() {
                table.insert(tok, t.row(r).to_vec())?;
            }
            Some(table)
        }
        None => None,
    };

    let vocab = Vocabulary::from_tokens(header.vocab)?;
    // initialization values are overwritten below; the rng only fixes shapes
    let mut model = Model::new(header.spec, vocab, table, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut seen = 0;
    for (name, t) in tensors {
        if name == WORD_VECTORS {
            continue;
        }
        let id = model
            .store
            .find(name)
            .ok_or_else(|| Error::StoreFormat(format!("unexpected tensor `{name}`")))?;
        let p = model.store.get_mut(id);
        if !p.value.same_shape(&t) {
            return Err(Error::StoreFormat(format!("shape mismatch for `{name}`")));
        }
        p.value = t;
        seen += 1;
    }
    if seen != model.store.len() {
        return Err(Error::StoreFormat(format!(
            "checkpoint has {seen} of {} parameters",
            model.store.len()
        )));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
