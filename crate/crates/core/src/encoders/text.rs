use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{LayerNorm, Linear, TransformerBlock};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, Tensor2};
use crate::text::{TextInput, WordVectorTable, MAX_LEN, SOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextBackbone {
    /// Frozen word vectors, learned projection, averaged.
    Bow,
    Transformer,
}

impl std::str::FromStr for TextBackbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(TextBackbone::Bow),
            "transformer" => Ok(TextBackbone::Transformer),
            other => Err(Error::Config(format!("unknown text encoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub backbone: TextBackbone,
    pub embed_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub word_vector_dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            backbone: TextBackbone::Transformer,
            embed_dim: 64,
            width: 64,
            depth: 2,
            heads: 4,
            ffn: 128,
            max_len: MAX_LEN,
            vocab_size: 0,
            word_vector_dim: 0,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("text embed_dim must be > 0".into()));
        }
        match self.backbone {
            TextBackbone::Bow => {
                if self.word_vector_dim == 0 {
                    return Err(Error::Config("bow encoder needs word vectors".into()));
                }
            }
            TextBackbone::Transformer => {
                if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "text heads {} must divide width {}",
                        self.heads, self.width
                    )));
                }
                if self.vocab_size < 2 || self.max_len == 0 || self.max_len > MAX_LEN {
                    return Err(Error::Config("bad text vocab_size or max_len".into()));
                }
            }
        }
        Ok(())
    }
}

/// Word-vector averaging encoder. The table is frozen; only the projection
/// trains.
#[derive(Debug, Clone)]
pub struct BowEncoder {
    proj: ParamId,
    table: WordVectorTable,
}

impl BowEncoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &TextEncoderConfig,
        table: WordVectorTable,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if table.dim() != cfg.word_vector_dim {
            return Err(Error::dim(format!(
                "word vectors have dim {}, config says {}",
                table.dim(),
                cfg.word_vector_dim
            )));
        }
        let std = 1.0 / (table.dim() as f64).sqrt();
        let proj = store.add_normal("text_bow.proj", table.dim(), cfg.embed_dim, std, rng);
        Ok(Self { proj, table })
    }

    pub fn table(&self) -> &WordVectorTable {
        &self.table
    }

    /// Mean word vector of an input; unknown words count as zero.
    pub fn mean_vector(&self, input: &TextInput) -> Result<Vec<f64>> {
        if input.words.is_empty() {
            return Err(Error::EmptyInput("text input without words".into()));
        }
        let mut acc = vec![0.0; self.table.dim()];
        for w in &input.words {
            if let Some(v) = self.table.get(w) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
        }
        let n = input.words.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    // The projection is linear, so projecting then averaging equals
    // averaging then projecting.
    pub fn forward_batch(&self, tape: &mut Tape<'_>, inputs: &[&TextInput]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("empty text batch".into()));
        }
        let mut x = Tensor2::zeros(inputs.len(), self.table.dim());
        for (r, input) in inputs.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&self.mean_vector(input)?);
        }
        let x = tape.input(x);
        let w = tape.param(self.proj);
        let z = tape.matmul(x, w)?;
        tape.l2_normalize_rows(z)
    }
}

#[derive(Debug, Clone)]
pub struct TextTransformer {
    token_embed: ParamId,
    pos_embed: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_final: LayerNorm,
    proj: Linear,
    max_len: usize,
}

impl TextTransformer {
    pub fn new(store: &mut ParamStore, cfg: &TextEncoderConfig, rng: &mut impl Rng) -> Self {
        let w = cfg.width;
        let token_embed = store.add_normal("text_transformer.token_embed", cfg.vocab_size, w, 0.1, rng);
        let pos_embed = store.add_normal("text_transformer.pos_embed", cfg.max_len, w, 0.02, rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("text_transformer.block{i}"),
                    w,
                    cfg.heads,
                    cfg.ffn,
                    rng,
                )
            })
            .collect();
        let ln_final = LayerNorm::new(store, "text_transformer.ln_final", w);
        let proj = Linear::new(store, "text_transformer.proj", w, cfg.embed_dim, true, rng);
        Self {
            token_embed,
            pos_embed,
            blocks,
            ln_final,
            proj,
            max_len: cfg.max_len,
        }
    }

    fn sos_output(&self, tape: &mut Tape<'_>, input: &TextInput) -> Result<NodeId> {
        let tokens = &input.tokens;
        if tokens.first() != Some(&SOS) {
            return Err(Error::Contract("text sequence must start with SOS".into()));
        }
        if tokens.len() > self.max_len {
            return Err(Error::Contract(format!(
                "sequence of {} tokens exceeds {}",
                tokens.len(),
                self.max_len
            )));
        }
        let table = tape.param(self.token_embed);
        let emb = tape.gather(table, tokens)?;
        let pos = tape.param(self.pos_embed);
        let pos = tape.slice_rows(pos, 0, tokens.len())?;
        let mut x = tape.add(emb, pos)?;
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        tape.slice_rows(x, 0, 1)
    }

    pub fn forward_batch(&self, tape: &mut Tape<'_>, inputs: &[&TextInput]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("empty text batch".into()));
        }
        let rows = inputs
            .iter()
            .map(|i| self.sos_output(tape, i))
            .collect::<Result<Vec<_>>>()?;
        let h = tape.concat_rows(&rows)?;
        let h = self.ln_final.forward(tape, h)?;
        let z = self.proj.forward(tape, h)?;
        tape.l2_normalize_rows(z)
    }
}

#[derive(Debug, Clone)]
pub enum TextEncoder {
    Bow(BowEncoder),
    Transformer(TextTransformer),
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &TextEncoderConfig,
        table: Option<WordVectorTable>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        match cfg.backbone {
            TextBackbone::Bow => {
                let table = table
                    .ok_or_else(|| Error::Config("bow encoder needs a word-vector table".into()))?;
                Ok(TextEncoder::Bow(BowEncoder::new(store, cfg, table, rng)?))
            }
            TextBackbone::Transformer => {
                Ok(TextEncoder::Transformer(TextTransformer::new(store, cfg, rng)))
            }
        }
    }

    pub fn forward_batch(&self, tape: &mut Tape<'_>, inputs: &[&TextInput]) -> Result<NodeId> {
        match self {
            TextEncoder::Bow(e) => e.forward_batch(tape, inputs),
            TextEncoder::Transformer(e) => e.forward_batch(tape, inputs),
        }
    }
}
