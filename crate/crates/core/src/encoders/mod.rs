//! Audio and text encoders into the shared unit-sphere embedding space, the
//! classification head, and the model checkpoint.

pub mod audio;
pub mod checkpoint;
pub mod layers;
pub mod text;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use audio::{AudioBackbone, AudioEncoder, AudioEncoderConfig, AudioInput};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use text::{TextBackbone, TextEncoder, TextEncoderConfig};

use crate::error::{Error, Result};
use crate::numerics::kernels::l2_norm;
use crate::numerics::{sigmoid, NodeId, ParamId, ParamStore, Tape, Tensor2};
use crate::text::{TextInput, Vocabulary, WordVectorTable};

pub const UNIT_NORM_TOL: f64 = 1e-9;
pub const TEMPERATURE_PARAM: &str = "objective.temperature";
pub const TEXT_TRANSFORMER_PREFIX: &str = "text_transformer.";

/// A unit-norm vector in the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&vector);
        if !n.is_finite() {
            return Err(Error::NonFinite("embedding".into()));
        }
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(vector))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        crate::numerics::tensor::dot(&self.0, &other.0)
    }
}

fn rows_to_embeddings(t: &Tensor2) -> Result<Vec<Embedding>> {
    (0..t.rows()).map(|r| Embedding::new(t.row(r).to_vec())).collect()
}

/// Per-class centroid rows `c_k`; logits are `z · c_k`.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub centroids: ParamId,
    pub tags: Vec<String>,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, tags: Vec<String>, dim: usize, rng: &mut impl Rng) -> Self {
        let centroids = store.add_normal("head.centroids", tags.len(), dim, 1.0 / (dim as f64).sqrt(), rng);
        Self { centroids, tags }
    }

    /// `B × K` logits for a `B × d` embedding node.
    pub fn logits(&self, tape: &mut Tape<'_>, z: NodeId) -> Result<NodeId> {
        let c = tape.param(self.centroids);
        tape.matmul_bt(z, c)
    }
}

/// `sigmoid(z · c_k)` for every centroid row.
pub fn classify_scores(z: &Embedding, centroids: &Tensor2) -> Result<Vec<f64>> {
    if centroids.cols() != z.dim() {
        return Err(Error::dim(format!(
            "embedding dim {} vs centroid dim {}",
            z.dim(),
            centroids.cols()
        )));
    }
    Ok((0..centroids.rows())
        .map(|k| sigmoid(crate::numerics::tensor::dot(z.as_slice(), centroids.row(k))))
        .collect())
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub audio: AudioEncoderConfig,
    /// Absent for the classification model.
    pub text: Option<TextEncoderConfig>,
    /// Training tag vocabulary of the classification head.
    pub head_tags: Option<Vec<String>>,
    /// Initial learnable temperature (contrastive models only).
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub audio: AudioEncoder,
    pub text: Option<TextEncoder>,
    pub head: Option<ClassifierHead>,
    pub temperature: Option<ParamId>,
    pub vocab: Vocabulary,
}

impl Model {
    /// Fresh initialization. Parameters are drawn from `rng` in a fixed
    /// order: audio, text, head, temperature.
    pub fn new(
        spec: ModelSpec,
        vocab: Vocabulary,
        table: Option<WordVectorTable>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let audio = AudioEncoder::new(&mut store, &spec.audio, rng)?;
        let text = match &spec.text {
            Some(cfg) => {
                if cfg.embed_dim != spec.audio.embed_dim {
                    return Err(Error::Config(format!(
                        "audio dim {} != text dim {}",
                        spec.audio.embed_dim, cfg.embed_dim
                    )));
                }
                if cfg.backbone == TextBackbone::Transformer && cfg.vocab_size != vocab.len() {
                    return Err(Error::Config(format!(
                        "text vocab_size {} but vocabulary has {} entries",
                        cfg.vocab_size,
                        vocab.len()
                    )));
                }
                Some(TextEncoder::new(&mut store, cfg, table, rng)?)
            }
            None => None,
        };
        let head = match &spec.head_tags {
            Some(tags) if tags.is_empty() => {
                return Err(Error::Config("classification head without tags".into()))
            }
            Some(tags) => Some(ClassifierHead::new(&mut store, tags.clone(), spec.audio.embed_dim, rng)),
            None => None,
        };
        let temperature = match spec.temperature {
            Some(t) if t <= 0.0 || !t.is_finite() => {
                return Err(Error::Domain(format!("temperature {t} must be > 0")))
            }
            Some(t) => Some(store.add_filled(TEMPERATURE_PARAM, 1, 1, t)),
            None => None,
        };
        Ok(Self {
            spec,
            store,
            audio,
            text,
            head,
            temperature,
            vocab,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.audio.embed_dim
    }

    pub fn temperature_value(&self) -> Option<f64> {
        self.temperature.map(|id| self.store.value(id).data()[0])
    }

    pub fn text_encoder(&self) -> Result<&TextEncoder> {
        self.text
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no text encoder".into()))
    }

    pub fn word_vectors(&self) -> Option<&WordVectorTable> {
        match &self.text {
            Some(TextEncoder::Bow(b)) => Some(b.table()),
            _ => None,
        }
    }

    pub fn embed_audio(&self, inputs: &[&AudioInput]) -> Result<Vec<Embedding>> {
        let mut tape = Tape::new(&self.store);
        let z = self.audio.forward_batch(&mut tape, inputs)?;
        rows_to_embeddings(tape.value(z))
    }

    pub fn embed_text(&self, inputs: &[&TextInput]) -> Result<Vec<Embedding>> {
        let enc = self.text_encoder()?;
        let mut tape = Tape::new(&self.store);
        let z = enc.forward_batch(&mut tape, inputs)?;
        rows_to_embeddings(tape.value(z))
    }

    /// Per-class sigmoid scores for each audio embedding.
    pub fn classify(&self, z: &[Embedding]) -> Result<Vec<Vec<f64>>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no classification head".into()))?;
        let c = self.store.value(head.centroids);
        z.iter().map(|e| classify_scores(e, c)).collect()
    }

    /// Learning-rate group: transformer text parameters use the small rate.
    pub fn uses_text_lr(name: &str) -> bool {
        name.starts_with(TEXT_TRANSFORMER_PREFIX)
    }
}
