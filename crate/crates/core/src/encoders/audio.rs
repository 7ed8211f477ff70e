use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sinusoidal_positions, Linear, TransformerBlock};
use crate::audio::mel::N_MELS;
use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, Tensor2};

/// What the audio encoder consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioInput {
    Mel(MelSpectrogram),
    /// Precomputed feature vector (bypasses the mel front end).
    Feature(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AudioBackbone {
    /// Patch-embedded mel frames, CLS token, transformer.
    Transformer,
    /// Two-layer perceptron over a precomputed feature vector.
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioEncoderConfig {
    pub backbone: AudioBackbone,
    pub embed_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn: usize,
    pub patch_frames: usize,
    /// Input length for the feature backbone.
    pub feature_dim: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self {
            backbone: AudioBackbone::Transformer,
            embed_dim: 64,
            width: 64,
            depth: 2,
            heads: 4,
            ffn: 128,
            patch_frames: 16,
            feature_dim: 0,
        }
    }
}

impl AudioEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.width == 0 {
            return Err(Error::Config("audio embed_dim and width must be > 0".into()));
        }
        match self.backbone {
            AudioBackbone::Transformer => {
                if self.heads == 0 || self.width % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "audio heads {} must divide width {}",
                        self.heads, self.width
                    )));
                }
                if self.patch_frames == 0 || self.ffn == 0 {
                    return Err(Error::Config("patch_frames and ffn must be > 0".into()));
                }
            }
            AudioBackbone::Feature => {
                if self.feature_dim == 0 {
                    return Err(Error::Config("feature backbone needs feature_dim > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AudioTransformer {
    patch_embed: Linear,
    cls: ParamId,
    blocks: Vec<TransformerBlock>,
    proj: Linear,
    patch_frames: usize,
    width: usize,
}

impl AudioTransformer {
    pub fn new(store: &mut ParamStore, cfg: &AudioEncoderConfig, rng: &mut impl Rng) -> Self {
        let w = cfg.width;
        let patch_embed = Linear::new(
            store,
            "audio.patch_embed",
            cfg.patch_frames * N_MELS,
            w,
            true,
            rng,
        );
        let cls = store.add_normal("audio.cls", 1, w, 0.02, rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::new(store, &format!("audio.block{i}"), w, cfg.heads, cfg.ffn, rng)
            })
            .collect();
        let proj = Linear::new(store, "audio.proj", w, cfg.embed_dim, true, rng);
        Self {
            patch_embed,
            cls,
            blocks,
            proj,
            patch_frames: cfg.patch_frames,
            width: w,
        }
    }

    /// Non-overlapping patches of `patch_frames` frames, trailing frames dropped.
    pub fn patches(&self, mel: &MelSpectrogram) -> Result<Tensor2> {
        if mel.mel_bins() != N_MELS {
            return Err(Error::dim(format!(
                "mel has {} bins, expected {N_MELS}",
                mel.mel_bins()
            )));
        }
        let n = mel.frames() / self.patch_frames;
        if n == 0 {
            return Err(Error::Length(format!(
                "{} frames; one patch needs {}",
                mel.frames(),
                self.patch_frames
            )));
        }
        let per = self.patch_frames * N_MELS;
        Tensor2::from_vec(n, per, mel.values.data()[..n * per].to_vec())
    }

    /// CLS-position output (`1 × width`) for one spectrogram.
    fn cls_output(&self, tape: &mut Tape<'_>, mel: &MelSpectrogram) -> Result<NodeId> {
        let patches = self.patches(mel)?;
        let n = patches.rows();
        let x = tape.input(patches);
        let x = self.patch_embed.forward(tape, x)?;
        let pe = tape.input(sinusoidal_positions(n, self.width));
        let x = tape.add(x, pe)?;
        let cls = tape.param(self.cls);
        let mut x = tape.concat_rows(&[cls, x])?;
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        tape.slice_rows(x, 0, 1)
    }

    pub fn forward_batch(&self, tape: &mut Tape<'_>, mels: &[&MelSpectrogram]) -> Result<NodeId> {
        if mels.is_empty() {
            return Err(Error::EmptyInput("empty audio batch".into()));
        }
        let rows = mels
            .iter()
            .map(|m| self.cls_output(tape, m))
            .collect::<Result<Vec<_>>>()?;
        let h = tape.concat_rows(&rows)?;
        let z = self.proj.forward(tape, h)?;
        tape.l2_normalize_rows(z)
    }
}

#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    hidden: Linear,
    proj: Linear,
    feature_dim: usize,
}

impl FeatureEncoder {
    pub fn new(store: &mut ParamStore, cfg: &AudioEncoderConfig, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(store, "audio_feature.hidden", cfg.feature_dim, cfg.width, true, rng),
            proj: Linear::new(store, "audio_feature.proj", cfg.width, cfg.embed_dim, true, rng),
            feature_dim: cfg.feature_dim,
        }
    }

    pub fn forward_batch(&self, tape: &mut Tape<'_>, features: &[&[f64]]) -> Result<NodeId> {
        if features.is_empty() {
            return Err(Error::EmptyInput("empty audio batch".into()));
        }
        let mut x = Tensor2::zeros(features.len(), self.feature_dim);
        for (r, f) in features.iter().enumerate() {
            if f.len() != self.feature_dim {
                return Err(Error::dim(format!(
                    "feature of length {}, encoder expects {}",
                    f.len(),
                    self.feature_dim
                )));
            }
            x.row_mut(r).copy_from_slice(f);
        }
        x.ensure_finite("audio features")?;
        let x = tape.input(x);
        let h = self.hidden.forward(tape, x)?;
        let h = tape.gelu(h);
        let z = self.proj.forward(tape, h)?;
        tape.l2_normalize_rows(z)
    }
}

#[derive(Debug, Clone)]
pub enum AudioEncoder {
    Transformer(AudioTransformer),
    Feature(FeatureEncoder),
}

impl AudioEncoder {
    pub fn new(store: &mut ParamStore, cfg: &AudioEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.backbone {
            AudioBackbone::Transformer => AudioEncoder::Transformer(AudioTransformer::new(store, cfg, rng)),
            AudioBackbone::Feature => AudioEncoder::Feature(FeatureEncoder::new(store, cfg, rng)),
        })
    }

    /// Unit-norm embeddings, one row per input.
    pub fn forward_batch(&self, tape: &mut Tape<'_>, inputs: &[&AudioInput]) -> Result<NodeId> {
        match self {
            AudioEncoder::Transformer(enc) => {
                let mels = inputs
                    .iter()
                    .map(|i| match i {
                        AudioInput::Mel(m) => Ok(m),
                        AudioInput::Feature(_) => Err(Error::Contract(
                            "transformer audio encoder needs mel input".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                enc.forward_batch(tape, &mels)
            }
            AudioEncoder::Feature(enc) => {
                let feats = inputs
                    .iter()
                    .map(|i| match i {
                        AudioInput::Feature(f) => Ok(f.as_slice()),
                        AudioInput::Mel(_) => Err(Error::Contract(
                            "feature audio encoder needs a precomputed feature".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                enc.forward_batch(tape, &feats)
            }
        }
    }
}
