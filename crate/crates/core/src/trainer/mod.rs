//! Mini-batch training with Adam, two learning-rate groups and seeded
//! batching.

pub mod adam;
pub mod config;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{load_wav, mel_spectrogram, sample_chunk};
use crate::data::{Dataset, Split, TrackRecord};
use crate::encoders::{
    AudioBackbone, AudioEncoderConfig, AudioInput, CheckpointMeta, Model, ModelSpec, TextBackbone,
    TextEncoderConfig,
};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor2};
use crate::objectives::{
    bce_with_logits, clamp_temperature, info_nce_symmetric, triplet_loss_symmetric, ObjectiveConfig,
    ObjectiveKind,
};
use crate::text::{
    sentence_representation, stochastic_representation, tag_representation, TextInput, TextMode,
    Vocabulary, WordVectorTable,
};

pub use adam::AdamState;
pub use config::{parse_config, ConfigFile};

pub const CHUNK_SECONDS: f64 = 9.91;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub lr_main: f64,
    pub lr_text_transformer: f64,
    pub objective: ObjectiveConfig,
    pub text_rep: TextMode,
    pub audio: AudioEncoderConfig,
    /// Ignored by the classification objective.
    pub text: TextEncoderConfig,
    /// Emit an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
    pub chunk_seconds: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 1000,
            seed: 0,
            lr_main: 1e-3,
            lr_text_transformer: 5e-5,
            objective: ObjectiveConfig::new(ObjectiveKind::Contrastive),
            text_rep: TextMode::Stochastic,
            audio: AudioEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            checkpoint_every: None,
            chunk_seconds: CHUNK_SECONDS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        for (name, lr) in [("lr_main", self.lr_main), ("lr_text_transformer", self.lr_text_transformer)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be ≥ 1".into()));
        }
        if !(self.chunk_seconds > 0.0) {
            return Err(Error::Config("chunk_seconds must be > 0".into()));
        }
        self.objective.validate()
    }

    pub fn meta(&self, step: u64) -> CheckpointMeta {
        CheckpointMeta {
            seed: self.seed,
            step,
            objective: Some(self.objective.kind.to_string()),
            text_rep: (self.objective.kind != ObjectiveKind::Classification)
                .then(|| self.text_rep.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    /// Temperature after the step, for contrastive runs.
    pub tau: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
}

pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut out = String::from("step,loss,tau\n");
    for r in log {
        let tau = r.tau.map(|t| format!("{t:e}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:e},{}", r.step, r.loss, tau);
    }
    out
}

pub fn write_loss_csv(path: impl AsRef<Path>, log: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_csv(log)).map_err(|e| Error::io(path, e))
}

/// Model layout implied by the config and the training data.
pub fn model_spec(cfg: &TrainConfig, dataset: &Dataset, table: Option<&WordVectorTable>) -> Result<(ModelSpec, Vocabulary)> {
    let train = dataset.split(Split::Train);
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyInput("training split is empty".into()))?;
    let mut audio = cfg.audio.clone();
    if audio.backbone == AudioBackbone::Feature {
        audio.feature_dim = first
            .feature
            .as_ref()
            .map(Vec::len)
            .ok_or_else(|| Error::Data(format!("track `{}` has no feature vector", first.id)))?;
    }
    let vocab = dataset.vocabulary()?;
    let spec = if cfg.objective.kind == ObjectiveKind::Classification {
        ModelSpec {
            audio,
            text: None,
            head_tags: Some(dataset.tags(Split::Train)),
            temperature: None,
        }
    } else {
        let mut text = cfg.text.clone();
        text.embed_dim = audio.embed_dim;
        match text.backbone {
            TextBackbone::Bow => {
                text.word_vector_dim = table
                    .ok_or_else(|| Error::Config("bow text encoder needs word vectors".into()))?
                    .dim();
            }
            TextBackbone::Transformer => text.vocab_size = vocab.len(),
        }
        ModelSpec {
            audio,
            text: Some(text),
            head_tags: None,
            temperature: (cfg.objective.kind == ObjectiveKind::Contrastive)
                .then_some(cfg.objective.temperature),
        }
    };
    Ok((spec, vocab))
}

/// Audio input for training: the precomputed feature, or a random chunk of
/// the track's WAV turned into a log-mel spectrogram.
pub fn training_audio(
    dataset: &Dataset,
    rec: &TrackRecord,
    backbone: AudioBackbone,
    chunk_seconds: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AudioInput> {
    match backbone {
        AudioBackbone::Feature => rec
            .feature
            .clone()
            .map(AudioInput::Feature)
            .ok_or_else(|| Error::Data(format!("track `{}` has no feature vector", rec.id))),
        AudioBackbone::Transformer => {
            let path = dataset
                .audio_path(rec)
                .ok_or_else(|| Error::Data(format!("track `{}` has no audio", rec.id)))?;
            let clip = load_wav(path)?;
            let chunk = sample_chunk(&clip, chunk_seconds, rng)?;
            Ok(AudioInput::Mel(mel_spectrogram(&chunk)?))
        }
    }
}

fn text_input(mode: TextMode, tags: &[String], vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Result<TextInput> {
    match mode {
        TextMode::Tag => tag_representation(tags, vocab, rng),
        TextMode::Sentence => sentence_representation(tags, vocab, rng),
        TextMode::Stochastic => Ok(stochastic_representation(tags, vocab, rng)?.0),
    }
}

/// Trains without intermediate checkpoints.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, table: Option<WordVectorTable>) -> Result<TrainOutcome> {
    train_with(cfg, dataset, table, |_, _| Ok(()))
}

/// Trains for `cfg.steps` steps. `on_checkpoint(step, model)` fires every
/// `checkpoint_every` steps; the final model is returned rather than
/// reported. Parameters are initialized from `seed`, batches and text
/// sampling draw from `seed + 1`.
pub fn train_with(
    cfg: &TrainConfig,
    dataset: &Dataset,
    table: Option<WordVectorTable>,
    mut on_checkpoint: impl FnMut(u64, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (spec, vocab) = model_spec(cfg, dataset, table.as_ref())?;
    let table = spec.text.as_ref().and_then(|t| (t.backbone == TextBackbone::Bow).then_some(table)).flatten();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(spec, vocab, table, &mut init_rng)?;

    let train: Vec<&TrackRecord> = dataset.split(Split::Train);
    if train.len() < cfg.batch_size {
        return Err(Error::Batch(format!(
            "{} training tracks cannot fill a batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let head_index: Option<std::collections::BTreeMap<&str, usize>> = model
        .spec
        .head_tags
        .as_ref()
        .map(|tags| tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(&model.store);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = Vec::with_capacity(cfg.steps as usize);

    for step in 1..=cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<&TrackRecord> = order[cursor..cursor + cfg.batch_size].iter().map(|&i| train[i]).collect();
        cursor += cfg.batch_size;

        let audio = batch
            .iter()
            .map(|r| training_audio(dataset, r, model.spec.audio.backbone, cfg.chunk_seconds, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let audio_refs: Vec<&AudioInput> = audio.iter().collect();

        let (loss, grads, grad_tau) = {
            let mut tape = Tape::new(&model.store);
            let za = model.audio.forward_batch(&mut tape, &audio_refs)?;
            match cfg.objective.kind {
                ObjectiveKind::Classification => {
                    let head = model.head.as_ref().ok_or(Error::Contract("missing head".into()))?;
                    let index = head_index.as_ref().expect("classification model has head tags");
                    let mut labels = Tensor2::zeros(batch.len(), index.len());
                    for (r, rec) in batch.iter().enumerate() {
                        for t in &rec.tags {
                            labels.set(r, index[t.as_str()], 1.0);
                        }
                    }
                    let logits = head.logits(&mut tape, za)?;
                    let out = bce_with_logits(tape.value(logits), &labels)?;
                    let g = tape.backward(&[(logits, out.grad_logits)])?;
                    (out.loss, g, None)
                }
                kind => {
                    let texts = batch
                        .iter()
                        .map(|r| text_input(cfg.text_rep, &r.tags, &model.vocab, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    let text_refs: Vec<&TextInput> = texts.iter().collect();
                    let zt = model.text_encoder()?.forward_batch(&mut tape, &text_refs)?;
                    let (va, vt) = (tape.value(za).clone(), tape.value(zt).clone());
                    if kind == ObjectiveKind::Contrastive {
                        let tau = model.temperature_value().ok_or(Error::Contract("missing temperature".into()))?;
                        let out = info_nce_symmetric(&va, &vt, tau)?;
                        let g = tape.backward(&[(za, out.grad_a), (zt, out.grad_t)])?;
                        (out.loss, g, Some(out.grad_tau))
                    } else {
                        let out = triplet_loss_symmetric(&va, &vt, &cfg.objective, &mut rng)?;
                        let g = tape.backward(&[(za, out.grad_a), (zt, out.grad_t)])?;
                        (out.loss, g, None)
                    }
                }
            }
        };
        if !loss.is_finite() {
            return Err(Error::NanLoss { step, loss });
        }

        model.store.zero_grad();
        grads.accumulate_into(&mut model.store)?;
        if let (Some(g), Some(id)) = (grad_tau, model.temperature) {
            model.store.accumulate(id, &Tensor2::scalar(g))?;
        }
        let (lr_main, lr_text) = (cfg.lr_main, cfg.lr_text_transformer);
        adam.step(&mut model.store, |p| if Model::uses_text_lr(&p.name) { lr_text } else { lr_main })?;
        if let Some(id) = model.temperature {
            let t = &mut model.store.get_mut(id).value.data_mut()[0];
            *t = clamp_temperature(*t);
        }
        log.push(LossRecord {
            step,
            loss,
            tau: model.temperature_value(),
        });
        if cfg.checkpoint_every.is_some_and(|every| step % every == 0) && step != cfg.steps {
            on_checkpoint(step, &model)?;
        }
    }
    model.store.zero_grad();
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::encoders::checkpoint::encode_checkpoint;

    fn small() -> (Dataset, WordVectorTable) {
        let spec = SyntheticSpec {
            clusters: 3,
            tracks_per_cluster: 24,
            feature_dim: 8,
            word_vector_dim: 8,
            artists_per_cluster: 7,
            ..SyntheticSpec::default()
        };
        let s = generate_synthetic(&spec).unwrap();
        (s.dataset(), s.word_vectors().clone())
    }

    fn cfg(kind: ObjectiveKind, steps: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            steps,
            objective: ObjectiveConfig::new(kind),
            audio: AudioEncoderConfig {
                backbone: AudioBackbone::Feature,
                embed_dim: 16,
                width: 16,
                ..AudioEncoderConfig::default()
            },
            text: TextEncoderConfig {
                backbone: TextBackbone::Bow,
                ..TextEncoderConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_is_the_initialization() {
        let (d, wv) = small();
        let c = cfg(ObjectiveKind::Contrastive, 0);
        let out = train(&c, &d, Some(wv.clone())).unwrap();
        assert!(out.log.is_empty());
        let (spec, vocab) = model_spec(&c, &d, Some(&wv)).unwrap();
        let init = Model::new(spec, vocab, Some(wv), &mut ChaCha8Rng::seed_from_u64(c.seed)).unwrap();
        assert_eq!(
            encode_checkpoint(&out.model, &c.meta(0)).unwrap(),
            encode_checkpoint(&init, &c.meta(0)).unwrap()
        );
    }

    #[test]
    fn batch_larger_than_training_split() {
        let (d, wv) = small();
        let mut c = cfg(ObjectiveKind::Contrastive, 1);
        c.batch_size = 10_000;
        assert!(matches!(train(&c, &d, Some(wv)), Err(Error::Batch(_))));
    }

    #[test]
    fn same_seed_same_trace_for_every_objective() {
        let (d, wv) = small();
        for kind in [ObjectiveKind::Contrastive, ObjectiveKind::Triplet, ObjectiveKind::Classification] {
            let c = cfg(kind, 12);
            let a = train(&c, &d, Some(wv.clone())).unwrap();
            let b = train(&c, &d, Some(wv.clone())).unwrap();
            assert_eq!(a.log, b.log, "{kind}");
            assert_eq!(
                encode_checkpoint(&a.model, &c.meta(12)).unwrap(),
                encode_checkpoint(&b.model, &c.meta(12)).unwrap()
            );
            assert!(a.log.iter().all(|r| r.loss.is_finite()));
        }
    }

    #[test]
    fn loss_falls_and_temperature_stays_above_floor() {
        let (d, wv) = small();
        let mut c = cfg(ObjectiveKind::Contrastive, 300);
        c.lr_main = 3e-3;
        let out = train(&c, &d, Some(wv)).unwrap();
        let mean = |s: &[LossRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
        assert!(mean(&out.log[280..]) < mean(&out.log[..20]));
        assert!(out.log.iter().all(|r| r.tau.unwrap() >= 1e-3));
    }

    #[test]
    fn checkpoints_fire_at_the_interval() {
        let (d, wv) = small();
        let mut c = cfg(ObjectiveKind::Triplet, 7);
        c.checkpoint_every = Some(3);
        let mut seen = vec![];
        train_with(&c, &d, Some(wv), |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![3, 6]);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = loss_csv(&[
            LossRecord { step: 1, loss: 0.5, tau: Some(0.2) },
            LossRecord { step: 2, loss: 0.25, tau: None },
        ]);
        assert_eq!(csv, "step,loss,tau\n1,5e-1,2e-1\n2,2.5e-1,\n");
    }

    #[test]
    fn transformer_learning_rate_group() {
        assert!(Model::uses_text_lr("text_transformer.block0.qkv.weight"));
        assert!(!Model::uses_text_lr("text_bow.proj"));
        assert!(!Model::uses_text_lr("audio.proj.weight"));
    }
}
