//! Glue between datasets, checkpoints, stores and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::audio::{load_wav, mel_spectrogram, AudioClip, CHUNK_SAMPLES};
use crate::data::{Dataset, EmbeddingStore, RetrievalPair, Split, TrackRecord};
use crate::encoders::{AudioBackbone, AudioInput, Embedding, Model};
use crate::error::{Error, Result};
use crate::evaluation::probe::ProbeConfig;
use crate::evaluation::{
    best_f1_threshold, cosine_scores, probe, sentence_retrieval, tag_metrics,
    tag_words, word_overlap_sentence_retrieval, zero_shot_scores, MetricReport, ProbeKind,
    ProbeReport, ProbeSplit, RankedResult,
};
use crate::numerics::kernels::l2_normalize;
use crate::numerics::Tensor2;
use crate::text::text_input_from_str;

const EMBED_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Text,
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        })
    }
}

/// Consecutive full chunks of a clip; a clip shorter than one chunk is
/// used whole.
fn eval_chunks(clip: &AudioClip) -> Vec<AudioClip> {
    if clip.len() < CHUNK_SAMPLES {
        return vec![clip.clone()];
    }
    clip.samples
        .chunks_exact(CHUNK_SAMPLES)
        .map(|c| AudioClip {
            samples: c.to_vec(),
            sample_rate: clip.sample_rate,
        })
        .collect()
}

/// Evaluation-time audio embedding: the feature vector, or the
/// renormalized mean over all chunks of the track's WAV.
pub fn embed_track_audio(model: &Model, dataset: &Dataset, rec: &TrackRecord) -> Result<Embedding> {
    let inputs = match model.spec.audio.backbone {
        AudioBackbone::Feature => vec![AudioInput::Feature(
            rec.feature
                .clone()
                .ok_or_else(|| Error::Data(format!("track `{}` has no feature vector", rec.id)))?,
        )],
        AudioBackbone::Transformer => {
            let path = dataset
                .audio_path(rec)
                .ok_or_else(|| Error::Data(format!("track `{}` has no audio", rec.id)))?;
            eval_chunks(&load_wav(path)?)
                .iter()
                .map(|c| mel_spectrogram(c).map(AudioInput::Mel))
                .collect::<Result<_>>()?
        }
    };
    let refs: Vec<&AudioInput> = inputs.iter().collect();
    let z = model.embed_audio(&refs)?;
    if z.len() == 1 {
        return Ok(z.into_iter().next().expect("one embedding"));
    }
    let mut mean = vec![0.0; model.embed_dim()];
    for e in &z {
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v / z.len() as f64;
        }
    }
    Embedding::new(l2_normalize(&mean)?)
}

/// Embeds every record, in file order. Text rows embed the record's
/// caption (or its tags joined).
pub fn embed_dataset(model: &Model, dataset: &Dataset, modality: Modality) -> Result<EmbeddingStore> {
    let ids: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    let mut rows = Vec::with_capacity(ids.len());
    match modality {
        Modality::Audio if model.spec.audio.backbone == AudioBackbone::Feature => {
            for chunk in dataset.records.chunks(EMBED_BATCH) {
                let inputs = chunk
                    .iter()
                    .map(|r| {
                        r.feature.clone().map(AudioInput::Feature).ok_or_else(|| {
                            Error::Data(format!("track `{}` has no feature vector", r.id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&AudioInput> = inputs.iter().collect();
                rows.extend(model.embed_audio(&refs)?.into_iter().map(Embedding::into_vec));
            }
        }
        Modality::Audio => {
            for r in &dataset.records {
                rows.push(embed_track_audio(model, dataset, r)?.into_vec());
            }
        }
        Modality::Text => {
            for chunk in dataset.records.chunks(EMBED_BATCH) {
                let inputs = chunk
                    .iter()
                    .map(|r| text_input_from_str(&r.sentence(), &model.vocab))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<_> = inputs.iter().collect();
                rows.extend(model.embed_text(&refs)?.into_iter().map(Embedding::into_vec));
            }
        }
    }
    EmbeddingStore::from_rows(ids, rows, model.embed_dim())
}

/// Store rows for the given records, in record order.
pub fn store_rows(store: &EmbeddingStore, records: &[&TrackRecord]) -> Result<Tensor2> {
    let mut t = Tensor2::zeros(records.len(), store.dim());
    for (r, rec) in records.iter().enumerate() {
        let i = store
            .index_of(&rec.id)
            .ok_or_else(|| Error::Data(format!("track `{}` missing from the store", rec.id)))?;
        t.row_mut(r).copy_from_slice(store.vector(i));
    }
    Ok(t)
}

fn sub_store(store: &EmbeddingStore, records: &[&TrackRecord]) -> Result<EmbeddingStore> {
    EmbeddingStore::new(records.iter().map(|r| r.id.clone()).collect(), store_rows(store, records)?)
}

/// The test-split rows of a store: the retrieval corpus for held-out evaluation.
pub fn held_out(store: &EmbeddingStore, dataset: &Dataset) -> Result<EmbeddingStore> {
    sub_store(store, &dataset.split(Split::Test))
}

fn head_scores(model: &Model, rows: &Tensor2) -> Result<Tensor2> {
    let z = (0..rows.rows())
        // stored rows are f32-rounded; bring them back to unit norm
        .map(|r| Embedding::new(l2_normalize(rows.row(r))?))
        .collect::<Result<Vec<_>>>()?;
    let scores = model.classify(&z)?;
    if scores.is_empty() {
        let k = model.head.as_ref().map_or(0, |h| h.tags.len());
        return Ok(Tensor2::zeros(0, k));
    }
    Tensor2::from_rows(&scores)
}

/// Tag-level evaluation on the test split.
///
/// Models with a classification head score the test tags they were
/// trained on with the head; joint-embedding models score every test tag
/// by text-embedding cosine. With `zeroshot`, only test tags never seen in
/// training are scored, always through the text encoder.
pub fn eval_tags(store: &EmbeddingStore, dataset: &Dataset, model: &Model, zeroshot: bool) -> Result<MetricReport> {
    let test = dataset.split(Split::Test);
    if test.is_empty() {
        return Err(Error::Split("test split is empty".into()));
    }
    let truth: Vec<BTreeSet<String>> = test.iter().map(|r| r.tags.iter().cloned().collect()).collect();
    let test_tags = dataset.tags(Split::Test);
    let train_tags: BTreeSet<String> = dataset.tags(Split::Train).into_iter().collect();
    let (tags, scores) = if zeroshot {
        let unseen: Vec<String> = test_tags.into_iter().filter(|t| !train_tags.contains(t)).collect();
        if unseen.is_empty() {
            return Err(Error::Data("no test tags are unseen in training".into()));
        }
        let s = zero_shot_scores(&sub_store(store, &test)?, &unseen, model)?;
        (unseen, s)
    } else if let (Some(head), None) = (&model.head, &model.text) {
        let rows = store_rows(store, &test)?;
        let all = head_scores(model, &rows)?;
        let keep: Vec<(usize, String)> = head
            .tags
            .iter()
            .enumerate()
            .filter(|(_, t)| test_tags.contains(t))
            .map(|(i, t)| (i, t.clone()))
            .collect();
        let mut s = Tensor2::zeros(test.len(), keep.len());
        for r in 0..test.len() {
            for (j, (i, _)) in keep.iter().enumerate() {
                s.set(r, j, all.get(r, *i));
            }
        }
        (keep.into_iter().map(|(_, t)| t).collect(), s)
    } else {
        let s = zero_shot_scores(&sub_store(store, &test)?, &test_tags, model)?;
        (test_tags, s)
    };
    Ok(MetricReport::default().with_tags(tag_metrics(&scores, &tags, &truth)?))
}

/// Ground-truth (query id, item id) pairs.
pub fn pair_ids(pairs: &[RetrievalPair]) -> Vec<(String, String)> {
    pairs.iter().map(|p| (p.query_id.clone(), p.item_id.clone())).collect()
}

pub fn eval_sentence(text: &EmbeddingStore, audio: &EmbeddingStore, pairs: &[RetrievalPair]) -> Result<MetricReport> {
    Ok(MetricReport::default().with_retrieval(&sentence_retrieval(text, audio, &pair_ids(pairs))?))
}

/// Per-tag best-F1 thresholds of a classification model, fitted on the
/// validation split. Tags with no validation positive never fire.
pub fn fit_thresholds(model: &Model, store: &EmbeddingStore, dataset: &Dataset) -> Result<Vec<f64>> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::Contract("word-overlap retrieval needs a classification model".into()))?;
    let valid = dataset.split(Split::Valid);
    let scores = head_scores(model, &store_rows(store, &valid)?)?;
    head.tags
        .iter()
        .enumerate()
        .map(|(j, tag)| {
            let col: Vec<f64> = (0..valid.len()).map(|r| scores.get(r, j)).collect();
            let labels: Vec<bool> = valid.iter().map(|r| r.tags.contains(tag)).collect();
            match best_f1_threshold(&col, &labels) {
                Ok((t, _)) => Ok(t),
                Err(Error::UndefinedMetric(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Word sets of the thresholded tag predictions for every store item.
pub fn predicted_tag_words(model: &Model, store: &EmbeddingStore, thresholds: &[f64]) -> Result<Vec<(String, BTreeSet<String>)>> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::Contract("word-overlap retrieval needs a classification model".into()))?;
    let scores = head_scores(model, store.vectors())?;
    (0..store.len())
        .map(|i| {
            let tags: Vec<String> = head
                .tags
                .iter()
                .enumerate()
                .filter(|(j, _)| scores.get(i, *j) >= thresholds[*j])
                .map(|(_, t)| t.clone())
                .collect();
            Ok((store.ids()[i].clone(), tag_words(&tags)?))
        })
        .collect()
}

/// Sentence retrieval for the classification baseline: items ranked by
/// word overlap between the query and their predicted tags. Query text
/// comes from the pair, else from the query track's caption.
pub fn eval_word_overlap(
    model: &Model,
    audio: &EmbeddingStore,
    dataset: &Dataset,
    pairs: &[RetrievalPair],
) -> Result<MetricReport> {
    let thresholds = fit_thresholds(model, audio, dataset)?;
    let predicted = predicted_tag_words(model, &held_out(audio, dataset)?, &thresholds)?;
    let queries = pairs
        .iter()
        .map(|p| {
            let text = match &p.text {
                Some(t) => t.clone(),
                None => dataset
                    .get(&p.query_id)
                    .ok_or_else(|| Error::Data(format!("query `{}` not in the dataset", p.query_id)))?
                    .sentence(),
            };
            Ok((text, p.item_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::default().with_retrieval(&word_overlap_sentence_retrieval(&predicted, &queries)?))
}

/// Multi-label probe over the training tags, using stored embeddings as
/// frozen features.
pub fn probe_store(store: &EmbeddingStore, dataset: &Dataset, kind: ProbeKind, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let tags = dataset.tags(Split::Train);
    let index: BTreeMap<&str, usize> = tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let split = |s: Split| -> Result<ProbeSplit> {
        let recs = dataset.split(s);
        let mut labels = Tensor2::zeros(recs.len(), tags.len());
        for (r, rec) in recs.iter().enumerate() {
            for t in &rec.tags {
                if let Some(&j) = index.get(t.as_str()) {
                    labels.set(r, j, 1.0);
                }
            }
        }
        ProbeSplit::new(store_rows(store, &recs)?, labels)
    };
    probe(&split(Split::Train)?, &split(Split::Valid)?, &split(Split::Test)?, kind, cfg, Some(&tags))
}

/// Top-k audio items for a free-text query.
pub fn query(model: &Model, audio: &EmbeddingStore, text: &str, topk: usize) -> Result<RankedResult> {
    let input = text_input_from_str(text, &model.vocab)?;
    let z = model.embed_text(&[&input])?;
    let scores = cosine_scores(audio, z[0].as_slice())?;
    let mut r = RankedResult::new(text, audio.ids(), &scores)?;
    r.items.truncate(topk);
    Ok(r)
}
