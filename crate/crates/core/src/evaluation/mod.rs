//! Tag-level, sentence-level, zero-shot and probing evaluation.

pub mod metrics;
pub mod probe;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingStore;
use crate::encoders::{Embedding, Model};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::text::{text_input_from_str, tokenize};

pub use metrics::{
    average_precision, best_f1_threshold, rank_of, retrieval_from_ranks, roc_auc, RetrievalMetrics,
};
pub use probe::{probe, xor_split, ProbeConfig, ProbeKind, ProbeReport, ProbeSplit, ProbeTask};

/// Items for one query, best first, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub items: Vec<(String, f64)>,
}

impl RankedResult {
    pub fn new(query_id: impl Into<String>, ids: &[String], scores: &[f64]) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::dim("one score per item required"));
        }
        let mut items: Vec<(String, f64)> = ids.iter().cloned().zip(scores.iter().copied()).collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            query_id: query_id.into(),
            items,
        })
    }

    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.items[..k.min(self.items.len())]
    }
}

/// Cosine (dot) scores of every corpus item against one query vector.
pub fn cosine_scores(corpus: &EmbeddingStore, query: &[f64]) -> Result<Vec<f64>> {
    if query.len() != corpus.dim() {
        return Err(Error::dim(format!("query dim {} vs corpus dim {}", query.len(), corpus.dim())));
    }
    Ok((0..corpus.len())
        .map(|i| crate::numerics::tensor::dot(corpus.vector(i), query))
        .collect())
}

/// R@K, mAP@10 and MedR for text queries against an audio corpus.
/// `ground_truth` maps query ids to item ids.
pub fn sentence_retrieval(
    queries: &EmbeddingStore,
    corpus: &EmbeddingStore,
    ground_truth: &[(String, String)],
) -> Result<RetrievalMetrics> {
    let mut ranks = Vec::with_capacity(ground_truth.len());
    for (q, item) in ground_truth {
        let qi = queries
            .index_of(q)
            .ok_or_else(|| Error::Data(format!("query `{q}` missing from the text store")))?;
        let gi = corpus
            .index_of(item)
            .ok_or_else(|| Error::Data(format!("item `{item}` missing from the audio store")))?;
        let scores = cosine_scores(corpus, queries.vector(qi))?;
        ranks.push(rank_of(gi, &scores, corpus.ids()));
    }
    retrieval_from_ranks(&ranks)
}

/// Words of a tag set, as the overlap baseline sees them.
pub fn tag_words(tags: &[String]) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for t in tags {
        out.extend(tokenize(t)?);
    }
    Ok(out)
}

fn overlap_scores(predicted: &[(String, BTreeSet<String>)], query: &str) -> Result<Vec<f64>> {
    let words = tokenize(query)?;
    Ok(predicted
        .iter()
        .map(|(_, set)| words.iter().filter(|w| set.contains(*w)).count() as f64)
        .collect())
}

/// Ranks items by how many query words (with repeats) appear among the
/// words of their predicted tags.
pub fn word_overlap_retrieval(predicted: &[(String, BTreeSet<String>)], query: &str) -> Result<RankedResult> {
    let scores = overlap_scores(predicted, query)?;
    let ids: Vec<String> = predicted.iter().map(|(id, _)| id.clone()).collect();
    RankedResult::new(query, &ids, &scores)
}

/// Retrieval metrics for the overlap baseline; `queries` holds
/// (query text, ground-truth item id).
pub fn word_overlap_sentence_retrieval(
    predicted: &[(String, BTreeSet<String>)],
    queries: &[(String, String)],
) -> Result<RetrievalMetrics> {
    let ids: Vec<String> = predicted.iter().map(|(id, _)| id.clone()).collect();
    let mut ranks = Vec::with_capacity(queries.len());
    for (text, item) in queries {
        let gi = ids
            .iter()
            .position(|i| i == item)
            .ok_or_else(|| Error::Data(format!("item `{item}` has no tag predictions")))?;
        ranks.push(rank_of(gi, &overlap_scores(predicted, text)?, &ids));
    }
    retrieval_from_ranks(&ranks)
}

/// Items × labels cosine matrix between stored audio and label-text
/// embeddings.
pub fn cosine_matrix(audio: &EmbeddingStore, labels: &[Embedding]) -> Result<Tensor2> {
    let mut out = Tensor2::zeros(audio.len(), labels.len());
    for (j, l) in labels.iter().enumerate() {
        for (i, s) in cosine_scores(audio, l.as_slice())?.into_iter().enumerate() {
            out.set(i, j, s);
        }
    }
    Ok(out)
}

pub fn zero_shot_scores(audio: &EmbeddingStore, label_texts: &[String], model: &Model) -> Result<Tensor2> {
    let inputs = label_texts
        .iter()
        .map(|t| text_input_from_str(t, &model.vocab))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = inputs.iter().collect();
    let labels = model.embed_text(&refs)?;
    cosine_matrix(audio, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub roc_auc: f64,
    pub pr_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagMetrics {
    pub per_tag: BTreeMap<String, TagScore>,
    pub roc_auc_macro: Option<f64>,
    pub pr_auc_macro: Option<f64>,
    pub skipped: Vec<String>,
}

/// Per-label ROC/PR-AUC over the columns of `scores`; labels where every
/// item has the same truth value are skipped and listed.
pub fn tag_metrics(scores: &Tensor2, tags: &[String], truth: &[BTreeSet<String>]) -> Result<TagMetrics> {
    if scores.cols() != tags.len() || scores.rows() != truth.len() {
        return Err(Error::dim("score matrix does not match tags × items"));
    }
    let mut m = TagMetrics::default();
    for (j, tag) in tags.iter().enumerate() {
        let col: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, j)).collect();
        let labels: Vec<bool> = truth.iter().map(|t| t.contains(tag)).collect();
        match (roc_auc(&col, &labels), average_precision(&col, &labels)) {
            (Ok(roc), Ok(pr)) => {
                m.per_tag.insert(tag.clone(), TagScore { roc_auc: roc, pr_auc: pr });
            }
            (Err(Error::UndefinedMetric(_)), _) | (_, Err(Error::UndefinedMetric(_))) => {
                m.skipped.push(tag.clone())
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let n = m.per_tag.len() as f64;
    if n > 0.0 {
        m.roc_auc_macro = Some(m.per_tag.values().map(|s| s.roc_auc).sum::<f64>() / n);
        m.pr_auc_macro = Some(m.per_tag.values().map(|s| s.pr_auc).sum::<f64>() / n);
    }
    Ok(m)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: Option<u64>,
    /// Store file name → hex SHA-256.
    pub store_checksums: BTreeMap<String, String>,
}

/// JSON evaluation report. Metrics not computed by a command are null.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub roc_auc_macro: Option<f64>,
    pub pr_auc_macro: Option<f64>,
    pub r_at_1: Option<f64>,
    pub r_at_5: Option<f64>,
    pub r_at_10: Option<f64>,
    pub map10: Option<f64>,
    pub medr: Option<usize>,
    pub skipped_tags: Vec<String>,
    pub per_tag: BTreeMap<String, TagScore>,
    pub metadata: ReportMetadata,
}

impl MetricReport {
    pub fn with_tags(mut self, m: TagMetrics) -> Self {
        self.roc_auc_macro = m.roc_auc_macro;
        self.pr_auc_macro = m.pr_auc_macro;
        self.per_tag = m.per_tag;
        self.skipped_tags = m.skipped;
        self
    }

    pub fn with_retrieval(mut self, r: &RetrievalMetrics) -> Self {
        self.r_at_1 = Some(r.r_at_1);
        self.r_at_5 = Some(r.r_at_5);
        self.r_at_10 = Some(r.r_at_10);
        self.map10 = Some(r.map10);
        self.medr = Some(r.medr);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
