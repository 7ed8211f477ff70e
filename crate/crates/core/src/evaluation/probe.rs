//! Shallow classifiers over frozen embeddings.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tag_metrics, TagMetrics};
use crate::error::{Error, Result};
use crate::numerics::{stable_softmax_row, NodeId, ParamId, ParamStore, Tape, Tensor2};
use crate::objectives::bce_with_logits;
use crate::trainer::AdamState;

pub const MLP_HIDDEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            other => Err(Error::Config(format!("unknown classifier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTask {
    /// Independent sigmoid per column, BCE.
    MultiLabel,
    /// One-hot rows, softmax cross-entropy.
    SingleLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub task: ProbeTask,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            task: ProbeTask::MultiLabel,
            epochs: 200,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Features with multi-hot (or one-hot) label rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSplit {
    pub features: Tensor2,
    pub labels: Tensor2,
}

impl ProbeSplit {
    pub fn new(features: Tensor2, labels: Tensor2) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::dim("one label row per feature row"));
        }
        if labels.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Domain("probe labels must be 0 or 1".into()));
        }
        Ok(Self { features, labels })
    }

    /// Rows sorted by content, so training does not depend on input order.
    fn canonical(&self) -> Result<Self> {
        let mut idx: Vec<usize> = (0..self.features.rows()).collect();
        let key = |i: usize| self.features.row(i).iter().chain(self.labels.row(i));
        idx.sort_by(|&a, &b| {
            key(a)
                .zip(key(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let pick = |t: &Tensor2| {
            Tensor2::from_rows(&idx.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>())
        };
        if idx.is_empty() {
            return Ok(self.clone());
        }
        Ok(Self {
            features: pick(&self.features)?,
            labels: pick(&self.labels)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classifier: Option<ProbeKind>,
    pub best_epoch: usize,
    pub roc_auc_macro: Option<f64>,
    pub pr_auc_macro: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
    pub skipped_tags: Vec<String>,
}

struct Net {
    layers: Vec<(ParamId, ParamId)>,
}

impl Net {
    fn new(store: &mut ParamStore, kind: ProbeKind, d_in: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = match kind {
            ProbeKind::Linear => vec![(store.add_zeros("probe.w", d_in, k), store.add_zeros("probe.b", 1, k))],
            ProbeKind::Mlp => vec![
                (
                    store.add_normal("probe.w1", d_in, MLP_HIDDEN, 1.0 / (d_in as f64).sqrt(), rng),
                    store.add_zeros("probe.b1", 1, MLP_HIDDEN),
                ),
                (
                    store.add_normal("probe.w2", MLP_HIDDEN, k, 1.0 / (MLP_HIDDEN as f64).sqrt(), rng),
                    store.add_zeros("probe.b2", 1, k),
                ),
            ],
        };
        Self { layers }
    }

    fn forward(&self, tape: &mut Tape<'_>, x: &Tensor2) -> Result<NodeId> {
        let mut h = tape.input(x.clone());
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            let (w, b) = (tape.param(w), tape.param(b));
            let y = tape.matmul(h, w)?;
            h = tape.add_row(y, b)?;
        }
        Ok(h)
    }

    fn logits(&self, store: &ParamStore, x: &Tensor2) -> Result<Tensor2> {
        let mut tape = Tape::new(store);
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Mean cross-entropy of softmax rows and its logit gradient.
fn softmax_ce(logits: &Tensor2, onehot: &Tensor2) -> Result<(f64, Tensor2)> {
    let b = logits.rows() as f64;
    let mut grad = Tensor2::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let p = stable_softmax_row(logits.row(r))?;
        for (c, &pc) in p.iter().enumerate() {
            let y = onehot.get(r, c);
            if y == 1.0 {
                loss -= pc.max(f64::MIN_POSITIVE).ln();
            }
            grad.set(r, c, (pc - y) / b);
        }
    }
    Ok((loss / b, grad))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and macro F1 over classes present in the truth.
fn single_label_metrics(logits: &Tensor2, onehot: &Tensor2) -> (f64, f64) {
    let k = onehot.cols();
    let (mut tp, mut pred, mut actual) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for r in 0..logits.rows() {
        let (p, y) = (argmax(logits.row(r)), argmax(onehot.row(r)));
        pred[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let acc = tp.iter().sum::<usize>() as f64 / logits.rows().max(1) as f64;
    let present: Vec<usize> = (0..k).filter(|&c| actual[c] > 0).collect();
    let f1 = present
        .iter()
        .map(|&c| 2.0 * tp[c] as f64 / (pred[c] + actual[c]) as f64)
        .sum::<f64>()
        / present.len().max(1) as f64;
    (acc, f1)
}

fn multi_label_metrics(logits: &Tensor2, labels: &Tensor2) -> Result<TagMetrics> {
    let tags: Vec<String> = (0..labels.cols()).map(|c| c.to_string()).collect();
    let truth: Vec<BTreeSet<String>> = (0..labels.rows())
        .map(|r| (0..labels.cols()).filter(|&c| labels.get(r, c) == 1.0).map(|c| c.to_string()).collect())
        .collect();
    tag_metrics(logits, &tags, &truth)
}

/// Validation score used for model selection; higher is better.
fn selection_score(task: ProbeTask, logits: &Tensor2, labels: &Tensor2) -> Result<f64> {
    Ok(match task {
        ProbeTask::SingleLabel => single_label_metrics(logits, labels).0,
        ProbeTask::MultiLabel => multi_label_metrics(logits, labels)?.roc_auc_macro.unwrap_or(f64::NEG_INFINITY),
    })
}

/// Trains a linear or one-hidden-layer probe with full-batch Adam, keeps
/// the epoch with the best validation score (earliest on ties) and
/// reports test metrics. `tag_names` label the columns for skipped-tag
/// reporting.
pub fn probe(
    train: &ProbeSplit,
    valid: &ProbeSplit,
    test: &ProbeSplit,
    kind: ProbeKind,
    cfg: &ProbeConfig,
    tag_names: Option<&[String]>,
) -> Result<ProbeReport> {
    let (d, k) = (train.features.cols(), train.labels.cols());
    for s in [valid, test] {
        if s.features.cols() != d || s.labels.cols() != k {
            return Err(Error::dim("probe splits disagree on feature or label width"));
        }
    }
    if train.features.rows() == 0 {
        return Err(Error::Split("empty training split".into()));
    }
    for c in 0..k {
        if (0..train.labels.rows()).all(|r| train.labels.get(r, c) == 0.0) {
            let name = tag_names.and_then(|t| t.get(c)).cloned().unwrap_or_else(|| c.to_string());
            return Err(Error::Split(format!("class `{name}` has no training examples")));
        }
    }
    if cfg.task == ProbeTask::SingleLabel {
        for s in [train, valid, test] {
            if (0..s.labels.rows()).any(|r| s.labels.row(r).iter().sum::<f64>() != 1.0) {
                return Err(Error::Domain("single-label probe needs one-hot rows".into()));
            }
        }
    }
    let (train, valid, test) = (train.canonical()?, valid.canonical()?, test.canonical()?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = Net::new(&mut store, kind, d, k, &mut rng);
    let mut adam = AdamState::new(&store);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        let grads = {
            let mut tape = Tape::new(&store);
            let out = net.forward(&mut tape, &train.features)?;
            let logits = tape.value(out);
            let (loss, g) = match cfg.task {
                ProbeTask::MultiLabel => {
                    let o = bce_with_logits(logits, &train.labels)?;
                    (o.loss, o.grad_logits)
                }
                ProbeTask::SingleLabel => softmax_ce(logits, &train.labels)?,
            };
            if !loss.is_finite() {
                return Err(Error::NanLoss { step: epoch as u64, loss });
            }
            tape.backward(&[(out, g)])?
        };
        store.zero_grad();
        grads.accumulate_into(&mut store)?;
        adam.step(&mut store, |_| cfg.lr)?;
        if valid.features.rows() > 0 {
            let score = selection_score(cfg.task, &net.logits(&store, &valid.features)?, &valid.labels)?;
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, store.clone()));
            }
        }
    }
    let (best_epoch, store) = match best {
        Some((_, e, s)) => (e, s),
        None => (cfg.epochs, store),
    };
    let logits = net.logits(&store, &test.features)?;
    let mut report = ProbeReport {
        classifier: Some(kind),
        best_epoch,
        ..ProbeReport::default()
    };
    match cfg.task {
        ProbeTask::SingleLabel => {
            let (acc, f1) = single_label_metrics(&logits, &test.labels);
            report.accuracy = Some(acc);
            report.f1_macro = Some(f1);
        }
        ProbeTask::MultiLabel => {
            let m = multi_label_metrics(&logits, &test.labels)?;
            report.roc_auc_macro = m.roc_auc_macro;
            report.pr_auc_macro = m.pr_auc_macro;
            report.skipped_tags = m
                .skipped
                .iter()
                .map(|c| {
                    let i: usize = c.parse().expect("column index");
                    tag_names.and_then(|t| t.get(i)).cloned().unwrap_or_else(|| c.clone())
                })
                .collect();
        }
    }
    Ok(report)
}

/// Four-quadrant XOR set: each base point appears with all its sign
/// reflections, class 1 where the coordinates' signs differ. Coordinates
/// are dyadic, so with a power-of-two row count the class-balanced
/// gradient sums of a zero-initialized linear probe cancel exactly.
pub fn xor_split(base_points: usize, seed: u64) -> ProbeSplit {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut feats, mut labels) = (vec![], vec![]);
    for _ in 0..base_points {
        let x = 1.0 + f64::from(rng.random_range(0..32u8)) / 64.0;
        let y = 1.0 + f64::from(rng.random_range(0..32u8)) / 64.0;
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            feats.push(vec![sx * x, sy * y]);
            let class = usize::from(sx != sy);
            labels.push(if class == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] });
        }
    }
    ProbeSplit::new(Tensor2::from_rows(&feats).unwrap(), Tensor2::from_rows(&labels).unwrap())
        .expect("well-formed xor split")
}
