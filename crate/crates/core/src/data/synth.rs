//! Desk-scale stand-in for a tagged music corpus: clustered feature vectors
//! whose tags, captions and word vectors carry the cluster structure.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sample_test_pairs, to_jsonl, write_pairs, Dataset, Split, TrackRecord};
use crate::error::{Error, Result};
use crate::numerics::kernels::l2_normalize;
use crate::text::WordVectorTable;

/// Weight of the shared cluster direction in each cluster word's vector.
const CLUSTER_WEIGHT: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub tracks_per_cluster: usize,
    pub words_per_cluster: usize,
    pub shared_words: usize,
    /// Chance that a track also carries one shared word.
    pub shared_word_prob: f64,
    pub min_tags: usize,
    pub max_tags: usize,
    pub feature_dim: usize,
    pub noise: f64,
    /// Norm of each word's feature offset.
    pub word_offset: f64,
    pub artists_per_cluster: usize,
    pub word_vector_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 8,
            tracks_per_cluster: 64,
            words_per_cluster: 8,
            shared_words: 4,
            shared_word_prob: 0.3,
            min_tags: 2,
            max_tags: 5,
            feature_dim: 32,
            noise: 0.1,
            word_offset: 0.5,
            artists_per_cluster: 8,
            word_vector_dim: 32,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.clusters < 2 {
            return fail(format!("need at least 2 clusters, got {}", self.clusters));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return fail(format!("noise {} must be ≥ 0", self.noise));
        }
        if self.artists_per_cluster < 3 {
            return fail(format!(
                "{} artists per cluster cannot fill train/valid/test without sharing an artist",
                self.artists_per_cluster
            ));
        }
        if self.tracks_per_cluster < self.artists_per_cluster {
            return fail("fewer tracks than artists in a cluster".into());
        }
        if self.min_tags == 0 || self.min_tags > self.max_tags || self.max_tags > self.words_per_cluster {
            return fail(format!(
                "tag count range {}..={} does not fit {} words per cluster",
                self.min_tags, self.max_tags, self.words_per_cluster
            ));
        }
        if self.feature_dim == 0 || self.word_vector_dim == 0 {
            return fail("dimensions must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.shared_word_prob) || (self.shared_words == 0 && self.shared_word_prob > 0.0) {
            return fail("shared_word_prob must be in [0, 1] and needs shared words".into());
        }
        if !(self.word_offset >= 0.0) {
            return fail("word_offset must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn cluster_word(cluster: usize, i: usize) -> String {
        format!("c{cluster}w{i}")
    }

    pub fn shared_word(i: usize) -> String {
        format!("shared{i}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub records: Vec<TrackRecord>,
    #[serde(skip)]
    pub word_vectors: Option<WordVectorTable>,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of each record, aligned with `records`.
    pub clusters: Vec<usize>,
}

impl SyntheticDataset {
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.records.clone(), "")
    }

    pub fn word_vectors(&self) -> &WordVectorTable {
        self.word_vectors.as_ref().expect("generated datasets carry word vectors")
    }

    /// Writes `dataset.jsonl`, `word_vectors.txt`, `pairs.jsonl` and
    /// `ground_truth.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        w("dataset.jsonl", to_jsonl(&self.records)?.as_bytes())?;
        w("word_vectors.txt", self.word_vectors().to_text().as_bytes())?;
        write_pairs(dir.join("pairs.jsonl"), &sample_test_pairs(&self.dataset()))?;
        let truth = serde_json::json!({
            "spec": self.spec,
            "centroids": self.centroids,
            "clusters": self.records.iter().zip(&self.clusters)
                .map(|(r, c)| (r.id.clone(), *c))
                .collect::<BTreeMap<_, _>>(),
        });
        w("ground_truth.json", serde_json::to_string_pretty(&truth)?.as_bytes())
    }
}

fn gaussian_vec(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    let g = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| g.sample(rng)).collect()
}

fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        if let Ok(v) = l2_normalize(&gaussian_vec(n, 1.0, rng)) {
            return v;
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Pure function of the spec: same spec, same bytes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.clusters;

    // one latent unit direction per word: the audio offset is that
    // direction scaled, the word vector a fixed linear image of it plus the
    // cluster component, so word vectors carry the words' audio semantics
    let mut word_cluster: Vec<(String, Option<usize>)> = Vec::new();
    for k in 0..c {
        for i in 0..spec.words_per_cluster {
            word_cluster.push((SyntheticSpec::cluster_word(k, i), Some(k)));
        }
    }
    for i in 0..spec.shared_words {
        word_cluster.push((SyntheticSpec::shared_word(i), None));
    }
    let latents: Vec<Vec<f64>> = word_cluster
        .iter()
        .map(|_| random_unit(spec.feature_dim, &mut rng))
        .collect();
    let offsets: BTreeMap<String, Vec<f64>> = word_cluster
        .iter()
        .zip(&latents)
        .map(|((w, _), u)| (w.clone(), u.iter().map(|x| x * spec.word_offset).collect()))
        .collect();
    let directions: Vec<Vec<f64>> = (0..c).map(|_| random_unit(spec.word_vector_dim, &mut rng)).collect();
    let mix_std = 1.0 / (spec.feature_dim as f64).sqrt();
    let mix: Vec<Vec<f64>> = (0..spec.word_vector_dim)
        .map(|_| gaussian_vec(spec.feature_dim, mix_std, &mut rng))
        .collect();
    let mut table = WordVectorTable::new(spec.word_vector_dim);
    for ((w, k), u) in word_cluster.iter().zip(&latents) {
        let mut v: Vec<f64> = mix
            .iter()
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(k) = k {
            for (x, d) in v.iter_mut().zip(&directions[*k]) {
                *x += CLUSTER_WEIGHT * d;
            }
        }
        table.insert(w, v)?;
    }

    // centroids far enough apart that offsets alone never cross clusters
    let offset_bound = max_offset_sum(spec);
    let mut scale = 1.0;
    let centroids = 'outer: loop {
        for _ in 0..200 {
            let cand: Vec<Vec<f64>> = (0..c).map(|_| gaussian_vec(spec.feature_dim, scale, &mut rng)).collect();
            let min_dist = (0..c)
                .flat_map(|i| (i + 1..c).map(move |j| (i, j)))
                .map(|(i, j)| distance(&cand[i], &cand[j]))
                .fold(f64::INFINITY, f64::min);
            if min_dist > 2.0 * offset_bound {
                break 'outer cand;
            }
        }
        scale *= 1.5;
    };

    let a = spec.artists_per_cluster;
    let n_valid = ((a as f64 * 0.15).round() as usize).max(1);
    let n_test = n_valid;
    let n_train = a - n_valid - n_test;
    let artist_split = |i: usize| {
        if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        }
    };

    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Spec(e.to_string()))?;
    let mut records = Vec::with_capacity(c * spec.tracks_per_cluster);
    let mut clusters = Vec::with_capacity(records.capacity());
    for (k, centroid) in centroids.iter().enumerate() {
        for t in 0..spec.tracks_per_cluster {
            let n_tags = rng.random_range(spec.min_tags..=spec.max_tags);
            let mut tags: Vec<String> = index::sample(&mut rng, spec.words_per_cluster, n_tags)
                .into_iter()
                .map(|i| SyntheticSpec::cluster_word(k, i))
                .collect();
            if spec.shared_words > 0 && rng.random_bool(spec.shared_word_prob) {
                tags.push(SyntheticSpec::shared_word(rng.random_range(0..spec.shared_words)));
            }
            let mut feature = centroid.clone();
            for w in &tags {
                for (f, o) in feature.iter_mut().zip(&offsets[w]) {
                    *f += o;
                }
            }
            for f in feature.iter_mut() {
                *f += noise.sample(&mut rng);
            }
            let artist = t % a;
            let artist_id = format!("artist{k:02}_{artist:02}");
            records.push(TrackRecord {
                id: format!("track{k:02}_{t:04}"),
                album_id: format!("{artist_id}_album{}", t / a % 2),
                artist_id,
                caption: Some(tags.join(" ")),
                tags,
                audio_path: None,
                feature: Some(feature),
                split: artist_split(artist),
            });
            clusters.push(k);
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        records,
        word_vectors: Some(table),
        centroids,
        clusters,
    })
}

/// Index of the nearest centroid.
pub fn nearest_centroid(feature: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = distance(feature, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Upper bound on the norm of a track's summed word offsets.
pub fn max_offset_sum(spec: &SyntheticSpec) -> f64 {
    (spec.max_tags + usize::from(spec.shared_word_prob > 0.0)) as f64 * spec.word_offset
}
