//! Track records (JSONL), artist-stratified split checks, retrieval pairs,
//! the synthetic benchmark generator and the embedding store format.

pub mod store;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use store::{store_checksum, store_read, store_write, EmbeddingStore};
pub use synth::{generate_synthetic, SyntheticDataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::text::{tokenize, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: String,
    pub artist_id: String,
    pub album_id: String,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// WAV file, relative to the dataset file unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    /// Precomputed feature vector, used instead of audio when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    pub split: Split,
}

impl TrackRecord {
    /// Caption when present, otherwise the tags joined in stored order.
    pub fn sentence(&self) -> String {
        match &self.caption {
            Some(c) if !c.trim().is_empty() => c.clone(),
            _ => self.tags.join(" "),
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TrackRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackRecord = serde_json::from_str(line).map_err(|e| Error::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Format {
                line: i + 1,
                msg: format!("duplicate track id `{}`", rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl(records: &[TrackRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[TrackRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

/// Per-split track and artist counts of a clean dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub tracks: BTreeMap<Split, usize>,
    pub artists: BTreeMap<Split, usize>,
}

/// Checks that no artist contributes tracks to more than one split.
pub fn validate_splits(records: &[TrackRecord]) -> Result<SplitReport> {
    let mut by_artist: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    let mut tracks = BTreeMap::new();
    for r in records {
        if r.artist_id.is_empty() {
            return Err(Error::Data(format!("track `{}` has no artist_id", r.id)));
        }
        by_artist.entry(&r.artist_id).or_default().insert(r.split);
        *tracks.entry(r.split).or_insert(0) += 1;
    }
    let leaks: Vec<String> = by_artist
        .iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(a, _)| a.to_string())
        .collect();
    if !leaks.is_empty() {
        return Err(Error::Stratification(leaks));
    }
    let mut artists = BTreeMap::new();
    for s in by_artist.values() {
        for split in s {
            *artists.entry(*split).or_insert(0) += 1;
        }
    }
    Ok(SplitReport { tracks, artists })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<TrackRecord>,
    /// Directory relative audio paths resolve against.
    pub base_dir: PathBuf,
}

impl Dataset {
    pub fn new(records: Vec<TrackRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            records,
            base_dir: base_dir.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(parse_jsonl(&text)?, base))
    }

    pub fn split(&self, split: Split) -> Vec<&TrackRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&TrackRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn audio_path(&self, rec: &TrackRecord) -> Option<PathBuf> {
        rec.audio_path.as_ref().map(|p| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Sorted distinct tags of one split.
    pub fn tags(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .filter(|r| r.split == split)
            .flat_map(|r| r.tags.iter().map(String::as_str))
            .collect();
        set.into_iter().map(String::from).collect()
    }

    /// Word vocabulary over the training split's tags and captions.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let mut words = BTreeSet::new();
        for r in self.split(Split::Train) {
            for t in r.tags.iter().chain(r.caption.iter()) {
                words.extend(tokenize(t)?);
            }
        }
        Ok(Vocabulary::build(words.iter().map(String::as_str)))
    }
}

/// One sentence-retrieval query: the text-store id and its ground-truth
/// audio-store id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub query_id: String,
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

pub fn parse_pairs(text: &str) -> Result<Vec<RetrievalPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<RetrievalPair>> {
    let path = path.as_ref();
    parse_pairs(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[RetrievalPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Seed used to draw the sentence-retrieval evaluation subset.
pub const PAIR_SAMPLE_SEED: u64 = 1000;
pub const MAX_EVAL_PAIRS: usize = 1000;

/// Caption queries for up to 1000 test tracks, drawn with a fixed seed and
/// listed in id order.
pub fn sample_test_pairs(dataset: &Dataset) -> Vec<RetrievalPair> {
    use rand::seq::index;
    use rand::SeedableRng;
    let test = dataset.split(Split::Test);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(PAIR_SAMPLE_SEED);
    let n = test.len().min(MAX_EVAL_PAIRS);
    let mut picked: Vec<&TrackRecord> = index::sample(&mut rng, test.len(), n)
        .into_iter()
        .map(|i| test[i])
        .collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    picked
        .into_iter()
        .map(|r| RetrievalPair {
            query_id: r.id.clone(),
            item_id: r.id.clone(),
            text: Some(r.sentence()),
        })
        .collect()
}
