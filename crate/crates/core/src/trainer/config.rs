//! Flat `key = value` training config. `#` starts a comment line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::TrainConfig;
use crate::audio::mel::{HOP, N_FFT, N_MELS};
use crate::audio::SAMPLE_RATE;
use crate::encoders::AudioBackbone;
use crate::error::{Error, Result};

const KEYS: &[&str] = &[
    "sample_rate",
    "n_mels",
    "n_fft",
    "hop_ms",
    "chunk_seconds",
    "batch_size",
    "embed_dim",
    "margin",
    "temperature",
    "cutoff",
    "lr_main",
    "lr_text_transformer",
    "steps",
    "seed",
    "checkpoint_every",
    "objective",
    "text_rep",
    "text_encoder",
    "audio_encoder",
    "audio_width",
    "audio_depth",
    "audio_heads",
    "audio_ffn",
    "patch_frames",
    "text_width",
    "text_depth",
    "text_heads",
    "text_ffn",
    "dataset",
    "word_vectors",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    /// Relative paths in the file resolve against this directory.
    pub base_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Format { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(err(format!("unknown key `{k}`")));
        }
        if entries.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(format!("duplicate key `{k}`")));
        }
    }
    Ok(ConfigFile {
        entries,
        base_dir: PathBuf::new(),
    })
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = parse_config(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get_str(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get_str(key).map(|p| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    fn fixed<T: FromStr + PartialEq + std::fmt::Display>(&self, key: &str, expected: T) -> Result<()> {
        match self.get::<T>(key)? {
            Some(v) if v != expected => Err(Error::Config(format!(
                "`{key}` is fixed at {expected}, got {v}"
            ))),
            _ => Ok(()),
        }
    }

    /// Applies every training key on top of `base`.
    pub fn train_config(&self, base: TrainConfig) -> Result<TrainConfig> {
        self.fixed("sample_rate", SAMPLE_RATE)?;
        self.fixed("n_mels", N_MELS)?;
        self.fixed("n_fft", N_FFT)?;
        self.fixed("hop_ms", HOP * 1000 / SAMPLE_RATE as usize)?;
        let mut c = base;
        macro_rules! set {
            ($key:literal => $($field:ident).+) => {
                if let Some(v) = self.get($key)? {
                    c.$($field).+ = v;
                }
            };
        }
        set!("chunk_seconds" => chunk_seconds);
        set!("batch_size" => batch_size);
        set!("margin" => objective.margin);
        set!("temperature" => objective.temperature);
        set!("cutoff" => objective.cutoff);
        set!("lr_main" => lr_main);
        set!("lr_text_transformer" => lr_text_transformer);
        set!("steps" => steps);
        set!("seed" => seed);
        set!("objective" => objective.kind);
        set!("text_rep" => text_rep);
        set!("text_encoder" => text.backbone);
        set!("audio_width" => audio.width);
        set!("audio_depth" => audio.depth);
        set!("audio_heads" => audio.heads);
        set!("audio_ffn" => audio.ffn);
        set!("patch_frames" => audio.patch_frames);
        set!("text_width" => text.width);
        set!("text_depth" => text.depth);
        set!("text_heads" => text.heads);
        set!("text_ffn" => text.ffn);
        if let Some(d) = self.get::<usize>("embed_dim")? {
            c.audio.embed_dim = d;
            c.text.embed_dim = d;
        }
        if let Some(e) = self.get::<u64>("checkpoint_every")? {
            c.checkpoint_every = Some(e);
        }
        match self.get_str("audio_encoder") {
            None => {}
            Some("transformer") => c.audio.backbone = AudioBackbone::Transformer,
            Some("feature") => c.audio.backbone = AudioBackbone::Feature,
            Some(other) => return Err(Error::Config(format!("unknown audio encoder `{other}`"))),
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TextBackbone;
    use crate::objectives::ObjectiveKind;

    #[test]
    fn documented_keys_parse() {
        let text = "# run\nsample_rate=16000\nn_mels=128\nn_fft=1024\nhop_ms=10\nchunk_seconds=9.91\n\
                    batch_size=32\nembed_dim=48\nmargin=0.3\ntemperature=0.1\nlr_main=2e-3\n\
                    lr_text_transformer=1e-5\nsteps=7\nseed=9\naudio_encoder = feature\n\
                    text_encoder=bow\nobjective=triplet\ndataset=data/x.jsonl\n";
        let mut f = parse_config(text).unwrap();
        f.base_dir = PathBuf::from("/cfg");
        let c = f.train_config(TrainConfig::default()).unwrap();
        assert_eq!((c.batch_size, c.steps, c.seed), (32, 7, 9));
        assert_eq!((c.audio.embed_dim, c.text.embed_dim), (48, 48));
        assert_eq!(c.objective.kind, ObjectiveKind::Triplet);
        assert_eq!((c.objective.margin, c.objective.temperature), (0.3, 0.1));
        assert_eq!((c.lr_main, c.lr_text_transformer), (2e-3, 1e-5));
        assert_eq!(c.audio.backbone, AudioBackbone::Feature);
        assert_eq!(c.text.backbone, TextBackbone::Bow);
        assert_eq!(f.path("dataset").unwrap(), PathBuf::from("/cfg/data/x.jsonl"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_fixed_mismatch() {
        assert!(matches!(parse_config("foo=1"), Err(Error::Format { line: 1, .. })));
        assert!(matches!(parse_config("seed=1\nseed=2"), Err(Error::Format { line: 2, .. })));
        assert!(parse_config("seed").is_err());
        let f = parse_config("sample_rate=44100").unwrap();
        assert!(matches!(f.train_config(TrainConfig::default()), Err(Error::Config(_))));
        let f = parse_config("steps=many").unwrap();
        assert!(matches!(f.train_config(TrainConfig::default()), Err(Error::Config(_))));
    }
}
