use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use tmr_core::data::{generate_synthetic, load_pairs, store_read, store_write, Dataset, SyntheticSpec};
use tmr_core::encoders::{load_checkpoint, save_checkpoint, TextBackbone};
use tmr_core::evaluation::{ProbeConfig, ProbeKind};
use tmr_core::objectives::ObjectiveKind;
use tmr_core::pipeline::{
    embed_dataset, eval_sentence, eval_tags, eval_word_overlap, held_out, probe_store, query, Modality,
};
use tmr_core::text::{load_word_vectors, TextMode};
use tmr_core::trainer::{train_with, write_loss_csv, ConfigFile, TrainConfig};

#[derive(Parser)]
#[command(name = "tmr", about = "Joint text-music embeddings: train, embed, evaluate, query")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic clustered dataset.
    GenSynth {
        /// JSON synthetic spec; omitted fields take their defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        objective: Option<ObjectiveKind>,
        #[arg(long)]
        text_rep: Option<TextMode>,
        #[arg(long)]
        text_encoder: Option<TextBackbone>,
        #[arg(long)]
        out: PathBuf,
    },
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        modality: Modality,
        #[arg(long)]
        out: PathBuf,
    },
    EvalTags {
        #[arg(long)]
        audio_store: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Score only test tags never seen in training.
        #[arg(long)]
        zeroshot: bool,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    EvalSentence {
        #[arg(long)]
        text_store: Option<PathBuf>,
        #[arg(long)]
        audio_store: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Restricts the audio corpus to this dataset's test split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Thresholded tag-word overlap instead of embedding similarity;
        /// needs a classification --ckpt and --dataset.
        #[arg(long)]
        word_overlap: bool,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Probe {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        classifier: ProbeKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Query {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        audio_store: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        topk: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn gen_synth(spec: &Path, out: &Path, seed: Option<u64>) -> Result<Value> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text).context("parsing synthetic spec")?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    data.write(out)?;
    let conf = "# generated alongside the synthetic dataset\n\
                dataset = dataset.jsonl\n\
                word_vectors = word_vectors.txt\n\
                audio_encoder = feature\n\
                text_encoder = bow\n";
    std::fs::write(out.join("train.conf"), conf)?;
    Ok(json!({ "out": out, "tracks": data.records.len(), "seed": spec.seed }))
}

fn train_cmd(
    config: &Path,
    objective: Option<ObjectiveKind>,
    text_rep: Option<TextMode>,
    text_encoder: Option<TextBackbone>,
    out: &Path,
) -> Result<Value> {
    let file = ConfigFile::load(config)?;
    let mut cfg = file.train_config(TrainConfig::default())?;
    if let Some(k) = objective {
        cfg.objective.kind = k;
    }
    if let Some(r) = text_rep {
        cfg.text_rep = r;
    }
    if let Some(b) = text_encoder {
        cfg.text.backbone = b;
    }
    let dataset_path = file.path("dataset").context("config has no `dataset` key")?;
    let dataset = Dataset::load(&dataset_path)?;
    let table = file.path("word_vectors").map(load_word_vectors).transpose()?;
    let outcome = train_with(&cfg, &dataset, table, |step, model| {
        let p = PathBuf::from(format!("{}.step{step}", out.display()));
        save_checkpoint(p, model, &cfg.meta(step))
    })?;
    save_checkpoint(out, &outcome.model, &cfg.meta(cfg.steps))?;
    let csv = PathBuf::from(format!("{}.loss.csv", out.display()));
    write_loss_csv(&csv, &outcome.log)?;
    Ok(json!({
        "checkpoint": out,
        "loss_csv": csv,
        "steps": cfg.steps,
        "seed": cfg.seed,
        "final_loss": outcome.log.last().map(|r| r.loss),
        "temperature": outcome.model.temperature_value(),
    }))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenSynth { spec, out, seed } => emit(&gen_synth(&spec, &out, seed)?, None),
        Cmd::Train {
            config,
            objective,
            text_rep,
            text_encoder,
            out,
        } => emit(&train_cmd(&config, objective, text_rep, text_encoder, &out)?, None),
        Cmd::Embed {
            ckpt,
            dataset,
            modality,
            out,
        } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let store = embed_dataset(&model, &Dataset::load(&dataset)?, modality)?;
            let checksum = store_write(&out, &store)?;
            emit(
                &json!({ "store": out, "modality": modality.to_string(), "items": store.len(), "dim": store.dim(), "checksum": checksum }),
                None,
            )
        }
        Cmd::EvalTags {
            audio_store,
            dataset,
            zeroshot,
            ckpt,
            out,
        } => {
            let ckpt = ckpt.context("eval-tags scores tags through a model; pass --ckpt")?;
            let (model, meta) = load_checkpoint(&ckpt)?;
            let (store, checksum) = store_read(&audio_store)?;
            let mut report = eval_tags(&store, &Dataset::load(&dataset)?, &model, zeroshot)?;
            report.metadata.seed = Some(meta.seed);
            report.metadata.store_checksums.insert("audio".into(), checksum);
            emit(&serde_json::to_value(&report)?, out.as_deref())
        }
        Cmd::EvalSentence {
            text_store,
            audio_store,
            pairs,
            dataset,
            word_overlap,
            ckpt,
            out,
        } => {
            let (audio, audio_sum) = store_read(&audio_store)?;
            let pairs = load_pairs(&pairs)?;
            let dataset = dataset.map(Dataset::load).transpose()?;
            let mut report = if word_overlap {
                let ckpt = ckpt.context("--word-overlap needs a classification --ckpt")?;
                let dataset = dataset.as_ref().context("--word-overlap needs --dataset")?;
                let (model, meta) = load_checkpoint(&ckpt)?;
                let mut r = eval_word_overlap(&model, &audio, dataset, &pairs)?;
                r.metadata.seed = Some(meta.seed);
                r
            } else {
                let text_path = text_store.context("eval-sentence needs --text-store")?;
                let (text, text_sum) = store_read(&text_path)?;
                let corpus = match &dataset {
                    Some(d) => held_out(&audio, d)?,
                    None => audio,
                };
                let mut r = eval_sentence(&text, &corpus, &pairs)?;
                r.metadata.store_checksums.insert("text".into(), text_sum);
                r
            };
            report.metadata.store_checksums.insert("audio".into(), audio_sum);
            emit(&serde_json::to_value(&report)?, out.as_deref())
        }
        Cmd::Probe {
            store,
            dataset,
            classifier,
            seed,
            out,
        } => {
            let (store, _) = store_read(&store)?;
            let cfg = ProbeConfig {
                seed,
                ..ProbeConfig::default()
            };
            let report = probe_store(&store, &Dataset::load(&dataset)?, classifier, &cfg)?;
            emit(&serde_json::to_value(&report)?, out.as_deref())
        }
        Cmd::Query {
            ckpt,
            audio_store,
            text,
            topk,
            out,
        } => {
            if topk == 0 {
                bail!("--topk must be at least 1");
            }
            let (model, _) = load_checkpoint(&ckpt)?;
            let (store, _) = store_read(&audio_store)?;
            emit(&serde_json::to_value(query(&model, &store, &text, topk)?)?, out.as_deref())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse().cmd) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
