//! Command-line front end over the library: corpus synthesis, training,
//! fusion, pad-free retraining, enrollment, search, evaluation, benchmark.
//! Explicit flags win over values from `--config`.

use clap::{Parser, Subcommand, ValueEnum};
use sepspot::config::RunConfig;
use sepspot::manifest::{load_checkpoint, save_checkpoint, Checkpoint};
use sepspot::metrics::{match_detections, DetectionRecord};
use sepspot::model::Model;
use sepspot::search::{enroll, run_search, QueryEmbeddingSet, Scheme};
use sepspot::synth::Corpus;
use sepspot::tensor::ops::PadMode;
use sepspot::train::{retrain_embedding, train};
use sepspot::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sepspot", version, about = "Query-by-example keyword spotting")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seeds in the synth and train sections.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Basic,
    Fast,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus splits.
    Synth {
        /// Corpus directory (default: paths.corpus_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full model on the train split.
    Train {
        /// Checkpoint directory (default: paths.model_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold the trained three-branch encoder into the deploy form.
    Fuse {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain the embedding head on the frozen pad-free encoder.
    Retrain {
        /// Window length F_0 for head retraining (default: train.input_frames).
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build averaged query embeddings from the enrollment split.
    Enroll {
        /// Checkpoint directory (default: paths.retrained_dir).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Slide over the test audios and emit detections as JSON lines.
    Search {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long)]
        tnorm: Option<Toggle>,
        #[arg(long)]
        nms: Option<Toggle>,
        #[arg(long)]
        competition: Option<Toggle>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score detections against the test labels.
    Eval {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the basic and fast schemes over the configured grid.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_model(dir: &PathBuf) -> Result<Checkpoint> {
    load_checkpoint(dir)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
        cfg.bench.seed = seed;
    }

    match cli.cmd {
        Cmd::Synth { out } => {
            let dir = out.unwrap_or_else(|| cfg.paths.corpus_dir.clone());
            let corpus = sepspot::synth::generate(&cfg.synth)?;
            corpus.train.save(&dir.join("train"))?;
            corpus.enroll.save(&dir.join("enroll"))?;
            corpus.test.save(&dir.join("test"))?;
            println!(
                "wrote {} train, {} enroll, {} test audios to {}",
                corpus.train.audios.len(),
                corpus.enroll.audios.len(),
                corpus.test.audios.len(),
                dir.display()
            );
        }
        Cmd::Train { out } => {
            let dir = out.unwrap_or_else(|| cfg.paths.model_dir.clone());
            let corpus = Corpus::load(&cfg.paths.train_split())?;
            let mut enc_cfg = cfg.encoder.clone();
            enc_cfg.pad_time = PadMode::Same;
            let outcome = train(&corpus, &enc_cfg, &cfg.train)?;
            for s in &outcome.stats {
                println!(
                    "epoch {:>3}  loss {:>9.4}  train acc {:>5.1}%  valid acc {:>5.1}%",
                    s.epoch,
                    s.loss,
                    s.train_accuracy * 100.0,
                    s.valid_accuracy * 100.0
                );
            }
            save_checkpoint(&dir, &outcome.checkpoint)?;
            println!("saved checkpoint to {}", dir.display());
        }
        Cmd::Fuse { out } => {
            let dir = out.unwrap_or_else(|| cfg.paths.fused_dir.clone());
            let ckpt = load_model(&cfg.paths.model_dir)?;
            let fused = Checkpoint {
                model: Model {
                    encoder: ckpt.model.encoder.fuse()?,
                    pooling: ckpt.model.pooling,
                    projection: ckpt.model.projection,
                },
                classifier: ckpt.classifier,
            };
            save_checkpoint(&dir, &fused)?;
            println!("saved fused checkpoint to {}", dir.display());
        }
        Cmd::Retrain { window, out } => {
            let dir = out.unwrap_or_else(|| cfg.paths.retrained_dir.clone());
            let ckpt = load_model(&cfg.paths.fused_dir)?;
            let encoder = ckpt.model.encoder.with_pad_time(PadMode::None);
            let corpus = Corpus::load(&cfg.paths.train_split())?;
            let mut tcfg = cfg.train.clone();
            if let Some(w) = window {
                tcfg.input_frames = w;
            }
            let init = Some((ckpt.model.pooling, ckpt.model.projection));
            let outcome = retrain_embedding(&encoder, init, &corpus, &tcfg)?;
            for s in &outcome.stats {
                println!(
                    "epoch {:>3}  loss {:>9.4}  train acc {:>5.1}%  valid acc {:>5.1}%",
                    s.epoch,
                    s.loss,
                    s.train_accuracy * 100.0,
                    s.valid_accuracy * 100.0
                );
            }
            save_checkpoint(&dir, &outcome.checkpoint)?;
            println!("saved retrained checkpoint to {}", dir.display());
        }
        Cmd::Enroll { model, out } => {
            let path = out.unwrap_or_else(|| cfg.paths.queries_file.clone());
            let ckpt = load_model(&model.unwrap_or_else(|| cfg.paths.retrained_dir.clone()))?;
            let corpus = Corpus::load(&cfg.paths.enroll_split())?;
            let queries = enroll(&ckpt.model, &corpus, cfg.search.window_frames)?;
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            queries.save(&path)?;
            println!(
                "enrolled {} keywords to {}",
                queries.entries.len(),
                path.display()
            );
        }
        Cmd::Search { model, scheme, stride, threshold, tnorm, nms, competition, out } => {
            let path = out.unwrap_or_else(|| cfg.paths.detections_file.clone());
            let ckpt = load_model(&model.unwrap_or_else(|| cfg.paths.retrained_dir.clone()))?;
            let queries = QueryEmbeddingSet::load(&cfg.paths.queries_file)?;
            let corpus = Corpus::load(&cfg.paths.test_split())?;
            let mut scfg = cfg.search;
            if let Some(s) = scheme {
                scfg.scheme = match s {
                    SchemeArg::Basic => Scheme::Basic,
                    SchemeArg::Fast => Scheme::Fast,
                };
            }
            if let Some(s) = stride {
                scfg.stride = s;
            }
            if let Some(t) = threshold {
                scfg.threshold = t;
            }
            if let Some(t) = tnorm {
                scfg.tnorm = t.as_bool();
            }
            if let Some(t) = nms {
                scfg.nms = t.as_bool();
            }
            if let Some(t) = competition {
                scfg.competition = t.as_bool();
            }
            let mut lines = Vec::new();
            let mut total = 0usize;
            for (audio_id, fm) in &corpus.audios {
                let (_, dets) = run_search(&ckpt.model, &queries, fm, &scfg)?;
                total += dets.len();
                for d in dets {
                    let rec = DetectionRecord {
                        audio_id: audio_id.clone(),
                        word_id: d.word_id,
                        start_frame: d.start_frame,
                        end_frame: d.end_frame,
                        score: d.score,
                    };
                    lines.push(serde_json::to_string(&rec).map_err(Error::from)?);
                }
            }
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, lines.join("\n") + "\n")?;
            println!(
                "wrote {total} detections for {} audios to {}",
                corpus.audios.len(),
                path.display()
            );
        }
        Cmd::Eval { detections, out } => {
            let det_path = detections.unwrap_or_else(|| cfg.paths.detections_file.clone());
            let report_path = out.unwrap_or_else(|| cfg.paths.report_file.clone());
            let corpus = Corpus::load(&cfg.paths.test_split())?;
            let text = std::fs::read_to_string(&det_path)?;
            let mut dets = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                dets.push(serde_json::from_str::<DetectionRecord>(line).map_err(Error::from)?);
            }
            let report = match_detections(&corpus.labels, &dets, &cfg.eval)?;
            print!("{}", report.table(&format!("{:?}", cfg.eval.overlap_threshold)));
            if let Some(parent) = report_path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            println!("saved report to {}", report_path.display());
        }
        Cmd::Bench { model, out } => {
            let path = out.unwrap_or_else(|| cfg.paths.bench_file.clone());
            let ckpt = load_model(&model.unwrap_or_else(|| cfg.paths.retrained_dir.clone()))?;
            let queries = QueryEmbeddingSet::load(&cfg.paths.queries_file)?;
            let report = sepspot::bench::run_bench(&ckpt.model, &queries, &cfg.bench)?;
            print!("{}", report.table());
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("saved benchmark to {}", path.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
