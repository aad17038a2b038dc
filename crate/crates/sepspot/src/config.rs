//! Single JSON run configuration shared by every CLI subcommand. Unknown
//! keys are rejected so typos fail loudly instead of silently using defaults.

use crate::bench::BenchSettings;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::search::SearchConfig;
use crate::synth::SynthSpec;
use crate::tensor::ops::PadMode;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    /// Train-form checkpoint directory.
    pub model_dir: PathBuf,
    /// Fused deploy checkpoint directory.
    pub fused_dir: PathBuf,
    /// Pad-free retrained checkpoint directory.
    pub retrained_dir: PathBuf,
    pub queries_file: PathBuf,
    pub detections_file: PathBuf,
    pub report_file: PathBuf,
    pub bench_file: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let w = Path::new("work");
        Self {
            corpus_dir: w.join("corpus"),
            model_dir: w.join("model"),
            fused_dir: w.join("fused"),
            retrained_dir: w.join("retrained"),
            queries_file: w.join("queries.json"),
            detections_file: w.join("detections.jsonl"),
            report_file: w.join("report.json"),
            bench_file: w.join("bench.json"),
        }
    }
}

impl Paths {
    pub fn train_split(&self) -> PathBuf {
        self.corpus_dir.join("train")
    }

    pub fn enroll_split(&self) -> PathBuf {
        self.corpus_dir.join("enroll")
    }

    pub fn test_split(&self) -> PathBuf {
        self.corpus_dir.join("test")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub search: SearchConfig,
    pub eval: EvalConfig,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        Self {
            paths: Paths::default(),
            encoder: EncoderConfig::default_desk(synth.bins, PadMode::Same),
            train: TrainConfig::default(),
            synth,
            search: SearchConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.bench.validate()?;
        if self.encoder.input_bins != self.synth.bins {
            return Err(Error::Config(format!(
                "encoder expects {} filterbank bins but the corpus spec produces {}",
                self.encoder.input_bins, self.synth.bins
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
