//! Synthetic keyword corpus generator.
//!
//! Each keyword class is a smooth spectro-temporal template (a coarse random
//! grid upsampled bilinearly). Instances vary in duration and gain and are
//! planted into noise, so classes are separable but not trivially identical.
//! Produces three splits: training utterances (one keyword each with filler
//! context), enrollment samples, and long test audios with several planted
//! keywords plus ground-truth spans.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::LabelSpan;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub enroll_per_class: usize,
    pub min_keyword_frames: usize,
    pub max_keyword_frames: usize,
    /// Filterbank bins per frame.
    pub bins: usize,
    /// Standard deviation of the additive background noise.
    pub noise_level: f32,
    pub test_audios: usize,
    pub test_audio_frames: usize,
    pub keywords_per_test_audio: usize,
    /// Keywords are planted at least this far from test-audio edges so a
    /// sliding window can cover them.
    pub edge_margin_frames: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            samples_per_class: 40,
            enroll_per_class: 5,
            min_keyword_frames: 40,
            max_keyword_frames: 120,
            bins: 60,
            noise_level: 0.3,
            test_audios: 10,
            test_audio_frames: 2000,
            keywords_per_test_audio: 8,
            edge_margin_frames: 80,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 keyword classes".into()));
        }
        if self.samples_per_class < 2 || self.enroll_per_class == 0 {
            return Err(Error::Config("too few samples per class".into()));
        }
        if self.min_keyword_frames < 4 || self.min_keyword_frames > self.max_keyword_frames {
            return Err(Error::Config("bad keyword duration range".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be > 0".into()));
        }
        if self.test_audio_frames
            < 2 * self.edge_margin_frames + self.max_keyword_frames
        {
            return Err(Error::Config(
                "test audios too short for the edge margin and keyword length".into(),
            ));
        }
        Ok(())
    }
}

/// In-memory split: feature matrices keyed by audio id plus keyword spans.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub audios: BTreeMap<String, FeatureMatrix>,
    pub labels: Vec<LabelSpan>,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|l| l.word_id + 1).max().unwrap_or(0)
    }

    /// Writes one `<id>.f32` blob (+ JSON sidecar) per audio and a
    /// `labels.json` listing every span.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (id, fm) in &self.audios {
            fm.save(&dir.join(format!("{id}.f32")))?;
        }
        std::fs::write(
            dir.join("labels.json"),
            serde_json::to_string_pretty(&self.labels)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let labels: Vec<LabelSpan> =
            serde_json::from_str(&std::fs::read_to_string(dir.join("labels.json"))?)?;
        let mut audios = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let is_blob = path.extension().map(|e| e == "f32").unwrap_or(false);
            if is_blob {
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Invalid(format!("bad audio file name {path:?}")))?
                    .to_string();
                audios.insert(id, FeatureMatrix::load(&path)?);
            }
        }
        for l in &labels {
            if !audios.contains_key(&l.audio_id) {
                return Err(Error::Invalid(format!(
                    "labels reference missing audio {}",
                    l.audio_id
                )));
            }
        }
        Ok(Self { audios, labels })
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: Corpus,
    pub enroll: Corpus,
    pub test: Corpus,
}

/// Smooth per-class template: coarse grid, bilinearly upsampled per instance.
struct Template {
    grid: Vec<f32>,
    gt: usize,
    gf: usize,
}

const GRID_T: usize = 8;
const GRID_F: usize = 6;

impl Template {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let dist = Normal::new(0.0f32, 1.5).unwrap();
        Self {
            grid: (0..GRID_T * GRID_F).map(|_| dist.sample(rng)).collect(),
            gt: GRID_T,
            gf: GRID_F,
        }
    }

    /// Bilinear sample at fractional grid coordinates.
    fn at(&self, u: f32, v: f32) -> f32 {
        let ui = (u.floor() as usize).min(self.gt - 2);
        let vi = (v.floor() as usize).min(self.gf - 2);
        let du = u - ui as f32;
        let dv = v - vi as f32;
        let g = |t: usize, f: usize| self.grid[t * self.gf + f];
        g(ui, vi) * (1.0 - du) * (1.0 - dv)
            + g(ui + 1, vi) * du * (1.0 - dv)
            + g(ui, vi + 1) * (1.0 - du) * dv
            + g(ui + 1, vi + 1) * du * dv
    }

    /// Renders an instance of `frames` rows scaled by `gain` into `out`
    /// starting at `start` (added on top of the background).
    fn render(&self, out: &mut [f32], cols: usize, start: usize, frames: usize, gain: f32) {
        for t in 0..frames {
            let u = if frames == 1 {
                0.0
            } else {
                t as f32 / (frames - 1) as f32 * (self.gt - 1) as f32
            };
            for f in 0..cols {
                let v = if cols == 1 {
                    0.0
                } else {
                    f as f32 / (cols - 1) as f32 * (self.gf - 1) as f32
                };
                out[(start + t) * cols + f] += gain * self.at(u, v);
            }
        }
    }
}

fn noise_background<R: Rng>(frames: usize, cols: usize, sigma: f32, rng: &mut R) -> Vec<f32> {
    let dist = Normal::new(0.0f32, sigma).unwrap();
    (0..frames * cols).map(|_| dist.sample(rng)).collect()
}

fn make_matrix(data: Vec<f32>, frames: usize, cols: usize) -> FeatureMatrix {
    FeatureMatrix::new(frames, cols, data, 10.0, 25.0).unwrap()
}

/// One keyword planted inside random filler context.
fn utterance<R: Rng>(
    spec: &SynthSpec,
    template: &Template,
    audio_id: &str,
    word_id: usize,
    rng: &mut R,
) -> (String, FeatureMatrix, LabelSpan) {
    let len = rng.gen_range(spec.min_keyword_frames..=spec.max_keyword_frames);
    let ctx_l = rng.gen_range(10..60);
    let ctx_r = rng.gen_range(10..60);
    let frames = ctx_l + len + ctx_r;
    let mut data = noise_background(frames, spec.bins, spec.noise_level, rng);
    let gain = rng.gen_range(0.8..1.2);
    template.render(&mut data, spec.bins, ctx_l, len, gain);
    let label = LabelSpan {
        audio_id: audio_id.to_string(),
        word_id,
        start_frame: ctx_l,
        end_frame: ctx_l + len,
    };
    (audio_id.to_string(), make_matrix(data, frames, spec.bins), label)
}

fn utterance_split<R: Rng>(
    spec: &SynthSpec,
    templates: &[Template],
    prefix: &str,
    per_class: usize,
    rng: &mut R,
) -> Corpus {
    let mut corpus = Corpus::default();
    for (word_id, template) in templates.iter().enumerate() {
        for i in 0..per_class {
            let id = format!("{prefix}_{word_id:02}_{i:03}");
            let (id, fm, label) = utterance(spec, template, &id, word_id, rng);
            corpus.audios.insert(id, fm);
            corpus.labels.push(label);
        }
    }
    corpus
}

fn test_split<R: Rng>(spec: &SynthSpec, templates: &[Template], rng: &mut R) -> Corpus {
    let mut corpus = Corpus::default();
    let class_dist = Uniform::new(0, spec.classes);
    for a in 0..spec.test_audios {
        let id = format!("test_{a:03}");
        let frames = spec.test_audio_frames;
        let mut data = noise_background(frames, spec.bins, spec.noise_level, rng);
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut planted = 0;
        let mut attempts = 0;
        while planted < spec.keywords_per_test_audio && attempts < 500 {
            attempts += 1;
            let word_id = class_dist.sample(rng);
            let len = rng.gen_range(spec.min_keyword_frames..=spec.max_keyword_frames);
            let lo = spec.edge_margin_frames;
            let hi = frames - spec.edge_margin_frames - len;
            if hi <= lo {
                continue;
            }
            let start = rng.gen_range(lo..hi);
            let gap = 30usize;
            if spans
                .iter()
                .any(|&(s, e)| start < e + gap && s < start + len + gap)
            {
                continue;
            }
            let gain = rng.gen_range(0.8..1.2);
            templates[word_id].render(&mut data, spec.bins, start, len, gain);
            spans.push((start, start + len));
            corpus.labels.push(LabelSpan {
                audio_id: id.clone(),
                word_id,
                start_frame: start,
                end_frame: start + len,
            });
            planted += 1;
        }
        corpus.audios.insert(id, make_matrix(data, frames, spec.bins));
    }
    corpus.labels.sort_by(|a, b| {
        (&a.audio_id, a.start_frame).cmp(&(&b.audio_id, b.start_frame))
    });
    corpus
}

/// Deterministic for a fixed spec (including seed).
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let templates: Vec<Template> = (0..spec.classes).map(|_| Template::random(&mut rng)).collect();
    let train = utterance_split(spec, &templates, "train", spec.samples_per_class, &mut rng);
    let enroll = utterance_split(spec, &templates, "enroll", spec.enroll_per_class, &mut rng);
    let test = test_split(spec, &templates, &mut rng);
    Ok(SynthCorpus { train, enroll, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SynthSpec {
        SynthSpec {
            classes: 3,
            samples_per_class: 4,
            enroll_per_class: 2,
            min_keyword_frames: 20,
            max_keyword_frames: 40,
            bins: 16,
            test_audios: 2,
            test_audio_frames: 600,
            keywords_per_test_audio: 4,
            edge_margin_frames: 60,
            seed: 11,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = tiny_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train.labels, b.train.labels);
        for (id, fm) in &a.train.audios {
            assert_eq!(fm.data(), b.train.audios[id].data());
        }
        for (id, fm) in &a.test.audios {
            assert_eq!(fm.data(), b.test.audios[id].data());
        }
    }

    #[test]
    fn split_sizes_and_label_sanity() {
        let spec = tiny_spec();
        let c = generate(&spec).unwrap();
        assert_eq!(c.train.audios.len(), 12);
        assert_eq!(c.train.labels.len(), 12);
        assert_eq!(c.enroll.audios.len(), 6);
        assert_eq!(c.test.audios.len(), 2);
        assert_eq!(c.train.num_classes(), 3);
        for l in c.train.labels.iter().chain(&c.test.labels) {
            let fm = if l.audio_id.starts_with("train") {
                &c.train.audios[&l.audio_id]
            } else {
                &c.test.audios[&l.audio_id]
            };
            assert!(l.start_frame < l.end_frame);
            assert!(l.end_frame <= fm.rows());
            let len = l.end_frame - l.start_frame;
            assert!(len >= spec.min_keyword_frames && len <= spec.max_keyword_frames);
        }
    }

    #[test]
    fn test_keywords_respect_margin_and_gaps() {
        let spec = tiny_spec();
        let c = generate(&spec).unwrap();
        for (id, fm) in &c.test.audios {
            let mut spans: Vec<(usize, usize)> = c
                .test
                .labels
                .iter()
                .filter(|l| &l.audio_id == id)
                .map(|l| (l.start_frame, l.end_frame))
                .collect();
            spans.sort();
            for &(s, e) in &spans {
                assert!(s >= spec.edge_margin_frames);
                assert!(e + spec.edge_margin_frames <= fm.rows());
            }
            for w in spans.windows(2) {
                assert!(w[1].0 >= w[0].1 + 30, "keywords too close in {id}");
            }
        }
    }

    #[test]
    fn keyword_regions_are_louder_than_filler() {
        let spec = tiny_spec();
        let c = generate(&spec).unwrap();
        // mean squared value inside keyword spans should beat pure noise
        let l = &c.train.labels[0];
        let fm = &c.train.audios[&l.audio_id];
        let cols = fm.cols();
        let energy = |lo: usize, hi: usize| -> f32 {
            let s: f32 = fm.data()[lo * cols..hi * cols].iter().map(|v| v * v).sum();
            s / ((hi - lo) * cols) as f32
        };
        let inside = energy(l.start_frame, l.end_frame);
        let outside = energy(0, l.start_frame);
        assert!(inside > 2.0 * outside, "inside {inside} outside {outside}");
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let spec = tiny_spec();
        let c = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.train.save(dir.path()).unwrap();
        let loaded = Corpus::load(dir.path()).unwrap();
        assert_eq!(loaded.labels, c.train.labels);
        assert_eq!(loaded.audios.len(), c.train.audios.len());
        for (id, fm) in &loaded.audios {
            assert_eq!(fm.data(), c.train.audios[id].data());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = tiny_spec();
        s.classes = 1;
        assert!(generate(&s).is_err());
        let mut s = tiny_spec();
        s.min_keyword_frames = 50;
        s.max_keyword_frames = 40;
        assert!(generate(&s).is_err());
        let mut s = tiny_spec();
        s.test_audio_frames = 100;
        assert!(generate(&s).is_err());
    }
}
