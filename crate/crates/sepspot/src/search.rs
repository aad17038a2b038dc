//! Sliding-window keyword search.
//!
//! Basic scheme: embed every F_0-frame window independently. Fast scheme:
//! run the pad-free encoder once over the whole audio and slide on the
//! hidden map instead; valid (unpadded) convolutions are shift-equivariant
//! for shifts that are multiples of the time down-sampling ratio C_r, so for
//! strides s_t divisible by C_r both schemes produce bit-identical scores.
//! Post-processing: per-word score normalization (T-norm), 1-D non-maximum
//! suppression, and cross-word competition at detection time.

use crate::error::{Error, Result};
use crate::features::{temporal_context_pad, FeatureMatrix, SegmentRef};
use crate::model::{window_tensor, Model};
use crate::synth::Corpus;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const NORM_FLOOR: f32 = 1e-12;
/// Row standard deviations are clamped to this before T-norm division.
pub const TNORM_STD_FLOOR: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Basic,
    Fast,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub scheme: Scheme,
    /// Window stride s_t in feature frames.
    pub stride: usize,
    /// Window length F_0 in feature frames.
    pub window_frames: usize,
    /// Detection threshold; in z-units when `tnorm` is on, otherwise in raw
    /// similarity units.
    pub threshold: f32,
    pub tnorm: bool,
    pub nms: bool,
    pub competition: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Fast,
            stride: 4,
            window_frames: 160,
            threshold: 2.0,
            tnorm: true,
            nms: true,
            competition: true,
        }
    }
}

/// Averaged enrollment embedding for one keyword.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryEntry {
    pub word_id: usize,
    /// Mean of the unit-normalized template embeddings (not re-normalized).
    pub embedding: Vec<f32>,
    pub sample_count: usize,
    pub avg_template_frames: f32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryEmbeddingSet {
    pub embed_dim: usize,
    pub entries: Vec<QueryEntry>,
}

impl QueryEmbeddingSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for e in &set.entries {
            if e.embedding.len() != set.embed_dim {
                return Err(Error::Invalid(format!(
                    "query for word {} has dim {}, set says {}",
                    e.word_id,
                    e.embedding.len(),
                    set.embed_dim
                )));
            }
        }
        Ok(set)
    }
}

fn unit(v: &[f32]) -> Option<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n < NORM_FLOOR {
        None
    } else {
        Some(v.iter().map(|x| x / n).collect())
    }
}

/// Builds one averaged query embedding per keyword from enrollment segments,
/// each padded/cropped to `f0` frames with surrounding context.
pub fn enroll(model: &Model, corpus: &Corpus, f0: usize) -> Result<QueryEmbeddingSet> {
    if corpus.labels.is_empty() {
        return Err(Error::Invalid("enrollment corpus has no labeled segments".into()));
    }
    let d0 = model.embed_dim();
    let mut by_word: BTreeMap<usize, Vec<(Vec<f32>, usize)>> = BTreeMap::new();
    for l in &corpus.labels {
        let fm = corpus.audios.get(&l.audio_id).ok_or_else(|| {
            Error::Invalid(format!("label references missing audio {}", l.audio_id))
        })?;
        let seg = SegmentRef::new(fm, l.start_frame, l.end_frame)?;
        let padded = temporal_context_pad(fm, seg, f0)?;
        let e = model.embed(&window_tensor(&padded, 0, f0)?)?;
        let u = unit(e.data()).ok_or_else(|| {
            Error::Invalid(format!(
                "enrollment template {} [{},{}) embeds to a zero-norm vector",
                l.audio_id, l.start_frame, l.end_frame
            ))
        })?;
        by_word
            .entry(l.word_id)
            .or_default()
            .push((u, l.end_frame - l.start_frame));
    }
    let mut entries = Vec::with_capacity(by_word.len());
    for (word_id, templates) in by_word {
        let n = templates.len();
        let mut avg = vec![0.0f32; d0];
        let mut frames = 0usize;
        for (u, len) in &templates {
            for (a, b) in avg.iter_mut().zip(u) {
                *a += b / n as f32;
            }
            frames += len;
        }
        if avg.iter().map(|x| x * x).sum::<f32>().sqrt() < NORM_FLOOR {
            return Err(Error::Invalid(format!(
                "enrollment embeddings for word {word_id} cancel to a zero-norm average"
            )));
        }
        entries.push(QueryEntry {
            word_id,
            embedding: avg,
            sample_count: n,
            avg_template_frames: frames as f32 / n as f32,
        });
    }
    Ok(QueryEmbeddingSet { embed_dim: d0, entries })
}

/// Word-by-window similarity matrix, row-major [words, windows]. Column `j`
/// covers feature frames [j * stride, j * stride + window_frames).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub values: Vec<f32>,
    pub words: usize,
    pub windows: usize,
    pub stride_frames: usize,
    pub window_frames: usize,
}

#[derive(Serialize, Deserialize)]
struct ScoreSidecar {
    words: usize,
    windows: usize,
    stride_frames: usize,
    window_frames: usize,
}

impl ScoreMatrix {
    pub fn at(&self, word: usize, window: usize) -> f32 {
        self.values[word * self.windows + window]
    }

    pub fn row(&self, word: usize) -> &[f32] {
        &self.values[word * self.windows..(word + 1) * self.windows]
    }

    pub fn col_start_frame(&self, window: usize) -> usize {
        window * self.stride_frames
    }

    /// f32 blob next to a JSON sidecar, like feature matrices.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let sidecar = ScoreSidecar {
            words: self.words,
            windows: self.windows,
            stride_frames: self.stride_frames,
            window_frames: self.window_frames,
        };
        let mut sc_path = path.as_os_str().to_owned();
        sc_path.push(".json");
        std::fs::write(sc_path, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }
}

fn window_count(frames: usize, f0: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("stride must be > 0".into()));
    }
    if frames < f0 {
        return Err(Error::AudioTooShort { frames, window: f0 });
    }
    Ok((frames - f0) / stride + 1)
}

/// Detection score of two embeddings: cosine similarity rescaled to [0, 1],
/// so opposite vectors score 0, orthogonal 0.5 and aligned 1.
pub fn similarity(a: &[f32], b: &[f32]) -> f32 {
    let an = a.iter().map(|x| x * x).sum::<f32>().sqrt().max(NORM_FLOOR);
    let bn = b.iter().map(|x| x * x).sum::<f32>().sqrt().max(NORM_FLOOR);
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    0.5 * dot / (an * bn) + 0.5
}

/// Similarity of one embedding against every query.
fn score_embedding(e: &[f32], queries: &QueryEmbeddingSet) -> Vec<f32> {
    queries
        .entries
        .iter()
        .map(|q| similarity(e, &q.embedding))
        .collect()
}

fn matrix_from_columns(
    cols: Vec<Vec<f32>>,
    queries: &QueryEmbeddingSet,
    stride: usize,
    f0: usize,
) -> ScoreMatrix {
    let words = queries.entries.len();
    let windows = cols.len();
    let mut values = vec![0.0f32; words * windows];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[i * windows + j] = v;
        }
    }
    ScoreMatrix { values, words, windows, stride_frames: stride, window_frames: f0 }
}

/// Basic scheme: embeds every window independently (parallel over windows).
pub fn score_basic(
    model: &Model,
    queries: &QueryEmbeddingSet,
    audio: &FeatureMatrix,
    stride: usize,
    f0: usize,
) -> Result<ScoreMatrix> {
    let w = window_count(audio.rows(), f0, stride)?;
    let cols: Result<Vec<Vec<f32>>> = (0..w)
        .into_par_iter()
        .map(|j| {
            let x = window_tensor(audio, j * stride, f0)?;
            let e = model.embed(&x)?;
            Ok(score_embedding(e.data(), queries))
        })
        .collect();
    Ok(matrix_from_columns(cols?, queries, stride, f0))
}

fn slice_time(hidden: &Tensor, start: usize, len: usize) -> Tensor {
    let (b, c, t, f) = (
        hidden.shape()[0],
        hidden.shape()[1],
        hidden.shape()[2],
        hidden.shape()[3],
    );
    debug_assert_eq!(b, 1);
    let mut data = Vec::with_capacity(c * len * f);
    for ci in 0..c {
        let base = ci * t * f;
        data.extend_from_slice(&hidden.data()[base + start * f..base + (start + len) * f]);
    }
    Tensor::new(vec![1, c, len, f], data).unwrap()
}

/// Hidden rows computed per encoder pass when tiling long audio. Sized so
/// the intermediate maps of each pass stay cache-resident; valid
/// convolutions make the tiled result bit-identical to a single pass.
const HIDDEN_TILE_ROWS: usize = 512;

/// Full-audio hidden map for a pad-free encoder, computed in overlapping
/// input tiles so memory traffic stays flat on long recordings.
fn hidden_map(model: &Model, audio: &FeatureMatrix) -> Result<Tensor> {
    let cfg = &model.encoder.config;
    if !model.encoder.is_pad_free() {
        // same padding has no exact tiling; single pass keeps its semantics
        return model.encoder.forward(&window_tensor(audio, 0, audio.rows())?);
    }
    let c_r = cfg.downsample_ratio();
    let min_in = cfg.min_input_frames();
    let total = cfg.output_shape(audio.rows())?;
    if total <= HIDDEN_TILE_ROWS {
        return model.encoder.forward(&window_tensor(audio, 0, audio.rows())?);
    }
    let mut tiles = Vec::new();
    let mut row = 0usize;
    while row < total {
        let rows = HIDDEN_TILE_ROWS.min(total - row);
        let len = (rows - 1) * c_r + min_in;
        let tile = model.encoder.forward(&window_tensor(audio, row * c_r, len)?)?;
        debug_assert_eq!(tile.shape()[2], rows);
        tiles.push(tile);
        row += rows;
    }
    let (c, f) = (tiles[0].shape()[1], tiles[0].shape()[3]);
    let mut data = vec![0.0f32; c * total * f];
    let mut row = 0usize;
    for tile in &tiles {
        let rows = tile.shape()[2];
        for ci in 0..c {
            let src = &tile.data()[ci * rows * f..(ci + 1) * rows * f];
            data[(ci * total + row) * f..(ci * total + row) * f + rows * f]
                .copy_from_slice(src);
        }
        row += rows;
    }
    Tensor::new(vec![1, c, total, f], data)
}

fn score_hidden_slide(
    model: &Model,
    queries: &QueryEmbeddingSet,
    audio: &FeatureMatrix,
    stride: usize,
    f0: usize,
) -> Result<ScoreMatrix> {
    let c_r = model.encoder.config.downsample_ratio();
    if stride % c_r != 0 || stride == 0 {
        return Err(Error::Config(format!(
            "fast scheme stride {stride} must be a positive multiple of C_r = {c_r}"
        )));
    }
    let w = window_count(audio.rows(), f0, stride)?;
    let t0m = model.encoder.config.output_shape(f0)?;
    let hidden = hidden_map(model, audio)?;
    let h_stride = stride / c_r;
    let t_m = hidden.shape()[2];
    let available = if t_m >= t0m { (t_m - t0m) / h_stride + 1 } else { 0 };
    // the shape calculus guarantees at least W hidden windows; a shortfall
    // means the encoder broke the sliding-window correspondence
    if available < w {
        return Err(Error::Invalid(format!(
            "hidden map yields {available} windows, audio implies {w}"
        )));
    }
    let cols: Result<Vec<Vec<f32>>> = (0..w)
        .into_par_iter()
        .map(|j| {
            let h = slice_time(&hidden, j * h_stride, t0m);
            let e = model.embed_hidden(&h)?;
            Ok(score_embedding(e.data(), queries))
        })
        .collect();
    Ok(matrix_from_columns(cols?, queries, stride, f0))
}

/// Fast scheme: one encoder pass over the whole audio, then sliding on the
/// hidden map. Requires a pad-free encoder and a stride divisible by C_r.
pub fn score_fast(
    model: &Model,
    queries: &QueryEmbeddingSet,
    audio: &FeatureMatrix,
    stride: usize,
    f0: usize,
) -> Result<ScoreMatrix> {
    if !model.encoder.is_pad_free() {
        return Err(Error::PadFreeRequired);
    }
    score_hidden_slide(model, queries, audio, stride, f0)
}

/// Fast-scheme mechanics without the pad-free guard, for demonstrating that
/// padded encoders break the basic/fast equivalence. Not for production use.
pub fn score_fast_unchecked(
    model: &Model,
    queries: &QueryEmbeddingSet,
    audio: &FeatureMatrix,
    stride: usize,
    f0: usize,
) -> Result<ScoreMatrix> {
    score_hidden_slide(model, queries, audio, stride, f0)
}

/// Per-word z-scoring across windows (population std, clamped).
pub fn tnorm_rows(m: &ScoreMatrix) -> ScoreMatrix {
    let mut out = m.clone();
    if m.windows == 0 {
        return out;
    }
    for i in 0..m.words {
        let row = &m.values[i * m.windows..(i + 1) * m.windows];
        let mean = row.iter().sum::<f32>() / m.windows as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / m.windows as f32;
        let std = var.sqrt().max(TNORM_STD_FLOOR);
        for (o, &v) in out.values[i * m.windows..(i + 1) * m.windows]
            .iter_mut()
            .zip(row)
        {
            *o = (v - mean) / std;
        }
    }
    out
}

/// Per-word suppression radius in window-index units: round(avg template
/// frames / C_r), at least 1.
pub fn nms_radii(queries: &QueryEmbeddingSet, c_r: usize) -> Vec<usize> {
    queries
        .entries
        .iter()
        .map(|q| ((q.avg_template_frames / c_r as f32 + 0.5).floor() as usize).max(1))
        .collect()
}

/// Greedy 1-D non-maximum suppression per row.
///
/// Only strictly positive cells compete or get suppressed (scores can be
/// negative after T-norm; leaving non-positive cells untouched keeps the
/// operation idempotent). Ties go to the smaller window index. A winner
/// zeroes every other positive cell within index distance < radius.
pub fn nms(m: &ScoreMatrix, radii: &[usize]) -> Result<ScoreMatrix> {
    if radii.len() != m.words {
        return Err(Error::Invalid(format!(
            "{} suppression radii for {} words",
            radii.len(),
            m.words
        )));
    }
    let mut out = m.clone();
    for i in 0..m.words {
        let radius = radii[i].max(1);
        let row = &mut out.values[i * m.windows..(i + 1) * m.windows];
        let mut order: Vec<usize> = (0..m.windows).filter(|&j| row[j] > 0.0).collect();
        order.sort_by(|&a, &b| {
            row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b))
        });
        let mut suppressed = vec![false; m.windows];
        for &j in &order {
            if suppressed[j] {
                continue;
            }
            let lo = j.saturating_sub(radius - 1);
            let hi = (j + radius).min(m.windows);
            for k in lo..hi {
                if k != j && row[k] > 0.0 {
                    row[k] = 0.0;
                    suppressed[k] = true;
                }
            }
        }
    }
    Ok(out)
}

/// One keyword hit inside a single audio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub word_id: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub score: f32,
}

/// Thresholding plus optional cross-word competition: with competition on,
/// at most one word (the best-scoring row, ties to the smaller row index)
/// fires per window.
pub fn detect(
    m: &ScoreMatrix,
    queries: &QueryEmbeddingSet,
    threshold: f32,
    competition: bool,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for j in 0..m.windows {
        let start = m.col_start_frame(j);
        let end = start + m.window_frames;
        if competition {
            let mut best: Option<(f32, usize)> = None;
            for i in 0..m.words {
                let v = m.at(i, j);
                if v > threshold && best.map(|(bv, _)| v > bv).unwrap_or(true) {
                    best = Some((v, i));
                }
            }
            if let Some((v, i)) = best {
                out.push(Detection {
                    word_id: queries.entries[i].word_id,
                    start_frame: start,
                    end_frame: end,
                    score: v,
                });
            }
        } else {
            for i in 0..m.words {
                let v = m.at(i, j);
                if v > threshold {
                    out.push(Detection {
                        word_id: queries.entries[i].word_id,
                        start_frame: start,
                        end_frame: end,
                        score: v,
                    });
                }
            }
        }
    }
    out
}

/// Full pipeline for one audio: score (chosen scheme), then the enabled
/// post-processing stages, then thresholded detection.
pub fn run_search(
    model: &Model,
    queries: &QueryEmbeddingSet,
    audio: &FeatureMatrix,
    cfg: &SearchConfig,
) -> Result<(ScoreMatrix, Vec<Detection>)> {
    let mut m = match cfg.scheme {
        Scheme::Basic => score_basic(model, queries, audio, cfg.stride, cfg.window_frames)?,
        Scheme::Fast => score_fast(model, queries, audio, cfg.stride, cfg.window_frames)?,
    };
    if cfg.tnorm {
        m = tnorm_rows(&m);
    }
    if cfg.nms {
        let radii = nms_radii(queries, model.encoder.config.downsample_ratio());
        m = nms(&m, &radii)?;
    }
    let dets = detect(&m, queries, cfg.threshold, cfg.competition);
    Ok((m, dets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig, StageConfig};
    use crate::tensor::ops::PadMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(values: Vec<f32>, words: usize, windows: usize) -> ScoreMatrix {
        ScoreMatrix { values, words, windows, stride_frames: 4, window_frames: 16 }
    }

    fn queries_of(words: usize, dim: usize) -> QueryEmbeddingSet {
        QueryEmbeddingSet {
            embed_dim: dim,
            entries: (0..words)
                .map(|w| QueryEntry {
                    word_id: w,
                    embedding: (0..dim).map(|i| if i == w % dim { 1.0 } else { 0.0 }).collect(),
                    sample_count: 1,
                    avg_template_frames: 20.0,
                })
                .collect(),
        }
    }

    fn tiny_model(pad: PadMode, seed: u64) -> Model {
        let cfg = EncoderConfig {
            stages: vec![
                StageConfig { blocks: 1, channels: 4, time_stride: 2, freq_stride: 2 },
                StageConfig { blocks: 1, channels: 6, time_stride: 2, freq_stride: 2 },
            ],
            input_bins: 12,
            pad_time: pad,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::random(cfg, &mut rng).unwrap().fuse().unwrap();
        Model::random(enc, 2, 8, &mut rng).unwrap()
    }

    fn rand_audio(frames: usize, bins: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::rand_uniform(&[frames, bins], -1.0, 1.0, &mut rng);
        FeatureMatrix::new(frames, bins, t.into_data(), 10.0, 25.0).unwrap()
    }

    #[test]
    fn nms_reference_vector() {
        let m = matrix(vec![0.2, 0.9, 0.8, 0.3], 1, 4);
        let out = nms(&m, &[2]).unwrap();
        assert_eq!(out.values, vec![0.0, 0.9, 0.0, 0.3]);
    }

    #[test]
    fn nms_all_equal_keeps_every_other() {
        let m = matrix(vec![0.5; 5], 1, 5);
        let out = nms(&m, &[2]).unwrap();
        assert_eq!(out.values, vec![0.5, 0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn nms_is_idempotent_with_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = 12;
            let m = matrix(
                Tensor::rand_uniform(&[2, w], -2.0, 2.0, &mut rng).into_data(),
                2,
                w,
            );
            let once = nms(&m, &[3, 2]).unwrap();
            let twice = nms(&once, &[3, 2]).unwrap();
            assert_eq!(once.values, twice.values);
        }
    }

    #[test]
    fn nms_leaves_negative_cells_alone() {
        let m = matrix(vec![-0.5, 0.9, -0.7, 0.1], 1, 4);
        let out = nms(&m, &[4]).unwrap();
        assert_eq!(out.values, vec![-0.5, 0.9, -0.7, 0.0]);
    }

    #[test]
    fn tnorm_zero_mean_unit_std_and_argmax_kept() {
        let m = matrix(vec![0.1, 0.9, 0.4, 0.2, 0.3, 0.25, 0.27, 0.26], 2, 4);
        let z = tnorm_rows(&m);
        for i in 0..2 {
            let row = z.row(i);
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-6);
            let raw = m.row(i);
            let argmax_raw = (0..4).max_by(|&a, &b| raw[a].partial_cmp(&raw[b]).unwrap());
            let argmax_z = (0..4).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
            assert_eq!(argmax_raw, argmax_z);
        }
    }

    #[test]
    fn constant_row_tnorm_stays_finite() {
        let m = matrix(vec![0.7; 6], 1, 6);
        let z = tnorm_rows(&m);
        assert!(z.values.iter().all(|v| v.is_finite()));
        assert!(z.values.iter().all(|&v| v.abs() < 1e-3));
    }

    #[test]
    fn detect_competition_keeps_only_best_row() {
        let m = matrix(vec![0.9, 0.1, 0.8, 0.1], 2, 2);
        let q = queries_of(2, 4);
        let with = detect(&m, &q, 0.5, true);
        assert_eq!(with.len(), 1);
        assert_eq!(with[0].word_id, 0);
        assert_eq!((with[0].start_frame, with[0].end_frame), (0, 16));
        let without = detect(&m, &q, 0.5, false);
        assert_eq!(without.len(), 2);
    }

    #[test]
    fn basic_and_fast_scores_are_bit_identical() {
        let model = tiny_model(PadMode::None, 5);
        let q = queries_of(3, 8);
        let f0 = model.encoder.config.min_input_frames() + 8; // 27
        let audio = rand_audio(200, 12, 6);
        for stride in [4usize, 8, 16] {
            let basic = score_basic(&model, &q, &audio, stride, f0).unwrap();
            let fast = score_fast(&model, &q, &audio, stride, f0).unwrap();
            assert_eq!(basic.windows, fast.windows);
            assert_eq!(basic.values, fast.values, "stride {stride}");
        }
    }

    #[test]
    fn padded_encoder_breaks_the_hidden_slide() {
        let model = tiny_model(PadMode::Same, 7);
        let q = queries_of(3, 8);
        let audio = rand_audio(200, 12, 8);
        assert!(matches!(
            score_fast(&model, &q, &audio, 4, 32),
            Err(Error::PadFreeRequired)
        ));
        let basic = score_basic(&model, &q, &audio, 4, 32).unwrap();
        let fast = score_fast_unchecked(&model, &q, &audio, 4, 32).unwrap();
        let max_diff = basic
            .values
            .iter()
            .zip(&fast.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 1e-3, "padded schemes agreed, diff {max_diff}");
    }

    #[test]
    fn fast_stride_must_be_multiple_of_cr() {
        let model = tiny_model(PadMode::None, 9);
        let q = queries_of(2, 8);
        let audio = rand_audio(120, 12, 10);
        let err = score_fast(&model, &q, &audio, 6, 27).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn short_audio_is_reported() {
        let model = tiny_model(PadMode::None, 11);
        let q = queries_of(2, 8);
        let audio = rand_audio(20, 12, 12);
        assert!(matches!(
            score_basic(&model, &q, &audio, 4, 32),
            Err(Error::AudioTooShort { frames: 20, window: 32 })
        ));
    }

    #[test]
    fn window_count_arithmetic() {
        assert_eq!(window_count(160, 160, 4).unwrap(), 1);
        assert_eq!(window_count(2000, 160, 4).unwrap(), 461);
        assert_eq!(window_count(167, 160, 4).unwrap(), 2);
    }

    #[test]
    fn queries_roundtrip_and_validate() {
        let q = queries_of(3, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.json");
        q.save(&path).unwrap();
        let loaded = QueryEmbeddingSet::load(&path).unwrap();
        assert_eq!(loaded.entries.len(), 3);
        let mut broken = q.clone();
        broken.entries[1].embedding.pop();
        broken.save(&path).unwrap();
        assert!(QueryEmbeddingSet::load(&path).is_err());
    }

    #[test]
    fn zero_embedding_enrollment_is_rejected() {
        let mut model = tiny_model(PadMode::None, 13);
        // zero projection: every embedding collapses to the zero vector
        model.projection.weight = Tensor::zeros(model.projection.weight.shape());
        model.projection.bias = vec![0.0; model.projection.bias.len()];
        let corpus = crate::synth::generate(&crate::synth::SynthSpec {
            classes: 2,
            samples_per_class: 2,
            enroll_per_class: 2,
            min_keyword_frames: 12,
            max_keyword_frames: 20,
            bins: 12,
            test_audios: 1,
            test_audio_frames: 400,
            keywords_per_test_audio: 2,
            edge_margin_frames: 40,
            seed: 3,
            ..crate::synth::SynthSpec::default()
        })
        .unwrap()
        .enroll;
        let err = enroll(&model, &corpus, 33).unwrap_err().to_string();
        assert!(err.contains("zero-norm"), "{err}");
    }

    #[test]
    fn scores_live_in_unit_interval() {
        let model = tiny_model(PadMode::None, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = QueryEmbeddingSet {
            embed_dim: 8,
            entries: (0..3)
                .map(|w| QueryEntry {
                    word_id: w,
                    embedding: Tensor::rand_uniform(&[8], -1.0, 1.0, &mut rng).into_data(),
                    sample_count: 2,
                    avg_template_frames: 18.0,
                })
                .collect(),
        };
        let audio = rand_audio(150, 12, 17);
        let m = score_fast(&model, &q, &audio, 4, 27).unwrap();
        assert!(m.values.iter().all(|&v| (-1e-5..=1.0 + 1e-5).contains(&v)));
    }
}
