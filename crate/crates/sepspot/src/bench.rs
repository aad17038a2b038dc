//! Basic-vs-fast scheme wall-clock comparison over a grid of audio lengths
//! and window strides. Before timing a cell, both schemes run once and their
//! detections must agree exactly; timing covers scoring only (no feature
//! extraction or model loading) on a pinned single-worker pool by default.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::Model;
use crate::search::{
    detect, nms, nms_radii, score_basic, score_fast, tnorm_rows, QueryEmbeddingSet, ScoreMatrix,
};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub audio_seconds: Vec<f32>,
    /// Strides to test, as multiples of the encoder's ratio C_r.
    pub stride_multipliers: Vec<usize>,
    /// Timed repetitions per scheme and cell; the median is reported.
    pub repetitions: usize,
    pub window_frames: usize,
    /// Threshold used for the per-cell detection identity check.
    pub threshold: f32,
    /// Worker threads for window scoring during timing.
    pub workers: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            audio_seconds: vec![5.0, 30.0, 120.0],
            stride_multipliers: vec![1, 2, 4, 8],
            repetitions: 5,
            window_frames: 160,
            threshold: 2.0,
            workers: 1,
            seed: 42,
        }
    }
}

impl BenchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.audio_seconds.is_empty() || self.stride_multipliers.is_empty() {
            return Err(Error::Config("benchmark grid is empty".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Config("need at least 3 timed repetitions".into()));
        }
        if self.workers == 0 || self.window_frames == 0 {
            return Err(Error::Config("workers and window frames must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchCell {
    pub audio_seconds: f32,
    pub audio_frames: usize,
    pub stride: usize,
    pub windows: usize,
    pub basic_ms: f64,
    pub fast_ms: f64,
    pub speedup: f64,
    pub basic_windows_per_sec: f64,
    pub fast_windows_per_sec: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub frame_shift_ms: f32,
    pub downsample_ratio: usize,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>8} {:>7} {:>8} {:>11} {:>11} {:>8}\n",
            "audio_s", "stride", "windows", "basic_ms", "fast_ms", "speedup"
        ));
        for c in &self.cells {
            out.push_str(&format!(
                "{:>8.1} {:>7} {:>8} {:>11.2} {:>11.2} {:>8.2}\n",
                c.audio_seconds, c.stride, c.windows, c.basic_ms, c.fast_ms, c.speedup
            ));
        }
        out
    }
}

fn median_ms(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn postprocess(
    m: &ScoreMatrix,
    model: &Model,
    queries: &QueryEmbeddingSet,
    threshold: f32,
) -> Result<Vec<crate::search::Detection>> {
    let z = tnorm_rows(m);
    let radii = nms_radii(queries, model.encoder.config.downsample_ratio());
    let s = nms(&z, &radii)?;
    Ok(detect(&s, queries, threshold, true))
}

/// Runs the timing grid. The model must be in the fused pad-free form so the
/// fast scheme is admissible at all.
pub fn run_bench(
    model: &Model,
    queries: &QueryEmbeddingSet,
    settings: &BenchSettings,
) -> Result<BenchReport> {
    settings.validate()?;
    if !model.encoder.is_pad_free() {
        return Err(Error::PadFreeRequired);
    }
    let c_r = model.encoder.config.downsample_ratio();
    let bins = model.encoder.config.input_bins;
    let frame_shift_ms = 10.0f32;
    let f0 = settings.window_frames;
    let pool = crate::thread_pool(Some(settings.workers));

    let mut cells = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for &seconds in &settings.audio_seconds {
        let frames = ((seconds * 1000.0 / frame_shift_ms).round() as usize).max(f0);
        let audio = {
            let t = Tensor::rand_uniform(&[frames, bins], -1.0, 1.0, &mut rng);
            FeatureMatrix::new(frames, bins, t.into_data(), frame_shift_ms, 25.0)?
        };
        for &mult in &settings.stride_multipliers {
            let stride = mult * c_r;
            let (basic_m, fast_m) = pool.install(|| -> Result<_> {
                Ok((
                    score_basic(model, queries, &audio, stride, f0)?,
                    score_fast(model, queries, &audio, stride, f0)?,
                ))
            })?;
            let basic_dets = postprocess(&basic_m, model, queries, settings.threshold)?;
            let fast_dets = postprocess(&fast_m, model, queries, settings.threshold)?;
            if basic_dets != fast_dets {
                return Err(Error::Invalid(format!(
                    "schemes disagree at {seconds}s, stride {stride}: basic found {} \
                     detections, fast found {}",
                    basic_dets.len(),
                    fast_dets.len()
                )));
            }
            let windows = basic_m.windows;

            let mut basic_times = Vec::with_capacity(settings.repetitions);
            let mut fast_times = Vec::with_capacity(settings.repetitions);
            for _ in 0..settings.repetitions {
                let t0 = Instant::now();
                pool.install(|| score_basic(model, queries, &audio, stride, f0))?;
                basic_times.push(t0.elapsed().as_secs_f64() * 1e3);
                let t0 = Instant::now();
                pool.install(|| score_fast(model, queries, &audio, stride, f0))?;
                fast_times.push(t0.elapsed().as_secs_f64() * 1e3);
            }
            let basic_ms = median_ms(basic_times);
            let fast_ms = median_ms(fast_times);
            cells.push(BenchCell {
                audio_seconds: seconds,
                audio_frames: frames,
                stride,
                windows,
                basic_ms,
                fast_ms,
                speedup: basic_ms / fast_ms,
                basic_windows_per_sec: windows as f64 / (basic_ms / 1e3),
                fast_windows_per_sec: windows as f64 / (fast_ms / 1e3),
            });
        }
    }
    Ok(BenchReport { cells, frame_shift_ms, downsample_ratio: c_r })
}
