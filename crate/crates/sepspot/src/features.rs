//! Log-mel filterbank frontend and fixed-length query windows.
//!
//! Pipeline: pre-emphasis 0.97, Hamming window, power-of-two FFT (512 points
//! at 16 kHz / 25 ms), triangular mel filters spanning 20 Hz - 7600 Hz, log
//! with a 1e-10 floor. Variable-length segments become fixed F_0-frame inputs
//! via temporal context padding: the segment sits centered, surrounded by real
//! context frames where the source has them and edge replicas elsewhere.

use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub const DEFAULT_MEL_BINS: usize = 60;
pub const DEFAULT_FRAME_LEN_MS: f32 = 25.0;
pub const DEFAULT_FRAME_SHIFT_MS: f32 = 10.0;
const PRE_EMPHASIS: f32 = 0.97;
const MEL_LOW_HZ: f32 = 20.0;
const MEL_HIGH_HZ: f32 = 7600.0;
pub const LOG_FLOOR: f32 = 1e-10;

/// Mono waveform, samples in [-1, 1].
#[derive(Clone, Debug)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("waveform is empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be > 0".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Reads a mono 16-bit PCM WAV file.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        parse_wav(&bytes)
    }
}

fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |msg: &str| Error::Invalid(format!("wav: {msg}"));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut sample_rate = 0u32;
    let mut channels = 0u16;
    let mut bits = 0u16;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(bad("only PCM (format 1) supported"));
                }
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if channels != 1 {
        return Err(bad("only mono supported"));
    }
    if bits != 16 {
        return Err(bad("only 16-bit PCM supported"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    Waveform::new(samples, sample_rate)
}

/// T x D_f matrix of log-mel energies, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    pub frame_shift_ms: f32,
    pub frame_len_ms: f32,
}

#[derive(Serialize, Deserialize)]
struct FeatureSidecar {
    rows: usize,
    cols: usize,
    frame_shift_ms: f32,
    frame_len_ms: f32,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, frame_shift_ms: f32, frame_len_ms: f32) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Invalid(format!(
                "feature matrix {rows}x{cols} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data, frame_shift_ms, frame_len_ms })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Writes the flat little-endian f32 blob at `path` and a JSON sidecar at
    /// `path` + ".json".
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let sidecar = FeatureSidecar {
            rows: self.rows,
            cols: self.cols,
            frame_shift_ms: self.frame_shift_ms,
            frame_len_ms: self.frame_len_ms,
        };
        std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: FeatureSidecar =
            serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
        let bytes = std::fs::read(path)?;
        if bytes.len() != sidecar.rows * sidecar.cols * 4 {
            return Err(Error::Invalid(format!(
                "feature blob {} has {} bytes, sidecar says {}x{}",
                path.display(),
                bytes.len(),
                sidecar.rows,
                sidecar.cols
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(sidecar.rows, sidecar.cols, data, sidecar.frame_shift_ms, sidecar.frame_len_ms)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Frame interval inside a source feature matrix, end exclusive.
#[derive(Clone, Copy, Debug)]
pub struct SegmentRef {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl SegmentRef {
    pub fn new(source: &FeatureMatrix, start_frame: usize, end_frame: usize) -> Result<Self> {
        if start_frame >= end_frame || end_frame > source.rows() {
            return Err(Error::Invalid(format!(
                "segment [{start_frame},{end_frame}) invalid for {} source frames",
                source.rows()
            )));
        }
        Ok(Self { start_frame, end_frame })
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn hz_to_mel(hz: f32) -> f32 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f32) -> f32 {
    700.0 * (10.0f32.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over `n_fft/2 + 1` power-spectrum bins.
/// Returns one weight row per mel bin.
pub fn mel_filterbank(bins: usize, n_fft: usize, sample_rate: f32) -> Vec<Vec<f32>> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(MEL_HIGH_HZ.min(sample_rate / 2.0));
    let centers: Vec<f32> = (0..bins + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f32 / (bins + 1) as f32))
        .collect();
    let hz_per_bin = sample_rate / n_fft as f32;
    let mut filters = vec![vec![0.0f32; n_bins]; bins];
    for (j, filter) in filters.iter_mut().enumerate() {
        let (lo, center, hi) = (centers[j], centers[j + 1], centers[j + 2]);
        for (k, w) in filter.iter_mut().enumerate() {
            let hz = k as f32 * hz_per_bin;
            if hz > lo && hz < hi {
                *w = if hz <= center {
                    (hz - lo) / (center - lo)
                } else {
                    (hi - hz) / (hi - center)
                };
            }
        }
    }
    filters
}

/// Center frequency (Hz) of mel bin `j`, matching `mel_filterbank`.
pub fn mel_bin_center_hz(bins: usize, j: usize, sample_rate: f32) -> f32 {
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(MEL_HIGH_HZ.min(sample_rate / 2.0));
    mel_to_hz(mel_lo + (mel_hi - mel_lo) * (j + 1) as f32 / (bins + 1) as f32)
}

/// Log-mel filterbank features of a waveform.
pub fn compute_fbank(
    w: &Waveform,
    bins: usize,
    frame_len_ms: f32,
    frame_shift_ms: f32,
) -> Result<FeatureMatrix> {
    let sr = w.sample_rate as f32;
    let frame_len = (sr * frame_len_ms / 1000.0).round() as usize;
    let frame_shift = (sr * frame_shift_ms / 1000.0).round() as usize;
    if frame_len == 0 || frame_shift == 0 {
        return Err(Error::Invalid("frame length/shift too small".into()));
    }
    if w.samples.len() < frame_len {
        return Err(Error::InsufficientSamples {
            samples: w.samples.len(),
            frame: frame_len,
        });
    }
    let n_frames = (w.samples.len() - frame_len) / frame_shift + 1;
    let n_fft = frame_len.next_power_of_two();
    let filters = mel_filterbank(bins, n_fft, sr);
    let hamming: Vec<f32> = (0..frame_len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f32::consts::PI * i as f32 / (frame_len - 1) as f32).cos())
        .collect();

    // pre-emphasis over the whole signal
    let mut emphasized = Vec::with_capacity(w.samples.len());
    let mut prev = w.samples[0];
    emphasized.push(w.samples[0] - PRE_EMPHASIS * w.samples[0]);
    for &s in &w.samples[1..] {
        emphasized.push(s - PRE_EMPHASIS * prev);
        prev = s;
    }

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut data = Vec::with_capacity(n_frames * bins);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    for fi in 0..n_frames {
        let start = fi * frame_shift;
        for v in buf.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for i in 0..frame_len {
            buf[i] = Complex::new(emphasized[start + i] * hamming[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f32> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for filter in &filters {
            let energy: f32 = filter.iter().zip(&power).map(|(f, p)| f * p).sum();
            data.push(energy.max(LOG_FLOOR).ln());
        }
    }
    FeatureMatrix::new(n_frames, bins, data, frame_shift_ms, frame_len_ms)
}

/// Pads or center-crops a segment to exactly `f0` frames.
///
/// Shorter segments are centered and surrounded by context from `source`;
/// out-of-range context indices replicate the nearest real frame. When the
/// remainder is odd the left side receives the extra frame. Segments longer
/// than `f0` are center-cropped.
pub fn temporal_context_pad(
    source: &FeatureMatrix,
    seg: SegmentRef,
    f0: usize,
) -> Result<FeatureMatrix> {
    if f0 == 0 {
        return Err(Error::Invalid("F_0 must be > 0".into()));
    }
    if seg.start_frame >= seg.end_frame || seg.end_frame > source.rows() {
        return Err(Error::Invalid("empty or out-of-range segment".into()));
    }
    let len = seg.len();
    let cols = source.cols();
    let first: isize = if len >= f0 {
        // center crop
        seg.start_frame as isize + ((len - f0) / 2) as isize
    } else {
        let need = f0 - len;
        let left = need / 2 + need % 2;
        seg.start_frame as isize - left as isize
    };
    let mut data = Vec::with_capacity(f0 * cols);
    let max_row = source.rows() as isize - 1;
    for i in 0..f0 as isize {
        let row = (first + i).clamp(0, max_row) as usize;
        data.extend_from_slice(source.row(row));
    }
    FeatureMatrix::new(f0, cols, data, source.frame_shift_ms, source.frame_len_ms)
}
