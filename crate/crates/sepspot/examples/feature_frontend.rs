//! Log-mel filterbank frontend on a synthetic waveform.
//!
//! Builds a two-tone signal, extracts features, and prints which mel bins
//! light up.
//!
//! Run with: cargo run --example feature_frontend

use sepspot::features::{compute_fbank, mel_bin_center_hz, Waveform};

fn main() {
    let sample_rate = 16_000u32;
    let seconds = 1.5f32;
    let n = (sample_rate as f32 * seconds) as usize;
    // 440 Hz for the first half, 2200 Hz for the second
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f32 / sample_rate as f32;
            let hz = if i < n / 2 { 440.0 } else { 2200.0 };
            0.5 * (2.0 * std::f32::consts::PI * hz * t).sin()
        })
        .collect();
    let wave = Waveform::new(samples, sample_rate).unwrap();

    let bins = 40;
    let fbank = compute_fbank(&wave, bins, 25.0, 10.0).unwrap();
    println!(
        "{} frames x {} bins ({} ms window, {} ms shift)",
        fbank.rows(),
        fbank.cols(),
        25.0,
        10.0
    );

    for (name, frame) in [("440 Hz tone", fbank.rows() / 4), ("2200 Hz tone", 3 * fbank.rows() / 4)]
    {
        let row = fbank.row(frame);
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        println!(
            "frame {frame} ({name}): peak bin {peak}, centered near {:.0} Hz",
            mel_bin_center_hz(bins, peak, sample_rate as f32)
        );
    }
}
