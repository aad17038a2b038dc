//! Speed comparison of the two search schemes.
//!
//! Times per-window scoring against one-pass hidden-map scoring on a small
//! grid of audio lengths and strides, checking on every cell that both
//! schemes detect the same events before timing them.
//!
//! Run with: cargo run --release --example speed_bench

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sepspot::bench::{run_bench, BenchSettings};
use sepspot::encoder::{Encoder, EncoderConfig, StageConfig};
use sepspot::model::Model;
use sepspot::search::{QueryEmbeddingSet, QueryEntry};
use sepspot::tensor::ops::PadMode;
use sepspot::tensor::Tensor;

fn main() {
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 8, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 16, time_stride: 2, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 32, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 20,
        pad_time: PadMode::None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let enc = Encoder::random(cfg, &mut rng).unwrap().fuse().unwrap();
    let model = Model::random(enc, 4, 64, &mut rng).unwrap();
    let queries = QueryEmbeddingSet {
        embed_dim: 64,
        entries: (0..5)
            .map(|w| QueryEntry {
                word_id: w,
                embedding: Tensor::rand_uniform(&[64], -1.0, 1.0, &mut rng).into_data(),
                sample_count: 5,
                avg_template_frames: 60.0,
            })
            .collect(),
    };

    let settings = BenchSettings {
        audio_seconds: vec![5.0, 15.0, 60.0],
        stride_multipliers: vec![1, 2, 4],
        repetitions: 3,
        window_frames: 160,
        threshold: 2.0,
        workers: 1,
        seed: 9,
    };
    println!(
        "window {} frames, time ratio {}, {} timed repetitions per cell\n",
        settings.window_frames,
        model.encoder.config.downsample_ratio(),
        settings.repetitions
    );
    let report = run_bench(&model, &queries, &settings).unwrap();
    print!("{}", report.table());
}
