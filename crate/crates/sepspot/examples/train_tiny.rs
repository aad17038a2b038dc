//! Tiny end-to-end training run on a synthetic keyword corpus.
//!
//! Generates a few keyword classes, trains the encoder plus embedding head
//! with the margin-softmax objective, and prints per-epoch statistics.
//!
//! Run with: cargo run --example train_tiny

use sepspot::encoder::{EncoderConfig, StageConfig};
use sepspot::synth::{generate, SynthSpec};
use sepspot::tensor::ops::PadMode;
use sepspot::train::{train, TrainConfig};

fn main() {
    let spec = SynthSpec {
        classes: 4,
        samples_per_class: 16,
        enroll_per_class: 3,
        min_keyword_frames: 20,
        max_keyword_frames: 40,
        bins: 16,
        test_audios: 1,
        test_audio_frames: 400,
        keywords_per_test_audio: 2,
        edge_margin_frames: 60,
        seed: 11,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec).unwrap().train;
    println!(
        "training corpus: {} utterances, {} classes",
        corpus.audios.len(),
        corpus.num_classes()
    );

    let enc_cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 8, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 16, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 16,
        pad_time: PadMode::Same,
    };
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 16,
        input_frames: 48,
        heads: 4,
        embed_dim: 32,
        seed: 5,
        ..TrainConfig::default()
    };

    let outcome = train(&corpus, &enc_cfg, &cfg).unwrap();
    for s in &outcome.stats {
        println!(
            "epoch {:2}  loss {:8.4}  train acc {:5.3}  valid acc {:5.3}",
            s.epoch, s.loss, s.train_accuracy, s.valid_accuracy
        );
    }
    let model = &outcome.checkpoint.model;
    println!(
        "trained model: hidden dim {}, embedding dim {}",
        model.encoder.config.hidden_dim(),
        model.embed_dim()
    );
}
