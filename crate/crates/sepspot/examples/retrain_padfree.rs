//! Head retraining on a frozen pad-free encoder.
//!
//! The one-pass search scheme needs an encoder without temporal padding.
//! This example trains a padded model, fuses it, drops the padding, and
//! retrains only the embedding head while the encoder stays frozen.
//!
//! Run with: cargo run --example retrain_padfree

use sepspot::encoder::{EncoderConfig, StageConfig};
use sepspot::synth::{generate, SynthSpec};
use sepspot::tensor::ops::PadMode;
use sepspot::train::{retrain_embedding, train, TrainConfig};

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
    let enc_cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 8, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 16, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 16,
        pad_time: PadMode::Same,
    };
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        input_frames: 48,
        heads: 4,
        embed_dim: 32,
        seed: 5,
        ..TrainConfig::default()
    };

    println!("stage 1: train with temporal padding");
    let trained = train(&corpus, &enc_cfg, &cfg).unwrap();
    let last = trained.stats.last().unwrap();
    println!("  final valid acc {:.3}", last.valid_accuracy);

    println!("stage 2: fuse branches and drop temporal padding");
    let base = trained.checkpoint.model;
    let padfree = base.encoder.fuse().unwrap().with_pad_time(PadMode::None);
    println!(
        "  pad-free encoder, min window {} frames, time ratio {}",
        padfree.config.min_input_frames(),
        padfree.config.downsample_ratio()
    );

    println!("stage 3: retrain the head, encoder frozen");
    let mut rcfg = cfg.clone();
    rcfg.epochs = 5;
    let retrained = retrain_embedding(
        &padfree,
        Some((base.pooling.clone(), base.projection.clone())),
        &corpus,
        &rcfg,
    )
    .unwrap();
    for s in &retrained.stats {
        println!(
            "  epoch {:2}  loss {:8.4}  valid acc {:5.3}",
            s.epoch, s.loss, s.valid_accuracy
        );
    }
    assert_eq!(retrained.checkpoint.model.encoder, padfree);
    println!("encoder weights untouched; model ready for one-pass search");
}
