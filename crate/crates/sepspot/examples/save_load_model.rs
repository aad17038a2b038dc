//! Checkpoint persistence: write a model to disk and read it back intact.
//!
//! Checkpoints are a JSON manifest (tensor names, shapes, offsets) next to
//! one little-endian f32 blob; both the multi-branch training form and the
//! fused deploy form round-trip exactly.
//!
//! Run with: cargo run --example save_load_model

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sepspot::encoder::{Encoder, EncoderConfig, StageConfig};
use sepspot::manifest::{load_checkpoint, save_checkpoint, Checkpoint};
use sepspot::model::Model;
use sepspot::tensor::ops::PadMode;

fn main() {
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 8, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 16, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 16,
        pad_time: PadMode::Same,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train_form = Encoder::random(cfg, &mut rng).unwrap();
    let fused = train_form.fuse().unwrap();

    let dir = std::env::temp_dir().join("sepspot-example-ckpt");
    for (name, encoder) in [("train", train_form), ("deploy", fused)] {
        let model = Model::random(encoder, 4, 32, &mut rng).unwrap();
        let ckpt = Checkpoint { model, classifier: None };
        let sub = dir.join(name);
        save_checkpoint(&sub, &ckpt).unwrap();
        let loaded = load_checkpoint(&sub).unwrap();
        assert_eq!(loaded.model, ckpt.model);
        let blob = std::fs::metadata(sub.join("weights.f32")).unwrap().len();
        println!("{name} form round-tripped exactly ({blob} bytes of weights) in {sub:?}");
    }
}
