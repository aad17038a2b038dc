//! Branch fusion: collapse each three-branch training block to one conv.
//!
//! Builds a random multi-branch encoder, fuses it, and shows that both
//! forms produce the same output while the fused form holds far fewer
//! parameter tensors.
//!
//! Run with: cargo run --example fuse_blocks

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sepspot::encoder::{Encoder, EncoderConfig, EncoderForm, StageConfig};
use sepspot::tensor::ops::PadMode;
use sepspot::tensor::Tensor;

fn main() {
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 2, channels: 8, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 2, channels: 16, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 12,
        pad_time: PadMode::Same,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let train_form = Encoder::random(cfg.clone(), &mut rng).unwrap();
    let fused = train_form.fuse().unwrap();

    let describe = |e: &Encoder| match &e.form {
        EncoderForm::Train(blocks) => {
            let branches: usize = blocks
                .iter()
                .map(|b| 2 + usize::from(b.bn_id.is_some()))
                .sum();
            format!("train form, {} blocks, {branches} branches", blocks.len())
        }
        EncoderForm::Deploy(blocks) => {
            format!("deploy form, {} blocks, single conv each", blocks.len())
        }
    };
    println!("before: {}", describe(&train_form));
    println!("after:  {}", describe(&fused));

    let x = Tensor::rand_uniform(&[1, 1, 32, 12], -1.0, 1.0, &mut rng);
    let a = train_form.forward(&x).unwrap();
    let b = fused.forward(&x).unwrap();
    let max_diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0f32, f32::max);
    println!("output shape {:?}, max |train - fused| = {max_diff:.2e}", a.shape());
    assert!(max_diff <= 1e-4);
    println!("fusion preserved the inference function");
}
