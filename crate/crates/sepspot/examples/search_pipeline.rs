//! Full query-by-example pipeline: train, fuse, retrain, enroll, search,
//! evaluate.
//!
//! Both search schemes run over the same test audio; the per-window scheme
//! embeds every window from scratch, the one-pass scheme slides on the
//! hidden map. Their scores are identical, so only speed differs.
//!
//! Run with: cargo run --example search_pipeline

use sepspot::encoder::{EncoderConfig, StageConfig};
use sepspot::metrics::{match_detections, DetectionRecord, EvalConfig};
use sepspot::search::{enroll, run_search, Scheme, SearchConfig};
use sepspot::synth::{generate, SynthSpec};
use sepspot::tensor::ops::PadMode;
use sepspot::train::{retrain_embedding, train, TrainConfig};

fn main() {
    let spec = SynthSpec {
        classes: 5,
        samples_per_class: 30,
        enroll_per_class: 5,
        min_keyword_frames: 40,
        max_keyword_frames: 70,
        bins: 20,
        test_audios: 4,
        test_audio_frames: 1200,
        keywords_per_test_audio: 5,
        edge_margin_frames: 80,
        seed: 17,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec).unwrap();

    let enc_cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 8, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 16, time_stride: 2, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 32, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 20,
        pad_time: PadMode::Same,
    };
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 25,
        input_frames: 80,
        heads: 4,
        embed_dim: 48,
        seed: 2,
        ..TrainConfig::default()
    };

    println!("training...");
    let trained = train(&corpus.train, &enc_cfg, &cfg).unwrap();
    let base = trained.checkpoint.model;
    let padfree = base.encoder.fuse().unwrap().with_pad_time(PadMode::None);
    let mut rcfg = cfg.clone();
    rcfg.epochs = 4;
    let model = retrain_embedding(
        &padfree,
        Some((base.pooling.clone(), base.projection.clone())),
        &corpus.train,
        &rcfg,
    )
    .unwrap()
    .checkpoint
    .model;

    let f0 = 80;
    let queries = enroll(&model, &corpus.enroll, f0).unwrap();
    println!(
        "enrolled {} keywords from {} templates each",
        queries.entries.len(),
        queries.entries[0].sample_count
    );

    let eval_cfg = EvalConfig::default();
    for scheme in [Scheme::Basic, Scheme::Fast] {
        let search_cfg = SearchConfig {
            scheme,
            stride: model.encoder.config.downsample_ratio(),
            window_frames: f0,
            threshold: 0.9,
            tnorm: false,
            nms: true,
            competition: true,
        };
        let mut records = Vec::new();
        for (id, audio) in &corpus.test.audios {
            let (_, dets) = run_search(&model, &queries, audio, &search_cfg).unwrap();
            for d in dets {
                records.push(DetectionRecord {
                    audio_id: id.clone(),
                    word_id: d.word_id,
                    start_frame: d.start_frame,
                    end_frame: d.end_frame,
                    score: d.score,
                });
            }
        }
        let report = match_detections(&corpus.test.labels, &records, &eval_cfg).unwrap();
        println!(
            "{:?} scheme: {} detections, P {:.3} R {:.3} F1 {:.3} MAO {:.3}",
            scheme,
            records.len(),
            report.precision,
            report.recall,
            report.f1,
            report.mao
        );
    }
}
