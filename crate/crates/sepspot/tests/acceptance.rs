//! Release gate. One test per shipping criterion; each prints a single
//! `ACCEPTANCE n (<name>): PASS` line once its assertions hold, so running
//! this target with `--nocapture` yields a checklist.

mod common;

use common::{brute_max_matching, brute_nms_row, fd_grad, rel_err};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sepspot::bench::{run_bench, BenchSettings};
use sepspot::encoder::{Encoder, EncoderConfig, EncoderForm, StageConfig};
use sepspot::features::FeatureMatrix;
use sepspot::metrics::{
    match_detections, overlap, overlap_ratio, DetectionRecord, EvalConfig, LabelSpan,
    OverlapThreshold,
};
use sepspot::model::Model;
use sepspot::search::{
    detect, enroll, nms, nms_radii, run_search, score_basic, score_fast, score_fast_unchecked,
    similarity, tnorm_rows, Detection, QueryEmbeddingSet, QueryEntry, Scheme, ScoreMatrix,
    SearchConfig,
};
use sepspot::synth::{generate, SynthSpec};
use sepspot::tensor::ops::{self, BatchNormParams, ConvSpec, PadMode};
use sepspot::tensor::tape::{amsoftmax_value, penalization_infer, Tape};
use sepspot::tensor::Tensor;
use sepspot::train::{retrain_embedding, train, TrainConfig};

fn randomize_bn_stats<R: Rng>(enc: &mut Encoder, rng: &mut R) {
    if let EncoderForm::Train(blocks) = &mut enc.form {
        for b in blocks {
            for bn in [&mut b.bn3, &mut b.bn1]
                .into_iter()
                .chain(b.bn_id.iter_mut())
            {
                randomize_one_bn(bn, rng);
            }
        }
    }
}

fn randomize_one_bn<R: Rng>(bn: &mut BatchNormParams, rng: &mut R) {
    for g in &mut bn.gamma {
        *g = rng.gen_range(0.3..1.7);
    }
    for b in &mut bn.beta {
        *b = rng.gen_range(-0.5..0.5);
    }
    for m in &mut bn.running_mean {
        *m = rng.gen_range(-1.0..1.0);
    }
    for v in &mut bn.running_var {
        *v = rng.gen_range(0.2..2.0);
    }
}

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

fn random_audio<R: Rng>(frames: usize, bins: usize, rng: &mut R) -> FeatureMatrix {
    let t = Tensor::rand_uniform(&[frames, bins], -1.0, 1.0, rng);
    FeatureMatrix::new(frames, bins, t.into_data(), 10.0, 25.0).unwrap()
}

fn random_queries<R: Rng>(words: usize, dim: usize, rng: &mut R) -> QueryEmbeddingSet {
    QueryEmbeddingSet {
        embed_dim: dim,
        entries: (0..words)
            .map(|w| QueryEntry {
                word_id: w,
                embedding: Tensor::rand_uniform(&[dim], -1.0, 1.0, rng).into_data(),
                sample_count: 3,
                avg_template_frames: rng.gen_range(20.0..80.0),
            })
            .collect(),
    }
}

/// 1: every randomly parameterized three-branch block collapses to a single
/// conv without changing the inference output.
#[test]
fn acceptance_1_fusion_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9001);
    // 100 two-block encoders: the second block sees an arbitrary channel
    // count, stride and pad mode, so every branch layout gets fused
    for i in 0..100 {
        let cfg = EncoderConfig {
            stages: vec![
                StageConfig {
                    blocks: 1,
                    channels: rng.gen_range(1..5),
                    time_stride: 1,
                    freq_stride: 1,
                },
                StageConfig {
                    blocks: rng.gen_range(1..3),
                    channels: rng.gen_range(1..5),
                    time_stride: if rng.gen_bool(0.5) { 1 } else { 2 },
                    freq_stride: if rng.gen_bool(0.5) { 1 } else { 2 },
                },
            ],
            input_bins: rng.gen_range(4..9),
            pad_time: if rng.gen_bool(0.5) { PadMode::Same } else { PadMode::None },
        };
        let mut enc = Encoder::random(cfg.clone(), &mut rng).unwrap();
        randomize_bn_stats(&mut enc, &mut rng);
        let fused = enc.fuse().unwrap();
        let t = cfg.min_input_frames() + rng.gen_range(0..8);
        let x = Tensor::rand_uniform(&[1, 1, t, cfg.input_bins], -1.0, 1.0, &mut rng);
        let d = max_diff(&enc.forward(&x).unwrap(), &fused.forward(&x).unwrap());
        assert!(d <= 1e-4, "block stack {i}: fusion diff {d}");
    }
    // 10 deeper random encoders
    for i in 0..10 {
        let stages = (0..rng.gen_range(2..4))
            .map(|s| StageConfig {
                blocks: rng.gen_range(1..3),
                channels: rng.gen_range(2..8),
                time_stride: if s == 0 { 1 } else { rng.gen_range(1..3) },
                freq_stride: rng.gen_range(1..3),
            })
            .collect();
        let cfg = EncoderConfig {
            stages,
            input_bins: 10,
            pad_time: if i % 2 == 0 { PadMode::Same } else { PadMode::None },
        };
        let mut enc = Encoder::random(cfg.clone(), &mut rng).unwrap();
        randomize_bn_stats(&mut enc, &mut rng);
        let fused = enc.fuse().unwrap();
        let t = cfg.min_input_frames() + rng.gen_range(4..20);
        let x = Tensor::rand_uniform(&[2, 1, t, 10], -1.0, 1.0, &mut rng);
        let d = max_diff(&enc.forward(&x).unwrap(), &fused.forward(&x).unwrap());
        assert!(d <= 1e-4, "encoder {i}: fusion diff {d}");
    }
    println!("ACCEPTANCE 1 (fusion equivalence): PASS");
}

/// 2: on a pad-free fused model the one-pass sliding scheme reproduces the
/// per-window scheme cell for cell, and the detection lists agree.
#[test]
fn acceptance_2_basic_fast_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9002);
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 3, time_stride: 2, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 5, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 10,
        pad_time: PadMode::None,
    };
    let enc = Encoder::random(cfg, &mut rng).unwrap().fuse().unwrap();
    let c_r = enc.config.downsample_ratio();
    let model = Model::random(enc, 3, 16, &mut rng).unwrap();
    let queries = random_queries(3, 16, &mut rng);
    let f0 = 39;
    // 18 short-to-medium audios plus 2 at 120 s-equivalent (12 000 frames
    // at a 10 ms shift)
    let mut lengths: Vec<usize> = (0..18).map(|_| rng.gen_range(100..1500)).collect();
    lengths.extend([12_000, 12_000]);
    for (i, frames) in lengths.into_iter().enumerate() {
        let audio = random_audio(frames, 10, &mut rng);
        let stride = c_r * [1, 2, 3][i % 3];
        let basic = score_basic(&model, &queries, &audio, stride, f0).unwrap();
        let fast = score_fast(&model, &queries, &audio, stride, f0).unwrap();
        assert_eq!(basic.windows, fast.windows);
        for (k, (a, b)) in basic.values.iter().zip(&fast.values).enumerate() {
            assert!(
                (a - b).abs() <= 1e-4,
                "audio {i} cell {k}: basic {a} vs fast {b}"
            );
        }
        let radii = nms_radii(&queries, c_r);
        let db = detect(
            &nms(&tnorm_rows(&basic), &radii).unwrap(),
            &queries,
            1.0,
            true,
        );
        let df = detect(
            &nms(&tnorm_rows(&fast), &radii).unwrap(),
            &queries,
            1.0,
            true,
        );
        assert_eq!(db, df, "audio {i}: detection lists differ");
    }
    println!("ACCEPTANCE 2 (basic/fast score equivalence): PASS");
}

/// 3: a concrete same-padded encoder where sliding on the hidden map does
/// NOT reproduce per-window scores.
#[test]
fn acceptance_3_padding_counterexample() {
    let mut rng = ChaCha8Rng::seed_from_u64(9003);
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 3, time_stride: 2, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 5, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 10,
        pad_time: PadMode::Same,
    };
    let enc = Encoder::random(cfg, &mut rng).unwrap().fuse().unwrap();
    let c_r = enc.config.downsample_ratio();
    let model = Model::random(enc, 3, 16, &mut rng).unwrap();
    let queries = random_queries(2, 16, &mut rng);
    let audio = random_audio(200, 10, &mut rng);
    let basic = score_basic(&model, &queries, &audio, c_r, 24).unwrap();
    let fast = score_fast_unchecked(&model, &queries, &audio, c_r, 24).unwrap();
    let d = basic
        .values
        .iter()
        .zip(&fast.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(d > 1e-3, "same-padding unexpectedly preserved equivalence ({d})");
    println!("ACCEPTANCE 3 (padding counterexample): PASS");
}

/// 4: reverse-mode gradients of every learnable op agree with central finite
/// differences.
#[test]
fn acceptance_4_gradient_checks() {
    const H: f32 = 1e-3;
    const TOL: f32 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(9004);

    fn weighted_sum(out: &Tensor, r: &Tensor) -> f64 {
        out.data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    // conv2d
    let spec = ConvSpec {
        in_channels: 2,
        out_channels: 3,
        kernel: (3, 3),
        stride: (2, 1),
        pad_time: PadMode::None,
        pad_freq: PadMode::Same,
    };
    let x = Tensor::rand_uniform(&[2, 2, 7, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::rand_uniform(&[3], -0.5, 0.5, &mut rng);
    let out = ops::conv2d(&x, &spec, &w, Some(b.data())).unwrap();
    let r = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let y = tape.conv2d(xv, wv, Some(bv), spec).unwrap();
    let mut grads = tape.backward_with(y, r.clone()).unwrap();
    let mut f_x = |p: &[f32]| {
        let xt = Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap();
        weighted_sum(&ops::conv2d(&xt, &spec, &w, Some(b.data())).unwrap(), &r)
    };
    assert!(rel_err(grads.take(xv).unwrap().data(), &fd_grad(&mut f_x, x.data(), H)) < TOL);
    let mut f_w = |p: &[f32]| {
        let wt = Tensor::new(w.shape().to_vec(), p.to_vec()).unwrap();
        weighted_sum(&ops::conv2d(&x, &spec, &wt, Some(b.data())).unwrap(), &r)
    };
    assert!(rel_err(grads.take(wv).unwrap().data(), &fd_grad(&mut f_w, w.data(), H)) < TOL);

    // batchnorm (training statistics)
    let x = Tensor::rand_uniform(&[2, 3, 4, 3], -1.5, 1.5, &mut rng);
    let gamma = Tensor::rand_uniform(&[3], 0.5, 1.5, &mut rng);
    let beta = Tensor::rand_uniform(&[3], -0.5, 0.5, &mut rng);
    let eps = 1e-5;
    let (out, _) = ops::batchnorm_train(&x, gamma.data(), beta.data(), eps).unwrap();
    let r = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (xv, gv, bv) = (
        tape.leaf(x.clone()),
        tape.leaf(gamma.clone()),
        tape.leaf(beta.clone()),
    );
    let y = tape.batchnorm(xv, gv, bv, eps).unwrap();
    let mut grads = tape.backward_with(y, r.clone()).unwrap();
    let mut f_x = |p: &[f32]| {
        let xt = Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap();
        let (o, _) = ops::batchnorm_train(&xt, gamma.data(), beta.data(), eps).unwrap();
        weighted_sum(&o, &r)
    };
    assert!(rel_err(grads.take(xv).unwrap().data(), &fd_grad(&mut f_x, x.data(), H)) < TOL);
    let mut f_g = |p: &[f32]| {
        let (o, _) = ops::batchnorm_train(&x, p, beta.data(), eps).unwrap();
        weighted_sum(&o, &r)
    };
    assert!(rel_err(grads.take(gv).unwrap().data(), &fd_grad(&mut f_g, gamma.data(), H)) < TOL);

    // linear
    let x = Tensor::rand_uniform(&[3, 6], -1.0, 1.0, &mut rng);
    let w = Tensor::rand_uniform(&[4, 6], -1.0, 1.0, &mut rng);
    let b = Tensor::rand_uniform(&[4], -0.5, 0.5, &mut rng);
    let out = ops::linear(&x, &w, b.data()).unwrap();
    let r = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let y = tape.linear(xv, wv, bv).unwrap();
    let mut grads = tape.backward_with(y, r.clone()).unwrap();
    let mut f_w = |p: &[f32]| {
        let wt = Tensor::new(w.shape().to_vec(), p.to_vec()).unwrap();
        weighted_sum(&ops::linear(&x, &wt, b.data()).unwrap(), &r)
    };
    assert!(rel_err(grads.take(wv).unwrap().data(), &fd_grad(&mut f_w, w.data(), H)) < TOL);
    let mut f_x = |p: &[f32]| {
        let xt = Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap();
        weighted_sum(&ops::linear(&xt, &w, b.data()).unwrap(), &r)
    };
    assert!(rel_err(grads.take(xv).unwrap().data(), &fd_grad(&mut f_x, x.data(), H)) < TOL);

    // attentive statistics pooling
    use sepspot::tensor::tape::attention_pool_infer;
    let ymap = Tensor::rand_uniform(&[2, 2, 5, 3], -1.0, 1.0, &mut rng);
    let attn = Tensor::rand_uniform(&[3, 2], -1.0, 1.0, &mut rng);
    let out = attention_pool_infer(&ymap, &attn).unwrap();
    let r = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (yv, av) = (tape.leaf(ymap.clone()), tape.leaf(attn.clone()));
    let p = tape.attention_pool(yv, av).unwrap();
    let mut grads = tape.backward_with(p, r.clone()).unwrap();
    let mut f_y = |p: &[f32]| {
        let yt = Tensor::new(ymap.shape().to_vec(), p.to_vec()).unwrap();
        weighted_sum(&attention_pool_infer(&yt, &attn).unwrap(), &r)
    };
    assert!(rel_err(grads.take(yv).unwrap().data(), &fd_grad(&mut f_y, ymap.data(), H)) < TOL);
    let mut f_a = |p: &[f32]| {
        let at = Tensor::new(attn.shape().to_vec(), p.to_vec()).unwrap();
        weighted_sum(&attention_pool_infer(&ymap, &at).unwrap(), &r)
    };
    assert!(rel_err(grads.take(av).unwrap().data(), &fd_grad(&mut f_a, attn.data(), H)) < TOL);

    // margin softmax
    let f = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
    let labels = [0usize, 2, 1, 2];
    let mut tape = Tape::new();
    let (fv, wv) = (tape.leaf(f.clone()), tape.leaf(w.clone()));
    let loss = tape.amsoftmax(fv, wv, &labels, 0.2, 30.0).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let mut f_f = |p: &[f32]| {
        let ft = Tensor::new(f.shape().to_vec(), p.to_vec()).unwrap();
        amsoftmax_value(&ft, &w, &labels, 0.2, 30.0).unwrap()
    };
    assert!(rel_err(grads.take(fv).unwrap().data(), &fd_grad(&mut f_f, f.data(), H)) < TOL);
    let mut f_w = |p: &[f32]| {
        let wt = Tensor::new(w.shape().to_vec(), p.to_vec()).unwrap();
        amsoftmax_value(&f, &wt, &labels, 0.2, 30.0).unwrap()
    };
    assert!(rel_err(grads.take(wv).unwrap().data(), &fd_grad(&mut f_w, w.data(), H)) < TOL);

    // attention penalty
    let a = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let av = tape.leaf(a.clone());
    let p = tape.penalization(av).unwrap();
    let mut grads = tape.backward(p).unwrap();
    let mut f_a = |p: &[f32]| {
        let at = Tensor::new(a.shape().to_vec(), p.to_vec()).unwrap();
        penalization_infer(&at).unwrap() as f64
    };
    assert!(rel_err(grads.take(av).unwrap().data(), &fd_grad(&mut f_a, a.data(), H)) < TOL);

    println!("ACCEPTANCE 4 (gradient checks): PASS");
}

/// 5: the evaluation matcher equals an exhaustive oracle on 1 000 random
/// label/detection sets, and suppression equals a brute greedy oracle on
/// 1 000 random rows.
#[test]
fn acceptance_5_metric_and_nms_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9005);

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<LabelSpan>, Vec<DetectionRecord>) {
        let mut labels = Vec::new();
        let mut dets = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for audio in 0..rng.gen_range(1..3) {
            let audio_id = format!("a{audio}");
            for word in 0..rng.gen_range(1..3usize) {
                for _ in 0..rng.gen_range(0..4usize) {
                    let s = rng.gen_range(0..200);
                    let len = rng.gen_range(5..40);
                    labels.push(LabelSpan {
                        audio_id: audio_id.clone(),
                        word_id: word,
                        start_frame: s,
                        end_frame: s + len,
                    });
                }
                for _ in 0..rng.gen_range(0..4usize) {
                    let s = rng.gen_range(0..200);
                    let len = rng.gen_range(5..40);
                    if seen.insert((audio_id.clone(), word, s, s + len)) {
                        dets.push(DetectionRecord {
                            audio_id: audio_id.clone(),
                            word_id: word,
                            start_frame: s,
                            end_frame: s + len,
                            score: rng.gen_range(0.0..1.0),
                        });
                    }
                }
            }
        }
        (labels, dets)
    }

    for case in 0..1000 {
        let (labels, dets) = random_case(&mut rng);
        let cfg = if rng.gen_bool(0.5) {
            EvalConfig { overlap_threshold: OverlapThreshold::HalfLabel }
        } else {
            EvalConfig {
                overlap_threshold: OverlapThreshold::Frames(rng.gen_range(1.0..50.0)),
            }
        };
        let report = match_detections(&labels, &dets, &cfg).unwrap();

        // exhaustive max matching per (audio, word) group
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<(String, usize), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            groups.entry((l.audio_id.clone(), l.word_id)).or_default().0.push(i);
        }
        for (i, d) in dets.iter().enumerate() {
            groups.entry((d.audio_id.clone(), d.word_id)).or_default().1.push(i);
        }
        let mut want_tp = 0;
        for (_, (ls, ds)) in groups {
            let adj: Vec<Vec<usize>> = ls
                .iter()
                .map(|&li| {
                    ds.iter()
                        .enumerate()
                        .filter(|(_, &di)| {
                            overlap(&labels[li], &dets[di], &cfg)
                                && overlap_ratio(&labels[li], &dets[di]) > 0.0
                        })
                        .map(|(j, _)| j)
                        .collect()
                })
                .collect();
            want_tp += brute_max_matching(&adj, ds.len());
        }
        assert_eq!(report.tp, want_tp, "case {case}");
        assert_eq!(report.fp, dets.len() - want_tp, "case {case}");
        assert_eq!(report.fn_, labels.len() - want_tp, "case {case}");
    }

    for case in 0..1000 {
        let n = rng.gen_range(1..60);
        let row: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let radius = rng.gen_range(1..8);
        let m = ScoreMatrix {
            values: row.clone(),
            words: 1,
            windows: n,
            stride_frames: 4,
            window_frames: 32,
        };
        let got = nms(&m, &[radius]).unwrap();
        assert_eq!(got.values, brute_nms_row(&row, radius), "row {case}");
    }

    println!("ACCEPTANCE 5 (metric and suppression oracles): PASS");
}

/// 6: full pipeline at desk scale. Train on a synthetic corpus, fuse, retrain
/// the head pad-free, enroll, search the test audios with both schemes and
/// check detection quality.
#[test]
fn acceptance_6_end_to_end_detection() {
    let spec = SynthSpec {
        classes: 10,
        samples_per_class: 50,
        enroll_per_class: 5,
        min_keyword_frames: 56,
        max_keyword_frames: 90,
        bins: 20,
        test_audios: 20,
        test_audio_frames: 2000,
        keywords_per_test_audio: 8,
        edge_margin_frames: 80,
        seed: 606,
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
    let tcfg = TrainConfig {
        epochs: 8,
        batch_size: 25,
        input_frames: 96,
        heads: 4,
        embed_dim: 64,
        seed: 42,
        ..TrainConfig::default()
    };
    let trained = train(&corpus.train, &enc_cfg, &tcfg).unwrap();
    let final_stats = trained.stats.last().unwrap();
    assert!(
        final_stats.valid_accuracy >= 0.9,
        "classifier failed to converge: valid acc {}",
        final_stats.valid_accuracy
    );
    let base = trained.checkpoint.model;
    let padfree = base.encoder.fuse().unwrap().with_pad_time(PadMode::None);

    let mut rcfg = tcfg.clone();
    rcfg.epochs = 6;
    rcfg.seed = 43;
    let retrained = retrain_embedding(
        &padfree,
        Some((base.pooling.clone(), base.projection.clone())),
        &corpus.train,
        &rcfg,
    )
    .unwrap();
    let model = retrained.checkpoint.model;

    let f0 = 96;
    let queries = enroll(&model, &corpus.enroll, f0).unwrap();
    assert_eq!(queries.entries.len(), spec.classes);
    let c_r = model.encoder.config.downsample_ratio();
    let radii = nms_radii(&queries, c_r);

    // suppressed score matrices per audio and scheme, both in raw similarity
    // units and z-normalized
    let mut raw_mats: Vec<Vec<(String, ScoreMatrix)>> = vec![Vec::new(), Vec::new()];
    let mut z_mats: Vec<Vec<(String, ScoreMatrix)>> = vec![Vec::new(), Vec::new()];
    for (id, audio) in &corpus.test.audios {
        let basic = score_basic(&model, &queries, audio, c_r, f0).unwrap();
        let fast = score_fast(&model, &queries, audio, c_r, f0).unwrap();
        for (si, m) in [basic, fast].into_iter().enumerate() {
            z_mats[si].push((id.clone(), nms(&tnorm_rows(&m), &radii).unwrap()));
            raw_mats[si].push((id.clone(), nms(&m, &radii).unwrap()));
        }
    }

    let eval_cfg = EvalConfig::default();
    let sweep = |mats: &[(String, ScoreMatrix)], thresholds: &[f32]| -> (f32, f32) {
        let mut best = (0.0f32, 0.0f32);
        for &t in thresholds {
            let mut records = Vec::new();
            for (id, m) in mats {
                for d in detect(m, &queries, t, true) {
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
            if report.f1 > best.0 {
                best = (report.f1, report.mao);
            }
        }
        best
    };
    let raw_grid: Vec<f32> = (60..=98).map(|i| i as f32 * 0.01).collect();
    let z_grid: Vec<f32> = (2..=20).map(|i| i as f32 * 0.25).collect();
    let mut best = [(0.0f32, 0.0f32); 2]; // (f1, mao) per scheme
    for si in 0..2 {
        let raw_best = sweep(&raw_mats[si], &raw_grid);
        let z_best = sweep(&z_mats[si], &z_grid);
        best[si] = if raw_best.0 >= z_best.0 { raw_best } else { z_best };
    }

    for (si, name) in ["basic", "fast"].iter().enumerate() {
        assert!(
            best[si].0 >= 0.80,
            "{name} scheme best F1 = {:.3} < 0.80",
            best[si].0
        );
        assert!(
            best[si].1 >= 0.5,
            "{name} scheme MAO = {:.3} < 0.5 at its best threshold",
            best[si].1
        );
    }
    assert!(
        (best[0].0 - best[1].0).abs() <= 0.02,
        "schemes disagree on F1: basic {:.3} vs fast {:.3}",
        best[0].0,
        best[1].0
    );
    println!(
        "ACCEPTANCE 6 (end-to-end detection): PASS (basic F1 {:.3} MAO {:.3}, fast F1 {:.3} MAO {:.3})",
        best[0].0, best[0].1, best[1].0, best[1].1
    );
}

/// 7: the one-pass scheme gets relatively faster on longer audio and
/// relatively slower at coarser strides, and clears 5x at 120 s with the
/// finest stride.
#[test]
fn acceptance_7_speedup_trend() {
    let mut rng = ChaCha8Rng::seed_from_u64(9007);
    // deep and narrow on purpose: lots of encoder work per frame with a
    // cheap head, so the per-window savings of the one-pass scheme stand
    // well clear of timing noise
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 2, channels: 16, time_stride: 1, freq_stride: 2 },
            StageConfig { blocks: 2, channels: 16, time_stride: 2, freq_stride: 2 },
            StageConfig { blocks: 2, channels: 16, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 20,
        pad_time: PadMode::None,
    };
    let enc = Encoder::random(cfg, &mut rng).unwrap().fuse().unwrap();
    let model = Model::random(enc, 4, 64, &mut rng).unwrap();
    let queries = random_queries(5, 64, &mut rng);
    let settings = BenchSettings {
        audio_seconds: vec![5.0, 30.0, 120.0],
        stride_multipliers: vec![1, 2, 4, 8],
        repetitions: 5,
        window_frames: 400,
        threshold: 2.0,
        workers: 1,
        seed: 9,
    };
    let report = run_bench(&model, &queries, &settings).unwrap();
    eprintln!("{}", report.table());
    let n_mult = settings.stride_multipliers.len();
    let cell = |si: usize, mi: usize| &report.cells[si * n_mult + mi];

    let last_s = settings.audio_seconds.len() - 1;
    assert!(
        cell(last_s, 0).speedup >= 5.0,
        "speedup at 120 s, finest stride: {:.2} < 5",
        cell(last_s, 0).speedup
    );
    for mi in 0..n_mult {
        for si in 1..settings.audio_seconds.len() {
            assert!(
                cell(si, mi).speedup >= cell(si - 1, mi).speedup,
                "speedup not non-decreasing in audio length at stride x{}: {:.2} then {:.2}",
                settings.stride_multipliers[mi],
                cell(si - 1, mi).speedup,
                cell(si, mi).speedup
            );
        }
    }
    for si in 0..settings.audio_seconds.len() {
        for mi in 1..n_mult {
            assert!(
                cell(si, mi).speedup <= cell(si, mi - 1).speedup,
                "speedup not non-increasing in stride at {} s: {:.2} then {:.2}",
                settings.audio_seconds[si],
                cell(si, mi - 1).speedup,
                cell(si, mi).speedup
            );
        }
    }
    println!(
        "ACCEPTANCE 7 (speedup trend): PASS (120 s finest-stride speedup {:.1}x)",
        cell(last_s, 0).speedup
    );
}

/// 8: hand-checkable closed forms of the losses and the similarity score.
#[test]
fn acceptance_8_loss_closed_forms() {
    // margin softmax, perfect alignment: embedding on the true class axis,
    // orthogonal to the other class. logits are s*(1-m) = 24 and 0, so the
    // loss is exactly ln(1 + e^-24)
    let f = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let loss = amsoftmax_value(&f, &w, &[0], 0.2, 30.0).unwrap();
    let want = (-24.0f64).exp().ln_1p();
    assert!(
        ((loss - want) / want).abs() <= 1e-12,
        "loss {loss:e} vs closed form {want:e}"
    );

    // penalty of orthonormal attention rows is exactly zero
    let a = Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(penalization_infer(&a).unwrap(), 0.0);
    let perm = Tensor::new(vec![3, 3], vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(penalization_infer(&perm).unwrap(), 0.0);

    // similarity endpoints: opposite 0, orthogonal 0.5, aligned 1, exactly
    assert_eq!(similarity(&[3.0, 4.0], &[-3.0, -4.0]), 0.0);
    assert_eq!(similarity(&[3.0, 4.0], &[4.0, -3.0]), 0.5);
    assert_eq!(similarity(&[3.0, 4.0], &[3.0, 4.0]), 1.0);

    println!("ACCEPTANCE 8 (loss closed forms): PASS");
}

/// 9: score normalization, suppression and cross-word competition are
/// independently switchable, and detection positions are invariant to
/// per-row affine score shifts when normalization is on.
#[test]
fn acceptance_9_ablation_plumbing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let cfg = EncoderConfig {
        stages: vec![
            StageConfig { blocks: 1, channels: 3, time_stride: 2, freq_stride: 2 },
            StageConfig { blocks: 1, channels: 5, time_stride: 2, freq_stride: 2 },
        ],
        input_bins: 10,
        pad_time: PadMode::None,
    };
    let enc = Encoder::random(cfg, &mut rng).unwrap().fuse().unwrap();
    let c_r = enc.config.downsample_ratio();
    let model = Model::random(enc, 3, 16, &mut rng).unwrap();
    let queries = random_queries(3, 16, &mut rng);
    let audio = random_audio(400, 10, &mut rng);
    let f0 = 39;
    let raw = score_fast(&model, &queries, &audio, c_r, f0).unwrap();
    let radii = nms_radii(&queries, c_r);

    // every combination of the three switches matches manual composition
    for mask in 0..8u8 {
        let (t, n, c) = (mask & 1 != 0, mask & 2 != 0, mask & 4 != 0);
        let cfg = SearchConfig {
            scheme: Scheme::Fast,
            stride: c_r,
            window_frames: f0,
            threshold: 0.5,
            tnorm: t,
            nms: n,
            competition: c,
        };
        let (m, dets) = run_search(&model, &queries, &audio, &cfg).unwrap();
        let mut want = raw.clone();
        if t {
            want = tnorm_rows(&want);
        }
        if n {
            want = nms(&want, &radii).unwrap();
        }
        assert_eq!(m.values, want.values, "switches ({t},{n},{c}): matrix");
        let want_dets: Vec<Detection> = detect(&want, &queries, 0.5, c);
        assert_eq!(dets, want_dets, "switches ({t},{n},{c}): detections");
    }

    // per-row affine shifts do not move detections while tnorm is on
    let base = tnorm_rows(&raw);
    let mut shifted = raw.clone();
    for i in 0..shifted.words {
        let a = rng.gen_range(0.5..2.0);
        let b = rng.gen_range(-1.0..1.0);
        for v in &mut shifted.values[i * shifted.windows..(i + 1) * shifted.windows] {
            *v = a * *v + b;
        }
    }
    let shifted = tnorm_rows(&shifted);
    let d0 = detect(&nms(&base, &radii).unwrap(), &queries, 1.0, true);
    let d1 = detect(&nms(&shifted, &radii).unwrap(), &queries, 1.0, true);
    let pos0: Vec<(usize, usize)> = d0.iter().map(|d| (d.word_id, d.start_frame)).collect();
    let pos1: Vec<(usize, usize)> = d1.iter().map(|d| (d.word_id, d.start_frame)).collect();
    assert_eq!(pos0, pos1, "affine score shifts moved detections");

    println!("ACCEPTANCE 9 (ablation plumbing): PASS");
}
