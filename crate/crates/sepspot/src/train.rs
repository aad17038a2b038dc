//! Tape-based training: additive-margin softmax classification over keyword
//! segments plus the attention-decorrelation penalty, optimized with Adam
//! under global gradient clipping.
//!
//! Two entry points: [`train`] optimizes the whole model (three-branch
//! encoder in train form, Same time padding), and [`retrain_embedding`]
//! re-trains only the head and classifier on top of a frozen fused pad-free
//! encoder, whose forward runs off-tape so its weights cannot move.

use crate::encoder::{Encoder, EncoderConfig, EncoderForm, RepVggBlockTrain};
use crate::error::{Error, Result};
use crate::features::{temporal_context_pad, SegmentRef};
use crate::head::{PoolingParams, ProjectionParams};
use crate::manifest::Checkpoint;
use crate::model::Model;
use crate::synth::Corpus;
use crate::tensor::ops::PadMode;
use crate::tensor::tape::{amsoftmax_value, penalization_infer, Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub margin: f32,
    pub scale: f32,
    /// Weight of the attention-decorrelation penalty in the total loss.
    pub lambda_pen: f32,
    pub learning_rate: f32,
    /// Global L2 norm ceiling for each step's gradients.
    pub grad_clip: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fixed window length F_0 every training segment is padded/cropped to.
    pub input_frames: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub valid_fraction: f32,
    pub bn_momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            scale: 30.0,
            lambda_pen: 1.0,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 10,
            batch_size: 16,
            input_frames: 160,
            heads: 4,
            embed_dim: 128,
            valid_fraction: 0.2,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.scale > 0.0) {
            return Err(Error::Config("margin must be >= 0 and scale > 0".into()));
        }
        if self.learning_rate <= 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::Config("learning rate and grad clip must be > 0".into()));
        }
        if self.batch_size == 0 || self.input_frames == 0 {
            return Err(Error::Config("batch size and input frames must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid fraction must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn momentum must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f32,
    pub valid_accuracy: f32,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub stats: Vec<EpochStats>,
}

/// Classification loss alone, averaged over the batch.
pub fn amsoftmax_loss(
    embeddings: &Tensor,
    classifier: &Tensor,
    labels: &[usize],
    margin: f32,
    scale: f32,
) -> Result<f64> {
    amsoftmax_value(embeddings, classifier, labels, margin, scale)
}

/// Classification loss plus the weighted attention penalty.
pub fn total_loss(
    embeddings: &Tensor,
    classifier: &Tensor,
    labels: &[usize],
    attn: &Tensor,
    margin: f32,
    scale: f32,
    lambda_pen: f32,
) -> Result<f64> {
    Ok(amsoftmax_value(embeddings, classifier, labels, margin, scale)?
        + lambda_pen as f64 * penalization_infer(attn)? as f64)
}

struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(lr: f32, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over the full parameter list; `grads[i]` pairs with
    /// `params[i]`. Gradients are globally clipped first.
    fn step(&mut self, params: &mut [&mut [f32]], grads: &mut [Vec<f32>], clip: f32) {
        let sq: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&g| g as f64 * g as f64)
            .sum();
        let norm = sq.sqrt();
        if norm > clip as f64 {
            let s = (clip as f64 / norm) as f32;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= s;
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One training segment padded to F_0 frames, with its class.
struct Sample {
    window: Vec<f32>,
    label: usize,
}

fn collect_samples(corpus: &Corpus, f0: usize) -> Result<(Vec<Sample>, usize, usize)> {
    if corpus.labels.is_empty() {
        return Err(Error::Invalid("training corpus has no labeled segments".into()));
    }
    let classes = corpus.num_classes();
    let mut bins = 0;
    let mut samples = Vec::with_capacity(corpus.labels.len());
    for l in &corpus.labels {
        let fm = corpus.audios.get(&l.audio_id).ok_or_else(|| {
            Error::Invalid(format!("label references missing audio {}", l.audio_id))
        })?;
        bins = fm.cols();
        let seg = SegmentRef::new(fm, l.start_frame, l.end_frame)?;
        let padded = temporal_context_pad(fm, seg, f0)?;
        samples.push(Sample { window: padded.data().to_vec(), label: l.word_id });
    }
    Ok((samples, classes, bins))
}

fn batch_input(samples: &[Sample], idx: &[usize], f0: usize, bins: usize) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * f0 * bins);
    for &i in idx {
        data.extend_from_slice(&samples[i].window);
    }
    Tensor::new(vec![idx.len(), 1, f0, bins], data).unwrap()
}

fn random_classifier<R: Rng>(classes: usize, embed_dim: usize, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0f32, (1.0 / embed_dim as f32).sqrt()).unwrap();
    Tensor::new(
        vec![classes, embed_dim],
        (0..classes * embed_dim).map(|_| dist.sample(rng)).collect(),
    )
    .unwrap()
}

/// Inference-path classification accuracy via cosine against classifier rows.
fn accuracy(
    model: &Model,
    classifier: &Tensor,
    samples: &[Sample],
    idx: &[usize],
    f0: usize,
    bins: usize,
) -> Result<f32> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let classes = classifier.shape()[0];
    let d0 = classifier.shape()[1];
    let mut correct = 0usize;
    for chunk in idx.chunks(64) {
        let x = batch_input(samples, chunk, f0, bins);
        let e = model.embed(&x)?;
        for (row, &i) in chunk.iter().enumerate() {
            let ev = &e.data()[row * d0..(row + 1) * d0];
            let en = ev.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
            let mut best = (f32::NEG_INFINITY, 0usize);
            for c in 0..classes {
                let wv = &classifier.data()[c * d0..(c + 1) * d0];
                let wn = wv.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
                let cos = ev.iter().zip(wv).map(|(a, b)| a * b).sum::<f32>() / (en * wn);
                if cos > best.0 {
                    best = (cos, c);
                }
            }
            if best.1 == samples[i].label {
                correct += 1;
            }
        }
    }
    Ok(correct as f32 / idx.len() as f32)
}

/// Vars for every trainable tensor, in the canonical parameter order.
struct BlockVars {
    conv3: Var,
    g3: Var,
    b3: Var,
    conv1: Var,
    g1: Var,
    b1: Var,
    id: Option<(Var, Var)>,
    /// BatchNorm output nodes, for running-stat updates: (bn3, bn1, bn_id).
    bn_nodes: (Var, Var, Option<Var>),
}

fn block_graph(
    tape: &mut Tape,
    config: &EncoderConfig,
    block: &RepVggBlockTrain,
    x: Var,
) -> Result<(Var, BlockVars)> {
    let spec3 = config.conv3_spec(block.layout);
    let spec1 = config.conv1_spec(block.layout);
    let eps = block.bn3.epsilon;
    let conv3 = tape.leaf(block.conv3.clone());
    let g3 = tape.leaf(Tensor::new(vec![block.bn3.gamma.len()], block.bn3.gamma.clone())?);
    let b3 = tape.leaf(Tensor::new(vec![block.bn3.beta.len()], block.bn3.beta.clone())?);
    let c3 = tape.conv2d(x, conv3, None, spec3)?;
    let y3 = tape.batchnorm(c3, g3, b3, eps)?;
    let conv1 = tape.leaf(block.conv1.clone());
    let g1 = tape.leaf(Tensor::new(vec![block.bn1.gamma.len()], block.bn1.gamma.clone())?);
    let b1 = tape.leaf(Tensor::new(vec![block.bn1.beta.len()], block.bn1.beta.clone())?);
    let c1 = tape.conv2d(x, conv1, None, spec1)?;
    let y1 = tape.batchnorm(c1, g1, b1, eps)?;
    let mut branches = vec![y3, y1];
    let mut id_vars = None;
    let mut bn_id_node = None;
    if let Some(bn_id) = &block.bn_id {
        let gid = tape.leaf(Tensor::new(vec![bn_id.gamma.len()], bn_id.gamma.clone())?);
        let bid = tape.leaf(Tensor::new(vec![bn_id.beta.len()], bn_id.beta.clone())?);
        let yid = tape.batchnorm(x, gid, bid, eps)?;
        branches.push(yid);
        id_vars = Some((gid, bid));
        bn_id_node = Some(yid);
    }
    let sum = tape.add_n(&branches)?;
    let out = tape.relu(sum);
    Ok((
        out,
        BlockVars {
            conv3,
            g3,
            b3,
            conv1,
            g1,
            b1,
            id: id_vars,
            bn_nodes: (y3, y1, bn_id_node),
        },
    ))
}

struct HeadVars {
    attn: Var,
    proj_w: Var,
    proj_b: Var,
    cls: Var,
}

fn head_graph(
    tape: &mut Tape,
    pooling: &PoolingParams,
    projection: &ProjectionParams,
    classifier: &Tensor,
    hidden: Var,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Var, HeadVars)> {
    let attn = tape.leaf(pooling.attn.clone());
    let proj_w = tape.leaf(projection.weight.clone());
    let proj_b = tape.leaf(Tensor::new(vec![projection.bias.len()], projection.bias.clone())?);
    let cls = tape.leaf(classifier.clone());
    let pooled = tape.attention_pool(hidden, attn)?;
    let emb = tape.linear(pooled, proj_w, proj_b)?;
    let cls_loss = tape.amsoftmax(emb, cls, labels, cfg.margin, cfg.scale)?;
    let pen = tape.penalization(attn)?;
    let loss = tape.add_scaled(cls_loss, pen, cfg.lambda_pen);
    Ok((loss, HeadVars { attn, proj_w, proj_b, cls }))
}

fn grad_of(tape: &Tape, grads: &mut crate::tensor::tape::Gradients, v: Var) -> Vec<f32> {
    grads
        .take(v)
        .map(|t| t.into_data())
        .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
}

fn update_running(bn: &mut crate::tensor::ops::BatchNormParams, moments: (&[f32], &[f32]), mom: f32) {
    for (r, &m) in bn.running_mean.iter_mut().zip(moments.0) {
        *r = (1.0 - mom) * *r + mom * m;
    }
    for (r, &v) in bn.running_var.iter_mut().zip(moments.1) {
        *r = (1.0 - mom) * *r + mom * v;
    }
}

/// Full-model training from random initialization.
///
/// The encoder is built in train form with Same time padding; the fused
/// pad-free deploy form is derived later, after fusion.
pub fn train(corpus: &Corpus, encoder_cfg: &EncoderConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if encoder_cfg.pad_time != PadMode::Same {
        return Err(Error::Config(
            "training runs with Same time padding; fuse and switch padding afterwards".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = Encoder::random(encoder_cfg.clone(), &mut rng)?;
    let mut model = Model::random(encoder, cfg.heads, cfg.embed_dim, &mut rng)?;
    let (samples, classes, bins) = collect_samples(corpus, cfg.input_frames)?;
    if bins != encoder_cfg.input_bins {
        return Err(Error::Config(format!(
            "corpus has {bins} filterbank bins, encoder expects {}",
            encoder_cfg.input_bins
        )));
    }
    let mut classifier = random_classifier(classes, cfg.embed_dim, &mut rng);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_valid = ((samples.len() as f32 * cfg.valid_fraction).round() as usize)
        .min(samples.len().saturating_sub(1));
    let (valid_idx, train_idx) = order.split_at(n_valid);
    let (valid_idx, mut train_idx) = (valid_idx.to_vec(), train_idx.to_vec());

    // canonical parameter sizes for the Adam state
    let blocks = match &model.encoder.form {
        EncoderForm::Train(b) => b,
        EncoderForm::Deploy(_) => unreachable!(),
    };
    let mut sizes = Vec::new();
    for b in blocks {
        sizes.extend([
            b.conv3.len(),
            b.bn3.gamma.len(),
            b.bn3.beta.len(),
            b.conv1.len(),
            b.bn1.gamma.len(),
            b.bn1.beta.len(),
        ]);
        if let Some(bn_id) = &b.bn_id {
            sizes.extend([bn_id.gamma.len(), bn_id.beta.len()]);
        }
    }
    sizes.extend([
        model.pooling.attn.len(),
        model.projection.weight.len(),
        model.projection.bias.len(),
        classifier.len(),
    ]);
    let mut adam = Adam::new(cfg.learning_rate, &sizes);

    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let x = batch_input(&samples, chunk, cfg.input_frames, bins);
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label).collect();

            let mut tape = Tape::new();
            let x_var = tape.leaf(x);
            let mut cur = x_var;
            let mut block_vars = Vec::new();
            let enc_blocks = match &model.encoder.form {
                EncoderForm::Train(b) => b.clone(),
                EncoderForm::Deploy(_) => unreachable!(),
            };
            for block in &enc_blocks {
                let (out, vars) = block_graph(&mut tape, &model.encoder.config, block, cur)?;
                cur = out;
                block_vars.push(vars);
            }
            let (loss, head_vars) = head_graph(
                &mut tape,
                &model.pooling,
                &model.projection,
                &classifier,
                cur,
                &labels,
                cfg,
            )?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {batches}"
                )));
            }
            loss_sum += loss_val as f64;
            batches += 1;

            let mut grads = tape.backward(loss)?;
            let mut grad_list = Vec::with_capacity(sizes.len());
            for bv in &block_vars {
                for v in [bv.conv3, bv.g3, bv.b3, bv.conv1, bv.g1, bv.b1] {
                    grad_list.push(grad_of(&tape, &mut grads, v));
                }
                if let Some((gid, bid)) = bv.id {
                    grad_list.push(grad_of(&tape, &mut grads, gid));
                    grad_list.push(grad_of(&tape, &mut grads, bid));
                }
            }
            for v in [head_vars.attn, head_vars.proj_w, head_vars.proj_b, head_vars.cls] {
                grad_list.push(grad_of(&tape, &mut grads, v));
            }

            {
                let enc_blocks = match &mut model.encoder.form {
                    EncoderForm::Train(b) => b,
                    EncoderForm::Deploy(_) => unreachable!(),
                };
                let mut params: Vec<&mut [f32]> = Vec::with_capacity(sizes.len());
                for b in enc_blocks.iter_mut() {
                    params.push(b.conv3.data_mut());
                    params.push(&mut b.bn3.gamma);
                    params.push(&mut b.bn3.beta);
                    params.push(b.conv1.data_mut());
                    params.push(&mut b.bn1.gamma);
                    params.push(&mut b.bn1.beta);
                    if let Some(bn_id) = &mut b.bn_id {
                        params.push(&mut bn_id.gamma);
                        params.push(&mut bn_id.beta);
                    }
                }
                params.push(model.pooling.attn.data_mut());
                params.push(model.projection.weight.data_mut());
                params.push(&mut model.projection.bias);
                params.push(classifier.data_mut());
                adam.step(&mut params, &mut grad_list, cfg.grad_clip);
            }

            // fold this batch's statistics into the running estimates
            let enc_blocks = match &mut model.encoder.form {
                EncoderForm::Train(b) => b,
                EncoderForm::Deploy(_) => unreachable!(),
            };
            for (b, bv) in enc_blocks.iter_mut().zip(&block_vars) {
                update_running(&mut b.bn3, tape.bn_moments(bv.bn_nodes.0).unwrap(), cfg.bn_momentum);
                update_running(&mut b.bn1, tape.bn_moments(bv.bn_nodes.1).unwrap(), cfg.bn_momentum);
                if let (Some(bn_id), Some(node)) = (&mut b.bn_id, bv.bn_nodes.2) {
                    update_running(bn_id, tape.bn_moments(node).unwrap(), cfg.bn_momentum);
                }
            }
        }
        stats.push(EpochStats {
            epoch,
            loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
            train_accuracy: accuracy(&model, &classifier, &samples, &train_idx, cfg.input_frames, bins)?,
            valid_accuracy: accuracy(&model, &classifier, &samples, &valid_idx, cfg.input_frames, bins)?,
        });
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model, classifier: Some(classifier) },
        stats,
    })
}

/// Head-only retraining on a frozen fused pad-free encoder.
///
/// The encoder forward runs outside the tape, so its weights are untouched
/// by construction. `init` reuses existing head parameters when their widths
/// match the encoder; otherwise pass `None` for a fresh head (used when the
/// window length or head width changes).
pub fn retrain_embedding(
    encoder: &Encoder,
    init: Option<(PoolingParams, ProjectionParams)>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !encoder.is_deploy() {
        return Err(Error::Invalid(
            "embedding retraining requires a fused deploy encoder".into(),
        ));
    }
    if !encoder.is_pad_free() {
        return Err(Error::PadFreeRequired);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = encoder.config.hidden_dim();
    let (mut pooling, mut projection) = match init {
        Some((p, pr)) => {
            if p.hidden_dim() != hidden || pr.weight.shape()[1] != 2 * hidden {
                return Err(Error::Config(
                    "initial head does not match the encoder's hidden width".into(),
                ));
            }
            (p, pr)
        }
        None => (
            PoolingParams::random(hidden, cfg.heads, &mut rng)?,
            ProjectionParams::random(hidden, cfg.embed_dim, &mut rng)?,
        ),
    };
    let embed_dim = projection.embed_dim();
    let (samples, classes, bins) = collect_samples(corpus, cfg.input_frames)?;
    if bins != encoder.config.input_bins {
        return Err(Error::Config(format!(
            "corpus has {bins} filterbank bins, encoder expects {}",
            encoder.config.input_bins
        )));
    }
    if cfg.input_frames < encoder.config.min_input_frames() {
        return Err(Error::InputTooShort {
            got: cfg.input_frames,
            min: encoder.config.min_input_frames(),
        });
    }
    let mut classifier = random_classifier(classes, embed_dim, &mut rng);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_valid = ((samples.len() as f32 * cfg.valid_fraction).round() as usize)
        .min(samples.len().saturating_sub(1));
    let (valid_idx, train_idx) = order.split_at(n_valid);
    let (valid_idx, mut train_idx) = (valid_idx.to_vec(), train_idx.to_vec());

    let sizes = [
        pooling.attn.len(),
        projection.weight.len(),
        projection.bias.len(),
        classifier.len(),
    ];
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let frozen = encoder.clone();

    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let x = batch_input(&samples, chunk, cfg.input_frames, bins);
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label).collect();
            let hidden_map = frozen.forward(&x)?;

            let mut tape = Tape::new();
            let h = tape.leaf(hidden_map);
            let (loss, head_vars) =
                head_graph(&mut tape, &pooling, &projection, &classifier, h, &labels, cfg)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {batches}"
                )));
            }
            loss_sum += loss_val as f64;
            batches += 1;

            let mut grads = tape.backward(loss)?;
            let mut grad_list = Vec::with_capacity(4);
            for v in [head_vars.attn, head_vars.proj_w, head_vars.proj_b, head_vars.cls] {
                grad_list.push(grad_of(&tape, &mut grads, v));
            }
            let mut params: Vec<&mut [f32]> = vec![
                pooling.attn.data_mut(),
                projection.weight.data_mut(),
                &mut projection.bias,
                classifier.data_mut(),
            ];
            adam.step(&mut params, &mut grad_list, cfg.grad_clip);
        }
        let model = Model {
            encoder: frozen.clone(),
            pooling: pooling.clone(),
            projection: projection.clone(),
        };
        stats.push(EpochStats {
            epoch,
            loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
            train_accuracy: accuracy(&model, &classifier, &samples, &train_idx, cfg.input_frames, bins)?,
            valid_accuracy: accuracy(&model, &classifier, &samples, &valid_idx, cfg.input_frames, bins)?,
        });
    }
    let model = Model { encoder: frozen, pooling, projection };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model, classifier: Some(classifier) },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::StageConfig;
    use crate::synth::{generate, SynthSpec};

    fn tiny_corpus(seed: u64) -> Corpus {
        generate(&SynthSpec {
            classes: 3,
            samples_per_class: 6,
            enroll_per_class: 2,
            min_keyword_frames: 12,
            max_keyword_frames: 24,
            bins: 12,
            test_audios: 1,
            test_audio_frames: 400,
            keywords_per_test_audio: 2,
            edge_margin_frames: 40,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
        .train
    }

    fn tiny_encoder_cfg(pad: PadMode) -> EncoderConfig {
        EncoderConfig {
            stages: vec![
                StageConfig { blocks: 1, channels: 4, time_stride: 1, freq_stride: 2 },
                StageConfig { blocks: 1, channels: 6, time_stride: 2, freq_stride: 2 },
            ],
            input_bins: 12,
            pad_time: pad,
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 6,
            input_frames: 32,
            heads: 3,
            embed_dim: 12,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_untouched_random_init() {
        let corpus = tiny_corpus(1);
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 0;
        let a = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg).unwrap();
        let b = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg).unwrap();
        assert!(a.stats.is_empty());
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn same_seed_is_bit_identical_different_seed_is_not() {
        let corpus = tiny_corpus(2);
        let cfg = tiny_train_cfg();
        let a = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg).unwrap();
        let b = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        let mut cfg2 = cfg.clone();
        cfg2.seed += 1;
        let c = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg2).unwrap();
        assert_ne!(a.checkpoint, c.checkpoint);
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let corpus = tiny_corpus(3);
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 5;
        let out = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg).unwrap();
        let first = out.stats.first().unwrap().loss;
        let last = out.stats.last().unwrap().loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn padfree_encoder_config_is_rejected_for_training() {
        let corpus = tiny_corpus(4);
        let err = train(&corpus, &tiny_encoder_cfg(PadMode::None), &tiny_train_cfg());
        assert!(err.is_err());
    }

    #[test]
    fn retrain_requires_fused_padfree_encoder() {
        let corpus = tiny_corpus(5);
        let cfg = tiny_train_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train_enc = Encoder::random(tiny_encoder_cfg(PadMode::Same), &mut rng).unwrap();
        assert!(retrain_embedding(&train_enc, None, &corpus, &cfg).is_err());
        let fused_same = train_enc.fuse().unwrap();
        assert!(matches!(
            retrain_embedding(&fused_same, None, &corpus, &cfg),
            Err(Error::PadFreeRequired)
        ));
    }

    #[test]
    fn retrain_leaves_encoder_weights_bit_identical() {
        let corpus = tiny_corpus(6);
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 2;
        cfg.input_frames = 33;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let enc = Encoder::random(tiny_encoder_cfg(PadMode::Same), &mut rng)
            .unwrap()
            .fuse()
            .unwrap()
            .with_pad_time(PadMode::None);
        let before = enc.clone();
        let out = retrain_embedding(&enc, None, &corpus, &cfg).unwrap();
        assert_eq!(out.checkpoint.model.encoder, before);
        assert!(out.checkpoint.model.encoder.is_pad_free());
    }

    #[test]
    fn retrain_zero_epochs_keeps_initial_head() {
        let corpus = tiny_corpus(7);
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 0;
        cfg.input_frames = 33;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = Encoder::random(tiny_encoder_cfg(PadMode::Same), &mut rng)
            .unwrap()
            .fuse()
            .unwrap()
            .with_pad_time(PadMode::None);
        let hidden = enc.config.hidden_dim();
        let pooling = PoolingParams::random(hidden, 3, &mut rng).unwrap();
        let projection = ProjectionParams::random(hidden, 12, &mut rng).unwrap();
        let out = retrain_embedding(
            &enc,
            Some((pooling.clone(), projection.clone())),
            &corpus,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.checkpoint.model.pooling, pooling);
        assert_eq!(out.checkpoint.model.projection, projection);
    }

    #[test]
    fn diverged_training_is_reported() {
        let corpus = tiny_corpus(8);
        let mut cfg = tiny_train_cfg();
        cfg.learning_rate = 1e12;
        cfg.epochs = 6;
        let r = train(&corpus, &tiny_encoder_cfg(PadMode::Same), &cfg);
        if let Err(e) = r {
            assert!(matches!(e, Error::Diverged(_)), "unexpected error {e:?}");
        }
        // an absurd learning rate may still survive thanks to clipping; only
        // a non-finite loss must surface as Diverged
    }
}
