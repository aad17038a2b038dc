//! Checkpoint persistence: a JSON manifest describing every tensor (name,
//! shape, byte offset) next to one little-endian f32 blob.
//!
//! A checkpoint directory holds `manifest.json` and `weights.f32`. Both the
//! train form (three branches per block with batch-norm state) and the fused
//! deploy form (one kernel + bias per block) round-trip.

use crate::encoder::{Encoder, EncoderConfig, EncoderForm, RepVggBlockDeploy, RepVggBlockTrain};
use crate::error::{Error, Result};
use crate::head::{PoolingParams, ProjectionParams};
use crate::model::Model;
use crate::tensor::ops::BatchNormParams;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.f32";
const FORMAT_TAG: &str = "sepspot-weights-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format: String,
    form: String,
    encoder: EncoderConfig,
    bn_epsilon: f32,
    has_classifier: bool,
    tensors: Vec<TensorEntry>,
}

/// Model weights plus the optional training classifier rows [classes, D_0].
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub classifier: Option<Tensor>,
}

struct BlobWriter {
    entries: Vec<TensorEntry>,
    data: Vec<f32>,
}

impl BlobWriter {
    fn new() -> Self {
        Self { entries: Vec::new(), data: Vec::new() }
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, values: &[f32]) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "{name}");
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape,
            byte_offset: self.data.len() * 4,
        });
        self.data.extend_from_slice(values);
    }

    fn push_bn(&mut self, prefix: &str, bn: &BatchNormParams) {
        let c = bn.gamma.len();
        self.push(&format!("{prefix}.gamma"), vec![c], &bn.gamma);
        self.push(&format!("{prefix}.beta"), vec![c], &bn.beta);
        self.push(&format!("{prefix}.mean"), vec![c], &bn.running_mean);
        self.push(&format!("{prefix}.var"), vec![c], &bn.running_var);
    }
}

struct BlobReader {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl BlobReader {
    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Invalid(format!("manifest is missing tensor {name}")))
    }

    fn take_tensor(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let (got_shape, data) = self.take(name)?;
        if got_shape != shape {
            return Err(Error::Invalid(format!(
                "tensor {name}: manifest shape {got_shape:?}, expected {shape:?}"
            )));
        }
        Tensor::new(shape.to_vec(), data)
    }

    fn take_vec(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        let (shape, data) = self.take(name)?;
        if shape != [len] {
            return Err(Error::Invalid(format!(
                "tensor {name}: manifest shape {shape:?}, expected [{len}]"
            )));
        }
        Ok(data)
    }

    fn take_bn(&mut self, prefix: &str, channels: usize, epsilon: f32) -> Result<BatchNormParams> {
        Ok(BatchNormParams {
            gamma: self.take_vec(&format!("{prefix}.gamma"), channels)?,
            beta: self.take_vec(&format!("{prefix}.beta"), channels)?,
            running_mean: self.take_vec(&format!("{prefix}.mean"), channels)?,
            running_var: self.take_vec(&format!("{prefix}.var"), channels)?,
            epsilon,
        })
    }
}

fn bn_epsilon_of(encoder: &Encoder) -> f32 {
    match &encoder.form {
        EncoderForm::Train(blocks) => blocks
            .first()
            .map(|b| b.bn3.epsilon)
            .unwrap_or(crate::encoder::BN_EPSILON),
        EncoderForm::Deploy(_) => crate::encoder::BN_EPSILON,
    }
}

/// Writes `manifest.json` + `weights.f32` into `dir` (created if absent).
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.model.validate()?;
    let mut w = BlobWriter::new();
    let form = match &ckpt.model.encoder.form {
        EncoderForm::Train(blocks) => {
            for (i, b) in blocks.iter().enumerate() {
                let p = format!("enc.b{i}");
                w.push(&format!("{p}.conv3.w"), b.conv3.shape().to_vec(), b.conv3.data());
                w.push_bn(&format!("{p}.bn3"), &b.bn3);
                w.push(&format!("{p}.conv1.w"), b.conv1.shape().to_vec(), b.conv1.data());
                w.push_bn(&format!("{p}.bn1"), &b.bn1);
                if let Some(bn_id) = &b.bn_id {
                    w.push_bn(&format!("{p}.bnid"), bn_id);
                }
            }
            "train"
        }
        EncoderForm::Deploy(blocks) => {
            for (i, b) in blocks.iter().enumerate() {
                let p = format!("enc.b{i}");
                w.push(&format!("{p}.w"), b.kernel.shape().to_vec(), b.kernel.data());
                w.push(&format!("{p}.b"), vec![b.bias.len()], &b.bias);
            }
            "deploy"
        }
    };
    let pool = &ckpt.model.pooling;
    w.push("head.attn", pool.attn.shape().to_vec(), pool.attn.data());
    let proj = &ckpt.model.projection;
    w.push("head.proj.w", proj.weight.shape().to_vec(), proj.weight.data());
    w.push("head.proj.b", vec![proj.bias.len()], &proj.bias);
    if let Some(cls) = &ckpt.classifier {
        w.push("cls.w", cls.shape().to_vec(), cls.data());
    }

    let manifest = ManifestFile {
        format: FORMAT_TAG.to_string(),
        form: form.to_string(),
        encoder: ckpt.model.encoder.config.clone(),
        bn_epsilon: bn_epsilon_of(&ckpt.model.encoder),
        has_classifier: ckpt.classifier.is_some(),
        tensors: w.entries,
    };
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    let mut blob = std::fs::File::create(dir.join(WEIGHTS_FILE))?;
    let mut bytes = Vec::with_capacity(w.data.len() * 4);
    for v in &w.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    blob.write_all(&bytes)?;
    Ok(())
}

/// Loads a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: ManifestFile =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Invalid(format!(
            "unsupported weight format {:?}",
            manifest.format
        )));
    }
    manifest.encoder.validate()?;
    let mut bytes = Vec::new();
    std::fs::File::open(dir.join(WEIGHTS_FILE))?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Invalid("weight blob length not a multiple of 4".into()));
    }
    let blob: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let count: usize = e.shape.iter().product();
        if e.byte_offset % 4 != 0 {
            return Err(Error::Invalid(format!("tensor {}: misaligned offset", e.name)));
        }
        let start = e.byte_offset / 4;
        let end = start
            .checked_add(count)
            .ok_or_else(|| Error::Invalid(format!("tensor {}: offset overflow", e.name)))?;
        if end > blob.len() {
            return Err(Error::Invalid(format!(
                "tensor {}: extends past end of weight blob",
                e.name
            )));
        }
        if tensors
            .insert(e.name.clone(), (e.shape.clone(), blob[start..end].to_vec()))
            .is_some()
        {
            return Err(Error::Invalid(format!("duplicate tensor {}", e.name)));
        }
    }
    let mut r = BlobReader { tensors };

    let config = manifest.encoder.clone();
    let eps = manifest.bn_epsilon;
    let layouts = config.block_layouts();
    let form = match manifest.form.as_str() {
        "train" => {
            let mut blocks = Vec::with_capacity(layouts.len());
            for (i, layout) in layouts.iter().enumerate() {
                let p = format!("enc.b{i}");
                let (cout, cin) = (layout.out_channels, layout.in_channels);
                let has_identity = cin == cout && layout.stride == (1, 1);
                blocks.push(RepVggBlockTrain {
                    layout: *layout,
                    conv3: r.take_tensor(&format!("{p}.conv3.w"), &[cout, cin, 3, 3])?,
                    bn3: r.take_bn(&format!("{p}.bn3"), cout, eps)?,
                    conv1: r.take_tensor(&format!("{p}.conv1.w"), &[cout, cin, 1, 1])?,
                    bn1: r.take_bn(&format!("{p}.bn1"), cout, eps)?,
                    bn_id: if has_identity {
                        Some(r.take_bn(&format!("{p}.bnid"), cout, eps)?)
                    } else {
                        None
                    },
                });
            }
            EncoderForm::Train(blocks)
        }
        "deploy" => {
            let mut blocks = Vec::with_capacity(layouts.len());
            for (i, layout) in layouts.iter().enumerate() {
                let p = format!("enc.b{i}");
                let (cout, cin) = (layout.out_channels, layout.in_channels);
                blocks.push(RepVggBlockDeploy {
                    layout: *layout,
                    kernel: r.take_tensor(&format!("{p}.w"), &[cout, cin, 3, 3])?,
                    bias: r.take_vec(&format!("{p}.b"), cout)?,
                });
            }
            EncoderForm::Deploy(blocks)
        }
        other => {
            return Err(Error::Invalid(format!("unknown encoder form {other:?}")));
        }
    };
    let encoder = Encoder { config, form };

    let hidden = encoder.config.hidden_dim();
    let (attn_shape, attn_data) = r.take("head.attn")?;
    if attn_shape.len() != 2 || attn_shape[0] * attn_shape[1] != hidden {
        return Err(Error::Invalid(format!(
            "head.attn shape {attn_shape:?} does not cover hidden dim {hidden}"
        )));
    }
    let pooling = PoolingParams { attn: Tensor::new(attn_shape, attn_data)? };
    let (pw_shape, pw_data) = r.take("head.proj.w")?;
    if pw_shape.len() != 2 || pw_shape[1] != 2 * hidden {
        return Err(Error::Invalid(format!(
            "head.proj.w shape {pw_shape:?} does not match pooled dim {}",
            2 * hidden
        )));
    }
    let embed_dim = pw_shape[0];
    let projection = ProjectionParams {
        weight: Tensor::new(pw_shape, pw_data)?,
        bias: r.take_vec("head.proj.b", embed_dim)?,
    };

    let classifier = if manifest.has_classifier {
        let (shape, data) = r.take("cls.w")?;
        if shape.len() != 2 || shape[1] != embed_dim {
            return Err(Error::Invalid(format!(
                "cls.w shape {shape:?} does not match embedding dim {embed_dim}"
            )));
        }
        Some(Tensor::new(shape, data)?)
    } else {
        None
    };
    if let Some(name) = r.tensors.keys().next() {
        return Err(Error::Invalid(format!("unexpected tensor {name} in manifest")));
    }

    let model = Model { encoder, pooling, projection };
    model.validate()?;
    Ok(Checkpoint { model, classifier })
}
