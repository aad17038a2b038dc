//! Convolutional encoder with a three-branch train-time block (3x3 + 1x1 +
//! identity, each with its own batch norm) and a single-conv deploy block
//! produced by folding the branches into one 3x3 kernel.
//!
//! Time padding is switchable: `Same` for training, `None` for the pad-free
//! deploy form whose outputs are exact slices of a longer run (the property
//! the fast search scheme relies on). Frequency padding stays `Same` in every
//! form; only time padding is removed.

use crate::error::{Error, Result};
use crate::tensor::ops::{self, BatchNormParams, ConvSpec, PadMode};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const BN_EPSILON: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    /// Stride of the first block of the stage; later blocks are stride 1.
    pub time_stride: usize,
    pub freq_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub stages: Vec<StageConfig>,
    /// Number of filterbank bins in the input feature map.
    pub input_bins: usize,
    pub pad_time: PadMode,
}

/// Per-block static layout: channel counts and stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: (usize, usize),
}

impl EncoderConfig {
    /// Desk-scale default: 4 stages, C_r = 4.
    pub fn default_desk(input_bins: usize, pad_time: PadMode) -> Self {
        let stage = |blocks, channels, ts, fs| StageConfig {
            blocks,
            channels,
            time_stride: ts,
            freq_stride: fs,
        };
        Self {
            stages: vec![
                stage(1, 16, 1, 1),
                stage(2, 32, 2, 2),
                stage(2, 64, 2, 2),
                stage(1, 128, 1, 2),
            ],
            input_bins,
            pad_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.input_bins == 0 {
            return Err(Error::Config("encoder input_bins must be > 0".into()));
        }
        for s in &self.stages {
            if s.blocks == 0 || s.channels == 0 || s.time_stride == 0 || s.freq_stride == 0 {
                return Err(Error::Config(format!("invalid stage config {s:?}")));
            }
        }
        Ok(())
    }

    /// Block layouts in forward order; the first block consumes 1 channel.
    pub fn block_layouts(&self) -> Vec<BlockLayout> {
        let mut layouts = Vec::new();
        let mut in_ch = 1usize;
        for stage in &self.stages {
            for b in 0..stage.blocks {
                let stride = if b == 0 {
                    (stage.time_stride, stage.freq_stride)
                } else {
                    (1, 1)
                };
                layouts.push(BlockLayout {
                    in_channels: in_ch,
                    out_channels: stage.channels,
                    stride,
                });
                in_ch = stage.channels;
            }
        }
        layouts
    }

    /// Total time down-sampling ratio C_r (product of time strides).
    pub fn downsample_ratio(&self) -> usize {
        self.stages.iter().map(|s| s.time_stride).product()
    }

    pub fn hidden_channels(&self) -> usize {
        self.stages.last().map(|s| s.channels).unwrap_or(0)
    }

    /// Frequency extent of the hidden map (freq padding is always Same).
    pub fn output_bins(&self) -> usize {
        let mut f = self.input_bins;
        for s in &self.stages {
            f = (f - 1) / s.freq_stride + 1;
        }
        f
    }

    /// Hidden dimension H = C * D_f^m seen by the embedding head.
    pub fn hidden_dim(&self) -> usize {
        self.hidden_channels() * self.output_bins()
    }

    /// Exact symbolic time-axis shape calculus composed over all blocks.
    pub fn output_shape(&self, t: usize) -> Result<usize> {
        let mut cur = t;
        for layout in self.block_layouts() {
            cur = match self.pad_time {
                PadMode::Same => (cur - 1) / layout.stride.0 + 1,
                PadMode::None => {
                    if cur < 3 {
                        return Err(Error::InputTooShort {
                            got: t,
                            min: self.min_input_frames(),
                        });
                    }
                    (cur - 3) / layout.stride.0 + 1
                }
            };
        }
        Ok(cur)
    }

    /// Minimum admissible input length (1 hidden frame out).
    pub fn min_input_frames(&self) -> usize {
        let mut need = 1usize;
        for layout in self.block_layouts().iter().rev() {
            need = match self.pad_time {
                PadMode::Same => (need - 1) * layout.stride.0 + 1,
                PadMode::None => (need - 1) * layout.stride.0 + 3,
            };
        }
        need
    }

    pub fn conv3_spec(&self, layout: BlockLayout) -> ConvSpec {
        ConvSpec {
            in_channels: layout.in_channels,
            out_channels: layout.out_channels,
            kernel: (3, 3),
            stride: layout.stride,
            pad_time: self.pad_time,
            pad_freq: PadMode::Same,
        }
    }

    pub fn conv1_spec(&self, layout: BlockLayout) -> ConvSpec {
        ConvSpec {
            in_channels: layout.in_channels,
            out_channels: layout.out_channels,
            kernel: (1, 1),
            stride: layout.stride,
            pad_time: PadMode::Same, // k=1: no actual padding either way
            pad_freq: PadMode::Same,
        }
    }
}

/// Train-time block: three parallel branches summed before one ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct RepVggBlockTrain {
    pub layout: BlockLayout,
    /// [out, in, 3, 3], no bias (the branch batch norm provides the shift)
    pub conv3: Tensor,
    pub bn3: BatchNormParams,
    /// [out, in, 1, 1]
    pub conv1: Tensor,
    pub bn1: BatchNormParams,
    /// Present only when in_channels == out_channels and stride == (1, 1).
    pub bn_id: Option<BatchNormParams>,
}

/// Deploy block: one 3x3 conv with bias, then ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct RepVggBlockDeploy {
    pub layout: BlockLayout,
    pub kernel: Tensor,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderForm {
    Train(Vec<RepVggBlockTrain>),
    Deploy(Vec<RepVggBlockDeploy>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub form: EncoderForm,
}

impl RepVggBlockTrain {
    pub fn random<R: Rng>(layout: BlockLayout, rng: &mut R) -> Self {
        let he3 = (2.0 / (layout.in_channels * 9) as f32).sqrt();
        let he1 = (2.0 / layout.in_channels as f32).sqrt();
        let n3 = Normal::new(0.0f32, he3).unwrap();
        let n1 = Normal::new(0.0f32, he1).unwrap();
        let conv3 = Tensor::new(
            vec![layout.out_channels, layout.in_channels, 3, 3],
            (0..layout.out_channels * layout.in_channels * 9)
                .map(|_| n3.sample(rng))
                .collect(),
        )
        .unwrap();
        let conv1 = Tensor::new(
            vec![layout.out_channels, layout.in_channels, 1, 1],
            (0..layout.out_channels * layout.in_channels)
                .map(|_| n1.sample(rng))
                .collect(),
        )
        .unwrap();
        let has_identity = layout.in_channels == layout.out_channels && layout.stride == (1, 1);
        Self {
            layout,
            conv3,
            bn3: BatchNormParams::identity(layout.out_channels, BN_EPSILON),
            conv1,
            bn1: BatchNormParams::identity(layout.out_channels, BN_EPSILON),
            bn_id: has_identity.then(|| BatchNormParams::identity(layout.out_channels, BN_EPSILON)),
        }
    }
}

/// Drop the first and last time frame; used to align the 1x1 and identity
/// branches with the pad-free 3x3 branch.
fn crop_time(x: &Tensor) -> Tensor {
    let (b, c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    assert!(t >= 3, "crop_time on too-short input");
    let nt = t - 2;
    let mut data = Vec::with_capacity(b * c * nt * f);
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t * f;
            data.extend_from_slice(&x.data()[base + f..base + (t - 1) * f]);
        }
    }
    Tensor::new(vec![b, c, nt, f], data).unwrap()
}

fn fold_bn_scale(bn: &BatchNormParams) -> Vec<f32> {
    bn.gamma
        .iter()
        .zip(&bn.running_var)
        .map(|(&g, &v)| g / (v + bn.epsilon).sqrt())
        .collect()
}

fn fold_bn_bias(bn: &BatchNormParams, scale: &[f32]) -> Vec<f32> {
    bn.beta
        .iter()
        .zip(&bn.running_mean)
        .zip(scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect()
}

/// Folds the three branches of a train block into one 3x3 kernel + bias.
pub fn fuse_block(block: &RepVggBlockTrain) -> RepVggBlockDeploy {
    let layout = block.layout;
    let (cout, cin) = (layout.out_channels, layout.in_channels);
    let s3 = fold_bn_scale(&block.bn3);
    let mut kernel = block.conv3.clone();
    for o in 0..cout {
        for v in &mut kernel.data_mut()[o * cin * 9..(o + 1) * cin * 9] {
            *v *= s3[o];
        }
    }
    let mut bias = fold_bn_bias(&block.bn3, &s3);

    // 1x1 branch embeds at the kernel center
    let s1 = fold_bn_scale(&block.bn1);
    for o in 0..cout {
        for i in 0..cin {
            kernel.data_mut()[(o * cin + i) * 9 + 4] += block.conv1.data()[o * cin + i] * s1[o];
        }
    }
    for (b, v) in bias.iter_mut().zip(fold_bn_bias(&block.bn1, &s1)) {
        *b += v;
    }

    // identity branch becomes a channel-diagonal center tap
    if let Some(bn_id) = &block.bn_id {
        let si = fold_bn_scale(bn_id);
        for o in 0..cout {
            kernel.data_mut()[(o * cin + o) * 9 + 4] += si[o];
        }
        for (b, v) in bias.iter_mut().zip(fold_bn_bias(bn_id, &si)) {
            *b += v;
        }
    }

    RepVggBlockDeploy { layout, kernel, bias }
}

impl Encoder {
    /// Randomly initialized train-form encoder.
    pub fn random<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let blocks = config
            .block_layouts()
            .into_iter()
            .map(|l| RepVggBlockTrain::random(l, rng))
            .collect();
        Ok(Self {
            config,
            form: EncoderForm::Train(blocks),
        })
    }

    pub fn is_deploy(&self) -> bool {
        matches!(self.form, EncoderForm::Deploy(_))
    }

    pub fn is_pad_free(&self) -> bool {
        self.config.pad_time == PadMode::None
    }

    /// Folds every block; inference-equivalent to the train form.
    pub fn fuse(&self) -> Result<Encoder> {
        match &self.form {
            EncoderForm::Train(blocks) => Ok(Encoder {
                config: self.config.clone(),
                form: EncoderForm::Deploy(blocks.iter().map(fuse_block).collect()),
            }),
            EncoderForm::Deploy(_) => Err(Error::Invalid("encoder is already fused".into())),
        }
    }

    /// Same weights, different time-padding mode. Kernel weights are
    /// pad-agnostic, so this is just a config change.
    pub fn with_pad_time(&self, pad_time: PadMode) -> Encoder {
        let mut out = self.clone();
        out.config.pad_time = pad_time;
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        crate::tensor::expect_rank("encoder", x, 4)?;
        if x.shape()[1] != 1 {
            return Err(Error::ShapeMismatch {
                op: "encoder",
                axis: "channel",
                expected: 1,
                got: x.shape()[1],
            });
        }
        if x.shape()[3] != self.config.input_bins {
            return Err(Error::ShapeMismatch {
                op: "encoder",
                axis: "freq",
                expected: self.config.input_bins,
                got: x.shape()[3],
            });
        }
        let min = self.config.min_input_frames();
        if x.shape()[2] < min {
            return Err(Error::InputTooShort {
                got: x.shape()[2],
                min,
            });
        }
        Ok(())
    }

    /// Inference forward pass, [B,1,T,D_f] -> [B,C,T^m,D_f^m]. Train form
    /// uses running batch-norm statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        match &self.form {
            EncoderForm::Train(blocks) => {
                for block in blocks {
                    cur = self.forward_train_block(block, &cur)?;
                }
            }
            EncoderForm::Deploy(blocks) => {
                for block in blocks {
                    let spec = self.config.conv3_spec(block.layout);
                    cur = ops::relu(&ops::conv2d(&cur, &spec, &block.kernel, Some(&block.bias))?);
                }
            }
        }
        Ok(cur)
    }

    fn forward_train_block(&self, block: &RepVggBlockTrain, x: &Tensor) -> Result<Tensor> {
        let spec3 = self.config.conv3_spec(block.layout);
        let spec1 = self.config.conv1_spec(block.layout);
        let y3 = ops::batchnorm_infer(&ops::conv2d(x, &spec3, &block.conv3, None)?, &block.bn3)?;
        let x_side = match self.config.pad_time {
            PadMode::Same => x.clone(),
            PadMode::None => crop_time(x),
        };
        let y1 =
            ops::batchnorm_infer(&ops::conv2d(&x_side, &spec1, &block.conv1, None)?, &block.bn1)?;
        let mut sum = y3;
        for (a, b) in sum.data_mut().iter_mut().zip(y1.data()) {
            *a += b;
        }
        if let Some(bn_id) = &block.bn_id {
            let y_id = ops::batchnorm_infer(&x_side, bn_id)?;
            for (a, b) in sum.data_mut().iter_mut().zip(y_id.data()) {
                *a += b;
            }
        }
        Ok(ops::relu(&sum))
    }
}
