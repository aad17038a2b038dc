//! End-to-end embedding model: encoder plus attentive-statistics head.

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::head::{self, PoolingParams, ProjectionParams};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub pooling: PoolingParams,
    pub projection: ProjectionParams,
}

impl Model {
    pub fn random<R: Rng>(
        encoder: Encoder,
        heads: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = encoder.config.hidden_dim();
        Ok(Self {
            encoder,
            pooling: PoolingParams::random(hidden, heads, rng)?,
            projection: ProjectionParams::random(hidden, embed_dim, rng)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.embed_dim()
    }

    /// Checks that the head widths match the encoder's hidden map.
    pub fn validate(&self) -> Result<()> {
        let hidden = self.encoder.config.hidden_dim();
        if self.pooling.hidden_dim() != hidden {
            return Err(Error::Config(format!(
                "pooling expects hidden dim {}, encoder provides {hidden}",
                self.pooling.hidden_dim()
            )));
        }
        if self.projection.weight.shape()[1] != 2 * hidden {
            return Err(Error::Config(format!(
                "projection expects pooled dim {}, encoder provides {}",
                self.projection.weight.shape()[1],
                2 * hidden
            )));
        }
        Ok(())
    }

    /// [B,1,T,D_f] input -> [B, D_0] un-normalized embeddings.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let hidden = self.encoder.forward(x)?;
        self.embed_hidden(&hidden)
    }

    /// Head only: [B,C,T^m,D_f^m] hidden map -> [B, D_0].
    pub fn embed_hidden(&self, hidden: &Tensor) -> Result<Tensor> {
        head::embed(hidden, &self.pooling, &self.projection)
    }
}

/// Copies feature rows [start, start+len) into a [1,1,len,cols] input tensor.
pub fn window_tensor(features: &FeatureMatrix, start: usize, len: usize) -> Result<Tensor> {
    if start + len > features.rows() {
        return Err(Error::Invalid(format!(
            "window [{start}, {}) out of {} feature rows",
            start + len,
            features.rows()
        )));
    }
    let cols = features.cols();
    Tensor::new(
        vec![1, 1, len, cols],
        features.data()[start * cols..(start + len) * cols].to_vec(),
    )
}

/// Stacks equally sized feature windows into one [B,1,len,cols] batch.
pub fn batch_tensor(windows: &[(&FeatureMatrix, usize)], len: usize) -> Result<Tensor> {
    if windows.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let cols = windows[0].0.cols();
    let mut data = Vec::with_capacity(windows.len() * len * cols);
    for &(fm, start) in windows {
        if fm.cols() != cols {
            return Err(Error::ShapeMismatch {
                op: "batch",
                axis: "freq",
                expected: cols,
                got: fm.cols(),
            });
        }
        if start + len > fm.rows() {
            return Err(Error::Invalid(format!(
                "window [{start}, {}) out of {} feature rows",
                start + len,
                fm.rows()
            )));
        }
        data.extend_from_slice(&fm.data()[start * cols..(start + len) * cols]);
    }
    Tensor::new(vec![windows.len(), 1, len, cols], data)
}
