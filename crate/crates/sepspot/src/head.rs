//! Embedding head: multi-head attentive statistics pooling over hidden
//! frames followed by a linear projection to the embedding dimension D_0.
//! Also exposes the head-decorrelation penalty on the attention matrix.

use crate::error::{Error, Result};
use crate::tensor::tape::{attention_pool_infer, penalization_infer};
use crate::tensor::{ops, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_EMBED_DIM: usize = 128;

/// One scoring vector per head over the per-head hidden slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingParams {
    /// [heads, hidden/heads]
    pub attn: Tensor,
}

impl PoolingParams {
    pub fn random<R: Rng>(hidden: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::Config(format!(
                "hidden dim {hidden} not divisible by {heads} heads"
            )));
        }
        let sub = hidden / heads;
        let dist = Normal::new(0.0f32, (1.0 / sub as f32).sqrt()).unwrap();
        Ok(Self {
            attn: Tensor::new(vec![heads, sub], (0..hidden).map(|_| dist.sample(rng)).collect())?,
        })
    }

    pub fn heads(&self) -> usize {
        self.attn.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.attn.len()
    }
}

/// Final projection, embedding = W * pooled + b.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    /// [embed_dim, 2 * hidden]
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl ProjectionParams {
    pub fn random<R: Rng>(hidden: usize, embed_dim: usize, rng: &mut R) -> Result<Self> {
        let fan_in = 2 * hidden;
        let dist = Normal::new(0.0f32, (1.0 / fan_in as f32).sqrt()).unwrap();
        Ok(Self {
            weight: Tensor::new(
                vec![embed_dim, fan_in],
                (0..embed_dim * fan_in).map(|_| dist.sample(rng)).collect(),
            )?,
            bias: vec![0.0; embed_dim],
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Pools [B,C,T^m,D_f^m] into [B, 2H] attentive statistics (per head: mean
/// then std, heads concatenated).
pub fn attention_pool(y: &Tensor, pooling: &PoolingParams) -> Result<Tensor> {
    attention_pool_infer(y, &pooling.attn)
}

/// Un-normalized embedding vectors, [B, D_0]. Normalization happens at
/// enrollment / scoring time.
pub fn embed(y: &Tensor, pooling: &PoolingParams, proj: &ProjectionParams) -> Result<Tensor> {
    let pooled = attention_pool(y, pooling)?;
    ops::linear(&pooled, &proj.weight, &proj.bias)
}

/// P = ||A A^T - I||_F^2 over the per-head scoring vectors.
pub fn penalization(pooling: &PoolingParams) -> Result<f32> {
    penalization_infer(&pooling.attn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embed_with_zero_weight_is_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = Tensor::rand_uniform(&[2, 2, 5, 3], -1.0, 1.0, &mut rng);
        let pooling = PoolingParams::random(6, 2, &mut rng).unwrap();
        let proj = ProjectionParams {
            weight: Tensor::zeros(&[4, 12]),
            bias: vec![1.0, -2.0, 0.5, 3.0],
        };
        let e = embed(&y, &pooling, &proj).unwrap();
        for b in 0..2 {
            assert_eq!(&e.data()[b * 4..(b + 1) * 4], &[1.0, -2.0, 0.5, 3.0]);
        }
    }

    #[test]
    fn embed_identity_like_projection_picks_pooled_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Tensor::rand_uniform(&[1, 2, 5, 3], -1.0, 1.0, &mut rng);
        let pooling = PoolingParams::random(6, 2, &mut rng).unwrap();
        let pooled = attention_pool(&y, &pooling).unwrap();
        let d0 = 4;
        let mut w = Tensor::zeros(&[d0, 12]);
        for i in 0..d0 {
            w.data_mut()[i * 12 + i] = 1.0;
        }
        let proj = ProjectionParams { weight: w, bias: vec![0.0; d0] };
        let e = embed(&y, &pooling, &proj).unwrap();
        for i in 0..d0 {
            assert!((e.data()[i] - pooled.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn penalization_nonnegative_and_zero_iff_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = PoolingParams {
                attn: Tensor::rand_uniform(&[3, 5], -2.0, 2.0, &mut rng),
            };
            assert!(penalization(&p).unwrap() >= 0.0);
        }
        let ortho = PoolingParams {
            attn: Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        };
        assert_eq!(penalization(&ortho).unwrap(), 0.0);
    }

    #[test]
    fn sigma_components_stay_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let floor = crate::tensor::tape::POOL_SIGMA_EPS.sqrt();
        for _ in 0..10 {
            let y = Tensor::rand_uniform(&[1, 2, 7, 3], -1.0, 1.0, &mut rng);
            let pooling = PoolingParams::random(6, 3, &mut rng).unwrap();
            let pooled = attention_pool(&y, &pooling).unwrap();
            let sub = 2;
            for k in 0..3 {
                for d in 0..sub {
                    let sigma = pooled.data()[k * 2 * sub + sub + d];
                    assert!(sigma >= floor * 0.999, "sigma {sigma} below floor");
                }
            }
        }
    }
}
