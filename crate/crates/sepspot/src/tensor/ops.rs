//! Forward kernels and their hand-derived backward passes.
//!
//! All accumulation is f32 with a fixed summation order. For convolution the
//! reduction over the patch runs kernel-freq innermost, then kernel-time,
//! then input channel; the equality properties (translation equivariance,
//! same/none interior agreement) rely on this order being identical across
//! calls.

use super::{expect_rank, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Zero-pad floor(k/2) frames on each side (k odd), output length ceil(len/stride).
    Same,
    /// No padding; output length floor((len - k)/stride) + 1.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (k_time, k_freq); odd sizes only (1 or 3 in practice).
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad_time: PadMode,
    pub pad_freq: PadMode,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel dims must be odd, got {:?}",
                self.kernel
            )));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("conv channel counts must be >= 1".into()));
        }
        Ok(())
    }

    fn axis_out(len: usize, k: usize, stride: usize, pad: PadMode, axis: &'static str) -> Result<usize> {
        match pad {
            PadMode::Same => Ok((len - 1) / stride + 1),
            PadMode::None => {
                if len < k {
                    Err(Error::WindowUnderflow { axis, len, kernel: k })
                } else {
                    Ok((len - k) / stride + 1)
                }
            }
        }
    }

    pub fn out_time(&self, t: usize) -> Result<usize> {
        Self::axis_out(t, self.kernel.0, self.stride.0, self.pad_time, "time")
    }

    pub fn out_freq(&self, f: usize) -> Result<usize> {
        Self::axis_out(f, self.kernel.1, self.stride.1, self.pad_freq, "freq")
    }

    fn pad_before(&self) -> (isize, isize) {
        let pt = match self.pad_time {
            PadMode::Same => (self.kernel.0 / 2) as isize,
            PadMode::None => 0,
        };
        let pf = match self.pad_freq {
            PadMode::Same => (self.kernel.1 / 2) as isize,
            PadMode::None => 0,
        };
        (pt, pf)
    }
}

/// Lower one batch item into a [Cin*kt*kf, out_t*out_f] patch matrix.
/// Row index is (channel, k_time, k_freq) row-major, so an ascending scan of
/// rows reduces kernel-freq innermost.
fn im2col(
    x: &[f32],
    cin: usize,
    t: usize,
    f: usize,
    spec: &ConvSpec,
    out_t: usize,
    out_f: usize,
) -> Vec<f32> {
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (pt, pf) = spec.pad_before();
    let k_rows = cin * kt * kf;
    let patches = out_t * out_f;
    let mut cols = vec![0.0f32; k_rows * patches];
    for c in 0..cin {
        let x_ch = &x[c * t * f..(c + 1) * t * f];
        for dt in 0..kt {
            for df in 0..kf {
                let row = (c * kt + dt) * kf + df;
                let dst = &mut cols[row * patches..(row + 1) * patches];
                for ot in 0..out_t {
                    let it = (ot * st) as isize + dt as isize - pt;
                    if it < 0 || it >= t as isize {
                        continue;
                    }
                    let src_row = &x_ch[it as usize * f..(it as usize + 1) * f];
                    for of in 0..out_f {
                        let ifr = (of * sf) as isize + df as isize - pf;
                        if ifr < 0 || ifr >= f as isize {
                            continue;
                        }
                        dst[ot * out_f + of] = src_row[ifr as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of a patch-matrix gradient back to the input layout.
fn col2im_add(
    dcols: &[f32],
    dx: &mut [f32],
    cin: usize,
    t: usize,
    f: usize,
    spec: &ConvSpec,
    out_t: usize,
    out_f: usize,
) {
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (pt, pf) = spec.pad_before();
    let patches = out_t * out_f;
    for c in 0..cin {
        for dt in 0..kt {
            for df in 0..kf {
                let row = (c * kt + dt) * kf + df;
                let src = &dcols[row * patches..(row + 1) * patches];
                for ot in 0..out_t {
                    let it = (ot * st) as isize + dt as isize - pt;
                    if it < 0 || it >= t as isize {
                        continue;
                    }
                    let base = c * t * f + it as usize * f;
                    for of in 0..out_f {
                        let ifr = (of * sf) as isize + df as isize - pf;
                        if ifr < 0 || ifr >= f as isize {
                            continue;
                        }
                        dx[base + ifr as usize] += src[ot * out_f + of];
                    }
                }
            }
        }
    }
}

/// C[m,n] += A[m,k] * B[k,n], accumulating over k in ascending order.
pub(crate) fn matmul_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// 2-D convolution, NCHW layout with (time, freq) spatial axes.
/// `w` is [Cout, Cin, kt, kf]; `bias` is per output channel when present.
pub fn conv2d(x: &Tensor, spec: &ConvSpec, w: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    spec.validate()?;
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", w, 4)?;
    let (b, cin, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if cin != spec.in_channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: "channel",
            expected: spec.in_channels,
            got: cin,
        });
    }
    let expected_w = [spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1];
    if w.shape() != expected_w {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: "weight",
            expected: expected_w.iter().product(),
            got: w.len(),
        });
    }
    if let Some(bv) = bias {
        if bv.len() != spec.out_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: "bias",
                expected: spec.out_channels,
                got: bv.len(),
            });
        }
    }
    let out_t = spec.out_time(t)?;
    let out_f = spec.out_freq(f)?;
    let patches = out_t * out_f;
    let k_rows = cin * spec.kernel.0 * spec.kernel.1;
    let mut out = vec![0.0f32; b * spec.out_channels * patches];
    for bi in 0..b {
        let cols = im2col(&x.data()[bi * cin * t * f..(bi + 1) * cin * t * f], cin, t, f, spec, out_t, out_f);
        let dst = &mut out[bi * spec.out_channels * patches..(bi + 1) * spec.out_channels * patches];
        if let Some(bv) = bias {
            for (o, &bval) in bv.iter().enumerate() {
                dst[o * patches..(o + 1) * patches].fill(bval);
            }
        }
        matmul_acc(dst, w.data(), &cols, spec.out_channels, k_rows, patches);
    }
    Tensor::new(vec![b, spec.out_channels, out_t, out_f], out)
}

/// Gradients of conv2d w.r.t. input, weights and bias.
pub fn conv2d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    w: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f32>)> {
    let (b, cin, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let out_t = spec.out_time(t)?;
    let out_f = spec.out_freq(f)?;
    let patches = out_t * out_f;
    let k_rows = cin * spec.kernel.0 * spec.kernel.1;
    let cout = spec.out_channels;
    debug_assert_eq!(dout.shape(), [b, cout, out_t, out_f]);

    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f32; cout];
    // w transposed once: [k_rows, cout]
    let mut wt = vec![0.0f32; k_rows * cout];
    for o in 0..cout {
        for k in 0..k_rows {
            wt[k * cout + o] = w.data()[o * k_rows + k];
        }
    }
    for bi in 0..b {
        let x_b = &x.data()[bi * cin * t * f..(bi + 1) * cin * t * f];
        let dout_b = &dout.data()[bi * cout * patches..(bi + 1) * cout * patches];
        let cols = im2col(x_b, cin, t, f, spec, out_t, out_f);
        // bias grad
        for o in 0..cout {
            db[o] += dout_b[o * patches..(o + 1) * patches].iter().sum::<f32>();
        }
        // weight grad: dW[o,k] += sum_p dout[o,p] * cols[k,p]
        let mut colst = vec![0.0f32; patches * k_rows];
        for k in 0..k_rows {
            for p in 0..patches {
                colst[p * k_rows + k] = cols[k * patches + p];
            }
        }
        matmul_acc(&mut dw, dout_b, &colst, cout, patches, k_rows);
        // input grad: dcols = W^T * dout, then scatter
        let mut dcols = vec![0.0f32; k_rows * patches];
        matmul_acc(&mut dcols, &wt, dout_b, k_rows, cout, patches);
        col2im_add(
            &dcols,
            &mut dx.data_mut()[bi * cin * t * f..(bi + 1) * cin * t * f],
            cin,
            t,
            f,
            spec,
            out_t,
            out_f,
        );
    }
    let dw = Tensor::new(w.shape().to_vec(), dw)?;
    Ok((dx, dw, db))
}

/// Per-channel affine normalization parameters (inference form).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::Config("batchnorm parameter lengths disagree".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("batchnorm epsilon must be > 0".into()));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("batchnorm running_var must be >= 0".into()));
        }
        Ok(())
    }
}

/// Inference batch norm on a [B,C,T,F] tensor using running statistics.
pub fn batchnorm_infer(x: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    params.validate()?;
    expect_rank("batchnorm_infer", x, 4)?;
    let (b, c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c != params.channels() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_infer",
            axis: "channel",
            expected: params.channels(),
            got: c,
        });
    }
    let mut out = x.clone();
    for ch in 0..c {
        let scale = params.gamma[ch] / (params.running_var[ch] + params.epsilon).sqrt();
        let shift = params.beta[ch] - params.running_mean[ch] * scale;
        for bi in 0..b {
            let base = (bi * c + ch) * t * f;
            for v in &mut out.data_mut()[base..base + t * f] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Saved context from a training-mode batch norm forward pass.
#[derive(Clone, Debug)]
pub struct BnTrainCtx {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub epsilon: f32,
}

/// Training-mode batch norm: normalizes with the batch statistics
/// (population variance over B, T, F per channel).
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    epsilon: f32,
) -> Result<(Tensor, BnTrainCtx)> {
    expect_rank("batchnorm_train", x, 4)?;
    let (b, c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_train",
            axis: "channel",
            expected: c,
            got: gamma.len(),
        });
    }
    let n = (b * t * f) as f32;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut s = 0.0f32;
        for bi in 0..b {
            let base = (bi * c + ch) * t * f;
            s += x.data()[base..base + t * f].iter().sum::<f32>();
        }
        mean[ch] = s / n;
        let mut v = 0.0f32;
        for bi in 0..b {
            let base = (bi * c + ch) * t * f;
            v += x.data()[base..base + t * f]
                .iter()
                .map(|&xv| (xv - mean[ch]) * (xv - mean[ch]))
                .sum::<f32>();
        }
        var[ch] = v / n;
    }
    let mut out = x.clone();
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + epsilon).sqrt();
        for bi in 0..b {
            let base = (bi * c + ch) * t * f;
            for v in &mut out.data_mut()[base..base + t * f] {
                *v = (*v - mean[ch]) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    Ok((out, BnTrainCtx { mean, var, epsilon }))
}

/// Backward for training-mode batch norm. Returns (dx, dgamma, dbeta).
pub fn batchnorm_train_backward(
    x: &Tensor,
    gamma: &[f32],
    ctx: &BnTrainCtx,
    dout: &Tensor,
) -> (Tensor, Vec<f32>, Vec<f32>) {
    let (b, c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let n = (b * t * f) as f32;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ch in 0..c {
        let inv = 1.0 / (ctx.var[ch] + ctx.epsilon).sqrt();
        let mut sum_dy = 0.0f32;
        let mut sum_dy_xhat = 0.0f32;
        for bi in 0..b {
            let base = (bi * c + ch) * t * f;
            for i in 0..t * f {
                let xhat = (x.data()[base + i] - ctx.mean[ch]) * inv;
                let dy = dout.data()[base + i];
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        dbeta[ch] = sum_dy;
        dgamma[ch] = sum_dy_xhat;
        for bi in 0..b {
            let base = (bi * c + ch) * t * f;
            for i in 0..t * f {
                let xhat = (x.data()[base + i] - ctx.mean[ch]) * inv;
                let dy = dout.data()[base + i];
                dx.data_mut()[base + i] =
                    gamma[ch] * inv * (dy - sum_dy / n - xhat * sum_dy_xhat / n);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// ReLU gradient; the subgradient at exactly 0 is taken as 0.
pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Tensor {
    let mut dx = dout.clone();
    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// out[b, d] = sum_h w[d, h] * x[b, h] + bias[d]
pub fn linear(x: &Tensor, w: &Tensor, bias: &[f32]) -> Result<Tensor> {
    expect_rank("linear", x, 2)?;
    expect_rank("linear", w, 2)?;
    let (b, h) = (x.shape()[0], x.shape()[1]);
    let (d, wh) = (w.shape()[0], w.shape()[1]);
    if wh != h {
        return Err(Error::ShapeMismatch {
            op: "linear",
            axis: "hidden",
            expected: wh,
            got: h,
        });
    }
    if bias.len() != d {
        return Err(Error::ShapeMismatch {
            op: "linear",
            axis: "bias",
            expected: d,
            got: bias.len(),
        });
    }
    let mut out = vec![0.0f32; b * d];
    for bi in 0..b {
        let xr = &x.data()[bi * h..(bi + 1) * h];
        for di in 0..d {
            let wr = &w.data()[di * h..(di + 1) * h];
            let mut acc = 0.0f32;
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            out[bi * d + di] = acc + bias[di];
        }
    }
    Tensor::new(vec![b, d], out)
}

/// Returns (dx, dw, dbias).
pub fn linear_backward(x: &Tensor, w: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Vec<f32>) {
    let (b, h) = (x.shape()[0], x.shape()[1]);
    let d = w.shape()[0];
    let mut dx = vec![0.0f32; b * h];
    let mut dw = vec![0.0f32; d * h];
    let mut db = vec![0.0f32; d];
    for bi in 0..b {
        let xr = &x.data()[bi * h..(bi + 1) * h];
        let dr = &dout.data()[bi * d..(bi + 1) * d];
        for di in 0..d {
            let g = dr[di];
            db[di] += g;
            let wr = &w.data()[di * h..(di + 1) * h];
            let dwr = &mut dw[di * h..(di + 1) * h];
            for hi in 0..h {
                dx[bi * h + hi] += g * wr[hi];
                dwr[hi] += g * xr[hi];
            }
        }
    }
    (
        Tensor::new(vec![b, h], dx).unwrap(),
        Tensor::new(vec![d, h], dw).unwrap(),
        db,
    )
}

/// Numerically stabilized softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().expect("softmax on rank-0 tensor");
    let rows = x.len() / n;
    let mut out = x.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * n..(r + 1) * n];
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

pub fn softmax_last_backward(y: &Tensor, dout: &Tensor) -> Tensor {
    let n = *y.shape().last().unwrap();
    let rows = y.len() / n;
    let mut dx = dout.clone();
    for r in 0..rows {
        let yr = &y.data()[r * n..(r + 1) * n];
        let dr = &mut dx.data_mut()[r * n..(r + 1) * n];
        let dot: f32 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
        for (d, &yv) in dr.iter_mut().zip(yr) {
            *d = yv * (*d - dot);
        }
    }
    dx
}
