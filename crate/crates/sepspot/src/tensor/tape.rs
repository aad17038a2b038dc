//! Recorded-tape reverse-mode differentiation.
//!
//! The models here are static graphs, so the tape is a flat list of primitive
//! ops recorded during the forward pass; `backward` walks it in reverse. One
//! tape per training step, single writer.

use super::ops::{self, BnTrainCtx, ConvSpec};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Variance floor inside the attentive-statistics std so gradients stay
/// finite at zero variance.
pub const POOL_SIGMA_EPS: f32 = 1e-9;

struct PoolCtx {
    /// softmax frame weights, [B, heads, T]
    weights: Vec<f32>,
    /// weighted means, [B, heads, sub]
    mu: Vec<f32>,
    /// weighted stds, [B, heads, sub]
    sigma: Vec<f32>,
}

struct AmCtx {
    fhat: Vec<f32>,
    fnorm: Vec<f32>,
    what: Vec<f32>,
    wnorm: Vec<f32>,
    /// cosine logits before margin/scale, [B, classes]
    cos: Vec<f32>,
    /// softmax of scaled margined logits, [B, classes]
    probs: Vec<f32>,
}

enum OpKind {
    Leaf,
    Conv2d { spec: ConvSpec },
    BatchNorm { ctx: BnTrainCtx },
    Relu,
    Linear,
    AddN,
    Softmax,
    AttentionPool { heads: usize, ctx: PoolCtx },
    AmSoftmax { scale: f32, labels: Vec<usize>, ctx: AmCtx },
    Penalization,
    AddScaled { alpha: f32 },
}

struct Node {
    op: OpKind,
    inputs: Vec<usize>,
    value: Tensor,
}

/// Gradient set produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Batch statistics recorded by a BatchNorm node (mean, var per channel).
    pub fn bn_moments(&self, v: Var) -> Option<(&[f32], &[f32])> {
        match &self.nodes[v.0].op {
            OpKind::BatchNorm { ctx } => Some((&ctx.mean, &ctx.var)),
            _ => None,
        }
    }

    fn push(&mut self, op: OpKind, inputs: Vec<usize>, value: Tensor) -> Var {
        self.nodes.push(Node { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(OpKind::Leaf, vec![], value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let b = bias.map(|b| self.value(b).data().to_vec());
        let y = ops::conv2d(self.value(x), &spec, self.value(w), b.as_deref())?;
        let mut inputs = vec![x.0, w.0];
        if let Some(bv) = bias {
            inputs.push(bv.0);
        }
        Ok(self.push(OpKind::Conv2d { spec }, inputs, y))
    }

    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, epsilon: f32) -> Result<Var> {
        let (y, ctx) = ops::batchnorm_train(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            epsilon,
        )?;
        Ok(self.push(OpKind::BatchNorm { ctx }, vec![x.0, gamma.0, beta.0], y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(OpKind::Relu, vec![x.0], y)
    }

    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), self.value(bias).data())?;
        Ok(self.push(OpKind::Linear, vec![x.0, w.0, bias.0], y))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        assert!(!xs.is_empty());
        let mut y = self.value(xs[0]).clone();
        for &v in &xs[1..] {
            let t = self.value(v);
            if t.shape() != y.shape() {
                return Err(Error::Invalid("add_n operand shapes differ".into()));
            }
            for (a, b) in y.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        Ok(self.push(OpKind::AddN, xs.iter().map(|v| v.0).collect(), y))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = ops::softmax_last(self.value(x));
        self.push(OpKind::Softmax, vec![x.0], y)
    }

    /// loss = a + alpha * b (both scalars).
    pub fn add_scaled(&mut self, a: Var, b: Var, alpha: f32) -> Var {
        let v = Tensor::scalar(self.value(a).item() + alpha * self.value(b).item());
        self.push(OpKind::AddScaled { alpha }, vec![a.0, b.0], v)
    }

    /// Multi-head attentive statistics pooling.
    ///
    /// `y` is the encoder output [B, C, T, F]; the hidden vector per frame is
    /// the (C, F) slice flattened c-major, giving H = C*F. `attn` holds one
    /// scoring vector per head, [heads, H/heads]. Output is [B, 2H], laid out
    /// per head as (mean, std).
    pub fn attention_pool(&mut self, y: Var, attn: Var) -> Result<Var> {
        let (out, ctx, heads) = pool_forward(self.value(y), self.value(attn))?;
        Ok(self.push(
            OpKind::AttentionPool { heads, ctx },
            vec![y.0, attn.0],
            out,
        ))
    }

    /// Additive-margin softmax loss over cosine logits; mean over the batch.
    /// `f` is [B, D] (normalized internally); `w` is [classes, D] with rows as
    /// class vectors (normalized internally).
    pub fn amsoftmax(
        &mut self,
        f: Var,
        w: Var,
        labels: &[usize],
        margin: f32,
        scale: f32,
    ) -> Result<Var> {
        let (loss, ctx) = amsoftmax_forward(self.value(f), self.value(w), labels, margin, scale)?;
        Ok(self.push(
            OpKind::AmSoftmax {
                scale,
                labels: labels.to_vec(),
                ctx,
            },
            vec![f.0, w.0],
            Tensor::scalar(loss as f32),
        ))
    }

    /// P = ||A A^T - I||_F^2
    pub fn penalization(&mut self, a: Var) -> Result<Var> {
        let p = penalization_value(self.value(a))?;
        Ok(self.push(OpKind::Penalization, vec![a.0], Tensor::scalar(p)))
    }

    /// Reverse pass from `root` with an all-ones upstream gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let up = Tensor::full(self.nodes.get(root.0).map(|n| n.value.shape()).ok_or(
            Error::Invalid("backward on a var not recorded on this tape".into()),
        )?, 1.0);
        self.backward_with(root, up)
    }

    /// Reverse pass seeding `root` with an explicit upstream gradient.
    pub fn backward_with(&self, root: Var, upstream: Tensor) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Invalid(
                "backward on a var not recorded on this tape".into(),
            ));
        }
        if upstream.shape() != self.nodes[root.0].value.shape() {
            return Err(Error::Invalid("upstream gradient shape mismatch".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(upstream);
        for i in (0..=root.0).rev() {
            let dout = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            let input_grads = self.node_backward(node, &dout)?;
            grads[i] = Some(dout);
            for (slot, g) in node.inputs.iter().zip(input_grads) {
                match &mut grads[*slot] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    empty => *empty = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, dout: &Tensor) -> Result<Vec<Tensor>> {
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        Ok(match &node.op {
            OpKind::Leaf => vec![],
            OpKind::Conv2d { spec } => {
                let (dx, dw, db) = ops::conv2d_backward(input(0), spec, input(1), dout)?;
                let mut out = vec![dx, dw];
                if node.inputs.len() == 3 {
                    out.push(Tensor::new(vec![db.len()], db)?);
                }
                out
            }
            OpKind::BatchNorm { ctx } => {
                let (dx, dgamma, dbeta) =
                    ops::batchnorm_train_backward(input(0), input(1).data(), ctx, dout);
                vec![
                    dx,
                    Tensor::new(vec![dgamma.len()], dgamma)?,
                    Tensor::new(vec![dbeta.len()], dbeta)?,
                ]
            }
            OpKind::Relu => vec![ops::relu_backward(input(0), dout)],
            OpKind::Linear => {
                let (dx, dw, db) = ops::linear_backward(input(0), input(1), dout);
                vec![dx, dw, Tensor::new(vec![db.len()], db)?]
            }
            OpKind::AddN => node.inputs.iter().map(|_| dout.clone()).collect(),
            OpKind::Softmax => vec![ops::softmax_last_backward(&node.value, dout)],
            OpKind::AttentionPool { heads, ctx } => {
                let (dy, da) = pool_backward(input(0), input(1), *heads, ctx, dout);
                vec![dy, da]
            }
            OpKind::AmSoftmax { scale, labels, ctx } => {
                let (df, dw) =
                    amsoftmax_backward(input(0), input(1), labels, *scale, ctx, dout.item());
                vec![df, dw]
            }
            OpKind::Penalization => vec![penalization_backward(input(0), dout.item())],
            OpKind::AddScaled { alpha } => {
                vec![dout.clone(), Tensor::scalar(alpha * dout.item())]
            }
        })
    }
}

fn pool_forward(y: &Tensor, attn: &Tensor) -> Result<(Tensor, PoolCtx, usize)> {
    super::expect_rank("attention_pool", y, 4)?;
    super::expect_rank("attention_pool", attn, 2)?;
    let (b, c, t, f) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let h = c * f;
    let heads = attn.shape()[0];
    let sub = attn.shape()[1];
    if heads == 0 || h % heads != 0 || sub != h / heads {
        return Err(Error::Config(format!(
            "pooling: hidden dim {h} not divisible into {heads} heads of {sub}"
        )));
    }
    if t == 0 {
        return Err(Error::Invalid("attention_pool on empty time axis".into()));
    }
    // hidden[b][j][t] with j = c*f_dim + f
    let hid = |bi: usize, j: usize, ti: usize| -> f32 {
        let (ci, fi) = (j / f, j % f);
        y.data()[((bi * c + ci) * t + ti) * f + fi]
    };
    let mut weights = vec![0.0f32; b * heads * t];
    let mut mu = vec![0.0f32; b * heads * sub];
    let mut sigma = vec![0.0f32; b * heads * sub];
    let mut out = vec![0.0f32; b * 2 * h];
    for bi in 0..b {
        for k in 0..heads {
            let a_row = &attn.data()[k * sub..(k + 1) * sub];
            let wslice = &mut weights[(bi * heads + k) * t..(bi * heads + k + 1) * t];
            for ti in 0..t {
                let mut s = 0.0f32;
                for (d, &av) in a_row.iter().enumerate() {
                    s += av * hid(bi, k * sub + d, ti);
                }
                wslice[ti] = s;
            }
            // softmax over frames
            let m = wslice.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for v in wslice.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in wslice.iter_mut() {
                *v /= z;
            }
            for d in 0..sub {
                let mut m1 = 0.0f32;
                let mut m2 = 0.0f32;
                for ti in 0..t {
                    let hv = hid(bi, k * sub + d, ti);
                    m1 += wslice[ti] * hv;
                    m2 += wslice[ti] * hv * hv;
                }
                let var = (m2 - m1 * m1).max(0.0);
                let sd = (var + POOL_SIGMA_EPS).sqrt();
                mu[(bi * heads + k) * sub + d] = m1;
                sigma[(bi * heads + k) * sub + d] = sd;
                out[bi * 2 * h + k * 2 * sub + d] = m1;
                out[bi * 2 * h + k * 2 * sub + sub + d] = sd;
            }
        }
    }
    let out = Tensor::new(vec![b, 2 * h], out)?;
    Ok((out, PoolCtx { weights, mu, sigma }, heads))
}

fn pool_backward(
    y: &Tensor,
    attn: &Tensor,
    heads: usize,
    ctx: &PoolCtx,
    dout: &Tensor,
) -> (Tensor, Tensor) {
    let (b, c, t, f) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let h = c * f;
    let sub = h / heads;
    let hid_idx = |bi: usize, j: usize, ti: usize| -> usize {
        let (ci, fi) = (j / f, j % f);
        ((bi * c + ci) * t + ti) * f + fi
    };
    let mut dy = Tensor::zeros(y.shape());
    let mut da = Tensor::zeros(attn.shape());
    for bi in 0..b {
        for k in 0..heads {
            let w = &ctx.weights[(bi * heads + k) * t..(bi * heads + k + 1) * t];
            let mu = &ctx.mu[(bi * heads + k) * sub..(bi * heads + k + 1) * sub];
            let sd = &ctx.sigma[(bi * heads + k) * sub..(bi * heads + k + 1) * sub];
            let g_mu = &dout.data()[bi * 2 * h + k * 2 * sub..bi * 2 * h + k * 2 * sub + sub];
            let g_sd =
                &dout.data()[bi * 2 * h + k * 2 * sub + sub..bi * 2 * h + k * 2 * sub + 2 * sub];
            let g_var: Vec<f32> = g_sd
                .iter()
                .zip(sd)
                .map(|(&g, &s)| g * 0.5 / s)
                .collect();
            // dL/dw_t, then softmax jacobian to scores
            let mut dw = vec![0.0f32; t];
            for ti in 0..t {
                let mut acc = 0.0f32;
                for d in 0..sub {
                    let hv = y.data()[hid_idx(bi, k * sub + d, ti)];
                    acc += g_mu[d] * hv + g_var[d] * (hv * hv - 2.0 * mu[d] * hv);
                }
                dw[ti] = acc;
            }
            let dot: f32 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            let ds: Vec<f32> = w.iter().zip(&dw).map(|(&wv, &dv)| wv * (dv - dot)).collect();
            for ti in 0..t {
                for d in 0..sub {
                    let idx = hid_idx(bi, k * sub + d, ti);
                    let hv = y.data()[idx];
                    dy.data_mut()[idx] += g_mu[d] * w[ti]
                        + g_var[d] * 2.0 * w[ti] * (hv - mu[d])
                        + attn.data()[k * sub + d] * ds[ti];
                    da.data_mut()[k * sub + d] += ds[ti] * hv;
                }
            }
        }
    }
    (dy, da)
}

const NORM_FLOOR: f32 = 1e-12;

fn amsoftmax_forward(
    f: &Tensor,
    w: &Tensor,
    labels: &[usize],
    margin: f32,
    scale: f32,
) -> Result<(f64, AmCtx)> {
    super::expect_rank("amsoftmax", f, 2)?;
    super::expect_rank("amsoftmax", w, 2)?;
    let (b, d) = (f.shape()[0], f.shape()[1]);
    let classes = w.shape()[0];
    if w.shape()[1] != d {
        return Err(Error::ShapeMismatch {
            op: "amsoftmax",
            axis: "embedding",
            expected: d,
            got: w.shape()[1],
        });
    }
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "amsoftmax",
            axis: "batch",
            expected: b,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut fnorm = vec![0.0f32; b];
    let mut fhat = f.data().to_vec();
    for bi in 0..b {
        let row = &mut fhat[bi * d..(bi + 1) * d];
        let n = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(NORM_FLOOR);
        fnorm[bi] = n;
        row.iter_mut().for_each(|v| *v /= n);
    }
    let mut wnorm = vec![0.0f32; classes];
    let mut what = w.data().to_vec();
    for j in 0..classes {
        let row = &mut what[j * d..(j + 1) * d];
        let n = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(NORM_FLOOR);
        wnorm[j] = n;
        row.iter_mut().for_each(|v| *v /= n);
    }
    let mut cos = vec![0.0f32; b * classes];
    for bi in 0..b {
        for j in 0..classes {
            let mut acc = 0.0f32;
            for di in 0..d {
                acc += fhat[bi * d + di] * what[j * d + di];
            }
            cos[bi * classes + j] = acc;
        }
    }
    let mut probs = vec![0.0f32; b * classes];
    let mut loss = 0.0f64;
    for bi in 0..b {
        let y = labels[bi];
        let logits: Vec<f32> = (0..classes)
            .map(|j| {
                let c = cos[bi * classes + j];
                scale * (c - if j == y { margin } else { 0.0 })
            })
            .collect();
        // log-sum-exp via ln_1p over the non-max terms so near-perfect
        // alignment keeps full precision
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let m = logits[argmax];
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != argmax)
            .map(|(_, &l)| ((l - m) as f64).exp())
            .sum();
        let z = 1.0 + rest;
        for j in 0..classes {
            probs[bi * classes + j] = (((logits[j] - m) as f64).exp() / z) as f32;
        }
        // group (m - logit_y) first; summing ln_1p with m would round the
        // tiny loss term away
        loss += rest.ln_1p() + (m - logits[y]) as f64;
    }
    loss /= b as f64;
    Ok((
        loss,
        AmCtx {
            fhat,
            fnorm,
            what,
            wnorm,
            cos,
            probs,
        },
    ))
}

fn amsoftmax_backward(
    f: &Tensor,
    w: &Tensor,
    labels: &[usize],
    scale: f32,
    ctx: &AmCtx,
    upstream: f32,
) -> (Tensor, Tensor) {
    let (b, d) = (f.shape()[0], f.shape()[1]);
    let classes = w.shape()[0];
    let mut df = Tensor::zeros(f.shape());
    let mut dw = Tensor::zeros(w.shape());
    let coeff = upstream * scale / b as f32;
    for bi in 0..b {
        for j in 0..classes {
            let delta = if labels[bi] == j { 1.0 } else { 0.0 };
            let dcos = coeff * (ctx.probs[bi * classes + j] - delta);
            if dcos == 0.0 {
                continue;
            }
            let c = ctx.cos[bi * classes + j];
            for di in 0..d {
                let fh = ctx.fhat[bi * d + di];
                let wh = ctx.what[j * d + di];
                df.data_mut()[bi * d + di] += dcos * (wh - c * fh) / ctx.fnorm[bi];
                dw.data_mut()[j * d + di] += dcos * (fh - c * wh) / ctx.wnorm[j];
            }
        }
    }
    (df, dw)
}

fn penalization_value(a: &Tensor) -> Result<f32> {
    super::expect_rank("penalization", a, 2)?;
    let (n, d) = (a.shape()[0], a.shape()[1]);
    if n == 0 || d == 0 {
        return Err(Error::Invalid("penalization on empty matrix".into()));
    }
    let mut p = 0.0f32;
    for i in 0..n {
        for j in 0..n {
            let mut g = 0.0f32;
            for k in 0..d {
                g += a.data()[i * d + k] * a.data()[j * d + k];
            }
            if i == j {
                g -= 1.0;
            }
            p += g * g;
        }
    }
    Ok(p)
}

fn penalization_backward(a: &Tensor, upstream: f32) -> Tensor {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    // dP/dA = 4 (A A^T - I) A
    let mut m = vec![0.0f32; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut g = 0.0f32;
            for k in 0..d {
                g += a.data()[i * d + k] * a.data()[j * d + k];
            }
            if i == j {
                g -= 1.0;
            }
            m[i * n + j] = g;
        }
    }
    let mut da = Tensor::zeros(a.shape());
    for i in 0..n {
        for k in 0..d {
            let mut acc = 0.0f32;
            for j in 0..n {
                acc += m[i * n + j] * a.data()[j * d + k];
            }
            da.data_mut()[i * d + k] = 4.0 * upstream * acc;
        }
    }
    da
}

/// Stand-alone (no-tape) attentive pooling used by the inference path.
pub fn attention_pool_infer(y: &Tensor, attn: &Tensor) -> Result<Tensor> {
    pool_forward(y, attn).map(|(out, _, _)| out)
}

/// Stand-alone AM-softmax loss value in f64 (no tape).
pub fn amsoftmax_value(
    f: &Tensor,
    w: &Tensor,
    labels: &[usize],
    margin: f32,
    scale: f32,
) -> Result<f64> {
    amsoftmax_forward(f, w, labels, margin, scale).map(|(l, _)| l)
}

/// Stand-alone penalization value (no tape).
pub fn penalization_infer(a: &Tensor) -> Result<f32> {
    penalization_value(a)
}
