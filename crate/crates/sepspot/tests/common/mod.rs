//! Independent reference implementations used as oracles: f64 loop-nest
//! versions of the tensor ops, a central finite-difference gradient checker,
//! a brute-force greedy suppression oracle, and an exhaustive bitmask
//! matcher for the evaluation metrics.

#![allow(dead_code)]

use sepspot::tensor::ops::{ConvSpec, PadMode};
use sepspot::tensor::Tensor;

/// Plain f64 loop-nest convolution, independent of the im2col path.
pub fn naive_conv2d(x: &Tensor, spec: &ConvSpec, w: &Tensor, bias: Option<&[f32]>) -> Tensor {
    let (b, cin, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let ot = match spec.pad_time {
        PadMode::Same => (t - 1) / st + 1,
        PadMode::None => (t - kt) / st + 1,
    };
    let of = match spec.pad_freq {
        PadMode::Same => (f - 1) / sf + 1,
        PadMode::None => (f - kf) / sf + 1,
    };
    let pt: isize = match spec.pad_time {
        PadMode::Same => (kt / 2) as isize,
        PadMode::None => 0,
    };
    let pf: isize = match spec.pad_freq {
        PadMode::Same => (kf / 2) as isize,
        PadMode::None => 0,
    };
    let cout = spec.out_channels;
    let mut out = vec![0f32; b * cout * ot * of];
    for bi in 0..b {
        for oc in 0..cout {
            for oy in 0..ot {
                for ox in 0..of {
                    let mut acc = bias.map(|bv| bv[oc] as f64).unwrap_or(0.0);
                    for ic in 0..cin {
                        for dy in 0..kt {
                            for dx in 0..kf {
                                let iy = (oy * st) as isize + dy as isize - pt;
                                let ix = (ox * sf) as isize + dx as isize - pf;
                                if iy < 0 || ix < 0 || iy >= t as isize || ix >= f as isize {
                                    continue;
                                }
                                let xi = ((bi * cin + ic) * t + iy as usize) * f + ix as usize;
                                let wi = ((oc * cin + ic) * kt + dy) * kf + dx;
                                acc += x.data()[xi] as f64 * w.data()[wi] as f64;
                            }
                        }
                    }
                    out[((bi * cout + oc) * ot + oy) * of + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, ot, of], out).unwrap()
}

/// f64 reference of training-mode batch norm (population statistics over
/// batch, time and freq per channel).
pub fn naive_batchnorm_train(x: &Tensor, gamma: &[f32], beta: &[f32], eps: f32) -> Tensor {
    let (b, c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let n = (b * t * f) as f64;
    let mut out = vec![0f32; x.len()];
    for ci in 0..c {
        let mut sum = 0f64;
        let mut sq = 0f64;
        for bi in 0..b {
            for i in 0..t * f {
                let v = x.data()[(bi * c + ci) * t * f + i] as f64;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        let var = sq / n - mean * mean;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for bi in 0..b {
            for i in 0..t * f {
                let idx = (bi * c + ci) * t * f + i;
                let v = x.data()[idx] as f64;
                out[idx] = ((v - mean) * inv * gamma[ci] as f64 + beta[ci] as f64) as f32;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// f64 reference of y = x W^T + b for x [B,H], w [D,H].
pub fn naive_linear(x: &Tensor, w: &Tensor, bias: &[f32]) -> Tensor {
    let (b, h) = (x.shape()[0], x.shape()[1]);
    let d = w.shape()[0];
    let mut out = vec![0f32; b * d];
    for bi in 0..b {
        for di in 0..d {
            let mut acc = bias[di] as f64;
            for hi in 0..h {
                acc += x.data()[bi * h + hi] as f64 * w.data()[di * h + hi] as f64;
            }
            out[bi * d + di] = acc as f32;
        }
    }
    Tensor::new(vec![b, d], out).unwrap()
}

/// Central finite-difference gradient of a scalar function of `params`.
pub fn fd_grad(f: &mut dyn FnMut(&[f32]) -> f64, params: &[f32], h: f32) -> Vec<f32> {
    let mut grad = vec![0f32; params.len()];
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let hi = f(&p);
        p[i] = orig - h;
        let lo = f(&p);
        p[i] = orig;
        grad[i] = ((hi - lo) / (2.0 * h as f64)) as f32;
    }
    grad
}

/// Norm-based relative error between two gradient vectors.
pub fn rel_err(a: &[f32], b: &[f32]) -> f32 {
    let diff: f32 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Brute-force greedy 1-D suppression on one row: repeatedly pick the
/// largest remaining positive cell (smaller index on ties), keep it, and
/// zero every other positive cell within distance < radius.
pub fn brute_nms_row(row: &[f32], radius: usize) -> Vec<f32> {
    let radius = radius.max(1);
    let mut out = row.to_vec();
    let mut decided = vec![false; row.len()];
    loop {
        let mut best: Option<usize> = None;
        for j in 0..out.len() {
            if decided[j] || out[j] <= 0.0 {
                continue;
            }
            match best {
                None => best = Some(j),
                Some(b) => {
                    if out[j] > out[b] {
                        best = Some(j);
                    }
                }
            }
        }
        let Some(j) = best else { break };
        decided[j] = true;
        for k in j.saturating_sub(radius - 1)..(j + radius).min(out.len()) {
            if k != j && out[k] > 0.0 {
                out[k] = 0.0;
                decided[k] = true;
            }
        }
    }
    out
}

/// Exhaustive maximum bipartite matching via bitmask DP over detections.
/// `adj[l]` holds the eligible detection indices for label `l`.
pub fn brute_max_matching(adj: &[Vec<usize>], n_dets: usize) -> usize {
    assert!(n_dets <= 16, "oracle meant for small groups");
    let mut best = 0;
    fn rec(l: usize, used: u32, adj: &[Vec<usize>], best: &mut usize, count: usize) {
        if l == adj.len() {
            *best = (*best).max(count);
            return;
        }
        // leave label l unmatched
        rec(l + 1, used, adj, best, count);
        for &d in &adj[l] {
            if used & (1 << d) == 0 {
                rec(l + 1, used | (1 << d), adj, best, count + 1);
            }
        }
    }
    rec(0, 0, adj, &mut best, 0);
    best
}
