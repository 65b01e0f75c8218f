//! Batched kernels. Activations are `[example][channel][position]`.

use super::{Aux, Shape, BN_EPS};

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward(
    x: &[f64],
    n: usize,
    s: Shape,
    w: &[f64],
    bias: &[f64],
    out_ch: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let (cin, len) = (s.channels, s.length);
    let out_len = (len - kernel) / stride + 1;
    let mut y = vec![0.0; n * out_ch * out_len];
    for b in 0..n {
        let xb = &x[b * cin * len..(b + 1) * cin * len];
        for o in 0..out_ch {
            let yo = &mut y[(b * out_ch + o) * out_len..(b * out_ch + o + 1) * out_len];
            yo.fill(bias[o]);
            for c in 0..cin {
                let xc = &xb[c * len..(c + 1) * len];
                let wk = &w[(o * cin + c) * kernel..(o * cin + c + 1) * kernel];
                for (t, acc) in yo.iter_mut().enumerate() {
                    let window = &xc[t * stride..t * stride + kernel];
                    *acc += window.iter().zip(wk).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    s: Shape,
    w: &[f64],
    out_ch: usize,
    kernel: usize,
    stride: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let (cin, len) = (s.channels, s.length);
    let out_len = (len - kernel) / stride + 1;
    let mut dx = vec![0.0; x.len()];
    for b in 0..n {
        for o in 0..out_ch {
            let dyo = &dy[(b * out_ch + o) * out_len..(b * out_ch + o + 1) * out_len];
            gb[o] += dyo.iter().sum::<f64>();
            for c in 0..cin {
                let base = (b * cin + c) * len;
                let wi = (o * cin + c) * kernel;
                for (t, &d) in dyo.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let start = base + t * stride;
                    for k in 0..kernel {
                        gw[wi + k] += d * x[start + k];
                        dx[start + k] += d * w[wi + k];
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn bn_forward_train(x: &[f64], n: usize, s: Shape, scale: &[f64], shift: &[f64]) -> (Vec<f64>, Aux) {
    let (ch, len) = (s.channels, s.length);
    let count = (n * len) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for b in 0..n {
        for c in 0..ch {
            mean[c] += x[(b * ch + c) * len..(b * ch + c + 1) * len].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for b in 0..n {
        for c in 0..ch {
            var[c] += x[(b * ch + c) * len..(b * ch + c + 1) * len]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (idx, v) in x.iter().enumerate() {
        let c = (idx / len) % ch;
        xhat[idx] = (v - mean[c]) * inv_std[c];
        y[idx] = scale[c] * xhat[idx] + shift[c];
    }
    (y, Aux::Norm { xhat, inv_std, mean, var })
}

pub(crate) fn bn_forward_infer(
    x: &[f64],
    _n: usize,
    s: Shape,
    scale: &[f64],
    shift: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Vec<f64> {
    let (ch, len) = (s.channels, s.length);
    x.iter()
        .enumerate()
        .map(|(idx, v)| {
            let c = (idx / len) % ch;
            scale[c] * (v - mean[c]) / (var[c] + BN_EPS).sqrt() + shift[c]
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward(
    dy: &[f64],
    n: usize,
    s: Shape,
    xhat: &[f64],
    inv_std: &[f64],
    scale: &[f64],
    gscale: &mut [f64],
    gshift: &mut [f64],
) -> Vec<f64> {
    let (ch, len) = (s.channels, s.length);
    let count = (n * len) as f64;
    let mut sum_d = vec![0.0; ch];
    let mut sum_dx = vec![0.0; ch];
    for (idx, d) in dy.iter().enumerate() {
        let c = (idx / len) % ch;
        gshift[c] += d;
        gscale[c] += d * xhat[idx];
        sum_d[c] += d * scale[c];
        sum_dx[c] += d * scale[c] * xhat[idx];
    }
    dy.iter()
        .enumerate()
        .map(|(idx, d)| {
            let c = (idx / len) % ch;
            inv_std[c] / count * (count * d * scale[c] - sum_d[c] - xhat[idx] * sum_dx[c])
        })
        .collect()
}

/// Non-overlapping max over windows of `k`; the first maximum wins.
pub(crate) fn pool_forward(x: &[f64], n: usize, s: Shape, k: usize) -> (Vec<f64>, Vec<usize>) {
    let (ch, len) = (s.channels, s.length);
    let out_len = len / k;
    let mut y = Vec::with_capacity(n * ch * out_len);
    let mut argmax = Vec::with_capacity(n * ch * out_len);
    for row in 0..n * ch {
        for t in 0..out_len {
            let start = row * len + t * k;
            let mut best = start;
            for j in start + 1..start + k {
                if x[j] > x[best] {
                    best = j;
                }
            }
            y.push(x[best]);
            argmax.push(best);
        }
    }
    (y, argmax)
}

pub(crate) fn dense_forward(x: &[f64], n: usize, fan_in: usize, w: &[f64], bias: &[f64], out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * out);
    for b in 0..n {
        let xb = &x[b * fan_in..(b + 1) * fan_in];
        for o in 0..out {
            let wo = &w[o * fan_in..(o + 1) * fan_in];
            y.push(bias[o] + xb.iter().zip(wo).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    fan_in: usize,
    w: &[f64],
    out: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * fan_in];
    for b in 0..n {
        let xb = &x[b * fan_in..(b + 1) * fan_in];
        let dxb = &mut dx[b * fan_in..(b + 1) * fan_in];
        for o in 0..out {
            let d = dy[b * out + o];
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let wo = &w[o * fan_in..(o + 1) * fan_in];
            let gwo = &mut gw[o * fan_in..(o + 1) * fan_in];
            for i in 0..fan_in {
                gwo[i] += d * xb[i];
                dxb[i] += d * wo[i];
            }
        }
    }
    dx
}

pub(crate) fn softmax(x: &[f64], classes: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        y.extend(e.iter().map(|v| v / z));
    }
    y
}
