//! Forward evaluation and gradient accumulation rules, one arm per op.
//!
//! `eval` computes a node's value from its parents' values; `accumulate`
//! takes the gradient that has arrived at a node and distributes it to the
//! node's parents. Both are driven by the sweeps in the parent module.

use super::{Node, Op};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

fn value<'a>(nodes: &'a [Node], id: usize) -> &'a Tensor {
    nodes[id].value.as_ref().expect("parent value missing: parents precede children")
}

pub(super) fn eval(op: &Op, out_shape: &[usize], prev: &[Node]) -> Tensor {
    match *op {
        Op::Input | Op::Parameter => unreachable!("leaves are handled by the sweep"),
        Op::Add { lhs, rhs } => {
            let (a, b) = (value(prev, lhs), value(prev, rhs));
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::from_vec(out_shape, data)
        }
        Op::Mul { lhs, rhs } => {
            let (a, b) = (value(prev, lhs), value(prev, rhs));
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::from_vec(out_shape, data)
        }
        Op::MatMul { lhs, rhs } => {
            let (a, b) = (value(prev, lhs), value(prev, rhs));
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let mut c = vec![0.0; m * n];
            matmul_nn(a.data(), b.data(), &mut c, m, k, n);
            Tensor::from_vec(out_shape, c)
        }
        Op::Conv1d { input, weights, bias, stride, padding } => {
            conv1d_forward(
                value(prev, input),
                value(prev, weights),
                value(prev, bias),
                stride,
                padding,
                out_shape,
            )
        }
        Op::MaxPool1d { input, window, stride } => {
            let x = value(prev, input);
            let len = *x.shape().last().unwrap();
            let out_len = *out_shape.last().unwrap();
            let rows = x.numel() / len;
            let mut data = Vec::with_capacity(rows * out_len);
            for r in 0..rows {
                let row = &x.data()[r * len..(r + 1) * len];
                for t in 0..out_len {
                    let w = &row[t * stride..t * stride + window];
                    let mut best = w[0];
                    for &v in &w[1..] {
                        if v > best {
                            best = v;
                        }
                    }
                    data.push(best);
                }
            }
            Tensor::from_vec(out_shape, data)
        }
        Op::Relu { input } => {
            let data = value(prev, input).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
            Tensor::from_vec(out_shape, data)
        }
        Op::Sigmoid { input } => {
            let data = value(prev, input).data().iter().map(|&x| sigmoid(x)).collect();
            Tensor::from_vec(out_shape, data)
        }
        Op::SoftmaxXent { logits, ref labels } => {
            Tensor::scalar(xent_forward(value(prev, logits), labels))
        }
        Op::BinaryXent { logits, ref domains } => {
            Tensor::scalar(xent_forward(value(prev, logits), domains))
        }
        Op::Grl { input, .. } => value(prev, input).clone().reshaped(out_shape),
        Op::Reshape { input } => value(prev, input).reshaped(out_shape),
        Op::Mean { input } => {
            let x = value(prev, input);
            let n = *x.shape().last().unwrap();
            let groups = x.numel() / n;
            let mut data = Vec::with_capacity(groups);
            for g in 0..groups {
                let row = &x.data()[g * n..(g + 1) * n];
                data.push(row.iter().sum::<f64>() / n as f64);
            }
            Tensor::from_vec(out_shape, data)
        }
        Op::Scale { input, factor } => {
            let data = value(prev, input).data().iter().map(|&x| x * factor).collect();
            Tensor::from_vec(out_shape, data)
        }
    }
}

pub(super) fn accumulate(
    op: &Op,
    upstream: &Tensor,
    own_value: &Tensor,
    nodes: &[Node],
    parent_grads: &mut [Tensor],
) {
    match *op {
        Op::Input | Op::Parameter => {}
        Op::Add { lhs, rhs } => {
            axpy(1.0, upstream.data(), parent_grads[lhs].data_mut());
            axpy(1.0, upstream.data(), parent_grads[rhs].data_mut());
        }
        Op::Mul { lhs, rhs } => {
            let (a, b) = (value(nodes, lhs).data().to_vec(), value(nodes, rhs).data().to_vec());
            for ((g, y), dx) in upstream.data().iter().zip(&b).zip(parent_grads[lhs].data_mut()) {
                *dx += g * y;
            }
            for ((g, x), dy) in upstream.data().iter().zip(&a).zip(parent_grads[rhs].data_mut()) {
                *dy += g * x;
            }
        }
        Op::MatMul { lhs, rhs } => {
            let a = value(nodes, lhs);
            let b = value(nodes, rhs);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            // dA = G · Bᵀ, dB = Aᵀ · G
            matmul_nt(upstream.data(), b.data(), parent_grads[lhs].data_mut(), m, n, k);
            matmul_tn(a.data(), upstream.data(), parent_grads[rhs].data_mut(), k, m, n);
        }
        Op::Conv1d { input, weights, bias, stride, padding } => {
            conv1d_backward(
                upstream,
                value(nodes, input),
                value(nodes, weights),
                stride,
                padding,
                parent_grads,
                input,
                weights,
                bias,
            );
        }
        Op::MaxPool1d { input, window, stride } => {
            let x = value(nodes, input);
            let len = *x.shape().last().unwrap();
            let out_len = *upstream.shape().last().unwrap();
            let rows = x.numel() / len;
            let dx = parent_grads[input].data_mut();
            for r in 0..rows {
                let row = &x.data()[r * len..(r + 1) * len];
                for t in 0..out_len {
                    let start = t * stride;
                    let w = &row[start..start + window];
                    // first maximal index wins ties
                    let mut best = 0;
                    for (j, &v) in w.iter().enumerate() {
                        if v > w[best] {
                            best = j;
                        }
                    }
                    dx[r * len + start + best] += upstream.data()[r * out_len + t];
                }
            }
        }
        Op::Relu { input } => {
            let x = value(nodes, input);
            for ((g, &v), dx) in
                upstream.data().iter().zip(x.data()).zip(parent_grads[input].data_mut())
            {
                if v > 0.0 {
                    *dx += g;
                }
            }
        }
        Op::Sigmoid { input } => {
            for ((g, &y), dx) in
                upstream.data().iter().zip(own_value.data()).zip(parent_grads[input].data_mut())
            {
                *dx += g * y * (1.0 - y);
            }
        }
        Op::SoftmaxXent { logits, ref labels } => {
            xent_backward(upstream.item(), value(nodes, logits), labels, parent_grads[logits].data_mut());
        }
        Op::BinaryXent { logits, ref domains } => {
            xent_backward(upstream.item(), value(nodes, logits), domains, parent_grads[logits].data_mut());
        }
        Op::Grl { input, lambda } => {
            axpy(-lambda, upstream.data(), parent_grads[input].data_mut());
        }
        Op::Reshape { input } => {
            axpy(1.0, upstream.data(), parent_grads[input].data_mut());
        }
        Op::Mean { input } => {
            let n = *value(nodes, input).shape().last().unwrap();
            let inv = 1.0 / n as f64;
            let dx = parent_grads[input].data_mut();
            for (g_idx, g) in upstream.data().iter().enumerate() {
                let row = &mut dx[g_idx * n..(g_idx + 1) * n];
                for d in row {
                    *d += g * inv;
                }
            }
        }
        Op::Scale { input, factor } => {
            axpy(factor, upstream.data(), parent_grads[input].data_mut());
        }
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ── cross-entropy ────────────────────────────────────────────────────

/// Mean over the batch of lse(z) − z[label], the numerically stable form
/// of −log softmax(z)[label].
fn xent_forward(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[1];
    let batch = logits.shape()[0];
    let mut total = 0.0;
    for b in 0..batch {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[b]];
    }
    total / batch as f64
}

/// dL/dz = g · (softmax(z) − onehot(label)) / batch
fn xent_backward(g: f64, logits: &Tensor, labels: &[usize], dz: &mut [f64]) {
    let classes = logits.shape()[1];
    let batch = logits.shape()[0];
    let scale = g / batch as f64;
    for b in 0..batch {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let out = &mut dz[b * classes..(b + 1) * classes];
        for (c, (d, z)) in out.iter_mut().zip(row).enumerate() {
            let p = (z - max).exp() / denom;
            let target = if c == labels[b] { 1.0 } else { 0.0 };
            *d += scale * (p - target);
        }
    }
}

// ── convolution ──────────────────────────────────────────────────────
//
// Implemented as cross-correlation (no kernel flip) through an im2col
// buffer so the heavy loops are matrix products with unit-stride inner
// dimensions.

/// col[(ci·K + j), t] = x[ci, t·stride + j − padding], zero outside.
fn im2col(
    x: &[f64],
    in_ch: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), in_ch * k * out_len);
    for ci in 0..in_ch {
        let x_row = &x[ci * len..(ci + 1) * len];
        for j in 0..k {
            let col_row = &mut col[(ci * k + j) * out_len..(ci * k + j + 1) * out_len];
            for (t, slot) in col_row.iter_mut().enumerate() {
                let pos = t * stride + j;
                *slot = if pos >= padding && pos - padding < len {
                    x_row[pos - padding]
                } else {
                    0.0
                };
            }
        }
    }
}

fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
) -> Tensor {
    let (batch, in_ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (out_ch, k) = (w.shape()[0], w.shape()[2]);
    let out_len = out_shape[2];
    let ck = in_ch * k;
    let mut col = vec![0.0; ck * out_len];
    let mut out = vec![0.0; batch * out_ch * out_len];
    for b in 0..batch {
        im2col(&x.data()[b * in_ch * len..], in_ch, len, k, stride, padding, out_len, &mut col);
        let out_b = &mut out[b * out_ch * out_len..(b + 1) * out_ch * out_len];
        matmul_nn(w.data(), &col, out_b, out_ch, ck, out_len);
        for co in 0..out_ch {
            let bcoef = bias.data()[co];
            for v in &mut out_b[co * out_len..(co + 1) * out_len] {
                *v += bcoef;
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    upstream: &Tensor,
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
    parent_grads: &mut [Tensor],
    input_id: usize,
    weights_id: usize,
    bias_id: usize,
) {
    let (batch, in_ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (out_ch, k) = (w.shape()[0], w.shape()[2]);
    let out_len = upstream.shape()[2];
    let ck = in_ch * k;

    let mut col = vec![0.0; ck * out_len];
    let mut dcol = vec![0.0; ck * out_len];

    for b in 0..batch {
        let g_b = &upstream.data()[b * out_ch * out_len..(b + 1) * out_ch * out_len];
        im2col(&x.data()[b * in_ch * len..], in_ch, len, k, stride, padding, out_len, &mut col);

        // dW += G_b · colᵀ
        matmul_nt(g_b, &col, parent_grads[weights_id].data_mut(), out_ch, out_len, ck);

        // db += row sums of G_b
        let db = parent_grads[bias_id].data_mut();
        for co in 0..out_ch {
            db[co] += g_b[co * out_len..(co + 1) * out_len].iter().sum::<f64>();
        }

        // dcol = Wᵀ · G_b, then scattered back onto dx
        dcol.iter_mut().for_each(|v| *v = 0.0);
        matmul_tn(w.data(), g_b, &mut dcol, ck, out_ch, out_len);
        let dx = parent_grads[input_id].data_mut();
        let dx_b = &mut dx[b * in_ch * len..(b + 1) * in_ch * len];
        for ci in 0..in_ch {
            for j in 0..k {
                let dcol_row = &dcol[(ci * k + j) * out_len..(ci * k + j + 1) * out_len];
                for (t, &g) in dcol_row.iter().enumerate() {
                    let pos = t * stride + j;
                    if pos >= padding && pos - padding < len {
                        dx_b[ci * len + pos - padding] += g;
                    }
                }
            }
        }
    }
}
