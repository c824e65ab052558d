//! Forward and backward kernels on plain tensors. Reductions accumulate in
//! `f64` and round once on output.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::tensor::{axis_split, Tensor};

pub(crate) fn map(a: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let data = a.data().iter().map(|&v| f(v)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2("matmul")?;
    let [k2, n] = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let aik = ad[i * k + kk] as f64;
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += aik * bv as f64;
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ`
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2("matmul_nt")?;
    let [n, k2] = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let s: f64 = arow
                .iter()
                .zip(brow)
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            out.push(s as f32);
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b`
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [k, m] = a.dims2("matmul_tn")?;
    let [k2, n] = b.dims2("matmul_tn")?;
    if k != k2 {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut acc = vec![0f64; m * n];
    for kk in 0..k {
        let brow = &bd[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = ad[kk * m + i] as f64;
            if aki == 0.0 {
                continue;
            }
            for (s, &bv) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *s += aki * bv as f64;
            }
        }
    }
    Tensor::new(vec![m, n], acc.into_iter().map(|v| v as f32).collect())
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let [r, c] = a.dims2("transpose")?;
    let d = a.data();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(d[i * c + j]);
        }
    }
    Tensor::new(vec![c, r], out)
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
pub(crate) fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    std_normal_cdf(x) + x * pdf
}

pub(crate) fn sum(a: &Tensor) -> f64 {
    a.data().iter().map(|&v| v as f64).sum()
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Usage(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0f32; d.len()];
    let mut buf = vec![0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| o * len * inner + l * inner + i;
            let max = (0..len).map(|l| d[at(l)]).fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut total = 0.0;
            for (l, b) in buf.iter_mut().enumerate() {
                *b = (d[at(l)] as f64 - max).exp();
                total += *b;
            }
            for (l, b) in buf.iter().enumerate() {
                out[at(l)] = (b / total) as f32;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0f32; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| o * len * inner + l * inner + i;
            let dot: f64 = (0..len).map(|l| yd[at(l)] as f64 * gd[at(l)] as f64).sum();
            for l in 0..len {
                out[at(l)] = (yd[at(l)] as f64 * (gd[at(l)] as f64 - dot)) as f32;
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("same shape")
}

pub(crate) fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    if axis >= x.rank() || start >= end || end > x.shape()[axis] {
        return Err(Error::Usage(format!(
            "slice [{start}, {end}) on axis {axis} of shape {:?}",
            x.shape()
        )));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let width = end - start;
    let d = x.data();
    let mut out = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        let base = o * len * inner;
        out.extend_from_slice(&d[base + start * inner..base + end * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = width;
    Tensor::new(shape, out)
}

pub(crate) fn slice_backward(
    g: &Tensor,
    input_shape: &[usize],
    axis: usize,
    start: usize,
) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(input_shape, axis);
    let width = g.shape()[axis];
    let mut out = vec![0f32; outer * len * inner];
    let gd = g.data();
    for o in 0..outer {
        let dst = o * len * inner + start * inner;
        let src = o * width * inner;
        out[dst..dst + width * inner].copy_from_slice(&gd[src..src + width * inner]);
    }
    Tensor::new(input_shape.to_vec(), out)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
    if axis >= first.rank() {
        return Err(Error::Usage(format!(
            "concat axis {axis} out of range for rank {}",
            first.rank()
        )));
    }
    for p in &parts[1..] {
        let compatible = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let w = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}

pub(crate) fn concat_backward(g: &Tensor, shapes: &[&[usize]], axis: usize) -> Result<Vec<Tensor>> {
    let mut start = 0;
    shapes
        .iter()
        .map(|s| {
            let t = slice(g, axis, start, start + s[axis]);
            start += s[axis];
            t
        })
        .collect()
}

/// Output length of a strided valid convolution.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    if kernel == 0 || kernel > len {
        return Err(Error::Config(format!(
            "kernel size {kernel} must be in 1..={len}"
        )));
    }
    Ok((len - kernel) / stride + 1)
}

pub fn conv1d_depthwise(x: &Tensor, k: &Tensor, stride: usize) -> Result<Tensor> {
    let [c, t] = x.dims2("conv1d_depthwise")?;
    let [c2, kl] = k.dims2("conv1d_depthwise")?;
    if c != c2 {
        return Err(Error::shape("conv1d_depthwise", x.shape(), k.shape()));
    }
    let t_out = conv_output_len(t, kl, stride)?;
    let (xd, kd) = (x.data(), k.data());
    let mut out = Vec::with_capacity(c * t_out);
    for ch in 0..c {
        let xrow = &xd[ch * t..(ch + 1) * t];
        let krow = &kd[ch * kl..(ch + 1) * kl];
        for o in 0..t_out {
            let win = &xrow[o * stride..o * stride + kl];
            let s: f64 = win
                .iter()
                .zip(krow)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            out.push(s as f32);
        }
    }
    Tensor::new(vec![c, t_out], out)
}

pub(crate) fn conv1d_depthwise_backward(
    x: &Tensor,
    k: &Tensor,
    g: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor)> {
    let [c, t] = x.dims2("conv1d_depthwise")?;
    let [_, kl] = k.dims2("conv1d_depthwise")?;
    let [_, t_out] = g.dims2("conv1d_depthwise")?;
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    let mut dx = vec![0f64; c * t];
    let mut dk = vec![0f64; c * kl];
    for ch in 0..c {
        for o in 0..t_out {
            let gv = gd[ch * t_out + o] as f64;
            for j in 0..kl {
                let xi = ch * t + o * stride + j;
                dx[xi] += gv * kd[ch * kl + j] as f64;
                dk[ch * kl + j] += gv * xd[xi] as f64;
            }
        }
    }
    Ok((
        Tensor::new(vec![c, t], dx.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![c, kl], dk.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// Row width of a `[d]` or `[1, d]` tensor.
pub(crate) fn row_width(a: &Tensor) -> Result<usize> {
    match a.shape() {
        &[d] | &[1, d] => Ok(d),
        other => Err(Error::shape("expand_rows", other, &[1, 0])),
    }
}

pub(crate) fn expand_rows(a: &Tensor, n: usize) -> Result<Tensor> {
    let d = row_width(a)?;
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        out.extend_from_slice(a.data());
    }
    Tensor::new(vec![n, d], out)
}

pub(crate) fn expand_rows_backward(g: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let [n, d] = g.dims2("expand_rows")?;
    let gd = g.data();
    let out = (0..d)
        .map(|j| (0..n).map(|i| gd[i * d + j] as f64).sum::<f64>() as f32)
        .collect();
    Tensor::new(input_shape.to_vec(), out)
}

/// Per-row standardization. Returns the output and each row's `1/σ`.
pub(crate) fn normalize_rows(x: &Tensor, eps: f32) -> Result<(Tensor, Vec<f64>)> {
    let [n, d] = x.dims2("layer_norm")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * d);
    let mut inv_stds = Vec::with_capacity(n);
    for r in 0..n {
        let row = &xd[r * d..(r + 1) * d];
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        out.extend(row.iter().map(|&v| ((v as f64 - mean) * inv) as f32));
        inv_stds.push(inv);
    }
    Ok((Tensor::new(vec![n, d], out)?, inv_stds))
}

pub(crate) fn normalize_rows_backward(y: &Tensor, g: &Tensor, inv_std: &[f64]) -> Result<Tensor> {
    let [n, d] = y.dims2("layer_norm")?;
    let (yd, gd) = (y.data(), g.data());
    let mut out = Vec::with_capacity(n * d);
    for r in 0..n {
        let yr = &yd[r * d..(r + 1) * d];
        let gr = &gd[r * d..(r + 1) * d];
        let g_mean = gr.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let gy_mean = gr
            .iter()
            .zip(yr)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum::<f64>()
            / d as f64;
        out.extend(
            gr.iter()
                .zip(yr)
                .map(|(&gv, &yv)| (inv_std[r] * (gv as f64 - g_mean - yv as f64 * gy_mean)) as f32),
        );
    }
    Tensor::new(vec![n, d], out)
}

/// Mean negative log-likelihood; also returns the softmax probabilities.
pub(crate) fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let [n, c] = logits.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!("label {bad} outside 0..{c}")));
    }
    let d = logits.data();
    let mut probs = Vec::with_capacity(n * c);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &d[r * c..(r + 1) * c];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = max + z.ln();
        total += log_z - row[label] as f64;
        probs.extend(row.iter().map(|&v| (v as f64 - log_z).exp()));
    }
    Ok((total / n as f64, probs))
}

pub(crate) fn cross_entropy_backward(
    shape: &[usize],
    labels: &[usize],
    probs: &[f64],
    upstream: f32,
) -> Result<Tensor> {
    let c = shape[1];
    let n = labels.len() as f64;
    let scale = upstream as f64 / n;
    let mut out: Vec<f32> = probs.iter().map(|&p| (p * scale) as f32).collect();
    for (r, &label) in labels.iter().enumerate() {
        out[r * c + label] = ((probs[r * c + label] - 1.0) * scale) as f32;
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn gather(x: &Tensor, shape: Vec<usize>, index: &[usize]) -> Result<Tensor> {
    let d = x.data();
    if let Some(bad) = index.iter().find(|&&i| i >= d.len()) {
        return Err(Error::Usage(format!(
            "gather index {bad} out of {}",
            d.len()
        )));
    }
    Tensor::new(shape, index.iter().map(|&i| d[i]).collect())
}

pub(crate) fn gather_backward(
    g: &Tensor,
    input_shape: &[usize],
    index: &[usize],
) -> Result<Tensor> {
    let mut out = vec![0f32; input_shape.iter().product()];
    for (&i, &gv) in index.iter().zip(g.data()) {
        out[i] += gv;
    }
    Tensor::new(input_shape.to_vec(), out)
}
