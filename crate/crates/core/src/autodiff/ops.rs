use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self, same_shape};
use super::tape::{Op, Tape, Var};

impl Tape {
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.record("matmul", [a, b], |[x, y]| {
            Ok((kernels::matmul(x, y)?, Op::MatMul(ia, ib)))
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.record("add", [a, b], |[x, y]| {
            same_shape("add", x, y)?;
            Ok((kernels::zip(x, y, |p, q| p + q), Op::Add(ia, ib)))
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.record("sub", [a, b], |[x, y]| {
            same_shape("sub", x, y)?;
            Ok((kernels::zip(x, y, |p, q| p - q), Op::Sub(ia, ib)))
        })
    }

    /// Elementwise product of identically shaped tensors.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.record("mul", [a, b], |[x, y]| {
            same_shape("mul", x, y)?;
            Ok((kernels::zip(x, y, |p, q| p * q), Op::Mul(ia, ib)))
        })
    }

    pub fn scale(&self, a: Var, factor: f32) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("scale", [a], |[x]| {
            Ok((kernels::map(x, |v| v * factor), Op::Scale(ia, factor)))
        })
    }

    pub fn add_scalar(&self, a: Var, c: f32) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("add_scalar", [a], |[x]| {
            Ok((kernels::map(x, |v| v + c), Op::AddScalar(ia)))
        })
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("gelu", [a], |[x]| {
            Ok((
                kernels::map(x, |v| kernels::gelu(v as f64) as f32),
                Op::Gelu(ia),
            ))
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let mut precise = 0.0;
        let out = self.record("sum", [a], |[x]| {
            precise = kernels::sum(x);
            Ok((Tensor::scalar(precise as f32), Op::Sum(ia)))
        })?;
        self.set_precise(out, precise);
        Ok(out)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let mut precise = 0.0;
        let out = self.record("mean", [a], |[x]| {
            precise = kernels::sum(x) / x.len() as f64;
            Ok((Tensor::scalar(precise as f32), Op::Mean(ia)))
        })?;
        self.set_precise(out, precise);
        Ok(out)
    }

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let ia = self.index(a)?;
        let shape = shape.into();
        self.record("reshape", [a], |[x]| {
            Ok((x.reshape(shape)?, Op::Reshape(ia)))
        })
    }

    /// Swaps the two axes of a 2-D tensor.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("transpose", [a], |[x]| {
            Ok((kernels::transpose(x)?, Op::Transpose(ia)))
        })
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("slice", [a], |[x]| {
            Ok((
                kernels::slice(x, axis, start, end)?,
                Op::Slice {
                    input: ia,
                    axis,
                    start,
                },
            ))
        })
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let inputs = parts
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>>>()?;
        self.record_many("concat", parts, |vals| {
            Ok((kernels::concat(vals, axis)?, Op::Concat { inputs, axis }))
        })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("softmax", [a], |[x]| {
            Ok((kernels::softmax(x, axis)?, Op::Softmax { input: ia, axis }))
        })
    }

    /// Per-channel strided valid convolution: `x: [C, T]`, `kernels: [C, K]`
    /// gives `[C, (T - K) / stride + 1]`.
    pub fn conv1d_depthwise(&self, x: Var, kernels: Var, stride: usize) -> Result<Var> {
        let (ix, ik) = (self.index(x)?, self.index(kernels)?);
        self.record("conv1d_depthwise", [x, kernels], |[xv, kv]| {
            Ok((
                kernels::conv1d_depthwise(xv, kv, stride)?,
                Op::Conv1dDepthwise {
                    input: ix,
                    kernels: ik,
                    stride,
                },
            ))
        })
    }

    /// Repeats a `[d]` or `[1, d]` row `n` times into `[n, d]`.
    pub fn expand_rows(&self, a: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::Usage("expand_rows to zero rows".into()));
        }
        let ia = self.index(a)?;
        self.record("expand_rows", [a], |[x]| {
            Ok((kernels::expand_rows(x, n)?, Op::ExpandRows(ia)))
        })
    }

    /// Standardizes each row of `[n, d]` to zero mean and unit population
    /// variance; `eps` is added to the variance.
    pub fn normalize_rows(&self, a: Var, eps: f32) -> Result<Var> {
        let ia = self.index(a)?;
        self.record("layer_norm", [a], |[x]| {
            let (y, inv_std) = kernels::normalize_rows(x, eps)?;
            Ok((y, Op::NormalizeRows { input: ia, inv_std }))
        })
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of
    /// `logits: [n, c]`.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.index(logits)?;
        let mut precise = 0.0;
        let out = self.record("cross_entropy", [logits], |[x]| {
            let (loss, probs) = kernels::cross_entropy(x, labels)?;
            precise = loss;
            Ok((
                Tensor::scalar(loss as f32),
                Op::CrossEntropy {
                    logits: il,
                    labels: labels.to_vec(),
                    probs,
                },
            ))
        })?;
        self.set_precise(out, precise);
        Ok(out)
    }

    /// `out.flat[i] = a.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&self, a: Var, shape: impl Into<Vec<usize>>, index: Vec<usize>) -> Result<Var> {
        let ia = self.index(a)?;
        let shape = shape.into();
        self.record("gather", [a], |[x]| {
            Ok((
                kernels::gather(x, shape, &index)?,
                Op::Gather { input: ia, index },
            ))
        })
    }
}
