//! Forward builders. Each evaluates eagerly and records the operation for backward.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::kernels::conv::Conv2dGeometry;
use crate::tensor::kernels::interp::InterpMode;
use crate::tensor::kernels::scan::ScanImpl;
use crate::tensor::kernels::{broadcast, conv, interp, norm, pool, scan, shape, softmax};
use crate::tensor::{gemm, Layout, Real, Tensor};

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Batch statistics of a training-mode batch-norm call, for running-average updates.
#[derive(Debug, Clone)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let v = broadcast::binary(self.value(a), self.value(b), f)?;
        Ok(self.push_op(v, op))
    }

    /// Broadcasting `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).scale(c);
        self.push_op(v, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a + c);
        self.push_op(v, Op::AddScalar(x))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x).map(f);
        self.push_op(v, op)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(T::zero()), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * sigmoid(a), Op::Silu(x))
    }

    /// Sums over `axes`; with `keepdim` the reduced axes stay as size 1.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::shape("sum", format!("axis {bad} out of range for {shape:?}")));
        }
        let kept: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let v = broadcast::sum_to_shape(self.value(x), &kept);
        let s = self.push_op(v, Op::SumTo(x));
        if keepdim {
            return Ok(s);
        }
        let squeezed: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        self.reshape(s, &squeezed)
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let count: usize = axes
            .iter()
            .map(|&a| self.shape(x).get(a).copied().unwrap_or(1))
            .product();
        let s = self.sum_axes(x, axes, keepdim)?;
        Ok(self.scale(s, T::one() / T::lit(count as f64)))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum_axes(x, &axes, false).expect("all axes are valid")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Maximum along one axis (kept as size 1).
    pub fn max_along(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (v, argmax) = shape::max_along(self.value(x), axis)?;
        Ok(self.push_op(v, Op::MaxAlong { x, argmax }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = shape::concat(&tensors, axis)?;
        Ok(self.push_op(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = shape::slice(self.value(x), axis, start, len)?;
        Ok(self.push_op(v, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push_op(v, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = shape::permute(self.value(x), perm)?;
        Ok(self.push_op(v, Op::Permute { x, perm: perm.to_vec() }))
    }

    pub fn index_select(&mut self, x: Var, axis: usize, index: &[usize]) -> Result<Var> {
        let v = shape::index_select(self.value(x), axis, index)?;
        Ok(self.push_op(
            v,
            Op::IndexSelect {
                x,
                axis,
                index: index.to_vec(),
            },
        ))
    }

    /// Scatters the slices of `x` along `axis` into positions `index` of a zero tensor of length `size`.
    pub fn index_add(&mut self, x: Var, axis: usize, index: &[usize], size: usize) -> Result<Var> {
        let v = shape::index_add(self.value(x), axis, index, size)?;
        Ok(self.push_op(
            v,
            Op::IndexAdd {
                x,
                axis,
                index: index.to_vec(),
            },
        ))
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::Normal,
            self.value(b).data(),
            Layout::Normal,
            &mut out,
            false,
        );
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(v, Op::MatMul(a, b)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize, dilation: usize) -> Result<Var> {
        let geom = Conv2dGeometry::new(self.shape(x), self.shape(w), stride, padding, dilation)?;
        let v = conv::conv2d_forward(self.value(x), self.value(w), &geom);
        Ok(self.push_op(v, Op::Conv2d { x, w, geom }))
    }

    pub fn depthwise_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = conv::depthwise_conv1d_forward(self.value(x), self.value(w))?;
        Ok(self.push_op(v, Op::DepthwiseConv1d { x, w }))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (v, argmax) = pool::max_pool2d_forward(self.value(x), kernel, stride, padding)?;
        Ok(self.push_op(v, Op::MaxPool2d { x, argmax }))
    }

    /// Batch norm over axis 1 using the batch's own statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchNormStats<T>)> {
        let stats = norm::batch_stats(self.value(x))?;
        let (v, cache) = norm::batch_norm_apply(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &stats.mean,
            &stats.var,
            eps,
            true,
        )?;
        let out = self.push_op(v, Op::BatchNorm { x, gamma, beta, cache });
        Ok((
            out,
            BatchNormStats {
                mean: stats.mean,
                var_unbiased: stats.var_unbiased,
            },
        ))
    }

    /// Batch norm over axis 1 with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        let (v, cache) = norm::batch_norm_apply(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mean,
            var,
            eps,
            false,
        )?;
        Ok(self.push_op(v, Op::BatchNorm { x, gamma, beta, cache }))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (v, cache) = norm::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push_op(v, Op::LayerNorm { x, gamma, beta, cache }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = softmax::softmax_forward(self.value(x), axis, false)?;
        Ok(self.push_op(v, Op::Softmax { x, axis, log: false }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = softmax::softmax_forward(self.value(x), axis, true)?;
        Ok(self.push_op(v, Op::Softmax { x, axis, log: true }))
    }

    pub fn interpolate(&mut self, x: Var, target: (usize, usize), mode: InterpMode) -> Result<Var> {
        let v = interp::interpolate_forward(self.value(x), target, mode)?;
        Ok(self.push_op(v, Op::Interpolate { x, mode }))
    }

    /// Selective scan; see [`crate::tensor::kernels::scan`] for shapes and semantics.
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var, imp: ScanImpl) -> Result<Var> {
        let (v, states) = scan::selective_scan_forward(
            self.value(x),
            self.value(delta),
            self.value(a),
            self.value(b),
            self.value(c),
            imp,
        )?;
        Ok(self.push_op(
            v,
            Op::SelectiveScan {
                x,
                delta,
                a,
                b,
                c,
                states,
            },
        ))
    }

    /// `x · w (+ b)` over the last axis of `x`; `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| Error::shape("linear", "rank-0 input"))?;
        let rows = shape.iter().rev().skip(1).product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, width])?
        };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = self.shape(w)[1];
        self.reshape(y, &out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(50.0f64) - 50.0).abs() < 1e-12);
        assert!(softplus(-50.0f64) > 0.0);
        assert!((sigmoid(-800.0f64)).abs() < 1e-300);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn sum_axes_squeezes_or_keeps() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([2, 3, 4], |i| i as f64));
        let s = g.sum_axes(x, &[1], false).unwrap();
        assert_eq!(g.shape(s), &[2, 4]);
        assert_eq!(g.value(s).at(&[0, 0]), 0.0 + 4.0 + 8.0);
        let k = g.mean_axes(x, &[0, 2], true).unwrap();
        assert_eq!(g.shape(k), &[1, 3, 1]);
        let all = g.sum_all(x);
        assert_eq!(g.value(all).item(), (0..24).sum::<usize>() as f64);
    }

    #[test]
    fn linear_handles_token_tensors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([2, 3, 4], |i| i as f64));
        let w = g.constant(Tensor::from_fn([4, 5], |i| (i % 3) as f64));
        let b = g.constant(Tensor::ones([5]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 5]);
    }
}
