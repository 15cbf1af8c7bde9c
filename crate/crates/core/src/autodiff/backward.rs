//! Vector-Jacobian products for every recorded operation.

use super::ops::sigmoid;
use super::{Node, Op, Var};
use crate::tensor::kernels::{broadcast, conv, interp, norm, pool, scan, shape, softmax};
use crate::tensor::{gemm, Layout, Real, Tensor};

pub(super) fn parents<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::AddScalar(x)
        | Op::Exp(x)
        | Op::Log(x)
        | Op::Sigmoid(x)
        | Op::Relu(x)
        | Op::Softplus(x)
        | Op::Silu(x)
        | Op::SumTo(x)
        | Op::Reshape(x) => vec![*x],
        Op::MaxAlong { x, .. }
        | Op::Slice { x, .. }
        | Op::Permute { x, .. }
        | Op::IndexSelect { x, .. }
        | Op::IndexAdd { x, .. }
        | Op::MaxPool2d { x, .. }
        | Op::Softmax { x, .. }
        | Op::Interpolate { x, .. } => vec![*x],
        Op::Concat { parts, .. } => parts.clone(),
        Op::Conv2d { x, w, .. } | Op::DepthwiseConv1d { x, w } => vec![*x, *w],
        Op::BatchNorm { x, gamma, beta, .. } | Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::SelectiveScan { x, delta, a, b, c, .. } => vec![*x, *delta, *a, *b, *c],
    }
}

fn elementwise<T: Real>(g: &Tensor<T>, v: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    g.zip_map(v, f)
}

/// Gradient contributions of node `i` to its parents, given the node's output gradient `g`.
pub(super) fn backprop<T: Real>(nodes: &[Node<T>], i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].requires_grad;
    let out = &nodes[i].value;
    let bcast = |t: &Tensor<T>, v: Var| broadcast::sum_to_shape(t, val(v).shape());
    let mut res = Vec::new();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in &[*a, *b] {
                if needs(p) {
                    res.push((p, bcast(g, p)));
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                res.push((*a, bcast(g, *a)));
            }
            if needs(*b) {
                res.push((*b, bcast(&g.scale(-T::one()), *b)));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let t = broadcast::binary(g, val(*b), |x, y| x * y).expect("forward shapes");
                res.push((*a, bcast(&t, *a)));
            }
            if needs(*b) {
                let t = broadcast::binary(g, val(*a), |x, y| x * y).expect("forward shapes");
                res.push((*b, bcast(&t, *b)));
            }
        }
        Op::Div(a, b) => {
            if needs(*a) {
                let t = broadcast::binary(g, val(*b), |x, y| x / y).expect("forward shapes");
                res.push((*a, bcast(&t, *a)));
            }
            if needs(*b) {
                // d(a/b)/db = −(a/b)/b = −out/b
                let q = broadcast::binary(out, val(*b), |x, y| x / y).expect("forward shapes");
                let t = elementwise(g, &q, |x, y| -x * y);
                res.push((*b, bcast(&t, *b)));
            }
        }
        Op::Scale(x, c) => res.push((*x, g.scale(*c))),
        Op::AddScalar(x) => res.push((*x, g.clone())),
        Op::Exp(x) => res.push((*x, elementwise(g, out, |a, y| a * y))),
        Op::Log(x) => res.push((*x, elementwise(g, val(*x), |a, v| a / v))),
        Op::Sigmoid(x) => res.push((*x, elementwise(g, out, |a, y| a * y * (T::one() - y)))),
        Op::Relu(x) => res.push((
            *x,
            elementwise(g, val(*x), |a, v| if v > T::zero() { a } else { T::zero() }),
        )),
        Op::Softplus(x) => res.push((*x, elementwise(g, val(*x), |a, v| a * sigmoid(v)))),
        Op::Silu(x) => res.push((
            *x,
            elementwise(g, val(*x), |a, v| {
                let s = sigmoid(v);
                a * (s + v * s * (T::one() - s))
            }),
        )),
        Op::SumTo(x) => res.push((*x, broadcast::broadcast_to(g, val(*x).shape()))),
        Op::MaxAlong { x, argmax } => res.push((*x, pool::scatter_by_index(g, argmax, val(*x).shape()))),
        Op::Concat { parts, axis } => {
            let mut start = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if needs(p) {
                    res.push((p, shape::slice(g, *axis, start, len).expect("forward shapes")));
                }
                start += len;
            }
        }
        Op::Slice { x, axis, start } => res.push((*x, shape::unslice(g, val(*x).shape(), *axis, *start))),
        Op::Reshape(x) => res.push((*x, g.reshape(val(*x).shape().to_vec()).expect("same size"))),
        Op::Permute { x, perm } => res.push((
            *x,
            shape::permute(g, &shape::inverse_permutation(perm)).expect("valid permutation"),
        )),
        Op::IndexSelect { x, axis, index } => res.push((
            *x,
            shape::index_add(g, *axis, index, val(*x).shape()[*axis]).expect("forward indices"),
        )),
        Op::IndexAdd { x, axis, index } => {
            res.push((*x, shape::index_select(g, *axis, index).expect("forward indices")))
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if needs(*a) {
                let mut ga = vec![T::zero(); m * k];
                gemm(
                    m,
                    n,
                    k,
                    g.data(),
                    Layout::Normal,
                    val(*b).data(),
                    Layout::Transposed,
                    &mut ga,
                    false,
                );
                res.push((*a, Tensor::with_shape_unchecked(sa.to_vec(), ga)));
            }
            if needs(*b) {
                let mut gb = vec![T::zero(); k * n];
                gemm(
                    k,
                    m,
                    n,
                    val(*a).data(),
                    Layout::Transposed,
                    g.data(),
                    Layout::Normal,
                    &mut gb,
                    false,
                );
                res.push((*b, Tensor::with_shape_unchecked(sb.to_vec(), gb)));
            }
        }
        Op::Conv2d { x, w, geom } => {
            let (gx, gw) = conv::conv2d_backward(val(*x), val(*w), g, geom, needs(*x), needs(*w));
            res.extend(gx.map(|t| (*x, t)));
            res.extend(gw.map(|t| (*w, t)));
        }
        Op::DepthwiseConv1d { x, w } => {
            let (gx, gw) = conv::depthwise_conv1d_backward(val(*x), val(*w), g);
            res.push((*x, gx));
            res.push((*w, gw));
        }
        Op::MaxPool2d { x, argmax } => res.push((*x, pool::scatter_by_index(g, argmax, val(*x).shape()))),
        Op::BatchNorm { x, gamma, beta, cache } => {
            let (gx, gg, gb) = norm::batch_norm_backward(g, val(*gamma), cache);
            res.extend([(*x, gx), (*gamma, gg), (*beta, gb)]);
        }
        Op::LayerNorm { x, gamma, beta, cache } => {
            let (gx, gg, gb) = norm::layer_norm_backward(g, val(*gamma), cache);
            res.extend([(*x, gx), (*gamma, gg), (*beta, gb)]);
        }
        Op::Softmax { x, axis, log } => res.push((*x, softmax::softmax_backward(out, g, *axis, *log))),
        Op::Interpolate { x, mode } => res.push((*x, interp::interpolate_backward(g, val(*x).shape(), *mode))),
        Op::SelectiveScan {
            x,
            delta,
            a,
            b,
            c,
            states,
        } => {
            let grads = scan::selective_scan_backward(val(*x), val(*delta), val(*a), val(*b), val(*c), states, g);
            res.extend([
                (*x, grads.x),
                (*delta, grads.delta),
                (*a, grads.a),
                (*b, grads.b),
                (*c, grads.c),
            ]);
        }
    }
    res
}
