use crate::error::{Error, Result};
use crate::tensor::{numel, split_at_axis, strides, Real, Tensor};

use super::broadcast::for_each_offset;

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

pub fn permute<T: Real>(t: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape(
            "permute",
            format!("{perm:?} is not a permutation of {rank} axes"),
        ));
    }
    let in_st = strides(t.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
    let data = t.data();
    let mut out = vec![T::zero(); t.numel()];
    for_each_offset(&out_shape, &src, &src, |o, i, _| out[o] = data[i]);
    Ok(Tensor::with_shape_unchecked(out_shape, out))
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
    check_axis("concat", first.shape(), axis)?;
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} does not match {:?} off axis {axis}", p.shape(), first.shape()),
            ));
        }
        out_shape[axis] += p.shape()[axis];
    }
    let (outer, total, inner) = split_at_axis(&out_shape, axis);
    let mut out = vec![T::zero(); numel(&out_shape)];
    let mut offset = 0;
    for p in parts {
        let len = p.shape()[axis];
        let src = p.data();
        for o in 0..outer {
            let dst = (o * total + offset) * inner;
            out[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        offset += len;
    }
    Ok(Tensor::with_shape_unchecked(out_shape, out))
}

pub fn slice<T: Real>(t: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis("slice", t.shape(), axis)?;
    if len == 0 || start + len > t.shape()[axis] {
        return Err(Error::shape(
            "slice",
            format!("[{start}, {}) outside axis {axis} of {:?}", start + len, t.shape()),
        ));
    }
    let (outer, n, inner) = split_at_axis(t.shape(), axis);
    let mut out_shape = t.shape().to_vec();
    out_shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = (o * n + start) * inner;
        out.extend_from_slice(&t.data()[s..s + len * inner]);
    }
    Ok(Tensor::with_shape_unchecked(out_shape, out))
}

/// Adjoint of [`slice`]: places `g` at `[start, start+len)` of a zero tensor of `full_shape`.
pub fn unslice<T: Real>(g: &Tensor<T>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, n, inner) = split_at_axis(full_shape, axis);
    let len = g.shape()[axis];
    let mut out = vec![T::zero(); numel(full_shape)];
    for o in 0..outer {
        let d = (o * n + start) * inner;
        out[d..d + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::with_shape_unchecked(full_shape.to_vec(), out)
}

/// Gathers entries `index` along `axis`; indices may repeat.
pub fn index_select<T: Real>(t: &Tensor<T>, axis: usize, index: &[usize]) -> Result<Tensor<T>> {
    check_axis("index_select", t.shape(), axis)?;
    let (outer, n, inner) = split_at_axis(t.shape(), axis);
    if index.is_empty() || index.iter().any(|&i| i >= n) {
        return Err(Error::shape(
            "index_select",
            format!("indices must be non-empty and below {n}"),
        ));
    }
    let mut out_shape = t.shape().to_vec();
    out_shape[axis] = index.len();
    let mut out = Vec::with_capacity(outer * index.len() * inner);
    for o in 0..outer {
        for &i in index {
            let s = (o * n + i) * inner;
            out.extend_from_slice(&t.data()[s..s + inner]);
        }
    }
    Ok(Tensor::with_shape_unchecked(out_shape, out))
}

/// Adds the slices of `src` into a zero tensor whose `axis` has length `size`, slice `j`
/// landing at position `index[j]`. Adjoint of [`index_select`].
pub fn index_add<T: Real>(src: &Tensor<T>, axis: usize, index: &[usize], size: usize) -> Result<Tensor<T>> {
    check_axis("index_add", src.shape(), axis)?;
    let (outer, m, inner) = split_at_axis(src.shape(), axis);
    if index.len() != m || index.iter().any(|&i| i >= size) {
        return Err(Error::shape(
            "index_add",
            format!("{} indices below {size} required for axis of length {m}", m),
        ));
    }
    let mut out_shape = src.shape().to_vec();
    out_shape[axis] = size;
    let mut out = vec![T::zero(); numel(&out_shape)];
    for o in 0..outer {
        for (j, &i) in index.iter().enumerate() {
            let s = (o * m + j) * inner;
            let d = (o * size + i) * inner;
            for k in 0..inner {
                out[d + k] += src.data()[s + k];
            }
        }
    }
    Ok(Tensor::with_shape_unchecked(out_shape, out))
}

/// Maximum along `axis` (kept as size 1) and the flat input offset of each winner.
/// Ties resolve to the lowest index.
pub fn max_along<T: Real>(t: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    check_axis("max", t.shape(), axis)?;
    let (outer, n, inner) = split_at_axis(t.shape(), axis);
    let mut out_shape = t.shape().to_vec();
    out_shape[axis] = 1;
    let mut vals = Vec::with_capacity(outer * inner);
    let mut arg = Vec::with_capacity(outer * inner);
    let d = t.data();
    for o in 0..outer {
        for i in 0..inner {
            let mut best = o * n * inner + i;
            for j in 1..n {
                let at = (o * n + j) * inner + i;
                if d[at] > d[best] {
                    best = at;
                }
            }
            vals.push(d[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::with_shape_unchecked(out_shape, vals), arg))
}
