use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Real, Tensor};

/// Right-aligned broadcast of two shapes (size-1 dimensions stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        *o = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(
                    "broadcast",
                    format!("{a:?} and {b:?} are not broadcast-compatible"),
                ))
            }
        };
    }
    Ok(out)
}

/// Strides that read a tensor of `shape` as if it had `out_shape` (zero on stretched axes).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let off = out_shape.len() - shape.len();
    let st = strides(shape);
    (0..out_shape.len())
        .map(|i| if i < off || shape[i - off] == 1 { 0 } else { st[i - off] })
        .collect()
}

/// Visits every position of `out_shape` in row-major order, passing the linear output
/// index together with the matching offsets under strides `sa` and `sb`.
pub(crate) fn for_each_offset(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel(&out_shape[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..outer {
        let base = o * inner;
        for j in 0..inner {
            f(base + j, oa + j * ia, ob + j * ib);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Elementwise `f(a, b)` with broadcasting.
pub fn binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (da, db) = (a.data(), b.data());
    let mut out = vec![T::zero(); numel(&out_shape)];
    for_each_offset(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(da[ia], db[ib]));
    Ok(Tensor::with_shape_unchecked(out_shape, out))
}

/// Sums `t` down to `shape`, the reverse of broadcasting `shape` up to `t.shape()`.
pub fn sum_to_shape<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape() == shape {
        return t.clone();
    }
    let src = strides(t.shape());
    let dst = broadcast_strides(shape, t.shape());
    let data = t.data();
    let mut out = vec![T::zero(); numel(shape)];
    for_each_offset(t.shape(), &src, &dst, |_, is, id| out[id] += data[is]);
    Tensor::with_shape_unchecked(shape.to_vec(), out)
}

/// Stretches `t` to `shape` (which `t` must broadcast to).
pub fn broadcast_to<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape() == shape {
        return t.clone();
    }
    let src = broadcast_strides(t.shape(), shape);
    let data = t.data();
    let mut out = vec![T::zero(); numel(shape)];
    for_each_offset(shape, &src, &src, |o, is, _| out[o] = data[is]);
    Tensor::with_shape_unchecked(shape.to_vec(), out)
}
