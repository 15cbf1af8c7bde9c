use crate::error::{Error, Result};
use crate::tensor::{split_at_axis, Real, Tensor};

fn check(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    Ok(split_at_axis(shape, axis))
}

/// Max-subtracted softmax (or log-softmax) along `axis`.
pub fn softmax_forward<T: Real>(x: &Tensor<T>, axis: usize, log: bool) -> Result<Tensor<T>> {
    let (outer, n, inner) = check(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut m = T::neg_infinity();
            for j in 0..n {
                m = m.max(d[at(j)]);
            }
            let mut z = T::zero();
            for j in 0..n {
                let e = (d[at(j)] - m).exp();
                out[at(j)] = e;
                z += e;
            }
            if log {
                let lz = z.ln();
                for j in 0..n {
                    out[at(j)] = d[at(j)] - m - lz;
                }
            } else {
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
    }
    Ok(Tensor::with_shape_unchecked(x.shape().to_vec(), out))
}

/// Input gradient given the forward output `y` (probabilities or log-probabilities).
pub fn softmax_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>, axis: usize, log: bool) -> Tensor<T> {
    let (outer, n, inner) = split_at_axis(y.shape(), axis);
    let (yd, g) = (y.data(), grad_out.data());
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            if log {
                let s: T = (0..n).map(|j| g[at(j)]).sum();
                for j in 0..n {
                    gx[at(j)] = g[at(j)] - yd[at(j)].exp() * s;
                }
            } else {
                let s: T = (0..n).map(|j| g[at(j)] * yd[at(j)]).sum();
                for j in 0..n {
                    gx[at(j)] = yd[at(j)] * (g[at(j)] - s);
                }
            }
        }
    }
    Tensor::with_shape_unchecked(y.shape().to_vec(), gx)
}
