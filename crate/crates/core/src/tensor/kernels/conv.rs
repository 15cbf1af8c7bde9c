//! 2-d convolution via im2col + GEMM, and the depthwise causal 1-d token convolution.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Layout, Real, Tensor};

/// Static geometry of one `conv2d` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `⌊(size + 2·padding − dilation·(kernel−1) − 1)/stride⌋ + 1`, or `None` when not positive.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = size + 2 * padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

impl Conv2dGeometry {
    pub fn new(x: &[usize], w: &[usize], stride: usize, padding: usize, dilation: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected input [N,C,H,W] and weight [F,C,kh,kw], got {x:?} and {w:?}"),
            ));
        }
        if x[1] != w[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} do not match weight {w:?}", x[1]),
            ));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config(format!(
                "conv2d needs stride ≥ 1 and dilation ≥ 1 (got {stride}, {dilation})"
            )));
        }
        let (Some(out_h), Some(out_w)) = (
            conv_output_size(x[2], w[2], stride, padding, dilation),
            conv_output_size(x[3], w[3], stride, padding, dilation),
        ) else {
            return Err(Error::Config(format!(
                "conv2d output would be empty: input {x:?}, kernel {w:?}, stride {stride}, padding {padding}, dilation {dilation}"
            )));
        };
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            height: x[2],
            width: x[3],
            out_channels: w[0],
            kernel_h: w[2],
            kernel_w: w[3],
            stride,
            padding,
            dilation,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Input coordinate sampled by output coordinate `o` at kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dilation) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

/// Unfolds `x` into a `[C·kh·kw, N·oh·ow]` patch matrix.
fn im2col<T: Real>(x: &[T], g: &Conv2dGeometry) -> Vec<T> {
    let p = g.positions();
    let ohw = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.in_channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for n in 0..g.batch {
                    let plane = &x[(n * g.in_channels + c) * g.height * g.width..][..g.height * g.width];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.height) else { continue };
                        let base = n * ohw + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                dst[base + ox] = plane[iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a patch matrix back onto the input grid, summing overlaps.
fn col2im<T: Real>(cols: &[T], g: &Conv2dGeometry) -> Vec<T> {
    let p = g.positions();
    let ohw = g.out_h * g.out_w;
    let mut x = vec![T::zero(); g.batch * g.in_channels * g.height * g.width];
    for c in 0..g.in_channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for n in 0..g.batch {
                    let plane = &mut x[(n * g.in_channels + c) * g.height * g.width..][..g.height * g.width];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.height) else { continue };
                        let base = n * ohw + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                plane[iy * g.width + ix] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, g: &Conv2dGeometry) -> Tensor<T> {
    let cols = im2col(x.data(), g);
    let (f, k, p) = (g.out_channels, g.patch_len(), g.positions());
    let mut tmp = vec![T::zero(); f * p];
    gemm(
        f,
        k,
        p,
        w.data(),
        Layout::Normal,
        &cols,
        Layout::Normal,
        &mut tmp,
        false,
    );
    // [F, N·ohw] → [N, F, ohw]
    let ohw = g.out_h * g.out_w;
    let mut out = vec![T::zero(); f * p];
    for n in 0..g.batch {
        for fi in 0..f {
            out[(n * f + fi) * ohw..][..ohw].copy_from_slice(&tmp[fi * p + n * ohw..][..ohw]);
        }
    }
    Tensor::with_shape_unchecked(g.output_shape().to_vec(), out)
}

/// Gradients w.r.t. input and weight, each computed only when requested.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &Conv2dGeometry,
    want_x: bool,
    want_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (f, k, p) = (g.out_channels, g.patch_len(), g.positions());
    let ohw = g.out_h * g.out_w;
    let mut g2 = vec![T::zero(); f * p];
    for n in 0..g.batch {
        for fi in 0..f {
            g2[fi * p + n * ohw..][..ohw].copy_from_slice(&grad_out.data()[(n * f + fi) * ohw..][..ohw]);
        }
    }
    let gw = want_w.then(|| {
        let cols = im2col(x.data(), g);
        let mut gw = vec![T::zero(); f * k];
        gemm(f, p, k, &g2, Layout::Normal, &cols, Layout::Transposed, &mut gw, false);
        Tensor::with_shape_unchecked(w.shape().to_vec(), gw)
    });
    let gx = want_x.then(|| {
        let mut gcols = vec![T::zero(); k * p];
        gemm(
            k,
            f,
            p,
            w.data(),
            Layout::Transposed,
            &g2,
            Layout::Normal,
            &mut gcols,
            false,
        );
        Tensor::with_shape_unchecked(x.shape().to_vec(), col2im(&gcols, g))
    });
    (gx, gw)
}

/// Causal depthwise convolution over the token axis.
///
/// `x: [N, L, E]`, `w: [E, K]`; `y[n,t,e] = Σ_j w[e,j] · x[n, t−(K−1)+j, e]` with zeros before the sequence start.
pub fn depthwise_conv1d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, l, e, k) = depthwise_dims(x.shape(), w.shape())?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); n * l * e];
    for b in 0..n {
        for t in 0..l {
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(k - 1) else {
                    continue;
                };
                let xrow = &xd[(b * l + src) * e..][..e];
                let orow = &mut out[(b * l + t) * e..][..e];
                for c in 0..e {
                    orow[c] += wd[c * k + j] * xrow[c];
                }
            }
        }
    }
    Ok(Tensor::with_shape_unchecked(vec![n, l, e], out))
}

pub fn depthwise_conv1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, l, e, k) = depthwise_dims(x.shape(), w.shape()).expect("validated in forward");
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![T::zero(); n * l * e];
    let mut gw = vec![T::zero(); e * k];
    for b in 0..n {
        for t in 0..l {
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(k - 1) else {
                    continue;
                };
                for c in 0..e {
                    let go = gd[(b * l + t) * e + c];
                    gx[(b * l + src) * e + c] += wd[c * k + j] * go;
                    gw[c * k + j] += xd[(b * l + src) * e + c] * go;
                }
            }
        }
    }
    (
        Tensor::with_shape_unchecked(x.shape().to_vec(), gx),
        Tensor::with_shape_unchecked(w.shape().to_vec(), gw),
    )
}

fn depthwise_dims(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if x.len() != 3 || w.len() != 2 || x[2] != w[0] {
        return Err(Error::shape(
            "depthwise_conv1d",
            format!("expected x [N,L,E] and w [E,K], got {x:?} and {w:?}"),
        ));
    }
    Ok((x[0], x[1], x[2], w[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(5, 3, 1, 1, 1), Some(5));
        assert_eq!(conv_output_size(5, 3, 2, 0, 2), Some(1));
        assert_eq!(conv_output_size(224, 7, 2, 3, 1), Some(112));
        assert_eq!(conv_output_size(2, 3, 1, 0, 2), None);
    }

    #[test]
    fn empty_output_is_a_configuration_error() {
        let err = Conv2dGeometry::new(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn causal_conv_only_looks_back() {
        let x = Tensor::<f64>::from_f64([1, 3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::<f64>::from_f64([1, 2], &[10.0, 1.0]).unwrap();
        let y = depthwise_conv1d_forward(&x, &w).unwrap();
        assert_eq!(y.data(), &[1.0, 12.0, 23.0]);
    }
}
