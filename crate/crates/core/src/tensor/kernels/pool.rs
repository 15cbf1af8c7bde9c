use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::conv::conv_output_size;

/// Max pooling over `[N, C, H, W]` with implicit −∞ padding.
///
/// Returns the pooled map and, per output element, the flat input index that won.
pub fn max_pool2d_forward<T: Real>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("max_pool2d", format!("expected [N,C,H,W], got {s:?}")));
    }
    if kernel == 0 || stride == 0 || padding >= kernel {
        return Err(Error::Config(format!(
            "max_pool2d needs kernel, stride ≥ 1 and padding < kernel (got {kernel}, {stride}, {padding})"
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (Some(oh), Some(ow)) = (
        conv_output_size(h, kernel, stride, padding, 1),
        conv_output_size(w, kernel, stride, padding, 1),
    ) else {
        return Err(Error::Config(format!("max_pool2d output would be empty for {s:?}")));
    };
    let d = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<usize> = None;
                for ki in 0..kernel {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kj in 0..kernel {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let at = base + iy as usize * w + ix as usize;
                        if best.is_none_or(|b| d[at] > d[b]) {
                            best = Some(at);
                        }
                    }
                }
                let b = best.ok_or_else(|| Error::Config("max_pool2d window fully in padding".into()))?;
                out.push(d[b]);
                arg.push(b);
            }
        }
    }
    Ok((Tensor::with_shape_unchecked(vec![n, c, oh, ow], out), arg))
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn scatter_by_index<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gd = gx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        gd[i] += g;
    }
    gx
}
