use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMode {
    Nearest,
    /// Corner-aligned bilinear sampling.
    Bilinear,
}

/// Per output coordinate: (lower source index, upper source index, weight of the upper one).
fn sample_table(input: usize, output: usize, mode: InterpMode) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| match mode {
            InterpMode::Nearest => {
                let i = (o * input) / output;
                (i, i, 0.0)
            }
            InterpMode::Bilinear => {
                if output == 1 || input == 1 {
                    return (0, 0, 0.0);
                }
                let src = o as f64 * (input - 1) as f64 / (output - 1) as f64;
                let lo = (src.floor() as usize).min(input - 1);
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            }
        })
        .collect()
}

fn dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::shape(
            "interpolate",
            format!("expected [N,C,H,W], got {shape:?}"),
        ));
    }
    Ok((shape[0] * shape[1], shape[2], shape[3]))
}

pub fn interpolate_forward<T: Real>(x: &Tensor<T>, target: (usize, usize), mode: InterpMode) -> Result<Tensor<T>> {
    let (planes, h, w) = dims(x.shape())?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!("interpolate target {target:?} must be positive")));
    }
    let ty = sample_table(h, th, mode);
    let tx = sample_table(w, tw, mode);
    let d = x.data();
    let mut out = Vec::with_capacity(planes * th * tw);
    for p in 0..planes {
        let src = &d[p * h * w..(p + 1) * h * w];
        for &(y0, y1, wy) in &ty {
            let (wy1, wy0) = (T::lit(wy), T::lit(1.0 - wy));
            for &(x0, x1, wx) in &tx {
                let (wx1, wx0) = (T::lit(wx), T::lit(1.0 - wx));
                let top = src[y0 * w + x0] * wx0 + src[y0 * w + x1] * wx1;
                let bottom = src[y1 * w + x0] * wx0 + src[y1 * w + x1] * wx1;
                out.push(top * wy0 + bottom * wy1);
            }
        }
    }
    let s = x.shape();
    Ok(Tensor::with_shape_unchecked(vec![s[0], s[1], th, tw], out))
}

pub fn interpolate_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize], mode: InterpMode) -> Tensor<T> {
    let (planes, h, w) = dims(input_shape).expect("validated in forward");
    let (th, tw) = (grad_out.shape()[2], grad_out.shape()[3]);
    let ty = sample_table(h, th, mode);
    let tx = sample_table(w, tw, mode);
    let g = grad_out.data();
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        let src = &g[p * th * tw..(p + 1) * th * tw];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let (wy1, wy0) = (T::lit(wy), T::lit(1.0 - wy));
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let (wx1, wx0) = (T::lit(wx), T::lit(1.0 - wx));
                let go = src[oy * tw + ox];
                dst[y0 * w + x0] += go * wy0 * wx0;
                dst[y0 * w + x1] += go * wy0 * wx1;
                dst[y1 * w + x0] += go * wy1 * wx0;
                dst[y1 * w + x1] += go * wy1 * wx1;
            }
        }
    }
    Tensor::with_shape_unchecked(input_shape.to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_pixel_fills_the_target() {
        let x = Tensor::<f64>::full([1, 1, 1, 1], 3.25);
        for mode in [InterpMode::Nearest, InterpMode::Bilinear] {
            let y = interpolate_forward(&x, (2, 2), mode).unwrap();
            assert_eq!(y.data(), &[3.25; 4]);
        }
    }

    #[test]
    fn bilinear_reproduces_a_linear_ramp() {
        // f(y, x) = 2y + 0.5x on a 3×4 grid; corner-aligned resampling to 5×7 samples the same plane
        let x = Tensor::<f64>::from_fn([1, 1, 3, 4], |i| 2.0 * (i / 4) as f64 + 0.5 * (i % 4) as f64);
        let y = interpolate_forward(&x, (5, 7), InterpMode::Bilinear).unwrap();
        for oy in 0..5 {
            for ox in 0..7 {
                let sy = oy as f64 * 2.0 / 4.0;
                let sx = ox as f64 * 3.0 / 6.0;
                assert!((y.at(&[0, 0, oy, ox]) - (2.0 * sy + 0.5 * sx)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearest_upsample_then_subsample_round_trips() {
        let x = Tensor::<f64>::from_fn([2, 3, 4, 5], |i| i as f64);
        let up = interpolate_forward(&x, (8, 10), InterpMode::Nearest).unwrap();
        let mut sub = Vec::new();
        for p in 0..6 {
            for y in (0..8).step_by(2) {
                for xx in (0..10).step_by(2) {
                    sub.push(up.data()[p * 80 + y * 10 + xx]);
                }
            }
        }
        assert_eq!(sub, x.data());
    }
}
