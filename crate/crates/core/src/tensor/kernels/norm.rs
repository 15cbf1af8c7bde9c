//! Batch normalization over the channel axis and layer normalization over the last axis.

use crate::error::{Error, Result};
use crate::tensor::{split_at_axis, Real, Tensor};

/// Saved state of a normalization forward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    /// One entry per normalized group (channel for batch norm, row for layer norm).
    pub inv_std: Vec<T>,
    /// True when statistics came from the batch itself (gradient flows through them).
    pub batch_stats: bool,
}

/// Per-channel batch statistics: (mean, biased variance, unbiased variance).
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub var_unbiased: Vec<T>,
}

fn channel_dims(shape: &[usize], channels: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape(
            "batch_norm",
            format!("input {shape:?} does not have {channels} channels on axis 1"),
        ));
    }
    Ok(split_at_axis(shape, 1))
}

pub fn batch_stats<T: Real>(x: &Tensor<T>) -> Result<BatchStats<T>> {
    let c = x.shape().get(1).copied().unwrap_or(0);
    let (outer, c, inner) = channel_dims(x.shape(), c)?;
    let count = outer * inner;
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for o in 0..outer {
            s += d[(o * c + ch) * inner..][..inner].iter().copied().sum::<T>();
        }
        let m = s / T::lit(count as f64);
        let mut v = T::zero();
        for o in 0..outer {
            for &xv in &d[(o * c + ch) * inner..][..inner] {
                v += (xv - m) * (xv - m);
            }
        }
        mean[ch] = m;
        var[ch] = v;
    }
    let var_unbiased = var
        .iter()
        .map(|&v| {
            if count > 1 {
                v / T::lit((count - 1) as f64)
            } else {
                T::zero()
            }
        })
        .collect();
    let var = var.iter().map(|&v| v / T::lit(count as f64)).collect();
    Ok(BatchStats {
        mean,
        var,
        var_unbiased,
    })
}

/// `y = γ·(x − mean)/√(var + eps) + β` per channel.
pub fn batch_norm_apply<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: f64,
    batch_stats: bool,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let c = gamma.numel();
    let (outer, c, inner) = channel_dims(x.shape(), c)?;
    if beta.numel() != c || mean.len() != c || var.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("parameter length mismatch for {c} channels"),
        ));
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
    let d = x.data();
    let (g, b) = (gamma.data(), beta.data());
    let mut xhat = vec![T::zero(); d.len()];
    let mut y = vec![T::zero(); d.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            for i in base..base + inner {
                let h = (d[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = g[ch] * h + b[ch];
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::with_shape_unchecked(shape.clone(), y),
        NormCache {
            xhat: Tensor::with_shape_unchecked(shape, xhat),
            inv_std,
            batch_stats,
        },
    ))
}

/// Returns (dx, dγ, dβ).
pub fn batch_norm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (outer, c, inner) = split_at_axis(grad_out.shape(), 1);
    let count = T::lit((outer * inner) as f64);
    let (g, xh) = (grad_out.data(), cache.xhat.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            for i in base..base + inner {
                dbeta[ch] += g[i];
                dgamma[ch] += g[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            for i in base..base + inner {
                dx[i] = if cache.batch_stats {
                    scale / count * (count * g[i] - dbeta[ch] - xh[i] * dgamma[ch])
                } else {
                    scale * g[i]
                };
            }
        }
    }
    (
        Tensor::with_shape_unchecked(grad_out.shape().to_vec(), dx),
        Tensor::with_shape_unchecked(gamma.shape().to_vec(), dgamma),
        Tensor::with_shape_unchecked(gamma.shape().to_vec(), dbeta),
    )
}

/// Normalizes every row over the last axis, then applies `γ`, `β` of that width.
pub fn layer_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let width = *x.shape().last().unwrap_or(&0);
    if width == 0 || gamma.numel() != width || beta.numel() != width {
        return Err(Error::shape(
            "layer_norm",
            format!("input {:?} vs parameters of length {}", x.shape(), gamma.numel()),
        ));
    }
    let rows = x.numel() / width;
    let d = x.data();
    let mut xhat = vec![T::zero(); d.len()];
    let mut y = vec![T::zero(); d.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let n = T::lit(width as f64);
    for r in 0..rows {
        let row = &d[r * width..(r + 1) * width];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + T::lit(eps)).sqrt();
        inv_std.push(is);
        for j in 0..width {
            let h = (row[j] - mean) * is;
            xhat[r * width + j] = h;
            y[r * width + j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::with_shape_unchecked(shape.clone(), y),
        NormCache {
            xhat: Tensor::with_shape_unchecked(shape, xhat),
            inv_std,
            batch_stats: true,
        },
    ))
}

pub fn layer_norm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let width = gamma.numel();
    let rows = grad_out.numel() / width;
    let (g, xh, gm) = (grad_out.data(), cache.xhat.data(), gamma.data());
    let n = T::lit(width as f64);
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); width];
    let mut dbeta = vec![T::zero(); width];
    for r in 0..rows {
        let base = r * width;
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..width {
            let gg = g[base + j] * gm[j];
            sum_g += gg;
            sum_gx += gg * xh[base + j];
            dgamma[j] += g[base + j] * xh[base + j];
            dbeta[j] += g[base + j];
        }
        let is = cache.inv_std[r];
        for j in 0..width {
            let gg = g[base + j] * gm[j];
            dx[base + j] = is / n * (n * gg - sum_g - xh[base + j] * sum_gx);
        }
    }
    (
        Tensor::with_shape_unchecked(grad_out.shape().to_vec(), dx),
        Tensor::with_shape_unchecked(gamma.shape().to_vec(), dgamma),
        Tensor::with_shape_unchecked(gamma.shape().to_vec(), dbeta),
    )
}
