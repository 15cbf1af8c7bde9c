//! Selective state-space scan with zero-order-hold discretization.
//!
//! Shapes: `x, Δ: [N, L, D]`, `A: [D, S]` (diagonal per channel), `B, C: [N, L, S]`.
//! Per batch row, channel `d` and state `s`:
//!
//! ```text
//! Ā_k = exp(Δ_k·A),  B̄_k = (exp(Δ_k·A) − 1)/A · B_k,  h_k = Ā_k·h_{k−1} + B̄_k·x_k,  y_k = Σ_s C_k·h_k
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Below this |A| the input factor `(e^{ΔA} − 1)/A` is replaced by its limit `Δ`.
pub const ZOH_LIMIT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanImpl {
    /// Step-by-step recurrence.
    #[default]
    Sequential,
    /// Work-efficient prefix scan over `(Ā, B̄x)` pairs.
    Associative,
}

/// Zero-order hold for one diagonal entry: returns `(Ā, φ)` with `B̄ = φ·B`.
#[inline]
pub fn zoh<T: Real>(delta: T, a: T) -> (T, T) {
    let z = delta * a;
    let a_bar = z.exp();
    let phi = if a.abs() < T::lit(ZOH_LIMIT_THRESHOLD) {
        delta
    } else {
        z.exp_m1() / a
    };
    (a_bar, phi)
}

/// `(∂φ/∂Δ, ∂φ/∂A)` for `φ = (e^{ΔA} − 1)/A`.
#[inline]
fn zoh_phi_grads<T: Real>(delta: T, a: T, a_bar: T) -> (T, T) {
    let z = delta * a;
    let d_a = if z.abs() < T::lit(1e-3) || a.abs() < T::lit(ZOH_LIMIT_THRESHOLD) {
        // Δ²·(1/2 + z/3 + z²/8 + z³/30)
        delta * delta * (T::lit(0.5) + z * (T::lit(1.0 / 3.0) + z * (T::lit(0.125) + z * T::lit(1.0 / 30.0))))
    } else {
        (z * a_bar - z.exp_m1()) / (a * a)
    };
    (a_bar, d_a)
}

/// Discretizes elementwise-aligned tensors: `Ā = exp(Δ·A)`, `B̄ = (exp(Δ·A) − 1)/A · B`.
pub fn discretize<T: Real>(delta: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if delta.shape() != a.shape() || delta.shape() != b.shape() {
        return Err(Error::shape(
            "discretize",
            format!("Δ {:?}, A {:?}, B {:?} must match", delta.shape(), a.shape(), b.shape()),
        ));
    }
    let mut a_bar = Vec::with_capacity(a.numel());
    let mut b_bar = Vec::with_capacity(a.numel());
    for ((&dt, &av), &bv) in delta.data().iter().zip(a.data()).zip(b.data()) {
        let (ab, phi) = zoh(dt, av);
        a_bar.push(ab);
        b_bar.push(phi * bv);
    }
    Ok((
        Tensor::with_shape_unchecked(a.shape().to_vec(), a_bar),
        Tensor::with_shape_unchecked(a.shape().to_vec(), b_bar),
    ))
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    n: usize,
    l: usize,
    d: usize,
    s: usize,
}

fn dims(x: &[usize], dt: &[usize], a: &[usize], b: &[usize], c: &[usize]) -> Result<Dims> {
    let ok = x.len() == 3
        && dt == x
        && a.len() == 2
        && a[0] == x[2]
        && b.len() == 3
        && b[..2] == x[..2]
        && b[2] == a[1]
        && c == b;
    if !ok {
        return Err(Error::shape(
            "selective_scan",
            format!("x {x:?}, Δ {dt:?}, A {a:?}, B {b:?}, C {c:?} are inconsistent"),
        ));
    }
    Ok(Dims {
        n: x[0],
        l: x[1],
        d: x[2],
        s: a[1],
    })
}

/// Inclusive prefix scan under an associative `combine(earlier, later)`.
///
/// Recursive pairwise reduction: O(n) combines, O(log n) depth.
pub fn inclusive_scan<E: Copy>(items: &[E], combine: &impl Fn(E, E) -> E) -> Vec<E> {
    let n = items.len();
    if n <= 1 {
        return items.to_vec();
    }
    let pairs: Vec<E> = items.chunks_exact(2).map(|p| combine(p[0], p[1])).collect();
    let scanned = inclusive_scan(&pairs, combine);
    let mut out = Vec::with_capacity(n);
    out.push(items[0]);
    for i in 1..n {
        out.push(if i % 2 == 1 {
            scanned[i / 2]
        } else {
            combine(scanned[i / 2 - 1], items[i])
        });
    }
    out
}

/// Runs the scan; returns `y: [N, L, D]` and all hidden states `h: [N, L, D, S]`.
pub fn selective_scan_forward<T: Real>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    imp: ScanImpl,
) -> Result<(Tensor<T>, Vec<T>)> {
    let Dims { n, l, d, s } = dims(x.shape(), delta.shape(), a.shape(), b.shape(), c.shape())?;
    let (xd, dtd, ad, bd, cd) = (x.data(), delta.data(), a.data(), b.data(), c.data());
    let mut h = vec![T::zero(); n * l * d * s];
    match imp {
        ScanImpl::Sequential => {
            for bi in 0..n {
                for k in 0..l {
                    let tok = bi * l + k;
                    for ch in 0..d {
                        let (dt, xv) = (dtd[tok * d + ch], xd[tok * d + ch]);
                        for st in 0..s {
                            let (a_bar, phi) = zoh(dt, ad[ch * s + st]);
                            let prev = if k > 0 {
                                h[((tok - 1) * d + ch) * s + st]
                            } else {
                                T::zero()
                            };
                            h[(tok * d + ch) * s + st] = a_bar * prev + phi * bd[tok * s + st] * xv;
                        }
                    }
                }
            }
        }
        ScanImpl::Associative => {
            let combine = |(a1, b1): (T, T), (a2, b2): (T, T)| (a2 * a1, a2 * b1 + b2);
            let mut pairs = Vec::with_capacity(l);
            for bi in 0..n {
                for ch in 0..d {
                    for st in 0..s {
                        pairs.clear();
                        for k in 0..l {
                            let tok = bi * l + k;
                            let (a_bar, phi) = zoh(dtd[tok * d + ch], ad[ch * s + st]);
                            pairs.push((a_bar, phi * bd[tok * s + st] * xd[tok * d + ch]));
                        }
                        for (k, (_, hk)) in inclusive_scan(&pairs, &combine).into_iter().enumerate() {
                            h[((bi * l + k) * d + ch) * s + st] = hk;
                        }
                    }
                }
            }
        }
    }
    let mut y = vec![T::zero(); n * l * d];
    for tok in 0..n * l {
        let crow = &cd[tok * s..(tok + 1) * s];
        for ch in 0..d {
            let hrow = &h[(tok * d + ch) * s..][..s];
            y[tok * d + ch] = hrow.iter().zip(crow).map(|(&hv, &cv)| hv * cv).sum();
        }
    }
    Ok((Tensor::with_shape_unchecked(vec![n, l, d], y), h))
}

/// Gradients of the scan w.r.t. `(x, Δ, A, B, C)`.
pub struct ScanGrads<T> {
    pub x: Tensor<T>,
    pub delta: Tensor<T>,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
}

/// Reverse-time adjoint recurrence using the states saved by the forward pass.
pub fn selective_scan_backward<T: Real>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    states: &[T],
    grad_y: &Tensor<T>,
) -> ScanGrads<T> {
    let Dims { n, l, d, s } =
        dims(x.shape(), delta.shape(), a.shape(), b.shape(), c.shape()).expect("validated in forward");
    let (xd, dtd, ad, bd, cd, gy) = (x.data(), delta.data(), a.data(), b.data(), c.data(), grad_y.data());
    let mut gx = vec![T::zero(); n * l * d];
    let mut gdt = vec![T::zero(); n * l * d];
    let mut ga = vec![T::zero(); d * s];
    let mut gb = vec![T::zero(); n * l * s];
    let mut gc = vec![T::zero(); n * l * s];
    let mut gh = vec![T::zero(); d * s];
    for bi in 0..n {
        gh.iter_mut().for_each(|v| *v = T::zero());
        for k in (0..l).rev() {
            let tok = bi * l + k;
            for ch in 0..d {
                let (dt, xv, g) = (dtd[tok * d + ch], xd[tok * d + ch], gy[tok * d + ch]);
                for st in 0..s {
                    let idx = ch * s + st;
                    let hk = states[(tok * d + ch) * s + st];
                    gc[tok * s + st] += g * hk;
                    let carry = gh[idx] + g * cd[tok * s + st];
                    let av = ad[idx];
                    let (a_bar, phi) = zoh(dt, av);
                    let (dphi_ddt, dphi_da) = zoh_phi_grads(dt, av, a_bar);
                    let prev = if k > 0 {
                        states[((tok - 1) * d + ch) * s + st]
                    } else {
                        T::zero()
                    };
                    let bv = bd[tok * s + st];
                    let g_abar = carry * prev;
                    let g_phi = carry * bv * xv;
                    gx[tok * d + ch] += carry * phi * bv;
                    gb[tok * s + st] += carry * phi * xv;
                    gdt[tok * d + ch] += g_abar * a_bar * av + g_phi * dphi_ddt;
                    ga[idx] += g_abar * a_bar * dt + g_phi * dphi_da;
                    gh[idx] = carry * a_bar;
                }
            }
        }
    }
    ScanGrads {
        x: Tensor::with_shape_unchecked(x.shape().to_vec(), gx),
        delta: Tensor::with_shape_unchecked(delta.shape().to_vec(), gdt),
        a: Tensor::with_shape_unchecked(a.shape().to_vec(), ga),
        b: Tensor::with_shape_unchecked(b.shape().to_vec(), gb),
        c: Tensor::with_shape_unchecked(c.shape().to_vec(), gc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoh_scalar_closed_form() {
        // Δ·A = −ln 2 → Ā = 1/2, B̄ = (1/2 − 1)/A · B
        let a = -2.0f64;
        let dt = 2f64.ln() / 2.0;
        let (a_bar, phi) = zoh(dt, a);
        assert!((a_bar - 0.5).abs() < 1e-15);
        assert!((phi - (-0.5 / a)).abs() < 1e-15);
    }

    #[test]
    fn zoh_limits() {
        let (a_bar, phi) = zoh(0.3f64, 1e-12);
        assert!((a_bar - 1.0).abs() < 1e-11);
        assert_eq!(phi, 0.3);
        let (a_bar, phi) = zoh(1e-14f64, -3.0);
        assert!((a_bar - 1.0).abs() < 1e-13 && phi.abs() < 1e-13);
    }

    #[test]
    fn phi_derivative_series_matches_closed_form_at_the_switch() {
        let dt = 0.5f64;
        for &a in &[-1.9e-3, -2.1e-3, -0.5] {
            let (a_bar, _) = zoh(dt, a);
            let (_, analytic) = zoh_phi_grads(dt, a, a_bar);
            let h = 1e-6;
            let numeric = (zoh(dt, a + h).1 - zoh(dt, a - h).1) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-8, "a={a}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn prefix_scan_matches_fold_for_every_length() {
        for len in 0..20 {
            let items: Vec<u64> = (1..=len as u64).collect();
            let got = inclusive_scan(&items, &|a, b| a + b);
            let want: Vec<u64> = items
                .iter()
                .scan(0, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect();
            assert_eq!(got, want);
        }
        // non-commutative operator: spans must stay ordered
        let items: Vec<(u32, u32)> = (0..7).map(|i| (i, i)).collect();
        let spans = inclusive_scan(&items, &|(a, _), (_, d)| (a, d));
        assert!(spans.iter().enumerate().all(|(i, &(lo, hi))| lo == 0 && hi == i as u32));
    }
}
