use serde::{Deserialize, Serialize};

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup from 0 to `lr_max` over `W = round(warmup_fraction · total)` steps, then
/// cosine decay to 0 at `total`.
pub fn lr_schedule(t: f64, total: f64, lr_max: f64, warmup_fraction: f64) -> f64 {
    let w = (warmup_fraction * total).round();
    if t < w {
        lr_max * t / w
    } else if total <= w {
        lr_max
    } else {
        lr_max * 0.5 * (1.0 + (std::f64::consts::PI * (t - w) / (total - w)).cos())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub weight_decay: f64,
    state: Vec<Option<Moments<T>>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            state: Vec::new(),
        }
    }

    /// One update of every parameter that received a gradient; the rest are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) {
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), || None);
        }
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        for (id, g) in grads {
            let p = store.get_mut(*id);
            let st = self.state[id.0].get_or_insert_with(|| Moments {
                m: vec![T::zero(); g.numel()],
                v: vec![T::zero(); g.numel()],
                step: 0,
            });
            st.step += 1;
            let c1 = T::lit(1.0 - BETA1.powi(st.step as i32));
            let c2 = T::lit(1.0 - BETA2.powi(st.step as i32));
            let (lr, wd, eps) = (T::lit(lr), T::lit(self.weight_decay), T::lit(ADAM_EPS));
            for (((pv, &gv), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = b1 * *m + (T::one() - b1) * gv;
                *v = b2 * *v + (T::one() - b2) * gv * gv;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *pv -= lr * (mhat / (vhat.sqrt() + eps) + wd * *pv);
            }
        }
    }
}
