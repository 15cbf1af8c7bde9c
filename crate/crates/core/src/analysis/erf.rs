use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{AfmNet, Tap};
use crate::nn::{Mode, ParamStore, Session};
use crate::tensor::{Real, Tensor};

/// Entries above this count toward an ERF's support.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Absolute input gradient of the center unit of `feature`, summed over channels and batch,
/// scaled so the maximum is 1. A zero gradient gives a zero map.
///
/// `input: [N, C, H, W]` must be a variable; `feature: [N, K, h, w]`.
pub fn input_gradient_map<T: Real>(g: &mut Graph<T>, input: Var, feature: Var) -> Result<Tensor<T>> {
    let fs = g.shape(feature).to_vec();
    if fs.len() != 4 {
        return Err(Error::shape("erf", format!("tap must be [N, K, h, w], got {fs:?}")));
    }
    let row = g.slice(feature, 2, fs[2] / 2, 1)?;
    let unit = g.slice(row, 3, fs[3] / 2, 1)?;
    let objective = g.sum_all(unit);
    g.backward(objective)?;
    let shape = g.shape(input).to_vec();
    let (h, w) = (shape[2], shape[3]);
    let mut map = Tensor::<T>::zeros([h, w]);
    if let Some(grad) = g.grad(input) {
        let out = map.data_mut();
        for plane in grad.data().chunks(h * w) {
            for (o, &v) in out.iter_mut().zip(plane) {
                *o += v.abs();
            }
        }
    }
    Ok(normalize_max(map))
}

pub(crate) fn normalize_max<T: Real>(map: Tensor<T>) -> Tensor<T> {
    let peak = map.max_abs();
    if peak > T::zero() {
        map.map(|v| v / peak)
    } else {
        map
    }
}

/// Effective receptive field of the finest map of `tap` for `images: [N, C, H, W]`, in
/// inference mode. With several images the gradients are averaged before normalization.
pub fn erf_map<T: Real>(net: &AfmNet, store: &ParamStore<T>, images: &Tensor<T>, tap: Tap) -> Result<Tensor<T>> {
    let mut s = Session::new(store, Mode::Eval, 0).without_param_grads();
    let x = s.g.variable(images.clone());
    let out = net.forward(&mut s, x)?;
    let feature = out.taps.finest(tap)?;
    input_gradient_map(&mut s.g, x, feature)
}

/// Number of entries above [`SUPPORT_THRESHOLD`].
pub fn support_size<T: Real>(map: &Tensor<T>) -> usize {
    map.data().iter().filter(|v| v.as_f64() > SUPPORT_THRESHOLD).count()
}
