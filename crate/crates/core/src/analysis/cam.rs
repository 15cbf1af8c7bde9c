use crate::error::{Error, Result};
use crate::model::{AfmNet, Tap};
use crate::nn::{Mode, ParamStore, Session};
use crate::tensor::kernels::interp::{interpolate_forward, InterpMode};
use crate::tensor::{Real, Tensor};

use super::erf::normalize_max;

/// Grad-CAM for the first sample: channel weights are spatial means of `gradient`, the map is
/// `relu(Σ weight · activation)`, resized bilinearly to `size` and scaled to a maximum of 1.
pub fn cam_from_gradients<T: Real>(
    activation: &Tensor<T>,
    gradient: &Tensor<T>,
    size: (usize, usize),
) -> Result<Tensor<T>> {
    let shape = activation.shape();
    if shape.len() != 4 || gradient.shape() != shape {
        return Err(Error::shape(
            "grad_cam",
            format!(
                "activation {shape:?} and gradient {:?} must be equal [N, K, h, w]",
                gradient.shape()
            ),
        ));
    }
    let (k, h, w) = (shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut map = vec![T::zero(); plane];
    for c in 0..k {
        let a = &activation.data()[c * plane..(c + 1) * plane];
        let gr = &gradient.data()[c * plane..(c + 1) * plane];
        let weight = gr.iter().copied().sum::<T>() / T::lit(plane as f64);
        for (m, &v) in map.iter_mut().zip(a) {
            *m += weight * v;
        }
    }
    let map = Tensor::new([1, 1, h, w], map)?.map(|v| v.max(T::zero()));
    let resized = if (h, w) == size {
        map
    } else {
        interpolate_forward(&map, size, InterpMode::Bilinear)?
    };
    Ok(normalize_max(resized.reshape([size.0, size.1])?))
}

/// Class activation map of `class_id` at the finest map of `layer`, for `image: [1, C, H, W]`.
pub fn grad_cam<T: Real>(
    net: &AfmNet,
    store: &ParamStore<T>,
    image: &Tensor<T>,
    class_id: usize,
    layer: Tap,
) -> Result<Tensor<T>> {
    if class_id >= net.config.num_classes {
        return Err(Error::Config(format!(
            "class {class_id} out of range for {} classes",
            net.config.num_classes
        )));
    }
    let mut s = Session::new(store, Mode::Eval, 0).without_param_grads();
    let x = s.g.constant(image.clone());
    let out = net.forward(&mut s, x)?;
    let feature = out.taps.finest(layer)?;
    let logit = s.g.slice(out.logits, 0, 0, 1)?;
    let logit = s.g.slice(logit, 1, class_id, 1)?;
    let logit = s.g.sum_all(logit);
    s.g.backward(logit)?;
    let activation = s.g.value(feature).clone();
    let gradient =
        s.g.grad(feature)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(activation.shape().to_vec()));
    let shape = image.shape();
    cam_from_gradients(&activation, &gradient, (shape[2], shape[3]))
}
