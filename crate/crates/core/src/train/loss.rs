use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Smoothed targets `(1 − ε)·onehot + ε/C`, one row per label.
pub fn smoothed_targets<T: Real>(labels: &[usize], classes: usize, eps: f64) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("label smoothing {eps} outside [0, 1)")));
    }
    let off = eps / classes as f64;
    Tensor::new(
        [labels.len(), classes],
        (0..labels.len() * classes)
            .map(|i| {
                T::lit(if i % classes == labels[i / classes] {
                    1.0 - eps + off
                } else {
                    off
                })
            })
            .collect(),
    )
}

/// Batch mean of `−Σ target · log softmax(logits)` with label-smoothed targets.
pub fn ce_label_smoothing<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[usize], eps: f64) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {shape:?} for {} labels", labels.len()),
        ));
    }
    let target = smoothed_targets::<T>(labels, shape[1], eps)?;
    let logp = g.log_softmax(logits, 1)?;
    let t = g.constant(target);
    let prod = g.mul(logp, t)?;
    let total = g.sum_all(prod);
    Ok(g.scale(total, T::lit(-1.0 / labels.len() as f64)))
}

/// Classification loss plus the (already scaled) auxiliary loss, when present.
pub fn total_loss<T: Real>(g: &mut Graph<T>, ce: Var, aux: Option<Var>) -> Result<Var> {
    match aux {
        Some(a) => g.add(ce, a),
        None => Ok(ce),
    }
}
