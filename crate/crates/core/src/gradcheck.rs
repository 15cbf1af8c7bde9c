//! Central finite-difference checks of analytic gradients (double precision).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`; the absolute difference when both are ~0.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Random projection weights that turn a tensor-valued output into a scalar loss.
fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Graph, input variables, output variable and the weights used to reduce it.
type Evaluated = (Graph<f64>, Vec<Var>, Var, Tensor<f64>);

fn evaluate(
    inputs: &[Tensor<f64>],
    build: &impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    weights: Option<&Tensor<f64>>,
) -> Result<Evaluated> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let w = match weights {
        Some(w) => w.clone(),
        None => projection(g.shape(out), 1),
    };
    if w.shape() != g.shape(out) {
        return Err(Error::Contract("output shape changed between evaluations".into()));
    }
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv)?;
    let loss = g.sum_all(prod);
    Ok((g, vars, loss, w))
}

/// Analytic and central-difference gradients at the checked coordinates of one input.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares analytic input gradients of `build` against central differences.
///
/// Tensor outputs are reduced to a scalar through a fixed random projection. Returns the
/// relative error for each input.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    options: &GradCheckOptions,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<f64>> {
    Ok(gradient_pairs(inputs, options, build)?
        .iter()
        .map(|p| relative_error(&p.analytic, &p.numeric))
        .collect())
}

/// As [`check_gradients`], but returns the raw gradient samples for each input.
pub fn gradient_pairs(
    inputs: &[Tensor<f64>],
    options: &GradCheckOptions,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<GradientPair>> {
    let (mut g, vars, loss, weights) = evaluate(inputs, &build, None)?;
    g.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut pairs = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match options.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let full = match g.grad(vars[k]) {
            Some(t) => t.to_f64_vec(),
            None => vec![0.0; n],
        };
        let analytic: Vec<f64> = coords.iter().map(|&j| full[j]).collect();
        let mut numeric = Vec::with_capacity(coords.len());
        let mut perturbed = inputs.to_vec();
        for &j in &coords {
            let x0 = input.data()[j];
            perturbed[k].data_mut()[j] = x0 + options.step;
            let (gp, _, lp, _) = evaluate(&perturbed, &build, Some(&weights))?;
            perturbed[k].data_mut()[j] = x0 - options.step;
            let (gm, _, lm, _) = evaluate(&perturbed, &build, Some(&weights))?;
            perturbed[k].data_mut()[j] = x0;
            numeric.push((gp.value(lp).item() - gm.value(lm).item()) / (2.0 * options.step));
        }
        pairs.push(GradientPair {
            coords,
            analytic,
            numeric,
        });
    }
    Ok(pairs)
}
