use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-average updates, randomized scan permutations.
    Train,
    /// Running statistics, identity scan permutation.
    Eval,
}

/// One forward (and optionally backward) evaluation of a model over a parameter store.
///
/// Parameters enter the graph lazily, once each, the first time a layer asks for them.
pub struct Session<'a, T: Real> {
    pub g: Graph<T>,
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    mode: Mode,
    param_grads: bool,
    rng: ChaCha8Rng,
    buffer_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            g: Graph::new(),
            store,
            vars: vec![None; store.len()],
            mode,
            param_grads: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buffer_updates: Vec::new(),
        }
    }

    /// Runs `f` in a session that records onto the caller's graph `g`.
    pub fn on_graph<R>(
        g: &mut Graph<T>,
        store: &'a ParamStore<T>,
        mode: Mode,
        seed: u64,
        f: impl FnOnce(&mut Session<'a, T>) -> crate::error::Result<R>,
    ) -> crate::error::Result<R> {
        let mut s = Self::new(store, mode, seed);
        std::mem::swap(&mut s.g, g);
        let r = f(&mut s);
        std::mem::swap(&mut s.g, g);
        r
    }

    /// Treat parameters as constants (input gradients only, e.g. saliency maps).
    pub fn without_param_grads(mut self) -> Self {
        self.param_grads = false;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.param_grads {
            self.g.variable(value)
        } else {
            self.g.constant(value)
        };
        self.vars[id.0] = Some(v);
        v
    }

    /// Routes parameter `id` to an existing graph node, e.g. one a gradient check perturbs.
    pub fn bind_param(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = Some(var);
    }

    /// The graph node of `id`, if the forward pass used it.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    pub fn record_buffer_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.push((id, value));
    }

    /// Running-statistic updates recorded during the forward pass, for [`ParamStore::apply_updates`].
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Gradients of every parameter that took part in the last backward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor<T>)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| self.g.grad(v)).map(|g| (ParamId(i), g)))
            .collect()
    }
}
