//! Mixture-of-experts classifier head: softmax gate, top-k routed experts, always-on
//! shared experts, and the load-balancing auxiliary loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamBuilder, Session};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeConfig {
    /// Routable expert count.
    pub experts: usize,
    pub top_k: usize,
    pub shared: usize,
    /// Scale of the load-balancing loss.
    pub alpha: f64,
    /// Expert hidden width as a multiple of the input width.
    pub hidden_mult: usize,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            experts: 4,
            top_k: 2,
            shared: 1,
            alpha: 0.01,
            hidden_mult: 4,
        }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(Error::Config(format!(
                "top_k must lie in 1..={} (got {})",
                self.experts, self.top_k
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be a finite nonnegative number, got {}",
                self.alpha
            )));
        }
        if self.hidden_mult == 0 {
            return Err(Error::Config("hidden_mult must be positive".into()));
        }
        Ok(())
    }
}

/// Two-layer perceptron `d → h → out` with ReLU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, input: usize, hidden: usize, output: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&mut b.pp("fc1"), input, hidden, true)?,
            fc2: Linear::new(&mut b.pp("fc2"), hidden, output, true)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(s, x)?;
        let h = s.g.relu(h);
        self.fc2.forward(s, h)
    }
}

/// Per-batch routing record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    /// Gate probabilities, one row per input.
    pub scores: Vec<Vec<f64>>,
    /// Selected experts per input, highest score first.
    pub selected: Vec<Vec<usize>>,
    /// Number of inputs whose selection contains each expert.
    pub counts: Vec<usize>,
    /// Column means of `scores`.
    pub mean_prob: Vec<f64>,
    pub aux_loss: f64,
    /// Rows each routed expert was actually evaluated on.
    pub expert_evaluations: Vec<usize>,
}

impl RoutingReport {
    pub fn batch(&self) -> usize {
        self.scores.len()
    }

    pub fn load_balance_loss(&self, alpha: f64) -> Result<f64> {
        load_balance_loss(&self.counts, &self.mean_prob, self.batch(), alpha)
    }
}

/// `α · M / B · Σᵢ fᵢ Pᵢ` with `fᵢ` a count of inputs routed to expert `i`.
pub fn load_balance_loss(counts: &[usize], mean_prob: &[f64], batch: usize, alpha: f64) -> Result<f64> {
    if batch == 0 {
        return Err(Error::Contract("load-balance loss over an empty batch".into()));
    }
    if counts.len() != mean_prob.len() {
        return Err(Error::Contract("count and probability vectors differ in length".into()));
    }
    let m = counts.len() as f64;
    let dot: f64 = counts.iter().zip(mean_prob).map(|(&f, &p)| f as f64 * p).sum();
    Ok(alpha * m / batch as f64 * dot)
}

/// Indices of the `k` largest entries, largest first; equal scores favor the lower index.
pub fn top_k<T: Real>(row: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone)]
pub struct MoeHead {
    pub gate: Linear,
    pub experts: Vec<Mlp>,
    pub shared: Vec<Mlp>,
    pub classifier: Linear,
    pub top_k: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct MoeOutput {
    pub logits: Var,
    pub scores: Var,
    pub routed: Var,
    pub shared: Option<Var>,
    /// Load-balancing loss, already scaled by α.
    pub aux: Var,
    pub report: RoutingReport,
}

impl MoeHead {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize, classes: usize, cfg: &MoeConfig) -> Result<Self> {
        cfg.validate()?;
        let hidden = cfg.hidden_mult * dim;
        Ok(Self {
            gate: Linear::new(&mut b.pp("gate"), dim, cfg.experts, true)?,
            experts: (0..cfg.experts)
                .map(|i| Mlp::new(&mut b.pp(format!("expert{i}")), dim, hidden, dim))
                .collect::<Result<_>>()?,
            shared: (0..cfg.shared)
                .map(|i| Mlp::new(&mut b.pp(format!("shared{i}")), dim, hidden, dim))
                .collect::<Result<_>>()?,
            classifier: Linear::new(&mut b.pp("classifier"), dim, classes, true)?,
            top_k: cfg.top_k,
            alpha: cfg.alpha,
        })
    }

    /// Gate probabilities `[B, M]`.
    pub fn gate<T: Real>(&self, s: &mut Session<'_, T>, v: Var) -> Result<Var> {
        let logits = self.gate.forward(s, v)?;
        s.g.softmax(logits, 1)
    }

    /// Sum of the shared experts, `None` when there are none.
    pub fn shared_forward<T: Real>(&self, s: &mut Session<'_, T>, v: Var) -> Result<Option<Var>> {
        let mut acc = None;
        for e in &self.shared {
            let y = e.forward(s, v)?;
            acc = Some(match acc {
                Some(a) => s.g.add(a, y)?,
                None => y,
            });
        }
        Ok(acc)
    }

    /// Weighted sum of each input's selected experts; every expert runs only on its own rows.
    pub fn route<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        v: Var,
        scores: Var,
        selected: &[Vec<usize>],
    ) -> Result<(Var, Vec<usize>)> {
        let (b, d) = (s.g.shape(v)[0], s.g.shape(v)[1]);
        let mut rows = vec![Vec::new(); self.experts.len()];
        for (i, sel) in selected.iter().enumerate() {
            for &j in sel {
                rows.get_mut(j)
                    .ok_or_else(|| Error::Contract(format!("expert index {j} out of range")))?
                    .push(i);
            }
        }
        let mut acc = s.g.constant(Tensor::zeros([b, d]));
        for (j, idx) in rows.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let x = s.g.index_select(v, 0, idx)?;
            let y = self.experts[j].forward(s, x)?;
            let w = s.g.index_select(scores, 0, idx)?;
            let w = s.g.slice(w, 1, j, 1)?;
            let y = s.g.mul(y, w)?;
            let y = s.g.index_add(y, 0, idx, b)?;
            acc = s.g.add(acc, y)?;
        }
        Ok((acc, rows.iter().map(Vec::len).collect()))
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, v: Var) -> Result<MoeOutput> {
        self.forward_with(s, v, None)
    }

    /// As [`Self::forward`], optionally with a fixed expert selection per input.
    pub fn forward_with<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        v: Var,
        fixed: Option<&[Vec<usize>]>,
    ) -> Result<MoeOutput> {
        let scores = self.gate(s, v)?;
        let m = self.experts.len();
        let sv = s.g.value(scores).clone();
        let b = sv.shape()[0];
        let score_rows: Vec<Vec<f64>> = sv
            .data()
            .chunks(m)
            .map(|r| r.iter().map(|x| x.as_f64()).collect())
            .collect();
        let selected: Vec<Vec<usize>> = match fixed {
            Some(sel) => {
                if sel.len() != b || sel.iter().any(|r| r.len() != self.top_k) {
                    return Err(Error::Contract(
                        "fixed selection must hold top_k experts per input".into(),
                    ));
                }
                sel.to_vec()
            }
            None => sv.data().chunks(m).map(|r| top_k(r, self.top_k)).collect(),
        };
        let (routed, evaluations) = self.route(s, v, scores, &selected)?;
        let shared = self.shared_forward(s, v)?;
        let out = match shared {
            Some(sh) => s.g.add(routed, sh)?,
            None => routed,
        };
        let logits = self.classifier.forward(s, out)?;

        let mut counts = vec![0usize; m];
        selected.iter().flatten().for_each(|&j| counts[j] += 1);
        let mean = s.g.mean_axes(scores, &[0], false)?;
        let f = s.g.constant(Tensor::from_fn([m], |j| T::lit(counts[j] as f64)));
        let fp = s.g.mul(mean, f)?;
        let dot = s.g.sum_all(fp);
        let aux = s.g.scale(dot, T::lit(self.alpha * m as f64 / b as f64));
        let mean_prob = s.g.value(mean).to_f64_vec();
        let report = RoutingReport {
            scores: score_rows,
            selected,
            counts,
            mean_prob,
            aux_loss: s.g.value(aux).item().as_f64(),
            expert_evaluations: evaluations,
        };
        Ok(MoeOutput {
            logits,
            scores,
            routed,
            shared,
            aux,
            report,
        })
    }
}
