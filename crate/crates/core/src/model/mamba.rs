//! Vision-Mamba global branch: 16×16 patch embedding, a class token, and stacked
//! blocks whose sequence mixer runs a selective scan along three token orders.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, LayerNorm, Linear, ParamBuilder, ParamId, Session};
use crate::tensor::kernels::scan::ScanImpl;
use crate::tensor::kernels::shape::inverse_permutation;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MambaConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub state_size: usize,
    /// Inner width is `expand · embed_dim`.
    pub expand: usize,
    pub conv_kernel: usize,
    pub patch_size: usize,
    /// 1-based block indices whose outputs are tapped, finest pairing first.
    pub taps: [usize; 3],
    #[serde(default)]
    pub scan: ScanImpl,
}

impl Default for MambaConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            depth: 6,
            state_size: 8,
            expand: 2,
            conv_kernel: 4,
            patch_size: 16,
            taps: [2, 4, 6],
            scan: ScanImpl::Sequential,
        }
    }
}

impl MambaConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.embed_dim,
            self.depth,
            self.state_size,
            self.expand,
            self.conv_kernel,
            self.patch_size,
        ]
        .contains(&0)
        {
            return Err(Error::Config("mamba sizes must be positive".into()));
        }
        let [a, b, c] = self.taps;
        if !(1 <= a && a < b && b < c && c <= self.depth) {
            return Err(Error::Config(format!(
                "mamba taps {:?} must be increasing block indices within depth {}",
                self.taps, self.depth
            )));
        }
        Ok(())
    }

    pub fn inner_dim(&self) -> usize {
        self.expand * self.embed_dim
    }

    /// Token count including the class token.
    pub fn token_count(&self, image_size: usize) -> usize {
        let g = image_size / self.patch_size;
        g * g + 1
    }
}

/// Inverse softplus, used to place initial time steps in a chosen range.
fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Patch embedding via a patch-sized, patch-strided convolution, plus class token and positions.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Conv2d,
    pub cls: ParamId,
    pub pos: ParamId,
    pub patch: usize,
    pub dim: usize,
}

impl PatchEmbed {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        cfg: &MambaConfig,
        image_size: usize,
    ) -> Result<Self> {
        let p = cfg.patch_size;
        Ok(Self {
            proj: Conv2d::new(&mut b.pp("proj"), in_channels, cfg.embed_dim, p, p, 0, 1, true)?,
            cls: b.normal("cls_token", &[1, 1, cfg.embed_dim], 0.02)?,
            pos: b.normal("pos_embed", &[1, cfg.token_count(image_size), cfg.embed_dim], 0.02)?,
            patch: p,
            dim: cfg.embed_dim,
        })
    }

    /// `[N, 3, H, W] → [N, 1 + (H/p)(W/p), D]`, class token first.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<Var> {
        let shape = s.g.shape(image).to_vec();
        if shape.len() != 4 || !shape[2].is_multiple_of(self.patch) || !shape[3].is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "patch embedding needs H and W divisible by {}, got {shape:?}",
                self.patch
            )));
        }
        let n = shape[0];
        let cells = (shape[2] / self.patch) * (shape[3] / self.patch);
        let pos = s.param(self.pos);
        if s.g.shape(pos)[1] != cells + 1 {
            return Err(Error::Config(format!(
                "position table holds {} tokens, input yields {}",
                s.g.shape(pos)[1],
                cells + 1
            )));
        }
        let grid = self.proj.forward(s, image)?;
        let flat = s.g.reshape(grid, &[n, self.dim, cells])?;
        let tokens = s.g.permute(flat, &[0, 2, 1])?;
        let zeros = s.g.constant(Tensor::zeros([n, 1, self.dim]));
        let cls = s.param(self.cls);
        let cls = s.g.add(zeros, cls)?;
        let seq = s.g.concat(&[cls, tokens], 1)?;
        s.g.add(seq, pos)
    }
}

/// Input-dependent state-space mixer: `Δ = softplus(W_Δ u + b_Δ)`, `B = W_B u`, `C = W_C u`, `A = −exp(a_log)`.
#[derive(Debug, Clone)]
pub struct Mixer {
    pub delta_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub a_log: ParamId,
    pub scan: ScanImpl,
}

impl Mixer {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, width: usize, state: usize, scan: ScanImpl) -> Result<Self> {
        let delta_proj = Linear::new(&mut b.pp("delta_proj"), width, width, true)?;
        let b_proj = Linear::new(&mut b.pp("b_proj"), width, state, false)?;
        let c_proj = Linear::new(&mut b.pp("c_proj"), width, state, false)?;
        let a_log = b.tensor(
            "a_log",
            Tensor::from_fn([width, state], |i| T::lit(((i % state) as f64 + 1.0).ln())),
        )?;
        // Initial time steps log-uniform in [1e-3, 1e-1].
        let bias = {
            use rand::Rng;
            let rng = b.rng();
            Tensor::from_fn([width], |_| {
                let t = rng.gen_range((1e-3f64).ln()..(1e-1f64).ln()).exp();
                T::lit(softplus_inverse(t))
            })
        };
        let bias_id = delta_proj.bias.expect("delta projection has a bias");
        *b.store_mut().get_mut(bias_id) = bias;
        Ok(Self {
            delta_proj,
            b_proj,
            c_proj,
            a_log,
            scan,
        })
    }

    /// `u: [N, L, E] → [N, L, E]`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, u: Var) -> Result<Var> {
        let delta = self.delta_proj.forward(s, u)?;
        let delta = s.g.softplus(delta);
        let bm = self.b_proj.forward(s, u)?;
        let cm = self.c_proj.forward(s, u)?;
        let a_log = s.param(self.a_log);
        let a = s.g.exp(a_log);
        let a = s.g.neg(a);
        s.g.selective_scan(u, delta, a, bm, cm, self.scan)
    }
}

/// Forward, reverse, and shuffled scans through one shared mixer, blended by a per-token softmax gate.
#[derive(Debug, Clone)]
pub struct MultiPathScan {
    pub mixer: Mixer,
    pub gate: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct MultiPathOutput {
    pub y: Var,
    /// `[N, L, 3]` weights for (forward, reverse, shuffle).
    pub gate: Var,
    pub paths: [Var; 3],
}

impl MultiPathScan {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, width: usize, state: usize, scan: ScanImpl) -> Result<Self> {
        Ok(Self {
            mixer: Mixer::new(&mut b.pp("mixer"), width, state, scan)?,
            gate: Linear::new(&mut b.pp("gate"), width, 3, true)?,
        })
    }

    /// Mixes with the session's permutation policy: random in training, identity in evaluation.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, u: Var) -> Result<MultiPathOutput> {
        let l = s.g.shape(u)[1];
        let mut perm: Vec<usize> = (0..l).collect();
        if s.is_training() {
            perm.shuffle(s.rng());
        }
        self.forward_with(s, u, &perm)
    }

    pub fn forward_with<T: Real>(&self, s: &mut Session<'_, T>, u: Var, perm: &[usize]) -> Result<MultiPathOutput> {
        let l = s.g.shape(u)[1];
        if perm.len() != l {
            return Err(Error::Contract(format!(
                "permutation of length {} for {l} tokens",
                perm.len()
            )));
        }
        let fwd = self.mixer.forward(s, u)?;

        let rev: Vec<usize> = (0..l).rev().collect();
        let ur = s.g.index_select(u, 1, &rev)?;
        let yr = self.mixer.forward(s, ur)?;
        let bwd = s.g.index_select(yr, 1, &rev)?;

        let us = s.g.index_select(u, 1, perm)?;
        let ys = self.mixer.forward(s, us)?;
        let shf = s.g.index_select(ys, 1, &inverse_permutation(perm))?;

        let logits = self.gate.forward(s, u)?;
        let gate = s.g.softmax(logits, 2)?;
        let mut y = None;
        for (p, path) in [fwd, bwd, shf].into_iter().enumerate() {
            let w = s.g.slice(gate, 2, p, 1)?;
            let term = s.g.mul(path, w)?;
            y = Some(match y {
                Some(acc) => s.g.add(acc, term)?,
                None => term,
            });
        }
        Ok(MultiPathOutput {
            y: y.expect("three paths"),
            gate,
            paths: [fwd, bwd, shf],
        })
    }
}

/// Mamba stage block: pre-norm, gated input projection, causal depthwise conv, multi-path scan, output projection, residual.
#[derive(Debug, Clone)]
pub struct MambaBlock {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub scan: MultiPathScan,
    pub out_proj: Linear,
    pub inner: usize,
}

impl MambaBlock {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &MambaConfig) -> Result<Self> {
        let (d, e) = (cfg.embed_dim, cfg.inner_dim());
        Ok(Self {
            norm: LayerNorm::new(&mut b.pp("norm"), d)?,
            in_proj: Linear::new(&mut b.pp("in_proj"), d, 2 * e, false)?,
            conv_weight: b.kaiming("conv.weight", &[e, cfg.conv_kernel], cfg.conv_kernel)?,
            conv_bias: b.zeros("conv.bias", &[e])?,
            scan: MultiPathScan::new(&mut b.pp("scan"), e, cfg.state_size, cfg.scan)?,
            out_proj: Linear::new(&mut b.pp("out_proj"), e, d, false)?,
            inner: e,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm.forward(s, x)?;
        let h = self.in_proj.forward(s, h)?;
        let u = s.g.slice(h, 2, 0, self.inner)?;
        let z = s.g.slice(h, 2, self.inner, self.inner)?;
        let w = s.param(self.conv_weight);
        let u = s.g.depthwise_conv1d(u, w)?;
        let bias = s.param(self.conv_bias);
        let u = s.g.add(u, bias)?;
        let u = s.g.silu(u);
        let y = self.scan.forward(s, u)?.y;
        let z = s.g.silu(z);
        let y = s.g.mul(y, z)?;
        let y = self.out_proj.forward(s, y)?;
        s.g.add(x, y)
    }
}

#[derive(Debug, Clone)]
pub struct MambaBranch {
    pub embed: PatchEmbed,
    pub blocks: Vec<MambaBlock>,
    pub taps: [usize; 3],
}

impl MambaBranch {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        cfg: &MambaConfig,
        image_size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let embed = PatchEmbed::new(&mut b.pp("embed"), in_channels, cfg, image_size)?;
        let blocks = (0..cfg.depth)
            .map(|i| MambaBlock::new(&mut b.pp(format!("block{}", i + 1)), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            blocks,
            taps: cfg.taps,
        })
    }

    /// Token sequences after the tapped blocks, `[N, L, D]` each.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<[Var; 3]> {
        let mut x = self.embed.forward(s, image)?;
        let mut out = Vec::with_capacity(3);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(s, x)?;
            if self.taps.contains(&(i + 1)) {
                out.push(x);
            }
        }
        Ok([out[0], out[1], out[2]])
    }
}
