//! Dual-attention multi-scale fusion (DAMF) and the dense coarse-to-fine fusion core.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Linear, ParamBuilder, Session};
use crate::tensor::kernels::interp::InterpMode;
use crate::tensor::Real;

/// Bottleneck reduction ratio inside DAMF branches.
pub const BOTTLENECK_RATIO: usize = 4;
/// Hidden-width reduction of the channel-attention map.
pub const CHANNEL_REDUCTION: usize = 8;
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Each stage also consumes every earlier stage output.
    #[default]
    Dense,
    /// Each stage fuses only its own pair of branch features.
    Concat,
}

/// Convolution, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::same(&mut b.pp("conv"), cin, cout, kernel, dilation, false)?,
            bn: BatchNorm2d::new(&mut b.pp("bn"), cout)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        Ok(s.g.relu(y))
    }
}

fn chain<T: Real>(layers: &[ConvBnRelu], s: &mut Session<'_, T>, mut x: Var) -> Result<Var> {
    for l in layers {
        x = l.forward(s, x)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct Damf {
    pub in_channels: usize,
    pub width: usize,
    pub dilated1: Vec<ConvBnRelu>,
    pub dilated2: Vec<ConvBnRelu>,
    pub plain: Vec<ConvBnRelu>,
    pub merge: ConvBnRelu,
    pub channel_fc1: Linear,
    pub channel_fc2: Linear,
    pub spatial: Conv2d,
}

#[derive(Debug, Clone, Copy)]
pub struct DamfOutput {
    pub y: Var,
    /// Merged branch features before attention.
    pub features: Var,
    /// `[N, F, 1, 1]`.
    pub channel_attention: Var,
    /// `[N, 1, H, W]`.
    pub spatial_attention: Var,
}

impl Damf {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_channels: usize, width: usize) -> Result<Self> {
        if width < BOTTLENECK_RATIO || in_channels == 0 {
            return Err(Error::Config(format!(
                "DAMF width must be at least {BOTTLENECK_RATIO} (got {width}) with a nonempty input"
            )));
        }
        let mid = width / BOTTLENECK_RATIO;
        let hidden = (width / CHANNEL_REDUCTION).max(1);
        let bottleneck = |b: &mut ParamBuilder<'_, T>, name: &str, d: usize| -> Result<Vec<ConvBnRelu>> {
            let mut b = b.pp(name);
            Ok(vec![
                ConvBnRelu::new(&mut b.pp("reduce"), in_channels, mid, 1, 1)?,
                ConvBnRelu::new(&mut b.pp("dilated"), mid, mid, 3, d)?,
                ConvBnRelu::new(&mut b.pp("expand"), mid, width, 1, 1)?,
            ])
        };
        let dilated1 = bottleneck(b, "dilated1", 1)?;
        let dilated2 = bottleneck(b, "dilated2", 2)?;
        let plain = {
            let mut b = b.pp("plain");
            vec![
                ConvBnRelu::new(&mut b.pp("conv3"), in_channels, mid, 3, 1)?,
                ConvBnRelu::new(&mut b.pp("expand"), mid, width, 1, 1)?,
            ]
        };
        Ok(Self {
            in_channels,
            width,
            dilated1,
            dilated2,
            plain,
            merge: ConvBnRelu::new(&mut b.pp("merge"), 3 * width, width, 1, 1)?,
            channel_fc1: Linear::new(&mut b.pp("channel_fc1"), width, hidden, true)?,
            channel_fc2: Linear::new(&mut b.pp("channel_fc2"), hidden, width, true)?,
            spatial: Conv2d::same(&mut b.pp("spatial"), 2, 1, SPATIAL_KERNEL, 1, true)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(s, x)?.y)
    }

    pub fn forward_detailed<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<DamfOutput> {
        let shape = s.g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::shape(
                "damf",
                format!("expected [N, {}, H, W], got {shape:?}", self.in_channels),
            ));
        }
        let (n, f) = (shape[0], self.width);
        let a = chain(&self.dilated1, s, x)?;
        let b = chain(&self.dilated2, s, x)?;
        let c = chain(&self.plain, s, x)?;
        let cat = s.g.concat(&[a, b, c], 1)?;
        let features = self.merge.forward(s, cat)?;

        let avg = s.g.mean_axes(features, &[2, 3], false)?;
        let flat = s.g.reshape(features, &[n, f, shape[2] * shape[3]])?;
        let max = s.g.max_along(flat, 2)?;
        let max = s.g.reshape(max, &[n, f])?;
        let mut logits = None;
        for d in [avg, max] {
            let h = self.channel_fc1.forward(s, d)?;
            let h = s.g.relu(h);
            let h = self.channel_fc2.forward(s, h)?;
            logits = Some(match logits {
                Some(acc) => s.g.add(acc, h)?,
                None => h,
            });
        }
        let ca = s.g.sigmoid(logits.expect("two descriptors"));
        let ca = s.g.reshape(ca, &[n, f, 1, 1])?;
        let refined = s.g.mul(features, ca)?;

        let mean_map = s.g.mean_axes(refined, &[1], true)?;
        let max_map = s.g.max_along(refined, 1)?;
        let maps = s.g.concat(&[mean_map, max_map], 1)?;
        let sa = self.spatial.forward(s, maps)?;
        let sa = s.g.sigmoid(sa);
        let y = s.g.mul(refined, sa)?;
        Ok(DamfOutput {
            y,
            features,
            channel_attention: ca,
            spatial_attention: sa,
        })
    }

    /// Zeroes the attention sub-networks so both attentions scale by exactly one half.
    pub fn neutralize_attention<T: Real>(&self, store: &mut crate::nn::ParamStore<T>) {
        let ids = [
            Some(self.channel_fc1.weight),
            self.channel_fc1.bias,
            Some(self.channel_fc2.weight),
            self.channel_fc2.bias,
            Some(self.spatial.weight),
            self.spatial.bias,
        ];
        for id in ids.into_iter().flatten() {
            store.get_mut(id).data_mut().fill(T::zero());
        }
    }
}

/// One DAMF per fusion stage, coarsest stage first.
#[derive(Debug, Clone)]
pub struct FusionCore {
    pub mode: FusionMode,
    pub stages: Vec<Damf>,
    pub width: usize,
}

impl FusionCore {
    /// `branches` is how many of the two branch features each stage receives (1 or 2).
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        width: usize,
        branches: usize,
        mode: FusionMode,
        stages: usize,
    ) -> Result<Self> {
        if !(1..=2).contains(&branches) {
            return Err(Error::Config("fusion needs at least one enabled branch".into()));
        }
        let stages = (0..stages)
            .map(|i| {
                Damf::new(
                    &mut b.pp(format!("stage{i}")),
                    Self::input_width(width, branches, mode, i),
                    width,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { mode, stages, width })
    }

    /// DAMF input width at stage `i`.
    pub fn input_width(width: usize, branches: usize, mode: FusionMode, i: usize) -> usize {
        match mode {
            FusionMode::Dense => width * (branches + i),
            FusionMode::Concat => width * branches,
        }
    }

    pub fn input_widths(&self) -> Vec<usize> {
        self.stages.iter().map(|d| d.in_channels).collect()
    }

    /// Fuses stage `i` from its branch features and, in dense mode, all earlier stage outputs.
    pub fn dense_fuse<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        i: usize,
        branch: &[Var],
        history: &[Var],
    ) -> Result<Var> {
        let damf = self
            .stages
            .get(i)
            .ok_or_else(|| Error::Contract(format!("fusion stage {i} of {}", self.stages.len())))?;
        let expected = match self.mode {
            FusionMode::Dense => i,
            FusionMode::Concat => 0,
        };
        if history.len() != expected {
            return Err(Error::Contract(format!(
                "fusion stage {i} needs {expected} earlier outputs, got {}",
                history.len()
            )));
        }
        let first = *branch
            .first()
            .ok_or_else(|| Error::Contract("fusion stage without branch features".into()))?;
        let shape = s.g.shape(first).to_vec();
        let target = (shape[2], shape[3]);
        let mut parts = branch.to_vec();
        for &h in history {
            let hs = s.g.shape(h);
            let up = if (hs[2], hs[3]) == target {
                h
            } else {
                s.g.interpolate(h, target, InterpMode::Bilinear)?
            };
            parts.push(up);
        }
        let x = s.g.concat(&parts, 1)?;
        damf.forward(s, x)
    }

    /// Runs every stage; `branch[i]` holds the features for stage `i` (coarsest first).
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, branch: &[Vec<Var>]) -> Result<Vec<Var>> {
        let mut outputs: Vec<Var> = Vec::with_capacity(self.stages.len());
        for (i, feats) in branch.iter().enumerate() {
            let history = match self.mode {
                FusionMode::Dense => outputs.clone(),
                FusionMode::Concat => Vec::new(),
            };
            let y = self.dense_fuse(s, i, feats, &history)?;
            outputs.push(y);
        }
        Ok(outputs)
    }
}

/// Global average pool of each map, concatenated: `[N, Σ Cᵢ]`.
pub fn collect_final_vector<T: Real>(s: &mut Session<'_, T>, outputs: &[Var]) -> Result<Var> {
    let pooled = outputs
        .iter()
        .map(|&o| s.g.mean_axes(o, &[2, 3], false))
        .collect::<Result<Vec<_>>>()?;
    s.g.concat(&pooled, 1)
}
