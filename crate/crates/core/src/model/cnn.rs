//! ResNet-style local branch: a conv/pool stem followed by stages of basic residual blocks.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ParamBuilder, Session};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    /// Output channels of each stage; the stem emits `widths[0]`.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 128, 256],
            blocks: vec![2, 2, 2, 2],
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 || self.widths.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "cnn needs at least 3 stages with one block count each (widths {:?}, blocks {:?})",
                self.widths, self.blocks
            )));
        }
        if self.widths.iter().chain(&self.blocks).any(|&v| v == 0) {
            return Err(Error::Config("cnn widths and block counts must be positive".into()));
        }
        Ok(())
    }

    pub fn stem_width(&self) -> usize {
        self.widths[0]
    }

    /// Stride of the first block in stage `i`.
    pub fn stage_stride(i: usize) -> usize {
        if i == 0 {
            1
        } else {
            2
        }
    }

    /// Widths of the last three stages, the ones fed to fusion.
    pub fn tap_widths(&self) -> [usize; 3] {
        let n = self.widths.len();
        [self.widths[n - 3], self.widths[n - 2], self.widths[n - 1]]
    }

    /// Total downsampling factor at the output of stage `i`.
    pub fn stage_reduction(&self, i: usize) -> usize {
        4 << i
    }

    /// Spatial sizes of the three tapped stages for a square input, finest first.
    pub fn tap_sizes(&self, image_size: usize) -> [usize; 3] {
        let n = self.widths.len();
        [
            image_size / self.stage_reduction(n - 3),
            image_size / self.stage_reduction(n - 2),
            image_size / self.stage_reduction(n - 1),
        ]
    }
}

/// 7×7/2 conv, batch norm, ReLU, 3×3/2 max pool.
#[derive(Debug, Clone)]
pub struct Stem {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Stem {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_channels: usize, width: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&mut b.pp("conv"), in_channels, width, 7, 2, 3, 1, false)?,
            bn: BatchNorm2d::new(&mut b.pp("bn"), width)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x).to_vec();
        if shape.len() != 4 || !shape[2].is_multiple_of(4) || !shape[3].is_multiple_of(4) {
            return Err(Error::Config(format!(
                "stem needs [N, C, H, W] with H and W divisible by 4, got {shape:?}"
            )));
        }
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        let y = s.g.relu(y);
        s.g.max_pool2d(y, 3, 2, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Shortcut {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

/// conv3-BN-ReLU-conv3-BN plus a shortcut, then ReLU.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<Shortcut>,
    pub in_channels: usize,
}

impl BasicBlock {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || cin != cout {
            Some(Shortcut {
                conv: Conv2d::new(&mut b.pp("shortcut.conv"), cin, cout, 1, stride, 0, 1, false)?,
                bn: BatchNorm2d::new(&mut b.pp("shortcut.bn"), cout)?,
            })
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&mut b.pp("conv1"), cin, cout, 3, stride, 1, 1, false)?,
            bn1: BatchNorm2d::new(&mut b.pp("bn1"), cout)?,
            conv2: Conv2d::new(&mut b.pp("conv2"), cout, cout, 3, 1, 1, 1, false)?,
            bn2: BatchNorm2d::new(&mut b.pp("bn2"), cout)?,
            shortcut,
            in_channels: cin,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let c = s.g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "residual block expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let h = self.conv1.forward(s, x)?;
        let h = self.bn1.forward(s, h)?;
        let h = s.g.relu(h);
        let h = self.conv2.forward(s, h)?;
        let h = self.bn2.forward(s, h)?;
        let skip = match &self.shortcut {
            Some(sc) => {
                let y = sc.conv.forward(s, x)?;
                sc.bn.forward(s, y)?
            }
            None => x,
        };
        let y = s.g.add(h, skip)?;
        Ok(s.g.relu(y))
    }
}

/// A ResNet stage block: a downsampling-capable first block followed by identity blocks.
#[derive(Debug, Clone)]
pub struct Stage {
    pub blocks: Vec<BasicBlock>,
}

impl Stage {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        count: usize,
        stride: usize,
    ) -> Result<Self> {
        let blocks = (0..count)
            .map(|j| {
                let (ci, st) = if j == 0 { (cin, stride) } else { (cout, 1) };
                BasicBlock::new(&mut b.pp(format!("block{j}")), ci, cout, st)
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, mut x: Var) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(s, x)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct CnnBranch {
    pub stem: Stem,
    pub stages: Vec<Stage>,
}

impl CnnBranch {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_channels: usize, cfg: &CnnConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = Stem::new(&mut b.pp("stem"), in_channels, cfg.stem_width())?;
        let mut stages = Vec::with_capacity(cfg.widths.len());
        let mut cin = cfg.stem_width();
        for (i, (&w, &n)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
            stages.push(Stage::new(
                &mut b.pp(format!("stage{}", i + 1)),
                cin,
                w,
                n,
                CnnConfig::stage_stride(i),
            )?);
            cin = w;
        }
        Ok(Self { stem, stages })
    }

    /// Outputs of the last three stages, finest first.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<[Var; 3]> {
        let mut x = self.stem.forward(s, image)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.forward(s, x)?;
            outs.push(x);
        }
        let n = outs.len();
        Ok([outs[n - 3], outs[n - 2], outs[n - 1]])
    }
}
