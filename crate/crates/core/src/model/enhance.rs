//! Adapt-then-enhance modules that bring branch features to the fusion width.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, ParamBuilder, Session};
use crate::tensor::kernels::interp::InterpMode;
use crate::tensor::Real;

use super::fusion::Damf;

/// CNN side: 1×1 projection to the fusion width, then an optional DAMF block.
#[derive(Debug, Clone)]
pub struct CnnEnhance {
    pub adapter: Conv2d,
    pub damf: Option<Damf>,
}

impl CnnEnhance {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cin: usize, width: usize, enhance: bool) -> Result<Self> {
        Ok(Self {
            adapter: Conv2d::new(&mut b.pp("adapter"), cin, width, 1, 1, 0, 1, true)?,
            damf: if enhance {
                Some(Damf::new(&mut b.pp("damf"), width, width)?)
            } else {
                None
            },
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.adapter.forward(s, x)?;
        match &self.damf {
            Some(d) => d.forward(s, y),
            None => Ok(y),
        }
    }
}

/// Mamba side: drop the class token, project to the fusion width, fold into a square
/// grid, resize to the paired CNN resolution, then an optional DAMF block.
#[derive(Debug, Clone)]
pub struct MambaEnhance {
    pub proj: Linear,
    pub damf: Option<Damf>,
}

impl MambaEnhance {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize, width: usize, enhance: bool) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(&mut b.pp("proj"), dim, width, true)?,
            damf: if enhance {
                Some(Damf::new(&mut b.pp("damf"), width, width)?)
            } else {
                None
            },
        })
    }

    /// `tokens: [N, 1 + g², D] → [N, F, g, g]`, before resizing.
    pub fn to_grid<T: Real>(&self, s: &mut Session<'_, T>, tokens: Var) -> Result<Var> {
        let shape = s.g.shape(tokens).to_vec();
        let (n, l) = (shape[0], shape[1]);
        let cells = l.saturating_sub(1);
        let side = (cells as f64).sqrt().round() as usize;
        if cells == 0 || side * side != cells {
            return Err(Error::Contract(format!(
                "{cells} patch tokens do not form a square grid"
            )));
        }
        let patches = s.g.slice(tokens, 1, 1, cells)?;
        let y = self.proj.forward(s, patches)?;
        let width = self.proj.out_dim;
        let y = s.g.permute(y, &[0, 2, 1])?;
        s.g.reshape(y, &[n, width, side, side])
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, tokens: Var, target: (usize, usize)) -> Result<Var> {
        let grid = self.to_grid(s, tokens)?;
        let gs = s.g.shape(grid);
        let y = if (gs[2], gs[3]) == target {
            grid
        } else {
            s.g.interpolate(grid, target, InterpMode::Bilinear)?
        };
        match &self.damf {
            Some(d) => d.forward(s, y),
            None => Ok(y),
        }
    }
}
