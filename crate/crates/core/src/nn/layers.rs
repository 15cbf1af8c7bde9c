use super::params::{ParamBuilder, ParamId};
use super::session::Session;
use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in running-statistic updates.
pub const BN_MOMENTUM: f64 = 0.1;

/// Affine map over the last axis; weight stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = b.kaiming("weight", &[in_dim, out_dim], in_dim)?;
        let bias = if bias { Some(b.zeros("bias", &[out_dim])?) } else { None };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.g.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = b.kaiming("weight", &[out_channels, in_channels, kernel, kernel], fan_in)?;
        let bias = if bias {
            Some(b.zeros("bias", &[out_channels])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            dilation,
        })
    }

    /// Square-kernel convolution with "same" padding for stride 1.
    pub fn same<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
    ) -> Result<Self> {
        Self::new(b, cin, cout, kernel, 1, dilation * (kernel - 1) / 2, dilation, bias)
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.g.conv2d(x, w, self.stride, self.padding, self.dilation)?;
        match self.bias {
            Some(b) => {
                let bv = s.param(b);
                let bv = s.g.reshape(bv, &[1, self.out_channels, 1, 1])?;
                s.g.add(y, bv)
            }
            None => Ok(y),
        }
    }
}

/// Batch normalization over channels of `[N, C, H, W]` with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.ones("weight", &[channels])?,
            beta: b.zeros("bias", &[channels])?,
            running_mean: b.buffer("running_mean", Tensor::zeros([channels]))?,
            running_var: b.buffer("running_var", Tensor::ones([channels]))?,
            channels,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        if s.is_training() {
            let (y, stats) = s.g.batch_norm_train(x, gamma, beta, BN_EPS)?;
            let m = T::lit(BN_MOMENTUM);
            let blend = |old: &Tensor<T>, new: &[T]| {
                Tensor::from_fn(old.shape().to_vec(), |i| (T::one() - m) * old.data()[i] + m * new[i])
            };
            let store = s.store();
            let mean = blend(store.get(self.running_mean), &stats.mean);
            let var = blend(store.get(self.running_var), &stats.var_unbiased);
            s.record_buffer_update(self.running_mean, mean);
            s.record_buffer_update(self.running_var, var);
            Ok(y)
        } else {
            let store = s.store();
            let (mean, var) = (store.get(self.running_mean).data(), store.get(self.running_var).data());
            s.g.batch_norm_eval(x, gamma, beta, mean, var, BN_EPS)
        }
    }
}

/// Normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.ones("weight", &[width])?,
            beta: b.zeros("bias", &[width])?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        s.g.layer_norm(x, gamma, beta, Self::EPS)
    }
}
