//! The full AFM-Net classifier and its configuration.

pub mod cnn;
pub mod enhance;
pub mod fusion;
pub mod mamba;
pub mod moe;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::params::init_rng;
use crate::nn::{ParamBuilder, ParamStore, Session};
use crate::tensor::Real;

use cnn::{CnnBranch, CnnConfig};
use enhance::{CnnEnhance, MambaEnhance};
use fusion::{collect_final_vector, FusionCore, FusionMode};
use mamba::{MambaBranch, MambaConfig};
use moe::{Mlp, MoeConfig, MoeHead, RoutingReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Moe,
    Mlp,
}

/// Architecture switches used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    pub cnn: bool,
    pub mamba: bool,
    pub e1: bool,
    pub e2: bool,
    pub head: HeadKind,
    pub dense: FusionMode,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            cnn: true,
            mamba: true,
            e1: true,
            e2: true,
            head: HeadKind::Moe,
            dense: FusionMode::Dense,
        }
    }
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} expects on/off, got {value:?}"))),
    }
}

impl Toggles {
    /// Applies `key=value`. A bare switch key (or `no-key`) removes that component.
    pub fn apply(&mut self, spec: &str) -> Result<()> {
        let (key, value) = match spec.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (spec.strip_prefix("no-").unwrap_or(spec).trim(), "off"),
        };
        match key {
            "cnn" => self.cnn = parse_switch(key, value)?,
            "mamba" => self.mamba = parse_switch(key, value)?,
            "e1" => self.e1 = parse_switch(key, value)?,
            "e2" => self.e2 = parse_switch(key, value)?,
            "e1+e2" => {
                let on = parse_switch(key, value)?;
                self.e1 = on;
                self.e2 = on;
            }
            "head" => {
                self.head = match value {
                    "moe" => HeadKind::Moe,
                    "mlp" => HeadKind::Mlp,
                    _ => return Err(Error::Config(format!("head expects moe or mlp, got {value:?}"))),
                }
            }
            "dense" => {
                self.dense = match value {
                    "dense" | "on" | "true" => FusionMode::Dense,
                    "concat" | "off" | "false" => FusionMode::Concat,
                    _ => return Err(Error::Config(format!("dense expects dense or concat, got {value:?}"))),
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation key {key:?} (expected cnn, mamba, e1, e2, head, dense)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub cnn: CnnConfig,
    pub mamba: MambaConfig,
    pub fusion_width: usize,
    pub moe: MoeConfig,
    pub toggles: Toggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            in_channels: 3,
            num_classes: 8,
            cnn: CnnConfig::default(),
            mamba: MambaConfig::default(),
            fusion_width: 32,
            moe: MoeConfig::default(),
            toggles: Toggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.cnn.validate()?;
        self.mamba.validate()?;
        if self.toggles.head == HeadKind::Moe {
            self.moe.validate()?;
        }
        if !self.toggles.cnn && !self.toggles.mamba {
            return Err(Error::Config(
                "at least one of the cnn and mamba branches must be enabled".into(),
            ));
        }
        let coarsest = self.cnn.stage_reduction(self.cnn.widths.len() - 1);
        if self.image_size == 0
            || !self.image_size.is_multiple_of(coarsest)
            || !self.image_size.is_multiple_of(self.mamba.patch_size)
        {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {coarsest} and of the patch size {}",
                self.image_size, self.mamba.patch_size
            )));
        }
        if self.num_classes < 2 || self.in_channels == 0 {
            return Err(Error::Config("need at least two classes and one input channel".into()));
        }
        if self.fusion_width < fusion::BOTTLENECK_RATIO {
            return Err(Error::Config(format!(
                "fusion width must be at least {}",
                fusion::BOTTLENECK_RATIO
            )));
        }
        Ok(())
    }

    /// Number of branch features each fusion stage receives.
    pub fn active_branches(&self) -> usize {
        self.toggles.cnn as usize + self.toggles.mamba as usize
    }

    /// Width of the pooled vector fed to the head.
    pub fn final_width(&self) -> usize {
        3 * self.fusion_width
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Moe(MoeHead),
    Mlp(Mlp),
}

#[derive(Debug, Clone)]
pub struct AfmNet {
    pub config: ModelConfig,
    pub cnn: Option<CnnBranch>,
    /// Finest level first.
    pub e1: Vec<CnnEnhance>,
    pub mamba: Option<MambaBranch>,
    /// Finest level first.
    pub e2: Vec<MambaEnhance>,
    pub fusion: FusionCore,
    pub head: Head,
}

/// Intermediate feature maps exposed for analysis.
#[derive(Debug, Clone, Default)]
pub struct Taps {
    /// Raw CNN stage outputs, finest first.
    pub cnn: Vec<Var>,
    /// Enhanced CNN maps at fusion width, finest first.
    pub cnn_enhanced: Vec<Var>,
    /// Token sequences after the tapped blocks.
    pub mamba_tokens: Vec<Var>,
    /// Enhanced Mamba maps at fusion width, finest first.
    pub mamba_enhanced: Vec<Var>,
    /// Fusion stage outputs, coarsest first.
    pub fused: Vec<Var>,
    pub final_vector: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    Cnn,
    Mamba,
    Fused,
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Tap::Cnn),
            "mamba" => Ok(Tap::Mamba),
            "fused" => Ok(Tap::Fused),
            _ => Err(Error::Config(format!(
                "unknown tap {s:?} (expected cnn, mamba or fused)"
            ))),
        }
    }
}

impl Taps {
    /// Highest-resolution map of the requested kind.
    pub fn finest(&self, tap: Tap) -> Result<Var> {
        let v = match tap {
            Tap::Cnn => self.cnn.first(),
            Tap::Mamba => self.mamba_enhanced.first(),
            Tap::Fused => self.fused.last(),
        };
        v.copied()
            .ok_or_else(|| Error::Capability(format!("the model has no {tap:?} features")))
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logits: Var,
    pub aux: Option<Var>,
    pub report: Option<RoutingReport>,
    pub taps: Taps,
}

impl AfmNet {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let f = config.fusion_width;
        let t = config.toggles;
        let (cnn, e1) = if t.cnn {
            let branch = CnnBranch::new(&mut b.pp("cnn"), config.in_channels, &config.cnn)?;
            let e1 = config
                .cnn
                .tap_widths()
                .iter()
                .enumerate()
                .map(|(i, &c)| CnnEnhance::new(&mut b.pp(format!("e1.{i}")), c, f, t.e1))
                .collect::<Result<_>>()?;
            (Some(branch), e1)
        } else {
            (None, Vec::new())
        };
        let (mamba, e2) = if t.mamba {
            let branch = MambaBranch::new(&mut b.pp("mamba"), config.in_channels, &config.mamba, config.image_size)?;
            let e2 = (0..3)
                .map(|i| MambaEnhance::new(&mut b.pp(format!("e2.{i}")), config.mamba.embed_dim, f, t.e2))
                .collect::<Result<_>>()?;
            (Some(branch), e2)
        } else {
            (None, Vec::new())
        };
        let fusion = FusionCore::new(&mut b.pp("fusion"), f, config.active_branches(), t.dense, 3)?;
        let d = config.final_width();
        let head = match t.head {
            HeadKind::Moe => Head::Moe(MoeHead::new(&mut b.pp("head"), d, config.num_classes, &config.moe)?),
            HeadKind::Mlp => Head::Mlp(Mlp::new(
                &mut b.pp("head"),
                d,
                config.moe.hidden_mult.max(1) * d,
                config.num_classes,
            )?),
        };
        Ok(Self {
            config: config.clone(),
            cnn,
            e1,
            mamba,
            e2,
            fusion,
            head,
        })
    }

    /// Builds the model and a freshly initialized parameter store from `seed`.
    pub fn build<T: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let net = Self::new(&mut ParamBuilder::new(&mut store, &mut rng), config)?;
        Ok((net, store))
    }

    /// Logits for `images: [N, C, H, W]`, plus routing information and intermediate maps.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, images: Var) -> Result<ModelOutput> {
        let cfg = &self.config;
        let shape = s.g.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.image_size || shape[3] != cfg.image_size {
            return Err(Error::shape(
                "afmnet",
                format!(
                    "expected [N, {}, {}, {}] images, got {shape:?}",
                    cfg.in_channels, cfg.image_size, cfg.image_size
                ),
            ));
        }
        let sizes = cfg.cnn.tap_sizes(cfg.image_size);
        let mut taps = Taps::default();
        if let Some(cnn) = &self.cnn {
            let raw = cnn.forward(s, images)?;
            taps.cnn = raw.to_vec();
            for (e, &x) in self.e1.iter().zip(&raw) {
                let y = e.forward(s, x)?;
                taps.cnn_enhanced.push(y);
            }
        }
        if let Some(mamba) = &self.mamba {
            let tokens = mamba.forward(s, images)?;
            taps.mamba_tokens = tokens.to_vec();
            for ((e, &x), &hw) in self.e2.iter().zip(&tokens).zip(&sizes) {
                let y = e.forward(s, x, (hw, hw))?;
                taps.mamba_enhanced.push(y);
            }
        }
        // Fusion stage i consumes level 2 − i: coarse to fine.
        let stage_inputs: Vec<Vec<Var>> = (0..3)
            .map(|i| {
                let level = 2 - i;
                taps.cnn_enhanced
                    .get(level)
                    .into_iter()
                    .chain(taps.mamba_enhanced.get(level))
                    .copied()
                    .collect()
            })
            .collect();
        taps.fused = self.fusion.forward(s, &stage_inputs)?;
        let v = collect_final_vector(s, &taps.fused)?;
        taps.final_vector = Some(v);
        let (logits, aux, report) = match &self.head {
            Head::Moe(h) => {
                let out = h.forward(s, v)?;
                (out.logits, Some(out.aux), Some(out.report))
            }
            Head::Mlp(m) => (m.forward(s, v)?, None, None),
        };
        Ok(ModelOutput {
            logits,
            aux,
            report,
            taps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::Tensor;

    pub(crate) fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            num_classes: 3,
            cnn: CnnConfig {
                widths: vec![4, 4, 8, 8],
                blocks: vec![1, 1, 1, 1],
            },
            mamba: MambaConfig {
                embed_dim: 8,
                depth: 3,
                state_size: 2,
                expand: 1,
                conv_kernel: 2,
                taps: [1, 2, 3],
                ..MambaConfig::default()
            },
            fusion_width: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn toggles_parse_keys() {
        let mut t = Toggles::default();
        t.apply("no-mamba").unwrap();
        t.apply("dense=concat").unwrap();
        t.apply("head=mlp").unwrap();
        t.apply("e1+e2=off").unwrap();
        assert_eq!(
            t,
            Toggles {
                cnn: true,
                mamba: false,
                e1: false,
                e2: false,
                head: HeadKind::Mlp,
                dense: FusionMode::Concat
            }
        );
        assert!(matches!(t.apply("depth=3"), Err(Error::Config(_))));
        assert!(matches!(t.apply("cnn=maybe"), Err(Error::Config(_))));
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = ModelConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), cfg);
        let partial: ModelConfig = serde_json::from_str(r#"{"fusion_width": 16}"#).unwrap();
        assert_eq!(partial.fusion_width, 16);
        assert_eq!(partial.image_size, 64);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"width": 16}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny();
        cfg.toggles.cnn = false;
        cfg.toggles.mamba = false;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig {
            image_size: 48,
            ..tiny()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.moe.top_k = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn forward_shapes_under_every_variant() {
        let variants = [
            "",
            "no-cnn",
            "no-mamba",
            "no-e1",
            "no-e2",
            "e1+e2=off",
            "head=mlp",
            "dense=concat",
        ];
        for v in variants {
            let mut cfg = tiny();
            if !v.is_empty() {
                cfg.toggles.apply(v).unwrap();
            }
            let (net, store) = AfmNet::build::<f64>(&cfg, 0).unwrap();
            let mut s = Session::new(&store, Mode::Train, 0);
            let x =
                s.g.constant(Tensor::from_fn([2, 3, 32, 32], |i| ((i % 17) as f64 / 17.0) - 0.5));
            let out = net.forward(&mut s, x).unwrap();
            assert_eq!(s.g.shape(out.logits), &[2, 3], "{v}");
            assert_eq!(out.report.is_some(), cfg.toggles.head == HeadKind::Moe, "{v}");
            let sizes: Vec<usize> = out.taps.fused.iter().map(|&f| s.g.shape(f)[2]).collect();
            assert_eq!(sizes, vec![1, 2, 4], "{v}");
            let k = cfg.active_branches();
            let expect: Vec<usize> = match cfg.toggles.dense {
                FusionMode::Dense => (0..3).map(|i| 8 * (k + i)).collect(),
                FusionMode::Concat => vec![8 * k; 3],
            };
            assert_eq!(net.fusion.input_widths(), expect, "{v}");
        }
    }

    #[test]
    fn wrong_image_size_is_a_shape_error() {
        let (net, store) = AfmNet::build::<f64>(&tiny(), 0).unwrap();
        let mut s = Session::new(&store, Mode::Eval, 0);
        let x = s.g.constant(Tensor::zeros([1, 3, 64, 64]));
        assert!(matches!(net.forward(&mut s, x), Err(Error::Shape { .. })));
    }
}
