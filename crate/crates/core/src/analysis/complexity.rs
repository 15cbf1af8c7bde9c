use serde::Serialize;

use crate::error::Result;
use crate::model::fusion::{FusionCore, BOTTLENECK_RATIO, CHANNEL_REDUCTION, SPATIAL_KERNEL};
use crate::model::{HeadKind, ModelConfig};

/// Trainable elements and multiply-accumulates of one top-level module for a single image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleCount {
    pub module: String,
    pub params: usize,
    pub macs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Complexity {
    pub modules: Vec<ModuleCount>,
    pub params: usize,
    pub macs: usize,
    /// Two per multiply-accumulate.
    pub flops: usize,
}

impl Complexity {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("module,params,macs,flops\n");
        for m in &self.modules {
            out.push_str(&format!("{},{},{},{}\n", m.module, m.params, m.macs, 2 * m.macs));
        }
        out.push_str(&format!("total,{},{},{}\n", self.params, self.macs, self.flops));
        out
    }
}

#[derive(Default)]
struct Tally {
    params: usize,
    macs: usize,
}

impl Tally {
    /// Square `k×k` convolution producing an `out × out` map.
    fn conv(&mut self, cin: usize, cout: usize, k: usize, bias: bool, out: usize) {
        self.params += k * k * cin * cout + if bias { cout } else { 0 };
        self.macs += k * k * cin * cout * out * out;
    }

    fn linear(&mut self, input: usize, output: usize, bias: bool, rows: usize) {
        self.params += input * output + if bias { output } else { 0 };
        self.macs += input * output * rows;
    }

    /// Batch or layer norm: scale and shift only; running statistics are not trainable.
    fn norm(&mut self, channels: usize) {
        self.params += 2 * channels;
    }

    fn conv_bn(&mut self, cin: usize, cout: usize, k: usize, out: usize) {
        self.conv(cin, cout, k, false, out);
        self.norm(cout);
    }

    fn damf(&mut self, cin: usize, width: usize, size: usize) {
        let mid = width / BOTTLENECK_RATIO;
        let hidden = (width / CHANNEL_REDUCTION).max(1);
        for _ in 0..2 {
            self.conv_bn(cin, mid, 1, size);
            self.conv_bn(mid, mid, 3, size);
            self.conv_bn(mid, width, 1, size);
        }
        self.conv_bn(cin, mid, 3, size);
        self.conv_bn(mid, width, 1, size);
        self.conv_bn(3 * width, width, 1, size);
        // Average and max descriptors share the channel MLP.
        self.linear(width, hidden, true, 2);
        self.linear(hidden, width, true, 2);
        self.conv(2, 1, SPATIAL_KERNEL, true, size);
    }

    fn mlp(&mut self, input: usize, hidden: usize, output: usize) {
        self.linear(input, hidden, true, 1);
        self.linear(hidden, output, true, 1);
    }
}

/// Analytic parameter and MAC counts, walked from the configuration alone.
///
/// Convolutions count `k²·Cin·Cout·H'·W'`, linear maps `in·out` per row, and each selective
/// scan `3·L·E·S` (state decay, input injection, readout). Elementwise operations, pooling,
/// normalization and resizing are free. The mixture head counts the gate, the `k` routed
/// experts, the shared experts and the classifier.
pub fn count_params_flops(cfg: &ModelConfig) -> Result<Complexity> {
    cfg.validate()?;
    let t = cfg.toggles;
    let f = cfg.fusion_width;
    let size = cfg.image_size;
    let taps = cfg.cnn.tap_sizes(size);
    let mut modules = Vec::new();
    let mut push = |name: &str, tally: Tally| {
        modules.push(ModuleCount {
            module: name.to_string(),
            params: tally.params,
            macs: tally.macs,
        })
    };

    if t.cnn {
        let c = &cfg.cnn;
        let mut cnn = Tally::default();
        cnn.conv_bn(cfg.in_channels, c.stem_width(), 7, size / 2);
        let mut cin = c.stem_width();
        for (i, (&w, &n)) in c.widths.iter().zip(&c.blocks).enumerate() {
            let out = size / c.stage_reduction(i);
            for j in 0..n {
                let stride = if j == 0 {
                    crate::model::cnn::CnnConfig::stage_stride(i)
                } else {
                    1
                };
                cnn.conv_bn(cin, w, 3, out);
                cnn.conv_bn(w, w, 3, out);
                if stride != 1 || cin != w {
                    cnn.conv_bn(cin, w, 1, out);
                }
                cin = w;
            }
        }
        push("cnn", cnn);
        let mut e1 = Tally::default();
        for (&cin, &s) in c.tap_widths().iter().zip(&taps) {
            e1.conv(cin, f, 1, true, s);
            if t.e1 {
                e1.damf(f, f, s);
            }
        }
        push("e1", e1);
    }

    if t.mamba {
        let m = &cfg.mamba;
        let (d, e, st) = (m.embed_dim, m.inner_dim(), m.state_size);
        let grid = size / m.patch_size;
        let l = m.token_count(size);
        let mut mamba = Tally::default();
        mamba.conv(cfg.in_channels, d, m.patch_size, true, grid);
        mamba.params += d + l * d;
        for _ in 0..m.depth {
            mamba.norm(d);
            mamba.linear(d, 2 * e, false, l);
            mamba.params += e * m.conv_kernel + e;
            mamba.macs += e * m.conv_kernel * l;
            // One mixer shared by the forward, reverse and shuffled paths.
            let mut mixer = Tally::default();
            mixer.linear(e, e, true, l);
            mixer.linear(e, st, false, l);
            mixer.linear(e, st, false, l);
            mixer.macs += 3 * l * e * st;
            mamba.params += mixer.params + e * st;
            mamba.macs += 3 * mixer.macs;
            mamba.linear(e, 3, true, l);
            mamba.linear(e, d, false, l);
        }
        push("mamba", mamba);
        let mut e2 = Tally::default();
        for &s in &taps {
            e2.linear(d, f, true, grid * grid);
            if t.e2 {
                e2.damf(f, f, s);
            }
        }
        push("e2", e2);
    }

    let mut fusion = Tally::default();
    for i in 0..3 {
        fusion.damf(
            FusionCore::input_width(f, cfg.active_branches(), t.dense, i),
            f,
            taps[2 - i],
        );
    }
    push("fusion", fusion);

    let dim = cfg.final_width();
    let hidden = cfg.moe.hidden_mult.max(1) * dim;
    let mut head = Tally::default();
    match t.head {
        HeadKind::Moe => {
            let moe = &cfg.moe;
            head.linear(dim, moe.experts, true, 1);
            let mut expert = Tally::default();
            expert.mlp(dim, hidden, dim);
            head.params += (moe.experts + moe.shared) * expert.params;
            head.macs += (moe.top_k + moe.shared) * expert.macs;
            head.linear(dim, cfg.num_classes, true, 1);
        }
        HeadKind::Mlp => head.mlp(dim, hidden, cfg.num_classes),
    }
    push("head", head);

    let params = modules.iter().map(|m| m.params).sum();
    let macs = modules.iter().map(|m| m.macs).sum();
    Ok(Complexity {
        modules,
        params,
        macs,
        flops: 2 * macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AfmNet;
    use crate::nn::ParamKind;

    #[test]
    fn single_layer_arithmetic() {
        let mut t = Tally::default();
        t.linear(10, 5, true, 1);
        assert_eq!(t.params, 55);
        let mut t = Tally::default();
        t.conv(4, 8, 3, true, 1);
        assert_eq!(t.params, 296);
    }

    #[test]
    fn counts_match_built_models_for_every_variant() {
        let mut tiny: ModelConfig = serde_json::from_str(
            r#"{"image_size": 32, "num_classes": 3, "fusion_width": 8,
                "cnn": {"widths": [4, 4, 8, 8], "blocks": [1, 2, 1, 1]},
                "mamba": {"embed_dim": 8, "depth": 4, "state_size": 2, "expand": 2,
                          "conv_kernel": 3, "patch_size": 8, "taps": [1, 2, 4]}}"#,
        )
        .unwrap();
        for spec in [
            None,
            Some("no-cnn"),
            Some("no-mamba"),
            Some("no-e1"),
            Some("no-e2"),
            Some("e1+e2=off"),
            Some("head=mlp"),
            Some("dense=concat"),
        ] {
            let mut cfg = tiny.clone();
            if let Some(s) = spec {
                cfg.toggles.apply(s).unwrap();
            }
            let (_, store) = AfmNet::build::<f32>(&cfg, 0).unwrap();
            let c = count_params_flops(&cfg).unwrap();
            assert_eq!(c.params, store.element_count(ParamKind::Trainable), "{spec:?}");
            assert_eq!(c.flops, 2 * c.macs);
        }
        tiny.moe.experts = 6;
        let (_, store) = AfmNet::build::<f32>(&tiny, 0).unwrap();
        assert_eq!(
            count_params_flops(&tiny).unwrap().params,
            store.element_count(ParamKind::Trainable)
        );
    }

    #[test]
    fn params_grow_with_experts_while_routed_work_stays() {
        let mut cfg = ModelConfig::default();
        let base = count_params_flops(&cfg).unwrap();
        cfg.moe.experts = 8;
        let more = count_params_flops(&cfg).unwrap();
        assert!(more.params > base.params);
        // Only the gate widens; routed experts stay at k.
        assert_eq!(more.macs, base.macs + 4 * cfg.final_width());
    }
}
