//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. A positional argument restricts the run to criteria whose number or title
//! contains it.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use afmnet::analysis::{count_params_flops, erf_map, input_gradient_map, support_size};
use afmnet::autodiff::Graph;
use afmnet::checkpoint;
use afmnet::data::synth_generate;
use afmnet::gradcheck::{gradient_pairs, relative_error, GradCheckOptions};
use afmnet::model::fusion::{FusionCore, FusionMode};
use afmnet::model::moe::{MoeConfig, MoeHead};
use afmnet::model::{AfmNet, ModelConfig, Tap, Toggles};
use afmnet::nn::{Mode, ParamBuilder, ParamKind, ParamStore, Session};
use afmnet::tensor::kernels::scan::{selective_scan_forward, ScanImpl};
use afmnet::train::{ce_label_smoothing, compute_metrics, evaluate, total_loss, train_run, TrainConfig};
use afmnet::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Ctx {
    root: tempfile::TempDir,
    /// Checkpoints written by training criteria, checked again by the complexity counter.
    checkpoints: Vec<PathBuf>,
}

impl Ctx {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(lo..hi))
}

fn tiny_config() -> ModelConfig {
    serde_json::from_str(
        r#"{"image_size": 32, "num_classes": 3, "fusion_width": 8,
            "cnn": {"widths": [4, 4, 8, 8], "blocks": [1, 1, 1, 1]},
            "mamba": {"embed_dim": 8, "depth": 3, "state_size": 2, "expand": 1,
                      "conv_kernel": 2, "patch_size": 16, "taps": [1, 2, 3]}}"#,
    )
    .unwrap()
}

// 1 ------------------------------------------------------------------------------------------

fn gradient_suite(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut ops = 0;
    let mut worst_op = (String::new(), 0.0f64);
    for (name, generate) in common::op_catalog() {
        let worst = common::op_worst_error(generate, 20);
        ensure(worst < 1e-5, || {
            format!("{name}: relative error {worst:.3e} over 20 instances")
        })?;
        if worst > worst_op.1 {
            worst_op = (name.to_string(), worst);
        }
        ops += 1;
    }

    // 64 px keeps every batch-norm over at least 8 values, away from the degenerate two-value case.
    let cfg = ModelConfig {
        image_size: 64,
        ..tiny_config()
    };
    let (net, store) = AfmNet::build::<f64>(&cfg, 3).map_err(|e| e.to_string())?;
    let ids = store.trainable_ids();
    let mut inputs = vec![random(&[2, 3, 64, 64], 5, 0.0, 1.0)];
    inputs.extend(ids.iter().map(|&id| store.get(id).clone()));
    let labels = [0usize, 2];
    let opts = GradCheckOptions {
        max_coords: Some(4),
        seed: 11,
        ..GradCheckOptions::default()
    };
    let pairs = gradient_pairs(&inputs, &opts, |g, v| {
        Session::on_graph(g, &store, Mode::Train, 7, |s| {
            for (&id, &var) in ids.iter().zip(&v[1..]) {
                s.bind_param(id, var);
            }
            let out = net.forward(s, v[0])?;
            let ce = ce_label_smoothing(&mut s.g, out.logits, &labels, 0.1)?;
            total_loss(&mut s.g, ce, out.aux)
        })
    })
    .map_err(|e| e.to_string())?;
    // Norm-wise error of the whole sampled gradient vector (input pixels and every parameter tensor).
    let analytic: Vec<f64> = pairs.iter().flat_map(|p| p.analytic.iter().copied()).collect();
    let numeric: Vec<f64> = pairs.iter().flat_map(|p| p.numeric.iter().copied()).collect();
    let model_error = relative_error(&analytic, &numeric);
    ensure(model_error < 1e-4, || {
        format!("whole-model gradient relative error {model_error:.3e}")
    })?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "{ops} ops x 20 instances, worst {:.1e} ({}); whole model {model_error:.1e} over {} coordinates in {} tensors",
        worst_op.1,
        worst_op.0,
        analytic.len(),
        pairs.len()
    ))
}

// 2 ------------------------------------------------------------------------------------------

/// `h_t = Σ_{j≤t} Δ_j·B_j·x_j` when every decay is exactly one.
fn cumulative_sum_oracle(x: &Tensor<f64>, delta: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>) -> Vec<f64> {
    let (n, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let s = b.shape()[2];
    let mut y = vec![0.0; n * l * d];
    for bi in 0..n {
        for ch in 0..d {
            let mut h = vec![0.0; s];
            for t in 0..l {
                let i = (bi * l + t) * d + ch;
                let mut acc = 0.0;
                for (k, hk) in h.iter_mut().enumerate() {
                    *hk += delta.data()[i] * b.data()[(bi * l + t) * s + k] * x.data()[i];
                    acc += c.data()[(bi * l + t) * s + k] * *hk;
                }
                y[i] = acc;
            }
        }
    }
    y
}

fn scan_oracle(_: &mut Ctx) -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng(21);
    for case in 0..50u64 {
        let (n, l, d, s) = (
            r.gen_range(1..=2),
            r.gen_range(1..=64),
            r.gen_range(1..=8),
            r.gen_range(1..=8),
        );
        let x = random(&[n, l, d], 100 + case, -1.0, 1.0);
        let delta = random(&[n, l, d], 200 + case, 0.001, 1.0);
        let a = random(&[d, s], 300 + case, -3.0, -0.01);
        let b = random(&[n, l, s], 400 + case, -1.0, 1.0);
        let c = random(&[n, l, s], 500 + case, -1.0, 1.0);
        let (seq, _) =
            selective_scan_forward(&x, &delta, &a, &b, &c, ScanImpl::Sequential).map_err(|e| e.to_string())?;
        let (assoc, _) =
            selective_scan_forward(&x, &delta, &a, &b, &c, ScanImpl::Associative).map_err(|e| e.to_string())?;
        let diff = seq.max_abs_diff(&assoc);
        ensure(diff <= 1e-10, || {
            format!("case {case} (L={l}, D={d}, S={s}): {diff:.3e}")
        })?;
        worst = worst.max(diff);
    }
    let mut worst_limit = 0.0f64;
    for (case, magnitude) in [0.0, 1e-12, -1e-12, -1e-11, 1e-13].into_iter().enumerate() {
        let case = case as u64;
        let (n, l, d, s) = (2, 40, 3, 4);
        let x = random(&[n, l, d], 600 + case, -1.0, 1.0);
        let delta = random(&[n, l, d], 700 + case, 0.01, 1.0);
        let a = Tensor::full([d, s], magnitude);
        let b = random(&[n, l, s], 800 + case, -1.0, 1.0);
        let c = random(&[n, l, s], 900 + case, -1.0, 1.0);
        let oracle = cumulative_sum_oracle(&x, &delta, &b, &c);
        for imp in [ScanImpl::Sequential, ScanImpl::Associative] {
            let (y, _) = selective_scan_forward(&x, &delta, &a, &b, &c, imp).map_err(|e| e.to_string())?;
            let diff = y
                .data()
                .iter()
                .zip(&oracle)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            ensure(diff <= 1e-8, || format!("A = {magnitude:e} ({imp:?}): {diff:.3e}"))?;
            worst_limit = worst_limit.max(diff);
        }
    }
    Ok(format!(
        "50 cases worst {worst:.1e}; A->0 closed form worst {worst_limit:.1e}"
    ))
}

// 3 ------------------------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn conv_loops(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, dil: usize) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for p in 0..k {
                            for q in 0..k {
                                let r = (i * stride + p * dil) as isize - pad as isize;
                                let s = (j * stride + q * dil) as isize - pad as isize;
                                if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < wd {
                                    acc += x.at(&[b, ch, r as usize, s as usize]) * w.at(&[o, ch, p, q]);
                                }
                            }
                        }
                    }
                    out[((b * f + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

fn conv_oracle(_: &mut Ctx) -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for stride in [1, 2] {
        for pad in [1, 2] {
            for dil in [1, 2] {
                let seed = (stride * 100 + pad * 10 + dil) as u64;
                let x = random(&[2, 3, 9, 8], seed, -1.0, 1.0);
                let w = random(&[4, 3, 3, 3], seed + 1, -1.0, 1.0);
                let mut g = Graph::new();
                let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
                let y = g.conv2d(xv, wv, stride, pad, dil).map_err(|e| e.to_string())?;
                let (shape, oracle) = conv_loops(&x, &w, stride, pad, dil);
                ensure(g.shape(y) == shape.as_slice(), || {
                    format!("shape {:?} vs {shape:?}", g.shape(y))
                })?;
                let diff = g
                    .value(y)
                    .data()
                    .iter()
                    .zip(&oracle)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max);
                ensure(diff <= 1e-12, || {
                    format!("stride {stride} pad {pad} dilation {dil}: {diff:.3e}")
                })?;
                worst = worst.max(diff);
                count += 1;
            }
        }
    }
    Ok(format!("{count} geometries, worst {worst:.1e}"))
}

// 4 ------------------------------------------------------------------------------------------

fn moe_head(cfg: &MoeConfig, seed: u64) -> (MoeHead, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let head = MoeHead::new(&mut ParamBuilder::new(&mut store, &mut r), 12, 5, cfg).unwrap();
    (head, store)
}

fn route(head: &MoeHead, store: &ParamStore<f64>, batch: usize, seed: u64) -> (afmnet::model::moe::RoutingReport, f64) {
    let mut s = Session::new(store, Mode::Eval, 0);
    let v = s.g.constant(random(&[batch, 12], seed, -1.0, 1.0));
    let out = head.forward(&mut s, v).unwrap();
    let aux = s.g.value(out.aux).item();
    (out.report, aux)
}

fn moe_invariants(_: &mut Ctx) -> Outcome {
    let cfg = MoeConfig::default();
    let (k, m, alpha) = (cfg.top_k, cfg.experts, cfg.alpha);
    let (head, mut store) = moe_head(&cfg, 1);
    let batch = 32;
    let (report, _) = route(&head, &store, batch, 2);
    for (i, row) in report.scores.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-6, || format!("gate row {i} sums to {sum}"))?;
    }
    ensure(report.selected.iter().all(|s| s.len() == k), || {
        "selection size differs from k".into()
    })?;
    let evaluations: usize = report.expert_evaluations.iter().sum();
    ensure(evaluations == k * batch, || {
        format!("{evaluations} expert evaluations for {batch} inputs")
    })?;
    ensure(report.expert_evaluations == report.counts, || {
        "evaluations differ from routing counts".into()
    })?;

    store.get_mut(head.gate.weight).data_mut().fill(0.0);
    store.get_mut(head.gate.bias.unwrap()).data_mut().fill(0.0);
    let (uniform, uniform_aux) = route(&head, &store, batch, 3);
    ensure((uniform_aux - alpha * k as f64).abs() <= 1e-6, || {
        format!("uniform aux {uniform_aux}, expected {}", alpha * k as f64)
    })?;
    ensure((uniform.aux_loss - uniform_aux).abs() <= 1e-12, || {
        "report and graph aux disagree".into()
    })?;

    let single = MoeConfig { top_k: 1, ..cfg };
    let (head, mut store) = moe_head(&single, 4);
    store.get_mut(head.gate.weight).data_mut().fill(0.0);
    let bias = store.get_mut(head.gate.bias.unwrap()).data_mut();
    bias.fill(0.0);
    bias[0] = 60.0;
    let (collapsed, aux) = route(&head, &store, batch, 5);
    ensure(collapsed.counts[0] == batch, || {
        format!("collapse counts {:?}", collapsed.counts)
    })?;
    ensure((aux - alpha * m as f64).abs() <= 1e-6, || {
        format!("collapse aux {aux}, expected {}", alpha * m as f64)
    })?;
    let per_input = collapsed.expert_evaluations.iter().sum::<usize>() as f64 / batch as f64;
    Ok(format!(
        "rows sum to 1, {k} experts per input; uniform aux {uniform_aux:.6}, collapse aux {aux:.6}, {per_input} expert per input at k=1"
    ))
}

// 5 ------------------------------------------------------------------------------------------

fn metrics_oracle(_: &mut Ctx) -> Outcome {
    let mut r = rng(55);
    for trial in 0..1000 {
        let c = r.gen_range(2..=45);
        let n = r.gen_range(1..=300);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if r.gen_bool(0.6) { l } else { r.gen_range(0..c) })
            .collect();
        let m = compute_metrics(&preds, &labels, c).map_err(|e| e.to_string())?;
        let mut correct = 0;
        let mut wp = 0.0;
        let mut wr = 0.0;
        let mut wf = 0.0;
        for class in 0..c {
            let tp = (0..n).filter(|&i| preds[i] == class && labels[i] == class).count();
            let fp = (0..n).filter(|&i| preds[i] == class && labels[i] != class).count();
            let fn_ = (0..n).filter(|&i| preds[i] != class && labels[i] == class).count();
            correct += tp;
            let p = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let rc = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
            let support = (tp + fn_) as f64;
            wp += p * support;
            wr += rc * support;
            wf += f * support;
            ensure(m.tp[class] == tp && m.fp[class] == fp && m.fn_[class] == fn_, || {
                format!("trial {trial} class {class}: counts differ")
            })?;
            ensure(
                m.precision[class] == p && m.recall[class] == rc && m.f1[class] == f,
                || format!("trial {trial} class {class}: ratios differ"),
            )?;
            for pred in 0..c {
                let cell = (0..n).filter(|&i| labels[i] == class && preds[i] == pred).count();
                ensure(m.confusion[class][pred] == cell, || {
                    format!("trial {trial}: confusion[{class}][{pred}]")
                })?;
            }
        }
        let nf = n as f64;
        ensure(m.oa == correct as f64 / nf, || format!("trial {trial}: OA"))?;
        ensure(
            m.weighted_precision == wp / nf && m.weighted_recall == wr / nf && m.weighted_f1 == wf / nf,
            || format!("trial {trial}: weighted averages"),
        )?;
        ensure((m.weighted_recall - m.oa).abs() <= 1e-12, || {
            format!("trial {trial}: weighted recall vs OA")
        })?;
    }
    let hand = compute_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure(hand.oa == 0.75, || format!("hand OA {}", hand.oa))?;
    ensure((hand.weighted_f1 - 0.7333).abs() <= 1e-4, || {
        format!("hand weighted F1 {}", hand.weighted_f1)
    })?;
    Ok(format!(
        "1000 random vectors exact; hand case OA {} F1 {:.4}",
        hand.oa, hand.weighted_f1
    ))
}

// 6 ------------------------------------------------------------------------------------------

fn channel_law(_: &mut Ctx) -> Outcome {
    for f in [16, 32] {
        for (mode, toggle) in [(FusionMode::Dense, None), (FusionMode::Concat, Some("dense=concat"))] {
            let mut cfg = ModelConfig {
                fusion_width: f,
                ..ModelConfig::default()
            };
            if let Some(t) = toggle {
                cfg.toggles.apply(t).unwrap();
            }
            let (net, store) = AfmNet::build::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
            let expected: Vec<usize> = (0..3)
                .map(|i| match mode {
                    FusionMode::Dense => f * (2 + i),
                    FusionMode::Concat => 2 * f,
                })
                .collect();
            ensure(net.fusion.input_widths() == expected, || {
                format!("F={f} {mode:?}: widths {:?}", net.fusion.input_widths())
            })?;
            for (i, &w) in expected.iter().enumerate() {
                ensure(FusionCore::input_width(f, 2, mode, i) == w, || {
                    "input_width disagrees".into()
                })?;
                for branch in ["dilated1.reduce", "dilated2.reduce", "plain.conv3"] {
                    let name = format!("fusion.stage{i}.{branch}.conv.weight");
                    let shape = store
                        .by_name(&name)
                        .ok_or_else(|| format!("missing {name}"))?
                        .shape()
                        .to_vec();
                    ensure(shape[1] == w, || {
                        format!("{name} has shape {shape:?}, expected {w} inputs")
                    })?;
                }
            }
        }
    }
    Ok("F=16,32: dense 2F/3F/4F, concat 2F/2F/2F (stored weights agree)".into())
}

// 7 ------------------------------------------------------------------------------------------

fn erf_locality(_: &mut Ctx) -> Outcome {
    let size = 13;
    let center = size / 2;
    for seed in 0..3 {
        let mut g = Graph::new();
        let x = g.variable(random(&[1, 2, size, size], seed, 0.1, 1.0));
        let w1 = g.constant(random(&[3, 2, 3, 3], seed + 10, 0.1, 1.0));
        let w2 = g.constant(random(&[2, 3, 3, 3], seed + 20, 0.1, 1.0));
        let h = g.conv2d(x, w1, 1, 1, 1).map_err(|e| e.to_string())?;
        let y = g.conv2d(h, w2, 1, 1, 1).map_err(|e| e.to_string())?;
        let map = input_gradient_map(&mut g, x, y).map_err(|e| e.to_string())?;
        for r in 0..size {
            for c in 0..size {
                let inside = r.abs_diff(center) <= 2 && c.abs_diff(center) <= 2;
                let v = map.at(&[r, c]);
                ensure((v != 0.0) == inside, || format!("seed {seed}: ({r},{c}) = {v}"))?;
            }
        }
    }

    let base = ModelConfig {
        image_size: 128,
        ..ModelConfig::default()
    };
    let mut cnn_only = base.clone();
    cnn_only.toggles = Toggles {
        mamba: false,
        ..Toggles::default()
    };
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let image = random(&[1, 3, 128, 128], 1000 + seed, 0.0, 1.0).cast::<f32>();
        let (full, full_store) = AfmNet::build::<f32>(&base, seed).map_err(|e| e.to_string())?;
        let (cnn, cnn_store) = AfmNet::build::<f32>(&cnn_only, seed).map_err(|e| e.to_string())?;
        let full_map = erf_map(&full, &full_store, &image, Tap::Fused).map_err(|e| e.to_string())?;
        let cnn_map = erf_map(&cnn, &cnn_store, &image, Tap::Cnn).map_err(|e| e.to_string())?;
        let (a, b) = (support_size(&full_map), support_size(&cnn_map));
        ensure(a > b, || format!("seed {seed}: full support {a} vs cnn-only {b}"))?;
        pairs.push(format!("{a}>{b}"));
    }
    Ok(format!(
        "two-conv toy exact radius 2; support full vs cnn-only {}",
        pairs.join(" ")
    ))
}

// 8 ------------------------------------------------------------------------------------------

fn overfit(ctx: &mut Ctx) -> Outcome {
    let data = synth_generate(8, 8, 64, 0).map_err(|e| e.to_string())?;
    let model = ModelConfig::default();
    let train = TrainConfig {
        epochs: 200,
        stop_at_accuracy: Some(0.99),
        ..TrainConfig::default()
    };
    let mut traces = Vec::new();
    let mut detail = String::new();
    for run in 0..2 {
        let dir = ctx.dir(&format!("overfit{run}"));
        let start = Instant::now();
        let out = train_run(&model, &train, &data, Some(&dir)).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let eval = evaluate(&out.net, &out.store, &data, 16).map_err(|e| e.to_string())?;
        ensure(eval.metrics.oa >= 0.99, || {
            format!(
                "run {run}: train accuracy {} after {} epochs",
                eval.metrics.oa,
                out.epochs.len()
            )
        })?;
        ensure(secs < 900.0, || format!("run {run} took {secs:.0}s"))?;
        if run == 0 {
            detail = format!(
                "train OA {:.3} after {} epochs in {secs:.0}s",
                eval.metrics.oa,
                out.epochs.len()
            );
        }
        traces.push(out.step_losses.iter().map(|l| l.to_bits()).collect::<Vec<u32>>());
        ctx.checkpoints.push(dir);
    }
    ensure(traces[0] == traces[1], || {
        "loss traces differ between identical runs".into()
    })?;
    Ok(format!("{detail}; rerun bit-identical over {} steps", traces[0].len()))
}

// 9 ------------------------------------------------------------------------------------------

const VARIANTS: [&str; 7] = ["cnn", "mamba", "e1", "e2", "e1+e2", "head=mlp", "dense=concat"];

fn ablation_wiring(ctx: &mut Ctx) -> Outcome {
    let data = synth_generate(8, 8, 64, 1).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    for variant in VARIANTS {
        let mut model = ModelConfig::default();
        model.toggles.apply(variant).map_err(|e| e.to_string())?;
        let dir = ctx.dir(&format!("ablate-{}", variant.replace(['=', '+'], "_")));
        let out = train_run(&model, &train, &data, Some(&dir)).map_err(|e| format!("{variant}: {e}"))?;
        ensure(out.epochs.len() == 5, || {
            format!("{variant}: {} epochs", out.epochs.len())
        })?;
        ensure(out.step_losses.iter().all(|l| l.is_finite()), || {
            format!("{variant}: non-finite loss")
        })?;
        let manifest = checkpoint::read_manifest(&dir).map_err(|e| e.to_string())?;
        ensure(manifest.model.toggles == model.toggles, || {
            format!("{variant}: manifest toggles {:?}", manifest.model.toggles)
        })?;
        let raw: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join(checkpoint::MANIFEST)).unwrap()).unwrap();
        ensure(raw["model"]["toggles"].is_object(), || {
            format!("{variant}: toggles not serialized")
        })?;
        ctx.checkpoints.push(dir);
    }
    Ok(format!(
        "{} variants trained 5 epochs; toggles recorded",
        VARIANTS.len()
    ))
}

// 10 -----------------------------------------------------------------------------------------

fn logits_of(net: &AfmNet, store: &ParamStore<f32>, images: &Tensor<f32>) -> Vec<u32> {
    let mut s = Session::new(store, Mode::Eval, 0).without_param_grads();
    let x = s.g.constant(images.clone());
    let out = net.forward(&mut s, x).unwrap();
    s.g.value(out.logits).data().iter().map(|v| v.to_bits()).collect()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn checkpoint_round_trip(ctx: &mut Ctx) -> Outcome {
    let data = synth_generate(4, 2, 64, 2).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        num_classes: 4,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let dir = ctx.dir("roundtrip");
    let out = train_run(&model, &train, &data, Some(&dir)).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load::<f32>(&dir).map_err(|e| e.to_string())?;
    let images = data.batch::<f32>(&[0, 3, 5], None).map_err(|e| e.to_string())?.0;
    ensure(
        logits_of(&out.net, &out.store, &images) == logits_of(&loaded.net, &loaded.store, &images),
        || "reloaded logits differ".into(),
    )?;
    for (a, b) in out.store.entries().iter().zip(loaded.store.entries()) {
        let same = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(a.name == b.name && same, || format!("parameter {} differs", a.name))?;
    }
    ctx.checkpoints.push(dir.clone());

    let bad = ctx.dir("roundtrip-corrupt");
    copy_dir(&dir, &bad);
    let victim = &loaded.manifest.params[loaded.manifest.params.len() / 2];
    let blob = bad.join(&victim.file);
    let mut bytes = fs::read(&blob).unwrap();
    let mid = bytes.len() - 3;
    bytes[mid] ^= 0x10;
    fs::write(&blob, bytes).unwrap();
    match checkpoint::load::<f32>(&bad) {
        Err(e @ Error::Integrity(_)) => {
            ensure(e.exit_code() == 4, || format!("exit code {}", e.exit_code()))?;
            ensure(e.to_string().contains(&victim.name), || {
                format!("error does not name the blob: {e}")
            })?;
        }
        Err(e) => return Err(format!("corruption reported as {e}")),
        Ok(_) => return Err("corrupted blob loaded".into()),
    }
    Ok(format!(
        "{} parameters bit-exact; flipped bit in {} detected",
        loaded.store.len(),
        victim.name
    ))
}

// 11 -----------------------------------------------------------------------------------------

#[derive(Default)]
struct Ledger {
    params: usize,
    macs: usize,
}

impl Ledger {
    fn add(&mut self, params: usize, macs: usize) {
        self.params += params;
        self.macs += macs;
    }

    /// Square kernel, square output map of side `out`.
    fn conv(&mut self, cin: usize, cout: usize, k: usize, bias: bool, out: usize) {
        let weights = cin * cout * k * k;
        self.add(weights + if bias { cout } else { 0 }, weights * out * out);
    }

    fn bn(&mut self, c: usize) {
        self.add(2 * c, 0);
    }

    fn linear(&mut self, i: usize, o: usize, bias: bool, rows: usize) {
        self.add(i * o + if bias { o } else { 0 }, i * o * rows);
    }

    /// Attention fusion block with width 8: bottleneck width 2, channel hidden width 1.
    fn damf8(&mut self, cin: usize, side: usize) {
        for _dilation in [1, 2] {
            self.conv(cin, 2, 1, false, side);
            self.bn(2);
            self.conv(2, 2, 3, false, side);
            self.bn(2);
            self.conv(2, 8, 1, false, side);
            self.bn(8);
        }
        self.conv(cin, 2, 3, false, side);
        self.bn(2);
        self.conv(2, 8, 1, false, side);
        self.bn(8);
        self.conv(24, 8, 1, false, side);
        self.bn(8);
        self.linear(8, 1, true, 2);
        self.linear(1, 8, true, 2);
        self.conv(2, 1, 7, true, side);
    }
}

/// 32 px input; cnn widths 4/4/8/8 one block each; taps 4/8/8 channels at 4, 2, 1 px.
fn cnn_ledger(l: &mut Ledger, e1: bool) {
    l.conv(3, 4, 7, false, 16);
    l.bn(4);
    // stage 1 at 8 px, identity shortcut
    l.conv(4, 4, 3, false, 8);
    l.bn(4);
    l.conv(4, 4, 3, false, 8);
    l.bn(4);
    // stage 2 at 4 px, stride-2 projection
    l.conv(4, 4, 3, false, 4);
    l.bn(4);
    l.conv(4, 4, 3, false, 4);
    l.bn(4);
    l.conv(4, 4, 1, false, 4);
    l.bn(4);
    // stage 3 at 2 px, stride 2 and width change
    l.conv(4, 8, 3, false, 2);
    l.bn(8);
    l.conv(8, 8, 3, false, 2);
    l.bn(8);
    l.conv(4, 8, 1, false, 2);
    l.bn(8);
    // stage 4 at 1 px, stride-2 projection
    l.conv(8, 8, 3, false, 1);
    l.bn(8);
    l.conv(8, 8, 3, false, 1);
    l.bn(8);
    l.conv(8, 8, 1, false, 1);
    l.bn(8);
    for (cin, side) in [(4, 4), (8, 2), (8, 1)] {
        l.conv(cin, 8, 1, true, side);
        if e1 {
            l.damf8(8, side);
        }
    }
}

fn complexity_counter(ctx: &mut Ctx) -> Outcome {
    // Tiny config A: cnn only, MLP head, dense fusion over one branch.
    let mut a = ModelConfig {
        image_size: 32,
        num_classes: 3,
        fusion_width: 8,
        ..tiny_config()
    };
    a.toggles.apply("mamba").unwrap();
    a.toggles.apply("head=mlp").unwrap();
    let mut la = Ledger::default();
    cnn_ledger(&mut la, true);
    la.damf8(8, 1);
    la.damf8(16, 2);
    la.damf8(24, 4);
    la.linear(24, 96, true, 1);
    la.linear(96, 3, true, 1);

    // Tiny config B: everything on. Mamba: 8-dim tokens, 3 blocks, 2 states, 5 tokens.
    let b = tiny_config();
    let mut lb = Ledger::default();
    cnn_ledger(&mut lb, true);
    lb.conv(3, 8, 16, true, 2);
    lb.add(8 + 5 * 8, 0);
    for _block in 0..3 {
        lb.add(16, 0);
        lb.linear(8, 16, false, 5);
        lb.add(8 * 2 + 8, 8 * 2 * 5);
        lb.add(8 * 2, 0);
        for _path in 0..3 {
            let mut mixer = Ledger::default();
            mixer.linear(8, 8, true, 5);
            mixer.linear(8, 2, false, 5);
            mixer.linear(8, 2, false, 5);
            lb.add(0, mixer.macs + 3 * 5 * 8 * 2);
        }
        lb.add(8 * 8 + 8 + 2 * 8 * 2, 0);
        lb.linear(8, 3, true, 5);
        lb.linear(8, 8, false, 5);
    }
    for side in [4, 2, 1] {
        lb.linear(8, 8, true, 4);
        lb.damf8(8, side);
    }
    lb.damf8(16, 1);
    lb.damf8(24, 2);
    lb.damf8(32, 4);
    lb.linear(24, 4, true, 1);
    let mut expert = Ledger::default();
    expert.linear(24, 96, true, 1);
    expert.linear(96, 24, true, 1);
    lb.add(5 * expert.params, 3 * expert.macs);
    lb.linear(24, 3, true, 1);

    for (name, cfg, ledger) in [("A", &a, &la), ("B", &b, &lb)] {
        let c = count_params_flops(cfg).map_err(|e| e.to_string())?;
        ensure(c.params == ledger.params && c.macs == ledger.macs, || {
            format!(
                "config {name}: counter {}/{} vs ledger {}/{}",
                c.params, c.macs, ledger.params, ledger.macs
            )
        })?;
        ensure(c.flops == 2 * c.macs, || "FLOPs are not twice the MACs".into())?;
        let (_, store) = AfmNet::build::<f32>(cfg, 0).map_err(|e| e.to_string())?;
        ensure(store.element_count(ParamKind::Trainable) == c.params, || {
            format!("config {name}: built model differs")
        })?;
    }

    ensure(!ctx.checkpoints.is_empty(), || "no trained checkpoints to check".into())?;
    for dir in &ctx.checkpoints {
        let manifest = checkpoint::read_manifest(dir).map_err(|e| e.to_string())?;
        let counted = count_params_flops(&manifest.model).map_err(|e| e.to_string())?.params;
        ensure(counted == manifest.trainable_elements(), || {
            format!(
                "{}: counter {counted} vs serialized {}",
                dir.display(),
                manifest.trainable_elements()
            )
        })?;
    }
    Ok(format!(
        "ledgers A {}/{} and B {}/{} params/MACs; {} checkpoints agree",
        la.params,
        la.macs,
        lb.params,
        lb.macs,
        ctx.checkpoints.len()
    ))
}

type Criterion = fn(&mut Ctx) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("gradient suite", gradient_suite),
        ("scan oracle", scan_oracle),
        ("convolution oracle", conv_oracle),
        ("MoE invariants", moe_invariants),
        ("metrics oracle", metrics_oracle),
        ("dense-fusion channel law", channel_law),
        ("ERF locality", erf_locality),
        ("overfit sanity", overfit),
        ("ablation wiring", ablation_wiring),
        ("checkpoint round trip", checkpoint_round_trip),
        ("complexity counter", complexity_counter),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut ctx = Ctx {
        root: tempfile::tempdir().expect("temporary directory"),
        checkpoints: Vec::new(),
    };
    let mut failed = 0;
    let mut ran = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let number = (i + 1).to_string();
        if !filters.is_empty() && !filters.iter().any(|f| *f == number || title.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut ctx))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  criterion {number:>2} {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {number:>2} {title}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
