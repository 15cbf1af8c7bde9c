use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ce_label_smoothing, total_loss};
use super::metrics::{compute_metrics, MetricsReport};
use super::optim::{lr_schedule, AdamW};
use crate::checkpoint;
use crate::data::{AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::model::moe::RoutingReport;
use crate::model::{AfmNet, ModelConfig};
use crate::nn::{Mode, ParamStore, Session};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Random flips and color jitter on training batches.
    pub augment: Option<AugmentConfig>,
    /// Stop after the first epoch whose training accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 5e-4,
            weight_decay: 0.05,
            batch_size: 16,
            epochs: 200,
            warmup_fraction: 0.05,
            label_smoothing: 0.1,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            stop_at_accuracy: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if !(self.lr_max >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rate and weight decay must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub aux: f64,
    pub oa: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Inputs routed to each expert over the epoch; empty without a mixture head.
    pub expert_utilization: Vec<usize>,
}

pub struct TrainOutcome {
    pub net: AfmNet,
    pub store: ParamStore<f32>,
    pub epochs: Vec<EpochLog>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f32>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Row-wise argmax; ties resolve to the lower class.
pub(crate) fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, r[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn check_compatible(cfg: &ModelConfig, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if data.num_classes() != cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes(),
            cfg.num_classes
        )));
    }
    if data.image_size != cfg.image_size {
        return Err(Error::Config(format!(
            "dataset images are {}px, model expects {}px",
            data.image_size, cfg.image_size
        )));
    }
    Ok(())
}

struct StepResult {
    loss: f32,
    ce: f32,
    aux: f32,
    preds: Vec<usize>,
    counts: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    net: &AfmNet,
    store: &mut ParamStore<f32>,
    opt: &mut AdamW<f32>,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    aug_seed: u64,
    session_seed: u64,
    lr: f64,
) -> Result<StepResult> {
    let (x, labels) = data.batch::<f32>(batch, cfg.augment.as_ref().map(|a| (a, aug_seed)))?;
    let mut s = Session::new(store, Mode::Train, session_seed);
    let xv = s.g.constant(x);
    let out = net.forward(&mut s, xv)?;
    let ce = ce_label_smoothing(&mut s.g, out.logits, &labels, cfg.label_smoothing)?;
    let loss = total_loss(&mut s.g, ce, out.aux)?;
    let value = s.g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Data(format!("non-finite training loss {value}")));
    }
    s.g.backward(loss)?;
    let grads: Vec<_> = s.param_grads().into_iter().map(|(id, g)| (id, g.clone())).collect();
    let updates = s.take_buffer_updates();
    let preds = argmax_rows(s.g.value(out.logits));
    let ce = s.g.value(ce).item();
    let aux = out.aux.map(|a| s.g.value(a).item()).unwrap_or(0.0);
    drop(s);
    opt.step(store, &grads, lr);
    store.apply_updates(updates);
    Ok(StepResult {
        loss: value,
        ce,
        aux,
        preds,
        counts: out.report.map(|r| r.counts).unwrap_or_default(),
    })
}

/// Trains a freshly initialized model. With `out`, writes `metrics.jsonl` (one object per
/// epoch) and a checkpoint into that directory.
pub fn train_run(model: &ModelConfig, cfg: &TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_compatible(model, data)?;
    let (net, mut store) = AfmNet::build::<f32>(model, cfg.seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let n = data.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = (per_epoch * cfg.epochs) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.jsonl");
            Some((fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut step = 0usize;
    'outer: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut preds, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut loss_sum, mut ce_sum, mut aux_sum, mut lr) = (0.0, 0.0, 0.0, 0.0);
        let mut utilization = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            lr = lr_schedule(step as f64, total, cfg.lr_max, cfg.warmup_fraction);
            let aug_seed = mix(cfg.seed, 1, (epoch as u64) << 32 | step as u64);
            let r = train_step(
                &net,
                &mut store,
                &mut opt,
                data,
                batch,
                cfg,
                aug_seed,
                mix(cfg.seed, 2, step as u64),
                lr,
            )
            .map_err(|e| Error::Training {
                epoch,
                step,
                source: Box::new(e),
            })?;
            let w = batch.len() as f64;
            loss_sum += r.loss as f64 * w;
            ce_sum += r.ce as f64 * w;
            aux_sum += r.aux as f64 * w;
            preds.extend(r.preds);
            labels.extend(batch.iter().map(|&i| data.samples[i].label));
            if utilization.len() < r.counts.len() {
                utilization.resize(r.counts.len(), 0);
            }
            utilization.iter_mut().zip(&r.counts).for_each(|(u, c)| *u += c);
            step_losses.push(r.loss);
            step += 1;
        }
        let seen = labels.len() as f64;
        let m = compute_metrics(&preds, &labels, model.num_classes)?;
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / seen,
            ce: ce_sum / seen,
            aux: aux_sum / seen,
            oa: m.oa,
            weighted_precision: m.weighted_precision,
            weighted_recall: m.weighted_recall,
            weighted_f1: m.weighted_f1,
            expert_utilization: utilization,
        };
        if let Some((f, p)) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&log)?).map_err(|e| Error::io(p.as_path(), e))?;
        }
        epochs.push(log);
        if cfg.stop_at_accuracy.is_some_and(|t| m.oa >= t) {
            break;
        }
    }
    if let Some(dir) = out {
        let meta = serde_json::json!({
            "train": cfg,
            "classes": data.classes,
            "epochs_run": epochs.len(),
            "steps_run": step,
        });
        checkpoint::save(dir, model, &store, meta)?;
    }
    Ok(TrainOutcome {
        net,
        store,
        epochs,
        step_losses,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub preds: Vec<usize>,
    pub labels: Vec<usize>,
    pub metrics: MetricsReport,
    /// Gate probabilities per sample; empty without a mixture head.
    pub gate_scores: Vec<Vec<f64>>,
    pub reports: Vec<RoutingReport>,
}

/// Inference-mode logits and routing reports over `indices`, in batches.
pub fn predict<T: Real>(
    net: &AfmNet,
    store: &ParamStore<T>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<(Vec<Tensor<T>>, Vec<RoutingReport>)> {
    let mut logits = Vec::new();
    let mut reports = Vec::new();
    for batch in indices.chunks(batch_size.max(1)) {
        let (x, _) = data.batch::<T>(batch, None)?;
        let mut s = Session::new(store, Mode::Eval, 0).without_param_grads();
        let xv = s.g.constant(x);
        let out = net.forward(&mut s, xv)?;
        logits.push(s.g.value(out.logits).clone());
        reports.extend(out.report);
    }
    Ok((logits, reports))
}

pub fn evaluate<T: Real>(net: &AfmNet, store: &ParamStore<T>, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    check_compatible(&net.config, data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let (logits, reports) = predict(net, store, data, &indices, batch_size)?;
    let preds: Vec<usize> = logits.iter().flat_map(argmax_rows).collect();
    let labels = data.labels();
    let metrics = compute_metrics(&preds, &labels, net.config.num_classes)?;
    let gate_scores = reports.iter().flat_map(|r| r.scores.clone()).collect();
    Ok(Evaluation {
        preds,
        labels,
        metrics,
        gate_scores,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    fn tiny() -> ModelConfig {
        serde_json::from_str(
            r#"{"image_size": 32, "num_classes": 2, "fusion_width": 8,
                "cnn": {"widths": [4, 4, 8, 8], "blocks": [1, 1, 1, 1]},
                "mamba": {"embed_dim": 8, "depth": 3, "state_size": 2, "expand": 1,
                          "conv_kernel": 2, "patch_size": 16, "taps": [1, 2, 3]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        let t = Tensor::<f64>::from_f64([2, 3], &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }

    #[test]
    fn short_run_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_generate(2, 3, 32, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train_run(&tiny(), &cfg, &data, Some(dir.path())).unwrap();
        assert_eq!(out.epochs.len(), 2);
        assert_eq!(out.step_losses.len(), 4);
        let log = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        for key in ["epoch", "lr", "loss", "oa", "weighted_f1", "aux", "expert_utilization"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert_eq!(out.epochs[0].expert_utilization.iter().sum::<usize>(), 2 * 6);
        let ck = checkpoint::load::<f32>(dir.path()).unwrap();
        let eval = evaluate(&ck.net, &ck.store, &data, 4).unwrap();
        let direct = evaluate(&out.net, &out.store, &data, 4).unwrap();
        assert_eq!(eval.preds, direct.preds);
        assert_eq!(eval.gate_scores.len(), 6);
    }

    #[test]
    fn same_seed_same_trace() {
        let data = synth_generate(2, 2, 32, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train_run(&tiny(), &cfg, &data, None).unwrap().step_losses;
        let b = train_run(&tiny(), &cfg, &data, None).unwrap().step_losses;
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let data = synth_generate(3, 1, 32, 0).unwrap();
        assert!(matches!(
            train_run(&tiny(), &TrainConfig::default(), &data, None),
            Err(Error::Config(_))
        ));
        let empty = Dataset {
            samples: vec![],
            classes: vec!["a".into(), "b".into()],
            image_size: 32,
        };
        assert!(matches!(
            train_run(&tiny(), &TrainConfig::default(), &empty, None),
            Err(Error::Data(_))
        ));
    }
}
