use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{evaluate, train_run, TrainConfig};

use super::complexity::count_params_flops;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub experts: usize,
    pub params: usize,
    pub weighted_f1: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("experts,params,weighted_f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.experts, r.params, r.weighted_f1));
    }
    out
}

/// Trains one model per expert count, one after another, and scores each on `eval`.
/// With `out`, run `M` goes to `out/experts-M` and the table to `out/sweep.csv`.
pub fn expert_sweep(
    model: &ModelConfig,
    train: &TrainConfig,
    train_data: &Dataset,
    eval_data: &Dataset,
    experts: &[usize],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if experts.is_empty() {
        return Err(Error::Config("expert sweep needs at least one expert count".into()));
    }
    if let Some(&m) = experts.iter().find(|&&m| m < model.moe.top_k) {
        return Err(Error::Config(format!(
            "{m} experts cannot serve top-{} routing",
            model.moe.top_k
        )));
    }
    let mut rows = Vec::with_capacity(experts.len());
    for &m in experts {
        let mut cfg = model.clone();
        cfg.moe.experts = m;
        let dir = out.map(|d| d.join(format!("experts-{m}")));
        let run = train_run(&cfg, train, train_data, dir.as_deref())?;
        let eval = evaluate(&run.net, &run.store, eval_data, train.batch_size)?;
        rows.push(SweepRow {
            experts: m,
            params: count_params_flops(&cfg)?.params,
            weighted_f1: eval.metrics.weighted_f1,
        });
    }
    if let Some(dir) = out {
        let p = dir.join("sweep.csv");
        fs::write(&p, sweep_csv(&rows)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(rows)
}
