//! Analysis reports: effective receptive fields, class activation maps, routing tables,
//! complexity ledgers and expert-count sweeps. Every report is plain CSV plus a JSON sidecar.

mod cam;
mod complexity;
mod erf;
mod routing;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Real, Tensor};

pub use cam::{cam_from_gradients, grad_cam};
pub use complexity::{count_params_flops, Complexity, ModuleCount};
pub use erf::{erf_map, input_gradient_map, support_size, SUPPORT_THRESHOLD};
pub use routing::{routing_stats, RoutingTable};
pub use sweep::{expert_sweep, sweep_csv, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Erf,
    Cam,
    Routing,
    Complexity,
}

impl ArtifactKind {
    fn stem(self) -> &'static str {
        match self {
            ArtifactKind::Erf => "erf",
            ArtifactKind::Cam => "cam",
            ArtifactKind::Routing => "routing",
            ArtifactKind::Complexity => "complexity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: ArtifactKind,
    /// SHA-256 of the model configuration's JSON form.
    pub config_hash: String,
    pub input_id: String,
    /// Data rows of the CSV, excluding any header.
    pub rows: usize,
    pub cols: usize,
    pub header: bool,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

/// A CSV payload with the metadata describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisArtifact {
    pub meta: ArtifactMeta,
    pub csv: String,
}

pub fn config_hash(cfg: &ModelConfig) -> String {
    crate::checkpoint::sha256_hex(&serde_json::to_vec(cfg).expect("model config serializes"))
}

/// Comma-separated grid, one line per row.
pub fn grid_csv<T: Real>(map: &Tensor<T>) -> String {
    let cols = *map.shape().last().unwrap_or(&1);
    let mut out = String::new();
    for row in map.data().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

impl AnalysisArtifact {
    pub fn grid<T: Real>(kind: ArtifactKind, cfg: &ModelConfig, input_id: &str, map: &Tensor<T>) -> Result<Self> {
        if map.rank() != 2 {
            return Err(Error::shape(
                "artifact",
                format!("grid needs rank 2, got {:?}", map.shape()),
            ));
        }
        Ok(Self {
            meta: ArtifactMeta {
                kind,
                config_hash: config_hash(cfg),
                input_id: input_id.to_string(),
                rows: map.shape()[0],
                cols: map.shape()[1],
                header: false,
                extra: serde_json::Value::Null,
            },
            csv: grid_csv(map),
        })
    }

    /// Wraps a headed table, counting rows and columns from the text.
    pub fn table(kind: ArtifactKind, cfg: &ModelConfig, input_id: &str, csv: String) -> Self {
        let mut lines = csv.lines();
        let cols = lines.next().map_or(0, |h| h.split(',').count());
        Self {
            meta: ArtifactMeta {
                kind,
                config_hash: config_hash(cfg),
                input_id: input_id.to_string(),
                rows: lines.count(),
                cols,
                header: true,
                extra: serde_json::Value::Null,
            },
            csv,
        }
    }

    pub fn with_extra(mut self, extra: serde_json::Value) -> Self {
        self.meta.extra = extra;
        self
    }

    /// Writes `<kind>.csv` and `<kind>.json` into `dir`; returns the CSV path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.meta.kind.stem()));
        fs::write(&csv, &self.csv).map_err(|e| Error::io(&csv, e))?;
        let meta = dir.join(format!("{}.json", self.meta.kind.stem()));
        fs::write(&meta, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&meta, e))?;
        Ok(csv)
    }
}
