use std::fs;
use std::path::{Path, PathBuf};

use afmnet::data::{split, DataSource, Dataset, DatasetSpec};
use afmnet::model::ModelConfig;
use afmnet::train::TrainConfig;
use afmnet::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::Common;

/// Everything one run needs, as read from `--config` and refined by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

pub const RUN_FILE: &str = "run.json";

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (or defaults) with the shared flags applied.
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::read(p)?,
            None => Self::default(),
        };
        cfg.apply(common)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, common: &Common) -> Result<()> {
        if let Some(seed) = common.seed {
            self.train.seed = seed;
        }
        for spec in &common.ablate {
            self.model.toggles.apply(spec)?;
        }
        if let Some(src) = &common.data {
            self.data.source = src.parse()?;
        }
        self.data.image_size = self.model.image_size;
        if self.data.source == DataSource::Synthetic {
            self.data.classes = self.model.num_classes;
        }
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()
    }

    /// Loads the dataset and returns its (train, test) split.
    pub fn load_split(&self) -> Result<(Dataset, Dataset)> {
        let data = self.load_data()?;
        let (train, test) = split(data.len(), self.data.train_fraction, self.data.seed)?;
        Ok((data.subset(&train), data.subset(&test)))
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let data = self.data.load()?;
        if data.num_classes() != self.model.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model is configured for {}; set model.num_classes",
                data.num_classes(),
                self.model.num_classes
            )));
        }
        Ok(data)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(RUN_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
