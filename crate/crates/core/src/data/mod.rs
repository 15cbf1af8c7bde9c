//! Labeled image sets: procedural synthetic scenes, class-per-directory folders, splits,
//! augmentation, and batch assembly.

mod augment;
mod folder;
mod synth;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use augment::{augment, AugmentConfig};
pub use folder::{decode_image, encode_ppm, load_folder, resize_bilinear};
pub use synth::{synth_generate, RULE_COUNT, RULE_NAMES};

/// One image, channel-major `[3, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
    pub image_size: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Subset by sample indices, keeping the class list.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            classes: self.classes.clone(),
            image_size: self.image_size,
        }
    }

    /// Stacks the chosen samples into `[B, 3, H, W]`, optionally augmenting each with a
    /// generator keyed by `(seed, sample index)`.
    pub fn batch<T: Real>(
        &self,
        indices: &[usize],
        aug: Option<(&AugmentConfig, u64)>,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let s = self.image_size;
        let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let sample = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("sample index {i} out of range ({})", self.len())))?;
            let img = match aug {
                Some((cfg, seed)) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                    augment(&sample.image, s, cfg, &mut rng)
                }
                None => sample.image.clone(),
            };
            data.extend(img.iter().map(|&v| T::lit(v as f64)));
            labels.push(sample.label);
        }
        Ok((Tensor::new([indices.len(), 3, s, s], data)?, labels))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "path")]
pub enum DataSource {
    Synthetic,
    Folder(PathBuf),
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    /// `synthetic` or `folder:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            Ok(DataSource::Synthetic)
        } else if let Some(p) = s.strip_prefix("folder:") {
            Ok(DataSource::Folder(PathBuf::from(p)))
        } else {
            Err(Error::Config(format!(
                "data source must be 'synthetic' or 'folder:<path>', got {s:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub classes: usize,
    /// Synthetic images per class.
    pub per_class: usize,
    pub image_size: usize,
    /// Fraction of samples in the training split; the rest form the test split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            classes: 8,
            per_class: 8,
            image_size: 64,
            train_fraction: 1.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!(
                "train fraction {} outside [0, 1]",
                self.train_fraction
            )));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.source == DataSource::Synthetic && self.classes < 2 {
            return Err(Error::Config("a dataset needs at least two classes".into()));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        match &self.source {
            DataSource::Synthetic => synth_generate(self.classes, self.per_class, self.image_size, self.seed),
            DataSource::Folder(p) => load_folder(p, self.image_size),
        }
    }
}

/// Seeded shuffle, then the first `round(fraction · n)` indices train and the rest test.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * n as f64).round() as usize;
    let test = idx.split_off(cut.min(n));
    Ok((idx, test))
}
