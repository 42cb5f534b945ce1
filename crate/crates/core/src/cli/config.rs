use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dataio::{load_idx, synth_blobs_split, LabeledBatch, SyntheticSpec};
use crate::embedder::{EmbedderConfig, TrainConfig};
use crate::eval::EvalOptions;

/// Synthetic blobs plus an optional held-out split drawn from the same centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub k_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub angular_spread: f64,
    pub radius_jitter: f64,
    pub seed: u64,
    #[serde(default)]
    pub holdout_per_class: usize,
}

impl SyntheticSource {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            k_classes: self.k_classes,
            per_class: self.per_class,
            dim: self.dim,
            angular_spread: self.angular_spread,
            radius_jitter: self.radius_jitter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub eval_images: Option<PathBuf>,
    #[serde(default)]
    pub eval_labels: Option<PathBuf>,
}

/// Exactly one data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Idx(IdxSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub embedder: EmbedderConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths resolve against the config file's directory.
        if let DataSource::Idx(idx) = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in
                [Some(&mut idx.images), Some(&mut idx.labels), idx.eval_images.as_mut(), idx.eval_labels.as_mut()].into_iter().flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, e: &dyn std::fmt::Display| CliError::Config(format!("field `{name}`: {e}"));
        self.embedder.validate().map_err(|e| field("embedder", &e))?;
        self.train.validate().map_err(|e| field("train", &e))?;
        match &self.data {
            DataSource::Synthetic(s) => {
                s.spec().validate().map_err(|e| field("data.synthetic", &e))?;
                if s.dim != self.embedder.input_dim() {
                    return Err(CliError::Config(format!(
                        "field `embedder.layer_widths`: input width {} does not match data.synthetic.dim {}",
                        self.embedder.input_dim(),
                        s.dim
                    )));
                }
            }
            DataSource::Idx(i) => {
                if i.eval_images.is_some() != i.eval_labels.is_some() {
                    return Err(CliError::Config("field `data.idx`: eval_images and eval_labels must be given together".into()));
                }
            }
        }
        if self.eval.bins == 0 {
            return Err(CliError::Config("field `eval.bins`: must be >= 1".into()));
        }
        Ok(())
    }

    /// Training split.
    pub fn training_data(&self) -> Result<(LabeledBatch, Option<String>), CliError> {
        match &self.data {
            DataSource::Synthetic(s) => {
                let (set, _) = synth_blobs_split(&s.spec(), 0).map_err(|e| CliError::Config(e.to_string()))?;
                Ok((set.batch, set.warning))
            }
            DataSource::Idx(i) => Ok((load_checked(&i.images, &i.labels)?, None)),
        }
    }

    /// Held-out split when the config defines one, otherwise the training split.
    pub fn eval_data(&self) -> Result<LabeledBatch, CliError> {
        match &self.data {
            DataSource::Synthetic(s) if s.holdout_per_class > 0 => {
                Ok(synth_blobs_split(&s.spec(), s.holdout_per_class).map_err(|e| CliError::Config(e.to_string()))?.1)
            }
            DataSource::Idx(IdxSource { eval_images: Some(img), eval_labels: Some(lbl), .. }) => load_checked(img, lbl),
            _ => Ok(self.training_data()?.0),
        }
    }
}

fn load_checked(images: &Path, labels: &Path) -> Result<LabeledBatch, CliError> {
    for p in [images, labels] {
        if !p.exists() {
            return Err(CliError::Config(format!("data file not found: {}", p.display())));
        }
    }
    load_idx(images, labels).map_err(|e| CliError::Config(e.to_string()))
}
