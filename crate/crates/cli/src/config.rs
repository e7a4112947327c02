//! Run configuration: defaults, optional JSON file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use rdvae::analysis::AnalysisOptions;
use rdvae::datasets::{FactorDatasetSpec, ToyKind, DEFAULT_AMBIENT_DIM, DEFAULT_SAMPLES};
use rdvae::losses::{CodingLoss, LossTag, Reduction};
use rdvae::vae::{ModelConfig, TrainConfig, VaeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const DEFAULT_IMAGE_HIDDEN: usize = 256;
pub const DEFAULT_IMAGE_LATENT: usize = 10;
pub const DEFAULT_TOY_LATENT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mix,
    Ramp,
    Norm,
    Idx,
}

impl DatasetKind {
    pub fn toy(self) -> Option<ToyKind> {
        match self {
            Self::Mix => Some(ToyKind::Mix),
            Self::Ramp => Some(ToyKind::Ramp),
            Self::Norm => Some(ToyKind::Norm),
            Self::Idx => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mix => "mix",
            Self::Ramp => "ramp",
            Self::Norm => "norm",
            Self::Idx => "idx",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub seed: u64,
    pub n_samples: usize,
    pub ambient_dim: usize,
    /// Directory of a previously generated toy dataset; used instead of regenerating.
    pub path: Option<PathBuf>,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Keeps only the first images of an IDX file.
    pub image_limit: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mix,
            seed: 0,
            n_samples: DEFAULT_SAMPLES,
            ambient_dim: DEFAULT_AMBIENT_DIM,
            path: None,
            idx_images: None,
            idx_labels: None,
            image_limit: None,
        }
    }
}

impl DatasetConfig {
    pub fn toy_spec(&self) -> Option<FactorDatasetSpec> {
        self.kind.toy().map(|k| {
            let mut spec = FactorDatasetSpec::preset(k, self.n_samples, self.seed);
            spec.ambient_dim = self.ambient_dim;
            spec
        })
    }
}

/// Everything a command needs; written to `config.json` fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    /// Latent width used when `model` is absent.
    pub latent_dim: Option<usize>,
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub loss: Option<CodingLoss>,
    /// Overrides the loss's reduction; toy data defaults to sum, images to mean.
    pub reduction: Option<Reduction>,
    pub analysis: AnalysisOptions,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            latent_dim: None,
            model: None,
            train: TrainConfig::default(),
            loss: None,
            reduction: None,
            analysis: AnalysisOptions::default(),
            deterministic: true,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("an output directory is required (--out)".into()))
    }

    fn default_tag(&self) -> LossTag {
        match self.dataset.kind {
            DatasetKind::Idx => LossTag::Bce,
            _ => LossTag::SquareError,
        }
    }

    fn default_reduction(&self) -> Reduction {
        match self.dataset.kind {
            DatasetKind::Idx => Reduction::Mean,
            _ => Reduction::Sum,
        }
    }

    /// Fills model and loss from the data shape when they are not given.
    pub fn resolve(&mut self, input_dim: usize, image_shape: Option<(usize, usize)>) {
        let reduction = self.reduction.unwrap_or(self.default_reduction());
        let loss = self.loss.get_or_insert(CodingLoss::new(self.default_tag()));
        if loss.tag != LossTag::Ssim {
            loss.reduction = reduction;
        }
        self.reduction = Some(loss.reduction);
        if let (Some(loss), Some((r, c))) = (self.loss.as_mut(), image_shape) {
            if loss.image_shape.is_none() && loss.tag == LossTag::Ssim {
                loss.image_shape = Some((r, c));
            }
        }
        if self.model.is_none() {
            self.model = Some(match self.dataset.kind {
                DatasetKind::Idx => ModelConfig::images(
                    input_dim,
                    self.latent_dim.unwrap_or(DEFAULT_IMAGE_LATENT),
                    DEFAULT_IMAGE_HIDDEN,
                ),
                _ => ModelConfig::toy(input_dim, self.latent_dim.unwrap_or(DEFAULT_TOY_LATENT)),
            });
        }
        self.latent_dim = self.model.as_ref().map(|m| m.latent_dim);
    }

    pub fn vae_config(&self) -> CliResult<VaeConfig> {
        match (&self.model, &self.loss) {
            (Some(model), Some(loss)) => Ok(VaeConfig {
                model: model.clone(),
                train: self.train.clone(),
                loss: *loss,
            }),
            _ => Err(CliError::Config("model and loss are unresolved".into())),
        }
    }

    pub fn hash(&self) -> CliResult<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    /// Writes `config.json` (the configuration plus its hash) into `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<String> {
        fs::create_dir_all(dir)?;
        let hash = self.hash()?;
        let mut v = serde_json::to_value(self)?;
        v["config_hash"] = serde_json::Value::String(hash.clone());
        fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&v)?)?;
        Ok(hash)
    }
}

/// Seed for one sweep cell: the first 8 bytes of SHA-256 over the base seed and cell key.
pub fn cell_seed(base: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
