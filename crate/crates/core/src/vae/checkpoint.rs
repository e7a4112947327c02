//! Self-describing JSON checkpoints for resumable training.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::{Trainer, TRAIN_STREAM};
use super::{EpochRecord, VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp};

const FORMAT_VERSION: u32 = 1;

/// SHA-256 of the canonical JSON encoding of a configuration.
pub fn config_hash(config: &VaeConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string since it is 128-bit.
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub trunk: Mlp,
    pub mu_head: Mlp,
    pub logvar_head: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: VaeConfig,
    pub epoch: usize,
    pub networks: Networks,
    pub adam: AdamState,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
}

fn revalidate(net: &Mlp) -> Result<Mlp> {
    Mlp::from_layers(net.layers().to_vec())
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Result<Self> {
        let m = &t.model;
        Ok(Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash(m.config())?,
            config: m.config().clone(),
            epoch: t.epochs_done(),
            networks: Networks {
                trunk: m.trunk.clone(),
                mu_head: m.mu_head.clone(),
                logvar_head: m.logvar_head.clone(),
                decoder: m.decoder.clone(),
            },
            adam: t.adam.clone(),
            rng: RngState {
                seed: m.config().train.seed,
                stream: t.rng.get_stream(),
                word_pos: t.rng.get_word_pos().to_string(),
            },
            history: t.history.clone(),
        })
    }

    pub fn model(&self) -> Result<VaeModel> {
        self.verify()?;
        let n = &self.networks;
        VaeModel::from_networks(
            self.config.clone(),
            revalidate(&n.trunk)?,
            revalidate(&n.mu_head)?,
            revalidate(&n.logvar_head)?,
            revalidate(&n.decoder)?,
        )
    }

    /// Rebuilds a trainer that continues exactly where this one stopped.
    pub fn into_trainer(self) -> Result<Trainer> {
        let model = self.model()?;
        if self.adam.param_count() != model.param_count() {
            return Err(Error::Shape(format!(
                "optimizer state covers {} parameters, model has {}",
                self.adam.param_count(),
                model.param_count()
            )));
        }
        let word_pos: u128 = self
            .rng
            .word_pos
            .parse()
            .map_err(|e| Error::Config(format!("bad rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng.seed);
        rng.set_stream(self.rng.stream);
        rng.set_word_pos(word_pos);
        Ok(Trainer {
            model,
            adam: self.adam,
            rng,
            history: self.history,
        })
    }

    fn verify(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let h = config_hash(&self.config)?;
        if h != self.config_hash {
            return Err(Error::Config(format!(
                "checkpoint config hash {} does not match its config ({h})",
                self.config_hash
            )));
        }
        if self.rng.seed != self.config.train.seed || self.rng.stream != TRAIN_STREAM {
            return Err(Error::Config("checkpoint rng state does not match its config".into()));
        }
        if self.history.len() != self.epoch {
            return Err(Error::Config(format!(
                "checkpoint epoch {} but {} history records",
                self.epoch,
                self.history.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        ckpt.verify()?;
        Ok(ckpt)
    }
}
