use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_noise, ObjectiveParts, VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Matrix};

/// Stream of the training generator; initialization uses stream 0.
pub(crate) const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub loss: f64,
    pub transform_loss: f64,
    pub coding_loss: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VaeModel,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch Adam training with resumable state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) model: VaeModel,
    pub(crate) adam: AdamState,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: VaeConfig) -> Result<Self> {
        let seed = config.train.seed;
        let adam_cfg = config.train.adam;
        let model = VaeModel::init(config)?;
        let adam = AdamState::new(adam_cfg, model.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            model,
            adam,
            rng,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn steps(&self) -> u64 {
        self.adam.step
    }

    /// Changes the epoch budget, e.g. to continue a resumed run further.
    pub fn set_epoch_budget(&mut self, epochs: usize) {
        self.model.config.train.epochs = epochs;
    }

    pub fn is_finished(&self) -> bool {
        let t = &self.model.config().train;
        self.epochs_done() >= t.epochs || t.max_steps.is_some_and(|s| self.adam.step >= s)
    }

    fn check_data(&self, data: &Matrix) -> Result<()> {
        if data.rows() == 0 || data.cols() != self.model.input_dim() {
            return Err(Error::Shape(format!(
                "training data is {}x{}, model expects width {}",
                data.rows(),
                data.cols(),
                self.model.input_dim()
            )));
        }
        Ok(())
    }

    /// One pass over shuffled data. On a non-finite loss, gradient or
    /// parameter the trainer rolls back to its state before the epoch and
    /// reports divergence.
    pub fn run_epoch(&mut self, data: &Matrix) -> Result<EpochRecord> {
        self.check_data(data)?;
        let saved = (self.model.clone(), self.adam.clone(), self.rng.clone());
        let epoch = self.epochs_done() + 1;
        match self.epoch_inner(data, epoch) {
            Ok(rec) => {
                self.history.push(rec);
                Ok(rec)
            }
            Err(Error::NonFinite(message)) => {
                (self.model, self.adam, self.rng) = saved;
                Err(Error::Divergence { epoch, message })
            }
            Err(e) => {
                (self.model, self.adam, self.rng) = saved;
                Err(e)
            }
        }
    }

    fn epoch_inner(&mut self, data: &Matrix, epoch: usize) -> Result<EpochRecord> {
        let train = self.model.config().train.clone();
        let n_lat = self.model.latent_dim();
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = ObjectiveParts::default();
        let mut seen = 0usize;
        for chunk in order.chunks(train.batch_size) {
            if train.max_steps.is_some_and(|s| self.adam.step >= s) {
                break;
            }
            let xb = data.select_rows(chunk);
            let noise = sample_noise(chunk.len(), n_lat, &mut self.rng);
            let (p, g) = self.model.objective_and_grad(&xb, &noise)?;
            self.adam.update(self.model.param_slices_mut(), g.param_slices())?;
            if self.model.networks().iter().any(|n| n.param_slices().iter().any(|s| s.iter().any(|v| !v.is_finite()))) {
                return Err(Error::NonFinite("parameters after update".into()));
            }
            let w = chunk.len() as f64;
            sum.loss += w * p.loss;
            sum.transform_loss += w * p.transform_loss;
            sum.coding_loss += w * p.coding_loss;
            sum.kl += w * p.kl;
            seen += chunk.len();
        }
        let inv = if seen > 0 { 1.0 / seen as f64 } else { 0.0 };
        Ok(EpochRecord {
            epoch,
            steps: self.adam.step,
            loss: sum.loss * inv,
            transform_loss: sum.transform_loss * inv,
            coding_loss: sum.coding_loss * inv,
            kl: sum.kl * inv,
        })
    }

    /// Runs epochs until the configured budget is spent, calling `on_epoch`
    /// after each one.
    pub fn run<F>(&mut self, data: &Matrix, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        self.check_data(data)?;
        while !self.is_finished() {
            self.run_epoch(data)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            history: self.history,
        }
    }
}

/// Trains from a fresh initialization for the configured budget.
pub fn train(config: VaeConfig, data: &Matrix) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config)?;
    t.run(data, |_| Ok(()))?;
    Ok(t.into_outcome())
}
