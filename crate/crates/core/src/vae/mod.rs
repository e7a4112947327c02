//! β-VAE with the scaled objective `L = λ·D + D_KL`, `λ = 1/β`.
//!
//! The encoder is a shared trunk feeding two linear heads, one for `μ` and
//! one for the log-variance. Two objective forms are supported:
//!
//! * conventional: `λ·D(x, x̂) + D_KL` with `x̂ = Dec(μ + σ⊙ε)`;
//! * decomposed: `λ·(D(x, x̆) + D(x̆, x̂)) + D_KL` with `x̆ = Dec(μ)`.
//!
//! Gradients are exact and computed batch-wise; objective values and
//! gradients are means over the batch.

mod checkpoint;
mod train;

pub use checkpoint::{config_hash, Checkpoint, RngState};
pub use train::{train, EpochRecord, TrainOutcome, Trainer};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{kl_term, CodingLoss, LossTag, Reduction};
use crate::nn::{validate_specs, Activation, AdamConfig, LayerSpec, Matrix, Mlp};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    Conventional,
    Decomposed,
}

impl LossForm {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "conventional" => Some(Self::Conventional),
            "decomposed" => Some(Self::Decomposed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Trunk layers; the two heads `FC(trunk_out, latent_dim, linear)` are implied.
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl ModelConfig {
    /// `FC(m,128,tanh)-FC(128,64,tanh)` trunk and the mirrored decoder.
    pub fn toy(input_dim: usize, latent_dim: usize) -> Self {
        use Activation::{Linear, Tanh};
        Self {
            latent_dim,
            encoder: vec![
                LayerSpec::new(input_dim, 128, Tanh),
                LayerSpec::new(128, 64, Tanh),
            ],
            decoder: vec![
                LayerSpec::new(latent_dim, 64, Tanh),
                LayerSpec::new(64, 128, Tanh),
                LayerSpec::new(128, input_dim, Linear),
            ],
        }
    }

    /// Two ReLU layers of width `hidden` on each side, sigmoid output.
    pub fn images(input_dim: usize, latent_dim: usize, hidden: usize) -> Self {
        use Activation::{Relu, Sigmoid};
        Self {
            latent_dim,
            encoder: vec![
                LayerSpec::new(input_dim, hidden, Relu),
                LayerSpec::new(hidden, hidden, Relu),
            ],
            decoder: vec![
                LayerSpec::new(latent_dim, hidden, Relu),
                LayerSpec::new(hidden, hidden, Relu),
                LayerSpec::new(hidden, input_dim, Sigmoid),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(0, |l| l.in_dim)
    }

    fn trunk_out(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.out_dim)
    }

    fn head_spec(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::new(self.trunk_out(), self.latent_dim, Activation::Linear)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        validate_specs(&self.encoder).map_err(|e| Error::Config(format!("encoder: {e}")))?;
        validate_specs(&self.decoder).map_err(|e| Error::Config(format!("decoder: {e}")))?;
        if self.decoder[0].in_dim != self.latent_dim {
            return Err(Error::Config(format!(
                "decoder input {} differs from latent_dim {}",
                self.decoder[0].in_dim, self.latent_dim
            )));
        }
        let out = self.decoder.last().map_or(0, |l| l.out_dim);
        if out != self.input_dim() {
            return Err(Error::Config(format!(
                "decoder output {out} differs from encoder input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_form: LossForm,
    pub adam: AdamConfig,
    /// Stops after this many optimizer steps, whatever the epoch count.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            epochs: 500,
            batch_size: 128,
            seed: 0,
            loss_form: LossForm::Decomposed,
            adam: AdamConfig::default(),
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: CodingLoss,
}

impl VaeConfig {
    /// Toy architecture; the coding loss sums over input dimensions.
    pub fn toy(input_dim: usize, latent_dim: usize, tag: LossTag) -> Self {
        Self {
            model: ModelConfig::toy(input_dim, latent_dim),
            train: TrainConfig::default(),
            loss: CodingLoss::new(tag).with_reduction(Reduction::Sum),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.lambda > 0.0 && t.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", t.lambda)));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(t.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", t.adam.lr)));
        }
        self.loss
            .validate_for_dim(self.model.input_dim())
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.loss.tag == LossTag::Bce
            && self.model.decoder.last().map(|l| l.activation) != Some(Activation::Sigmoid)
        {
            return Err(Error::Config("bce needs a sigmoid decoder output".into()));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.train.lambda
    }
}

/// Batch means of the objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub loss: f64,
    /// `D(x, x̆)`; zero in the conventional form.
    pub transform_loss: f64,
    /// `D(x̆, x̂)` in the decomposed form, `D(x, x̂)` in the conventional one.
    pub coding_loss: f64,
    pub kl: f64,
}

/// Parameter gradients, shaped like the model's networks.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads {
    pub trunk: Mlp,
    pub mu_head: Mlp,
    pub logvar_head: Mlp,
    pub decoder: Mlp,
}

impl VaeGrads {
    pub fn param_slices(&self) -> Vec<&[f64]> {
        [&self.trunk, &self.mu_head, &self.logvar_head, &self.decoder]
            .into_iter()
            .flat_map(Mlp::param_slices)
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    pub(crate) trunk: Mlp,
    pub(crate) mu_head: Mlp,
    pub(crate) logvar_head: Mlp,
    pub(crate) decoder: Mlp,
}

/// `z = μ + σ⊙ε`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != noise.len() {
        return Err(Error::Shape(format!(
            "reparameterize lengths differ: {} {} {}",
            mu.len(),
            sigma.len(),
            noise.len()
        )));
    }
    Ok(mu.iter().zip(sigma).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

/// Standard normal `rows × cols` noise.
pub fn sample_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

fn clamp_logvar(raw: f64) -> f64 {
    raw.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

impl VaeModel {
    /// Seeded initialization; networks are drawn in the order trunk, μ-head,
    /// log-variance head, decoder.
    pub fn init(config: VaeConfig) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.train.seed);
        let head = config.model.head_spec();
        let trunk = Mlp::init_with_rng(&config.model.encoder, &mut rng)?;
        let mu_head = Mlp::init_with_rng(&head, &mut rng)?;
        let logvar_head = Mlp::init_with_rng(&head, &mut rng)?;
        let decoder = Mlp::init_with_rng(&config.model.decoder, &mut rng)?;
        Ok(Self {
            config,
            trunk,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn from_networks(config: VaeConfig, trunk: Mlp, mu_head: Mlp, logvar_head: Mlp, decoder: Mlp) -> Result<Self> {
        config.validate()?;
        let head = config.model.head_spec();
        if trunk.specs() != config.model.encoder
            || mu_head.specs() != head
            || logvar_head.specs() != head
            || decoder.specs() != config.model.decoder
        {
            return Err(Error::Shape("network shapes do not match the configuration".into()));
        }
        Ok(Self {
            config,
            trunk,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.model.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.model.input_dim()
    }

    pub fn lambda(&self) -> f64 {
        self.config.train.lambda
    }

    pub fn loss(&self) -> &CodingLoss {
        &self.config.loss
    }

    pub fn networks(&self) -> [&Mlp; 4] {
        [&self.trunk, &self.mu_head, &self.logvar_head, &self.decoder]
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.trunk.param_slices_mut();
        out.extend(self.mu_head.param_slices_mut());
        out.extend(self.logvar_head.param_slices_mut());
        out.extend(self.decoder.param_slices_mut());
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.networks().iter().flat_map(|n| n.to_flat()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Posterior means and deviations for every row of `x`.
    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.trunk.forward(x)?;
        let mu = self.mu_head.forward(&h)?;
        let mut sigma = self.logvar_head.forward(&h)?;
        sigma
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = (0.5 * clamp_logvar(*v)).exp());
        Ok((mu, sigma))
    }

    pub fn encode_one(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, sigma) = self.encode(&Matrix::row_vector(x))?;
        Ok((mu.into_vec(), sigma.into_vec()))
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z)
    }

    pub fn decode_one(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward_one(z)
    }

    /// Objective for a batch with explicit noise `ε` (`batch × latent_dim`).
    pub fn objective(&self, x: &Matrix, noise: &Matrix) -> Result<ObjectiveParts> {
        self.evaluate(x, noise, false).map(|(p, _)| p)
    }

    pub fn objective_and_grad(&self, x: &Matrix, noise: &Matrix) -> Result<(ObjectiveParts, VaeGrads)> {
        let (p, g) = self.evaluate(x, noise, true)?;
        Ok((p, g.expect("gradients requested")))
    }

    fn evaluate(&self, x: &Matrix, noise: &Matrix, want_grad: bool) -> Result<(ObjectiveParts, Option<VaeGrads>)> {
        let b = x.rows();
        let n = self.latent_dim();
        let m = self.input_dim();
        if b == 0 || x.cols() != m || noise.rows() != b || noise.cols() != n {
            return Err(Error::Shape(format!(
                "batch {}x{} with noise {}x{}, model expects width {m} and latent {n}",
                x.rows(),
                x.cols(),
                noise.rows(),
                noise.cols()
            )));
        }
        let loss = &self.config.loss;
        let lambda = self.lambda();
        let decomposed = self.config.train.loss_form == LossForm::Decomposed;

        let (h, c_trunk) = self.trunk.forward_cached(x)?;
        let (mu, c_mu) = self.mu_head.forward_cached(&h)?;
        let (lv_raw, c_lv) = self.logvar_head.forward_cached(&h)?;
        let mut sigma = Matrix::zeros(b, n);
        let mut z = Matrix::zeros(b, n);
        for (((s, zz), (&r, &mm)), &e) in sigma
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_mut_slice())
            .zip(lv_raw.as_slice().iter().zip(mu.as_slice()))
            .zip(noise.as_slice())
        {
            *s = (0.5 * clamp_logvar(r)).exp();
            *zz = mm + *s * e;
        }
        let (xhat, c_hat) = self.decoder.forward_cached(&z)?;
        let breve = if decomposed {
            Some(self.decoder.forward_cached(&mu)?)
        } else {
            None
        };

        let inv_b = 1.0 / b as f64;
        let w = if want_grad { lambda * inv_b } else { 0.0 };
        let mut g_hat = Matrix::zeros(b, m);
        let mut g_breve = Matrix::zeros(if decomposed { b } else { 0 }, m);
        let (mut transform, mut coding, mut kl) = (0.0, 0.0, 0.0);
        for i in 0..b {
            match &breve {
                None => coding += loss.value_and_grad(x.row(i), xhat.row(i), w, None, g_hat.row_mut(i))?,
                Some((xb, _)) => {
                    transform += loss.value_and_grad(x.row(i), xb.row(i), w, None, g_breve.row_mut(i))?;
                    coding += loss.value_and_grad(
                        xb.row(i),
                        xhat.row(i),
                        w,
                        Some(g_breve.row_mut(i)),
                        g_hat.row_mut(i),
                    )?;
                }
            }
            kl += mu.row(i).iter().zip(sigma.row(i)).map(|(&a, &s)| kl_term(a, s)).sum::<f64>();
        }
        let parts = ObjectiveParts {
            loss: (lambda * (transform + coding) + kl) * inv_b,
            transform_loss: transform * inv_b,
            coding_loss: coding * inv_b,
            kl: kl * inv_b,
        };
        if !parts.loss.is_finite() {
            return Err(Error::NonFinite(format!("objective {parts:?}")));
        }
        if !want_grad {
            return Ok((parts, None));
        }

        let (mut g_dec, g_z) = self.decoder.backward(&c_hat, &g_hat)?;
        let mut g_mu = g_z.clone();
        if let Some((_, c_breve)) = &breve {
            let (g_dec2, g_mu2) = self.decoder.backward(c_breve, &g_breve)?;
            g_dec.add_scaled(&g_dec2, 1.0)?;
            g_mu.as_mut_slice().iter_mut().zip(g_mu2.as_slice()).for_each(|(a, b)| *a += b);
        }
        let mut g_lv = Matrix::zeros(b, n);
        for k in 0..b * n {
            let (mm, s, r, e, gz) = (
                mu.as_slice()[k],
                sigma.as_slice()[k],
                lv_raw.as_slice()[k],
                noise.as_slice()[k],
                g_z.as_slice()[k],
            );
            g_mu.as_mut_slice()[k] += inv_b * mm;
            if (LOGVAR_MIN..=LOGVAR_MAX).contains(&r) {
                g_lv.as_mut_slice()[k] = 0.5 * s * (gz * e + inv_b * (s - 1.0 / s));
            }
        }
        let (g_muh, mut g_h) = self.mu_head.backward(&c_mu, &g_mu)?;
        let (g_lvh, g_h2) = self.logvar_head.backward(&c_lv, &g_lv)?;
        g_h.as_mut_slice().iter_mut().zip(g_h2.as_slice()).for_each(|(a, b)| *a += b);
        let (g_trunk, _) = self.trunk.backward(&c_trunk, &g_h)?;
        Ok((
            parts,
            Some(VaeGrads {
                trunk: g_trunk,
                mu_head: g_muh,
                logvar_head: g_lvh,
                decoder: g_dec,
            }),
        ))
    }
}

/// Objective with one reparameterized sample per row drawn from `rng`.
pub fn vae_objective<R: Rng + ?Sized>(model: &VaeModel, x: &Matrix, rng: &mut R) -> Result<ObjectiveParts> {
    let noise = sample_noise(x.rows(), model.latent_dim(), rng);
    model.objective(x, &noise)
}
