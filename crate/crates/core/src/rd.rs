//! Classical rate-distortion utilities and the KL-as-rate check.
//!
//! Rates are in nats.

use std::f64::consts::{E, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::FactorDistribution;
use crate::error::{Error, Result};
use crate::losses::kl_term;
use crate::quadrature::adaptive_simpson;

/// Tolerance of the interval-probability quadrature.
pub const QUAD_TOL: f64 = 1e-10;

/// `½ ln(πe/6)`, the gap between the quantized rate and the KL term.
pub fn rate_offset() -> f64 {
    0.5 * (PI * E / 6.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub d: f64,
    pub r_opt: f64,
    pub d_opt: f64,
}

/// Reverse water-filling over independent Gaussian channels at level `d`.
pub fn rd_optimal(sigma2: &[f64], d: f64) -> Result<RdPoint> {
    if !(d > 0.0) || sigma2.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(
            "variances and distortion level must be positive".into(),
        ));
    }
    let r_opt = 0.5 * sigma2.iter().map(|&s| (s / d).ln().max(0.0)).sum::<f64>();
    let d_opt = sigma2.iter().map(|&s| s.min(d)).sum();
    Ok(RdPoint { d, r_opt, d_opt })
}

pub fn rd_curve(sigma2: &[f64], levels: &[f64]) -> Result<Vec<RdPoint>> {
    levels.iter().map(|&d| rd_optimal(sigma2, d)).collect()
}

/// Whether `R(D)` through the points is convex: slopes between successive
/// distinct-`D` points never decrease by more than `tol`.
pub fn is_convex(points: &[RdPoint], tol: f64) -> bool {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.d_opt, p.r_opt)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-15);
    let slopes: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    slopes.windows(2).all(|s| s[1] - s[0] >= -tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerDistortion {
    pub step: f64,
    pub formula: f64,
    pub monte_carlo: f64,
}

/// Mean of `(z − T·round(z/T))²` over `n` seeded draws, next to `T²/12`.
pub fn quantizer_distortion(
    step: f64,
    source: &FactorDistribution,
    n: usize,
    seed: u64,
) -> Result<QuantizerDistortion> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    source.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..n {
        let z = source.sample(&mut rng);
        let e = z - step * (z / step).round();
        acc += e * e;
    }
    Ok(QuantizerDistortion {
        step,
        formula: step * step / 12.0,
        monte_carlo: acc / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRate {
    pub mu: f64,
    pub sigma: f64,
    pub numeric: f64,
    pub closed: f64,
    pub kl_plus_offset: f64,
}

impl QuantRate {
    pub fn abs_gap(&self) -> f64 {
        (self.numeric - self.kl_plus_offset).abs()
    }
}

/// Rate of coding a value quantized with step `T = 2√3σ` around `μ` under a
/// standard normal prior, computed by quadrature and in closed form.
pub fn quant_rate(mu: f64, sigma: f64) -> Result<QuantRate> {
    if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite μ and σ > 0, got μ={mu}, σ={sigma}"
        )));
    }
    let half = 3f64.sqrt() * sigma;
    let norm = 1.0 / (2.0 * PI).sqrt();
    let mass = adaptive_simpson(|z| norm * (-0.5 * z * z).exp(), mu - half, mu + half, QUAD_TOL)?;
    if !(mass > 0.0) {
        return Err(Error::NonFinite(format!("interval probability {mass} at μ={mu}")));
    }
    let s2 = sigma * sigma;
    Ok(QuantRate {
        mu,
        sigma,
        numeric: -mass.ln(),
        closed: 0.5 * (mu * mu + s2 - s2.ln() - (6.0 / PI).ln()),
        kl_plus_offset: kl_term(mu, sigma) + rate_offset(),
    })
}

/// `μ ∈ [−2, 2]` in steps of 0.25.
pub fn rate_grid_mu() -> Vec<f64> {
    (0..=16).map(|i| -2.0 + 0.25 * f64::from(i)).collect()
}

pub const RATE_GRID_SIGMA: [f64; 4] = [0.01, 0.03, 0.1, 0.3];

pub fn rate_identity_grid(mus: &[f64], sigmas: &[f64]) -> Result<Vec<QuantRate>> {
    let mut out = Vec::with_capacity(mus.len() * sigmas.len());
    for &s in sigmas {
        for &m in mus {
            out.push(quant_rate(m, s)?);
        }
    }
    Ok(out)
}
