//! Reconstruction/coding losses, their metric-tensor quadratic forms, and the
//! Gaussian KL divergence against a standard-normal prior.
//!
//! Every reconstruction loss is averaged over the input dimension, so the
//! quadratic forms returned by [`CodingLoss::metric_form`] carry that
//! averaging factor explicitly.

mod ssim;

pub use ssim::{ssim_image, ssim_metric_form, ssim_window, ssim_window_terms, ssim_window_with, SsimWindowForm, WindowGrid, SSIM_C1, SSIM_C2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension KL divergence `½(μ² + σ² − log σ² − 1)` and its sum.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, f64)> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "mu has {} entries, sigma has {}",
            mu.len(),
            sigma.len()
        )));
    }
    let mut per_dim = Vec::with_capacity(mu.len());
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}")));
        }
        per_dim.push(kl_term(m, s));
    }
    let total = per_dim.iter().sum();
    Ok((per_dim, total))
}

#[inline]
pub(crate) fn kl_term(mu: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    0.5 * (mu * mu + s2 - s2.ln() - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTag {
    SquareError,
    DownwardConvex,
    UpwardConvex,
    Bce,
    Ssim,
}

impl LossTag {
    pub fn short_name(self) -> &'static str {
        match self {
            LossTag::SquareError => "mse",
            LossTag::DownwardConvex => "down",
            LossTag::UpwardConvex => "up",
            LossTag::Bce => "bce",
            LossTag::Ssim => "ssim",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        Some(match s {
            "mse" | "square_error" => LossTag::SquareError,
            "down" | "downward_convex" => LossTag::DownwardConvex,
            "up" | "upward_convex" => LossTag::UpwardConvex,
            "bce" => LossTag::Bce,
            "ssim" => LossTag::Ssim,
            _ => return None,
        })
    }

    /// Whether the loss has the form `a_x · ‖x − x̂‖² / m`.
    pub fn is_scaled_square(self) -> bool {
        matches!(
            self,
            LossTag::SquareError | LossTag::DownwardConvex | LossTag::UpwardConvex
        )
    }
}

/// Scale `a_x` of the scaled square-error family.
///
/// `square_error → 1`, `downward_convex → 2/3 + 2‖x‖²/21`,
/// `upward_convex → 1 / (2/3 + 2‖x‖²/21)`.
pub fn convex_scale(x: &[f64], tag: LossTag) -> Result<f64> {
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    match tag {
        LossTag::SquareError => Ok(1.0),
        LossTag::DownwardConvex => Ok(downward_scale(norm2)),
        LossTag::UpwardConvex => Ok(1.0 / downward_scale(norm2)),
        other => Err(Error::InvalidArgument(format!(
            "{other:?} has no scalar metric scale"
        ))),
    }
}

#[inline]
fn downward_scale(norm2: f64) -> f64 {
    2.0 / 3.0 + 2.0 * norm2 / 21.0
}

/// Diagonal of the BCE metric tensor, `½(1/xᵢ + 1/(1−xᵢ))`.
pub fn bce_metric_diag(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .map(|&v| {
            if v > 0.0 && v < 1.0 {
                Ok(0.5 * (1.0 / v + 1.0 / (1.0 - v)))
            } else {
                Err(Error::InvalidArgument(format!(
                    "bce metric needs values strictly inside (0,1), got {v}"
                )))
            }
        })
        .collect()
}

/// Quadratic form approximating `D(x, x+δ) − D(x, x)`.
///
/// `averaging` is the factor the loss applies on top of the textbook form
/// (`1/m` for per-dimension averaged losses, `1/W` for the mean over SSIM
/// windows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetricTensorForm {
    /// `G = a_x · I`.
    ScalarScaled { a_x: f64, averaging: f64 },
    /// `G = diag(d)`.
    Diagonal { d: Vec<f64>, averaging: f64 },
    /// Block-diagonal SSIM form, one block per window of `grid`.
    SsimWindows { grid: WindowGrid, windows: Vec<SsimWindowForm>, averaging: f64 },
}

impl MetricTensorForm {
    pub fn quadratic(&self, delta: &[f64]) -> f64 {
        match self {
            MetricTensorForm::ScalarScaled { a_x, averaging } => {
                a_x * averaging * delta.iter().map(|d| d * d).sum::<f64>()
            }
            MetricTensorForm::Diagonal { d, averaging } => {
                averaging * d.iter().zip(delta).map(|(g, v)| g * v * v).sum::<f64>()
            }
            MetricTensorForm::SsimWindows {
                grid,
                windows,
                averaging,
            } => {
                let mut total = 0.0;
                for (form, idx) in windows.iter().zip(grid.windows()) {
                    let dw: Vec<f64> = idx.iter().map(|&i| delta[i]).collect();
                    total += form.quadratic(&dw);
                }
                averaging * total
            }
        }
    }
}

/// How elementwise losses combine over input dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average over the `m` input dimensions.
    #[default]
    Mean,
    /// Sum over input dimensions.
    Sum,
}

/// Reconstruction loss selector with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingLoss {
    pub tag: LossTag,
    #[serde(default = "default_ssim_window")]
    pub ssim_window: usize,
    #[serde(default = "default_clamp_eps")]
    pub clamp_eps: f64,
    /// Image shape `(rows, cols)` for SSIM; square images are inferred when absent.
    #[serde(default)]
    pub image_shape: Option<(usize, usize)>,
    /// Applies to the square-error family and BCE; SSIM is always window-averaged.
    #[serde(default)]
    pub reduction: Reduction,
}

fn default_ssim_window() -> usize {
    8
}

fn default_clamp_eps() -> f64 {
    1e-6
}

impl CodingLoss {
    pub fn new(tag: LossTag) -> Self {
        Self {
            tag,
            ssim_window: default_ssim_window(),
            clamp_eps: default_clamp_eps(),
            image_shape: None,
            reduction: Reduction::Mean,
        }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    /// Divisor applied to the summed elementwise loss over `len` inputs.
    fn divisor(&self, len: usize) -> f64 {
        match self.reduction {
            Reduction::Mean => len as f64,
            Reduction::Sum => 1.0,
        }
    }

    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Self {
        self.image_shape = Some((rows, cols));
        self
    }

    pub fn with_ssim_window(mut self, n: usize) -> Self {
        self.ssim_window = n;
        self
    }

    fn grid(&self, len: usize) -> Result<WindowGrid> {
        let (rows, cols) = match self.image_shape {
            Some(shape) => shape,
            None => {
                let side = (len as f64).sqrt().round() as usize;
                if side * side != len {
                    return Err(Error::Config(format!(
                        "ssim needs an image shape for non-square input of length {len}"
                    )));
                }
                (side, side)
            }
        };
        if rows * cols != len {
            return Err(Error::Shape(format!("image shape {rows}x{cols} does not match length {len}")));
        }
        WindowGrid::new(rows, cols, self.ssim_window)
    }

    /// Checks that the loss can be evaluated on inputs of length `m`.
    pub fn validate_for_dim(&self, m: usize) -> Result<()> {
        if self.tag == LossTag::Ssim {
            self.grid(m)?;
            if self.reduction != Reduction::Mean {
                return Err(Error::Config("ssim supports only mean reduction".into()));
            }
        }
        if self.tag == LossTag::Bce && !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Config(format!("clamp_eps {} outside (0, 0.5)", self.clamp_eps)));
        }
        Ok(())
    }

    /// `D(x, x̂)`.
    pub fn value(&self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        let mut gy = vec![0.0; x.len()];
        self.value_and_grad(x, xhat, 0.0, None, &mut gy)
    }

    /// Evaluates `D(x, x̂)` and adds `scale·∂D/∂x` (when requested) and
    /// `scale·∂D/∂x̂` into the given buffers.
    pub fn value_and_grad(
        &self,
        x: &[f64],
        xhat: &[f64],
        scale: f64,
        grad_x: Option<&mut [f64]>,
        grad_xhat: &mut [f64],
    ) -> Result<f64> {
        if x.len() != xhat.len() || x.is_empty() {
            return Err(Error::Shape(format!(
                "loss inputs must be non-empty and equal length ({} vs {})",
                x.len(),
                xhat.len()
            )));
        }
        let m = self.divisor(x.len());
        match self.tag {
            LossTag::SquareError | LossTag::DownwardConvex | LossTag::UpwardConvex => {
                let norm2: f64 = x.iter().map(|v| v * v).sum();
                let (a, da_dnorm2) = match self.tag {
                    LossTag::SquareError => (1.0, 0.0),
                    LossTag::DownwardConvex => (downward_scale(norm2), 2.0 / 21.0),
                    _ => {
                        let g = downward_scale(norm2);
                        (1.0 / g, -(2.0 / 21.0) / (g * g))
                    }
                };
                let sq: f64 = x.iter().zip(xhat).map(|(p, q)| (p - q) * (p - q)).sum();
                for ((g, p), q) in grad_xhat.iter_mut().zip(x).zip(xhat) {
                    *g += scale * (-2.0 * a * (p - q) / m);
                }
                if let Some(gx) = grad_x {
                    for ((g, p), q) in gx.iter_mut().zip(x).zip(xhat) {
                        *g += scale * (2.0 * a * (p - q) / m + sq / m * da_dnorm2 * 2.0 * p);
                    }
                }
                Ok(a * sq / m)
            }
            LossTag::Bce => {
                let eps = self.clamp_eps;
                let mut total = 0.0;
                let mut gx = grad_x;
                for i in 0..x.len() {
                    let (t, raw) = (x[i], xhat[i]);
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::InvalidArgument(format!("bce target {t} outside [0,1]")));
                    }
                    if !(0.0..=1.0).contains(&raw) {
                        return Err(Error::InvalidArgument(format!(
                            "bce prediction {raw} outside [0,1]"
                        )));
                    }
                    let p = raw.clamp(eps, 1.0 - eps);
                    total += -t * p.ln() - (1.0 - t) * (1.0 - p).ln();
                    if raw == p {
                        grad_xhat[i] += scale * (-t / p + (1.0 - t) / (1.0 - p)) / m;
                    }
                    if let Some(g) = gx.as_deref_mut() {
                        g[i] += scale * ((1.0 - p).ln() - p.ln()) / m;
                    }
                }
                Ok(total / m)
            }
            LossTag::Ssim => {
                let grid = self.grid(x.len())?;
                Ok(ssim::ssim_loss_grad(&grid, x, xhat, scale, grad_x, grad_xhat))
            }
        }
    }

    /// Metric tensor of `D(x, ·)` around `x`.
    pub fn metric_form(&self, x: &[f64]) -> Result<MetricTensorForm> {
        let m = self.divisor(x.len());
        match self.tag {
            LossTag::SquareError | LossTag::DownwardConvex | LossTag::UpwardConvex => {
                Ok(MetricTensorForm::ScalarScaled {
                    a_x: convex_scale(x, self.tag)?,
                    averaging: 1.0 / m,
                })
            }
            LossTag::Bce => {
                let eps = self.clamp_eps;
                let clamped: Vec<f64> = x.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
                Ok(MetricTensorForm::Diagonal {
                    d: bce_metric_diag(&clamped)?,
                    averaging: 1.0 / m,
                })
            }
            LossTag::Ssim => {
                let grid = self.grid(x.len())?;
                let mut windows = Vec::with_capacity(grid.count());
                for idx in grid.windows() {
                    let w: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                    windows.push(ssim_metric_form(&w)?);
                }
                Ok(MetricTensorForm::SsimWindows {
                    grid,
                    averaging: 1.0 / grid.count() as f64,
                    windows,
                })
            }
        }
    }

    /// Scalar `a_x` when the metric is a multiple of the identity.
    pub fn scalar_scale(&self, x: &[f64]) -> Option<f64> {
        convex_scale(x, self.tag).ok()
    }
}
