//! Post-training statistics: posterior moments, the unit-norm statistic,
//! variance estimates, per-sample probability estimates and traversals.

mod report;

pub use report::{write_report, SampleRow, TraversalRow};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::kl_term;
use crate::nn::Matrix;
use crate::vae::VaeModel;

pub const DEFAULT_EPS: f64 = 1e-2;
pub const DEFAULT_INFORMATIVE_THRESHOLD: f64 = 1.5;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    pub mu: Matrix,
    pub sigma: Matrix,
}

impl PosteriorStats {
    pub fn len(&self) -> usize {
        self.mu.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.rows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.cols()
    }

    /// Per-dim mean of `σ⁻²`.
    pub fn mean_inv_sigma2(&self) -> Vec<f64> {
        column_means(&self.sigma, |s| 1.0 / (s * s))
    }
}

fn column_means(m: &Matrix, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols()];
    for r in m.row_iter() {
        acc.iter_mut().zip(r).for_each(|(a, &v)| *a += f(v));
    }
    let n = m.rows().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

fn chunked<F>(x: &Matrix, mut f: F) -> Result<()>
where
    F: FnMut(usize, &Matrix) -> Result<()>,
{
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        f(start, &x.select_rows(&idx))?;
        start = end;
    }
    Ok(())
}

/// Encodes every row of `x`.
pub fn posterior_stats(model: &VaeModel, x: &Matrix) -> Result<PosteriorStats> {
    let n = model.latent_dim();
    let mut mu = Matrix::zeros(x.rows(), n);
    let mut sigma = Matrix::zeros(x.rows(), n);
    chunked(x, |start, xb| {
        let (m, s) = model.encode(xb)?;
        for i in 0..xb.rows() {
            mu.row_mut(start + i).copy_from_slice(m.row(i));
            sigma.row_mut(start + i).copy_from_slice(s.row(i));
        }
        Ok(())
    })?;
    if !mu.all_finite() || sigma.as_slice().iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::NonFinite("posterior statistics".into()));
    }
    Ok(PosteriorStats { mu, sigma })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// `D(Dec(z), Dec(z + ε·uⱼ)) / ε²`.
pub fn coding_second_derivative(model: &VaeModel, z: &[f64], j: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if j >= z.len() || z.len() != model.latent_dim() {
        return Err(Error::InvalidArgument(format!(
            "dim {j} invalid for latent of length {} (model {})",
            z.len(),
            model.latent_dim()
        )));
    }
    let a = model.decode_one(z)?;
    let mut zp = z.to_vec();
    zp[j] += eps;
    let b = model.decode_one(&zp)?;
    Ok(model.loss().value(&a, &b)? / (eps * eps))
}

/// `D'ⱼ(μ(x))` for every sample and dim, as a `samples × latent_dim` matrix.
pub fn second_derivatives(model: &VaeModel, mu: &Matrix, eps: f64) -> Result<Matrix> {
    check_eps(eps)?;
    let n = model.latent_dim();
    let mut out = Matrix::zeros(mu.rows(), n);
    chunked(mu, |start, zb| {
        let base = model.decode(zb)?;
        for j in 0..n {
            let mut shifted = zb.clone();
            for i in 0..zb.rows() {
                shifted.row_mut(i)[j] += eps;
            }
            let moved = model.decode(&shifted)?;
            for i in 0..zb.rows() {
                let d = model.loss().value(base.row(i), moved.row(i))?;
                out.set(start + i, j, d / (eps * eps));
            }
        }
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> MeanSd {
    let n = v.clone().count().max(1) as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanSd { mean, sd: var.sqrt() }
}

/// Per-dim mean and SD of `(2/β)·σⱼ²·D'ⱼ(μ(x))`.
pub fn norm_statistic(model: &VaeModel, x: &Matrix, eps: f64) -> Result<Vec<MeanSd>> {
    let stats = posterior_stats(model, x)?;
    norm_statistic_from(model, &stats, eps)
}

pub fn norm_statistic_from(model: &VaeModel, stats: &PosteriorStats, eps: f64) -> Result<Vec<MeanSd>> {
    let d2 = second_derivatives(model, &stats.mu, eps)?;
    let scale = 2.0 * model.lambda();
    Ok((0..stats.latent_dim())
        .map(|j| {
            mean_sd((0..stats.len()).map(|i| {
                let s = stats.sigma.get(i, j);
                scale * s * s * d2.get(i, j)
            }))
        })
        .collect())
}

/// Variance estimates per dim and their ratios to the smallest informative dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub mean_inv_sigma2: Vec<f64>,
    pub estimate: Vec<f64>,
    pub informative: Vec<bool>,
    /// `None` for non-informative dims or when no dim is informative.
    pub ratio: Vec<Option<f64>>,
}

pub fn informative_mask(mean_inv_sigma2: &[f64], threshold: f64) -> Vec<bool> {
    mean_inv_sigma2.iter().map(|&v| v >= threshold).collect()
}

fn ratios(values: &[f64], informative: &[bool]) -> Vec<Option<f64>> {
    let base = values
        .iter()
        .zip(informative)
        .filter(|(_, &inf)| inf)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min);
    values
        .iter()
        .zip(informative)
        .map(|(&v, &inf)| (inf && base.is_finite() && base > 0.0).then(|| v / base))
        .collect()
}

/// `(β/2)·mean σⱼ⁻²`.
pub fn estimated_variance(stats: &PosteriorStats, beta: f64, threshold: f64) -> VarianceEstimate {
    let mean_inv_sigma2 = stats.mean_inv_sigma2();
    let estimate: Vec<f64> = mean_inv_sigma2.iter().map(|v| 0.5 * beta * v).collect();
    let informative = informative_mask(&mean_inv_sigma2, threshold);
    let ratio = ratios(&mean_inv_sigma2, &informative);
    VarianceEstimate {
        mean_inv_sigma2,
        estimate,
        informative,
        ratio,
    }
}

/// `(β/2)·(mean σⱼ⁻² − (2/π)·(mean sign(μⱼ)/σⱼ)²)`, with ratios taken against
/// the same reference dim as the simple estimate.
pub fn accurate_variance(stats: &PosteriorStats, beta: f64, threshold: f64) -> VarianceEstimate {
    let simple = estimated_variance(stats, beta, threshold);
    let n = stats.latent_dim();
    let mut signed = vec![0.0; n];
    for (m, s) in stats.mu.row_iter().zip(stats.sigma.row_iter()) {
        for j in 0..n {
            signed[j] += sign(m[j]) / s[j];
        }
    }
    let count = stats.len().max(1) as f64;
    let corrected: Vec<f64> = simple
        .mean_inv_sigma2
        .iter()
        .zip(&signed)
        .map(|(v, s)| v - 2.0 / PI * (s / count).powi(2))
        .collect();
    let reference = simple
        .ratio
        .iter()
        .position(|r| r.is_some_and(|r| r == 1.0));
    let ratio = corrected
        .iter()
        .zip(&simple.informative)
        .map(|(&v, &inf)| match (inf, reference) {
            (true, Some(r)) => Some(v / corrected[r]),
            _ => None,
        })
        .collect();
    VarianceEstimate {
        estimate: corrected.iter().map(|v| 0.5 * beta * v).collect(),
        mean_inv_sigma2: corrected,
        informative: simple.informative,
        ratio,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `λ·½(D(x, Dec(μ+σ)) + D(x, Dec(μ−σ))) + D_KL` for every row of `x`.
pub fn elbo_at_points(model: &VaeModel, x: &Matrix, stats: &PosteriorStats) -> Result<Vec<f64>> {
    if stats.len() != x.rows() {
        return Err(Error::Shape("posterior statistics do not match the data".into()));
    }
    let lambda = model.lambda();
    let mut out = vec![0.0; x.rows()];
    let idx: Vec<usize> = (0..x.rows()).collect();
    for (c, rows) in idx.chunks(CHUNK).enumerate() {
        let start = c * CHUNK;
        let mu = stats.mu.select_rows(rows);
        let sg = stats.sigma.select_rows(rows);
        let mut plus = mu.clone();
        let mut minus = mu.clone();
        for ((p, m), s) in plus
            .as_mut_slice()
            .iter_mut()
            .zip(minus.as_mut_slice())
            .zip(sg.as_slice())
        {
            *p += s;
            *m -= s;
        }
        let dp = model.decode(&plus)?;
        let dm = model.decode(&minus)?;
        for (k, &i) in rows.iter().enumerate() {
            let d = 0.5 * (model.loss().value(x.row(i), dp.row(k))? + model.loss().value(x.row(i), dm.row(k))?);
            let kl: f64 = mu.row(k).iter().zip(sg.row(k)).map(|(&a, &s)| kl_term(a, s)).sum();
            out[start + k] = lambda * d + kl;
        }
    }
    Ok(out)
}

pub fn elbo_at_point(model: &VaeModel, x: &[f64]) -> Result<f64> {
    let xm = Matrix::row_vector(x);
    let stats = posterior_stats(model, &xm)?;
    Ok(elbo_at_points(model, &xm, &stats)?[0])
}

/// Log of the four estimators, each up to an additive constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEstimates {
    /// `log p(μ)` over informative dims.
    pub prior: Vec<f64>,
    /// `−L_x`.
    pub elbo: Vec<f64>,
    /// `(n/2)·log a_x + log p(μ) + Σ log σⱼ`.
    pub prior_scaled: Vec<f64>,
    /// `(n/2)·log a_x − L_x`.
    pub elbo_scaled: Vec<f64>,
}

impl LogEstimates {
    pub fn columns(&self) -> [&[f64]; 4] {
        [&self.prior, &self.elbo, &self.prior_scaled, &self.elbo_scaled]
    }
}

pub const ESTIMATOR_NAMES: [&str; 4] = ["prior", "elbo", "prior_scaled", "elbo_scaled"];

pub fn probability_estimates(
    model: &VaeModel,
    x: &Matrix,
    stats: &PosteriorStats,
    informative: &[bool],
    l_x: &[f64],
) -> Result<LogEstimates> {
    if informative.len() != stats.latent_dim() || l_x.len() != x.rows() || stats.len() != x.rows() {
        return Err(Error::Shape("estimator inputs disagree in size".into()));
    }
    let n_inf = informative.iter().filter(|&&b| b).count() as f64;
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let mut est = LogEstimates {
        prior: Vec::with_capacity(x.rows()),
        elbo: Vec::with_capacity(x.rows()),
        prior_scaled: Vec::with_capacity(x.rows()),
        elbo_scaled: Vec::with_capacity(x.rows()),
    };
    for i in 0..x.rows() {
        let a = model.loss().scalar_scale(x.row(i)).unwrap_or(1.0);
        let log_a = 0.5 * n_inf * a.ln();
        let (mut lp, mut ls) = (0.0, 0.0);
        for ((&m, &s), &inf) in stats.mu.row(i).iter().zip(stats.sigma.row(i)).zip(informative) {
            if inf {
                lp += -0.5 * m * m - half_log_2pi;
                ls += s.ln();
            }
        }
        est.prior.push(lp);
        est.elbo.push(-l_x[i]);
        est.prior_scaled.push(log_a + lp + ls);
        est.elbo_scaled.push(log_a - l_x[i]);
    }
    Ok(est)
}

/// `exp(v − max v)`, a scale-free linear version of log values.
pub fn to_linear(log_values: &[f64]) -> Vec<f64> {
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    log_values.iter().map(|v| (v - max).exp()).collect()
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two equal series of length ≥ 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidArgument("pearson of a constant series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Indices sorted by descending value; ties keep their original order.
pub fn order_latents(values: &[f64]) -> Result<Vec<usize>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent ordering input".into()));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    Ok(idx)
}

/// Decodes `steps` evenly spaced values of `zⱼ` over `[lo, hi]`, other dims 0.
pub fn traverse(model: &VaeModel, j: usize, lo: f64, hi: f64, steps: usize) -> Result<Matrix> {
    let n = model.latent_dim();
    if j >= n || steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "traversal needs dim < {n} and steps ≥ 1, got dim {j}, steps {steps}"
        )));
    }
    let mut z = Matrix::zeros(steps, n);
    for s in 0..steps {
        let t = if steps == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * s as f64 / (steps - 1) as f64
        };
        z.set(s, j, t);
    }
    model.decode(&z)
}

/// Largest Euclidean distance between any two rows.
pub fn max_pairwise_distance(rows: &Matrix) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..rows.rows() {
        for k in i + 1..rows.rows() {
            let d: f64 = rows
                .row(i)
                .iter()
                .zip(rows.row(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.max(d.sqrt());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub eps: f64,
    pub informative_threshold: f64,
    pub traverse_lo: f64,
    pub traverse_hi: f64,
    pub traverse_steps: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            informative_threshold: DEFAULT_INFORMATIVE_THRESHOLD,
            traverse_lo: -2.0,
            traverse_hi: 2.0,
            traverse_steps: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimReport {
    pub dim: usize,
    pub informative: bool,
    pub mean_inv_sigma2: f64,
    pub ratio: Option<f64>,
    pub var_simple: f64,
    pub var_accurate: f64,
    pub accurate_ratio: Option<f64>,
    pub norm_stat: MeanSd,
    /// Mean and SD of `μⱼ(x)` over the data.
    pub mu: MeanSd,
    pub norm_stat_halved_eps: f64,
    pub traverse_displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub estimator: String,
    /// `None` when an estimator is constant over the data.
    pub pearson: Option<f64>,
    pub pearson_log: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    /// Hash of the run configuration that produced the report, if any.
    #[serde(default)]
    pub config_hash: Option<String>,
    pub beta: f64,
    pub lambda: f64,
    pub eps: f64,
    pub informative_threshold: f64,
    pub samples: usize,
    pub informative_count: usize,
    /// Dims by descending simple variance estimate.
    pub order: Vec<usize>,
    pub dims: Vec<DimReport>,
    /// Present when the true density of every sample is known.
    pub correlations: Option<Vec<Correlation>>,
    pub per_sample: Vec<SampleRow>,
}

impl PropertyReport {
    pub fn correlation(&self, estimator: &str) -> Option<&Correlation> {
        self.correlations.as_ref()?.iter().find(|c| c.estimator == estimator)
    }

    pub fn informative_dims(&self) -> Vec<&DimReport> {
        self.dims.iter().filter(|d| d.informative).collect()
    }
}

/// Full analysis of a trained model; `density` is the true `p(x)` if known.
pub fn analyze(
    model: &VaeModel,
    x: &Matrix,
    density: Option<&[f64]>,
    opts: &AnalysisOptions,
) -> Result<(PropertyReport, Vec<TraversalRow>)> {
    if let Some(d) = density {
        if d.len() != x.rows() {
            return Err(Error::Shape("density length does not match the data".into()));
        }
    }
    let beta = 1.0 / model.lambda();
    let stats = posterior_stats(model, x)?;
    let simple = estimated_variance(&stats, beta, opts.informative_threshold);
    let accurate = accurate_variance(&stats, beta, opts.informative_threshold);
    let norm = norm_statistic_from(model, &stats, opts.eps)?;
    let norm_half = norm_statistic_from(model, &stats, 0.5 * opts.eps)?;
    let l_x = elbo_at_points(model, x, &stats)?;
    let est = probability_estimates(model, x, &stats, &simple.informative, &l_x)?;

    let n = model.latent_dim();
    let mut traversal = Vec::new();
    let mut displacement = Vec::with_capacity(n);
    for j in 0..n {
        let out = traverse(model, j, opts.traverse_lo, opts.traverse_hi, opts.traverse_steps)?;
        displacement.push(max_pairwise_distance(&out));
        for (s, row) in out.row_iter().enumerate() {
            traversal.push(TraversalRow {
                dim: j,
                step: s,
                output: row.to_vec(),
            });
        }
    }

    let dims = (0..n)
        .map(|j| DimReport {
            dim: j,
            informative: simple.informative[j],
            mean_inv_sigma2: simple.mean_inv_sigma2[j],
            ratio: simple.ratio[j],
            var_simple: simple.estimate[j],
            var_accurate: accurate.estimate[j],
            accurate_ratio: accurate.ratio[j],
            norm_stat: norm[j],
            mu: mean_sd((0..stats.len()).map(|i| stats.mu.get(i, j))),
            norm_stat_halved_eps: norm_half[j].mean,
            traverse_displacement: displacement[j],
        })
        .collect();

    let correlations = match density {
        Some(p) => {
            let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
            let mut out = Vec::with_capacity(4);
            for (name, col) in ESTIMATOR_NAMES.iter().zip(est.columns()) {
                out.push(Correlation {
                    estimator: name.to_string(),
                    pearson: pearson(&to_linear(col), p).ok(),
                    pearson_log: pearson(col, &log_p).ok(),
                });
            }
            Some(out)
        }
        None => None,
    };

    let lin: Vec<Vec<f64>> = est.columns().iter().map(|c| to_linear(c)).collect();
    let per_sample = (0..x.rows())
        .map(|i| SampleRow {
            sample_id: i,
            p_true: density.map(|d| d[i]),
            l_x: l_x[i],
            est_i: lin[0][i],
            est_ii: lin[1][i],
            est_iii: lin[2][i],
            est_iv: lin[3][i],
        })
        .collect();

    Ok((
        PropertyReport {
            config_hash: None,
            beta,
            lambda: model.lambda(),
            eps: opts.eps,
            informative_threshold: opts.informative_threshold,
            samples: x.rows(),
            informative_count: simple.informative.iter().filter(|&&b| b).count(),
            order: order_latents(&simple.estimate)?,
            dims,
            correlations,
            per_sample,
        },
        traversal,
    ))
}
