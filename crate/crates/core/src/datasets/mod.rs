//! Toy datasets with known generating density, plus IDX image ingestion.
//!
//! A toy sample draws `k` independent factors `sᵢ`, then embeds them as
//! `x = Σ sᵢ vᵢ` with orthonormal `vᵢ ∈ ℝᵐ`. Its density is reported in factor
//! coordinates, `p(x) = ∏ p(sᵢ)`.

pub mod idx;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, IdxImages};

/// Factor variances of the default datasets, in ratio 1:4:16.
pub const DEFAULT_VARIANCES: [f64; 3] = [1.0 / 6.0, 2.0 / 3.0, 8.0 / 3.0];
pub const DEFAULT_AMBIENT_DIM: usize = 16;
pub const DEFAULT_SAMPLES: usize = 50_000;

const DATASET_JSON: &str = "dataset.json";
const DATASET_BIN: &str = "dataset.bin";
const FORMAT_VERSION: u32 = 1;

/// Shape of a zero-mean factor density, before scaling to its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorShape {
    Normal,
    Uniform,
    /// Triangular density; `mode_position` is where the peak sits across the
    /// support, from 0 (left edge) to 1 (right edge). At 1 the density is a
    /// ramp `p(s) ∝ s − s_min`.
    TriangularRamp { mode_position: f64 },
    /// Equal-weight Gaussians at `±separation·sd` with component deviation
    /// `sqrt(1 − separation²)·sd`, so `separation ∈ [0, 1)`.
    GaussianMixture2 { separation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorDistribution {
    #[serde(flatten)]
    pub shape: FactorShape,
    pub target_variance: f64,
}

/// Unit-variance triangular support `[a, b]` with mode `c`.
fn triangle(r: f64) -> (f64, f64, f64) {
    let w = (18.0 / (1.0 - r + r * r)).sqrt();
    let mean = w * (1.0 + r) / 3.0;
    (-mean, w - mean, r * w - mean)
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

impl FactorDistribution {
    pub fn new(shape: FactorShape, target_variance: f64) -> Result<Self> {
        let d = Self {
            shape,
            target_variance,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(v: f64) -> Result<Self> {
        Self::new(FactorShape::Normal, v)
    }

    pub fn uniform(v: f64) -> Result<Self> {
        Self::new(FactorShape::Uniform, v)
    }

    pub fn triangular(mode_position: f64, v: f64) -> Result<Self> {
        Self::new(FactorShape::TriangularRamp { mode_position }, v)
    }

    pub fn mixture(separation: f64, v: f64) -> Result<Self> {
        Self::new(FactorShape::GaussianMixture2 { separation }, v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_variance > 0.0 && self.target_variance.is_finite()) {
            return Err(Error::Config(format!(
                "factor variance must be positive, got {}",
                self.target_variance
            )));
        }
        match self.shape {
            FactorShape::TriangularRamp { mode_position: r } if !(0.0..=1.0).contains(&r) => Err(
                Error::Config(format!("triangular mode position {r} outside [0, 1]")),
            ),
            FactorShape::GaussianMixture2 { separation: t } if !(0.0..1.0).contains(&t) => Err(
                Error::Config(format!("mixture separation {t} outside [0, 1)")),
            ),
            _ => Ok(()),
        }
    }

    pub fn sd(&self) -> f64 {
        self.target_variance.sqrt()
    }

    /// Closed support, or `None` for unbounded shapes.
    pub fn support(&self) -> Option<(f64, f64)> {
        let sd = self.sd();
        match self.shape {
            FactorShape::Uniform => Some((-(3f64.sqrt()) * sd, 3f64.sqrt() * sd)),
            FactorShape::TriangularRamp { mode_position } => {
                let (a, b, _) = triangle(mode_position);
                Some((a * sd, b * sd))
            }
            _ => None,
        }
    }

    pub fn pdf(&self, s: f64) -> f64 {
        let sd = self.sd();
        let u = s / sd;
        let p = match self.shape {
            FactorShape::Normal => std_normal_pdf(u),
            FactorShape::Uniform => {
                let h = 3f64.sqrt();
                if u.abs() <= h {
                    0.5 / h
                } else {
                    0.0
                }
            }
            FactorShape::TriangularRamp { mode_position } => {
                let (a, b, c) = triangle(mode_position);
                if u < a || u > b {
                    0.0
                } else if u < c {
                    2.0 * (u - a) / ((b - a) * (c - a))
                } else if c < b {
                    2.0 * (b - u) / ((b - a) * (b - c))
                } else {
                    2.0 / (b - a)
                }
            }
            FactorShape::GaussianMixture2 { separation: t } => {
                let cs = (1.0 - t * t).sqrt();
                0.5 * (std_normal_pdf((u - t) / cs) + std_normal_pdf((u + t) / cs)) / cs
            }
        };
        p / sd
    }

    /// One draw; the result always has strictly positive density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sd = self.sd();
        let u = match self.shape {
            FactorShape::Normal => rng.sample::<f64, _>(StandardNormal),
            FactorShape::Uniform => {
                let h = 3f64.sqrt();
                h * (2.0 * open_unit(rng) - 1.0)
            }
            FactorShape::TriangularRamp { mode_position } => {
                let (a, b, c) = triangle(mode_position);
                let q = open_unit(rng);
                if q < (c - a) / (b - a) {
                    a + (q * (b - a) * (c - a)).sqrt()
                } else {
                    b - ((1.0 - q) * (b - a) * (b - c)).sqrt()
                }
            }
            FactorShape::GaussianMixture2 { separation: t } => {
                let cs = (1.0 - t * t).sqrt();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * t + cs * rng.sample::<f64, _>(StandardNormal)
            }
        };
        u * sd
    }
}

/// Uniform draw on the open interval `(0, 1)`.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let q: f64 = rng.random();
        if q > 0.0 {
            return q;
        }
    }
}

/// Draws `n` values with their analytic densities.
pub fn sample_factor(dist: &FactorDistribution, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_factor_with(dist, n, &mut rng)
}

fn sample_factor_with<R: Rng + ?Sized>(
    dist: &FactorDistribution,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    let densities = values.iter().map(|&v| dist.pdf(v)).collect();
    Ok((values, densities))
}

/// `k` orthonormal rows in `ℝᵐ` from Gram–Schmidt on a seeded Gaussian matrix.
pub fn make_basis(k: usize, m: usize, seed: u64) -> Result<Matrix> {
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "basis needs 1 ≤ k ≤ m, got k={k}, m={m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the rows orthogonal to working precision
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    Matrix::from_rows(&rows)
}

/// Named toy dataset presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    Mix,
    Ramp,
    Norm,
}

impl ToyKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mix" => Some(Self::Mix),
            "ramp" => Some(Self::Ramp),
            "norm" => Some(Self::Norm),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mix => "mix",
            Self::Ramp => "ramp",
            Self::Norm => "norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDatasetSpec {
    pub factors: Vec<FactorDistribution>,
    pub ambient_dim: usize,
    pub sample_count: usize,
    pub seed: u64,
}

impl FactorDatasetSpec {
    pub fn preset(kind: ToyKind, sample_count: usize, seed: u64) -> Self {
        let [v1, v2, v3] = DEFAULT_VARIANCES;
        let factors = match kind {
            ToyKind::Mix => vec![
                FactorDistribution {
                    shape: FactorShape::Uniform,
                    target_variance: v1,
                },
                FactorDistribution {
                    shape: FactorShape::GaussianMixture2 { separation: 0.8 },
                    target_variance: v2,
                },
                FactorDistribution {
                    shape: FactorShape::TriangularRamp { mode_position: 0.5 },
                    target_variance: v3,
                },
            ],
            ToyKind::Ramp => [v1, v2, v3]
                .iter()
                .map(|&v| FactorDistribution {
                    shape: FactorShape::TriangularRamp { mode_position: 1.0 },
                    target_variance: v,
                })
                .collect(),
            ToyKind::Norm => [v1, v2, v3]
                .iter()
                .map(|&v| FactorDistribution {
                    shape: FactorShape::Normal,
                    target_variance: v,
                })
                .collect(),
        };
        Self {
            factors,
            ambient_dim: DEFAULT_AMBIENT_DIM,
            sample_count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Config("dataset needs at least one factor".into()));
        }
        if self.factors.len() > self.ambient_dim {
            return Err(Error::Config(format!(
                "{} factors do not fit in {} dimensions",
                self.factors.len(),
                self.ambient_dim
            )));
        }
        if self.sample_count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        self.factors.iter().try_for_each(FactorDistribution::validate)
    }

    pub fn total_variance(&self) -> f64 {
        self.factors.iter().map(|f| f.target_variance).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub spec: FactorDatasetSpec,
    pub x: Matrix,
    pub s: Matrix,
    pub density: Vec<f64>,
    pub basis: Matrix,
}

/// Row `Σ sᵢ vᵢ`, accumulated in factor order.
pub fn embed(s: &[f64], basis: &Matrix) -> Vec<f64> {
    let mut x = vec![0.0; basis.cols()];
    for (si, v) in s.iter().zip(basis.row_iter()) {
        x.iter_mut().zip(v).for_each(|(xj, vj)| *xj += si * vj);
    }
    x
}

pub fn generate_toy(spec: &FactorDatasetSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let k = spec.factors.len();
    let n = spec.sample_count;
    let basis = make_basis(k, spec.ambient_dim, spec.seed)?;
    let mut columns = Vec::with_capacity(k);
    let mut density = vec![1.0; n];
    for (j, f) in spec.factors.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(j as u64 + 1);
        let (vals, dens) = sample_factor_with(f, n, &mut rng)?;
        density.iter_mut().zip(&dens).for_each(|(p, d)| *p *= d);
        columns.push(vals);
    }
    let mut s = Matrix::zeros(n, k);
    let mut x = Matrix::zeros(n, spec.ambient_dim);
    for i in 0..n {
        let row = s.row_mut(i);
        for j in 0..k {
            row[j] = columns[j][i];
        }
        let xi = embed(s.row(i), &basis);
        x.row_mut(i).copy_from_slice(&xi);
    }
    Ok(ToyDataset {
        spec: spec.clone(),
        x,
        s,
        density,
        basis,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: FactorDatasetSpec,
    seed: u64,
    samples: usize,
    ambient_dim: usize,
    factors: usize,
    basis: Matrix,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Writes `dataset.json` and `dataset.bin` (x, s, density as little-endian f64).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = Header {
            format_version: FORMAT_VERSION,
            spec: self.spec.clone(),
            seed: self.spec.seed,
            samples: self.len(),
            ambient_dim: self.x.cols(),
            factors: self.s.cols(),
            basis: self.basis.clone(),
        };
        fs::write(dir.join(DATASET_JSON), serde_json::to_vec_pretty(&header)?)?;
        let vals = self
            .x
            .as_slice()
            .iter()
            .chain(self.s.as_slice())
            .chain(&self.density);
        let mut bin = Vec::with_capacity(8 * (self.x.as_slice().len() + self.s.as_slice().len() + self.len()));
        vals.for_each(|v| bin.extend_from_slice(&v.to_le_bytes()));
        fs::write(dir.join(DATASET_BIN), bin)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: Header = serde_json::from_slice(&fs::read(dir.join(DATASET_JSON))?)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported dataset format version {}",
                header.format_version
            )));
        }
        let (n, m, k) = (header.samples, header.ambient_dim, header.factors);
        let bin = fs::read(dir.join(DATASET_BIN))?;
        let expected = 8 * (n * m + n * k + n);
        if bin.len() != expected {
            return Err(Error::Parse {
                offset: bin.len().min(expected),
                message: format!("dataset.bin holds {} bytes, expected {expected}", bin.len()),
            });
        }
        let vals: Vec<f64> = bin
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let x = Matrix::from_vec(n, m, vals[..n * m].to_vec())?;
        let s = Matrix::from_vec(n, k, vals[n * m..n * m + n * k].to_vec())?;
        let density = vals[n * m + n * k..].to_vec();
        Ok(Self {
            spec: header.spec,
            x,
            s,
            density,
            basis: header.basis,
        })
    }
}
