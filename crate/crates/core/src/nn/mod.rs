//! Minimal dense-network engine.
//!
//! Layers are affine maps followed by an element-wise activation,
//! `y = f(W x + b)`, with `W` stored row-major as `out × in`. Inputs are
//! processed as row-major batches (one sample per row); the batch gradient
//! returned by [`Mlp::backward`] is the sum of the per-sample gradients.

mod adam;
mod gradcheck;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use matrix::Matrix;

pub(crate) use matrix::{gemm_nn, gemm_nt, gemm_tn};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// `max(x,0) + log1p(exp(-|x|))`; never overflows.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shape and activation of one fully-connected layer, `FC(in, out, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Checks that every layer is non-empty and consecutive layers chain.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Shape("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Shape(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::Shape(format!(
                "layer {i} outputs {} but layer {} expects {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub spec: LayerSpec,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weight: vec![0.0; spec.in_dim * spec.out_dim],
            bias: vec![0.0; spec.out_dim],
        }
    }
}

/// Parameters of a multi-layer perceptron.
///
/// `version` changes whenever parameters are mutated through this API, which
/// lets [`Mlp::backward`] reject caches recorded against older parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    #[serde(skip)]
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k+1]` is layer `k`'s output.
    activations: Vec<Matrix>,
    pre: Vec<Matrix>,
    version: u64,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }

    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache always holds the input")
    }

    pub fn pre_activation(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }

    pub fn post_activation(&self, layer: usize) -> &Matrix {
        &self.activations[layer + 1]
    }
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6/(in+out))`, zero biases.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(specs, &mut rng)
    }

    pub fn init_with_rng<R: rand::Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        validate_specs(specs)?;
        let mut layers = Vec::with_capacity(specs.len());
        for &spec in specs {
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| Error::Config(format!("glorot range: {e}")))?;
            let mut layer = Dense::zeros(spec);
            for w in &mut layer.weight {
                *w = dist.sample(rng);
            }
            layers.push(layer);
        }
        Ok(Self { layers, version: 1 })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        Ok(Self {
            layers: specs.iter().copied().map(Dense::zeros).collect(),
            version: 1,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.spec.in_dim * l.spec.out_dim || l.bias.len() != l.spec.out_dim {
                return Err(Error::Shape(format!("layer {i} arrays do not match its spec")));
            }
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self { layers, version: 1 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = self.version.wrapping_add(1);
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// A zero network with identical shape; used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.spec)).collect(),
            version: 0,
        }
    }

    /// Parameter slices in canonical order: per layer, weights then biases.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = self.version.wrapping_add(1);
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, network has {}",
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

    /// Adds `scale · other` into `self`, parameter-wise.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) -> Result<()> {
        if self.specs() != other.specs() {
            return Err(Error::Shape("cannot add networks of different shape".into()));
        }
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass without recording activations.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let (_, post) = layer_forward(layer, &x);
            x = post;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(x)
    }

    /// Forward pass for a single sample.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Matrix::row_vector(input))?.into_vec())
    }

    /// Batched forward pass that records pre/post activations for `backward`.
    pub fn forward_cached(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let (p, post) = layer_forward(layer, activations.last().unwrap());
            pre.push(p);
            activations.push(post);
        }
        let out = activations.last().unwrap().clone();
        if !out.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((
            out,
            ForwardCache {
                activations,
                pre,
                version: self.version,
            },
        ))
    }

    /// Exact reverse-mode gradients of `Σ_rows ⟨grad_output_row, f(x_row)⟩`.
    ///
    /// Returns parameter gradients summed over the batch and the gradient
    /// with respect to each input row.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(Mlp, Matrix)> {
        if cache.version != self.version || cache.pre.len() != self.layers.len() {
            return Err(Error::Shape("forward cache is stale or from another network".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if cache.pre[k].cols() != layer.spec.out_dim || cache.activations[k].cols() != layer.spec.in_dim {
                return Err(Error::Shape(format!("cache layer {k} does not match network")));
            }
        }
        let batch = cache.input().rows();
        if grad_output.rows() != batch || grad_output.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "grad_output is {}x{}, expected {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                batch,
                self.out_dim()
            )));
        }

        let mut grads = self.zeros_like();
        let mut upstream = grad_output.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
            let pre = &cache.pre[k];
            let post = &cache.activations[k + 1];
            let input = &cache.activations[k];

            let act = layer.spec.activation;
            if act != Activation::Linear {
                for ((g, &x), &y) in upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(pre.as_slice())
                    .zip(post.as_slice())
                {
                    *g *= act.derivative(x, y);
                }
            }

            let gl = &mut grads.layers[k];
            // dW = gᵀ·x, db = Σ_rows g
            gemm_tn(n_out, batch, n_in, upstream.as_slice(), input.as_slice(), 0.0, &mut gl.weight);
            for row in upstream.row_iter() {
                for (b, g) in gl.bias.iter_mut().zip(row) {
                    *b += g;
                }
            }

            let mut down = Matrix::zeros(batch, n_in);
            gemm_nn(batch, n_out, n_in, upstream.as_slice(), &layer.weight, 0.0, down.as_mut_slice());
            upstream = down;
        }
        Ok((grads, upstream))
    }
}

fn layer_forward(layer: &Dense, x: &Matrix) -> (Matrix, Matrix) {
    let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
    let batch = x.rows();
    let mut pre = Matrix::zeros(batch, n_out);
    gemm_nt(batch, n_in, n_out, x.as_slice(), &layer.weight, 0.0, pre.as_mut_slice());
    for i in 0..batch {
        for (p, b) in pre.row_mut(i).iter_mut().zip(&layer.bias) {
            *p += b;
        }
    }
    let act = layer.spec.activation;
    let post = if act == Activation::Linear {
        pre.clone()
    } else {
        let mut post = pre.clone();
        for v in post.as_mut_slice() {
            *v = act.apply(*v);
        }
        post
    };
    (pre, post)
}
