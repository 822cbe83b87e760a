//! Dense feed-forward network addressed through a flat parameter vector.
//!
//! Layout per layer: the weight matrix in row-major `(out_dim, in_dim)` order,
//! followed by the bias vector. Hidden layers apply the spec's activation; the
//! output layer is affine. Because every network is just a `ParamVector` plus
//! an `MlpSpec`, copying, averaging and gradient steps are plain vector
//! arithmetic.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Flat vector of network parameters (or a gradient with the same layout).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `base + step * direction`, elementwise.
    pub fn add_scaled(&self, direction: &ParamVector, step: f64) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(step, direction)?;
        Ok(out)
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::dims("axpy", self.len(), other.len()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Where one layer's weights and biases live inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    pub fn end(&self) -> usize {
        self.bias_offset + self.out_dim
    }
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "all network dims must be >= 1, got {}-{:?}-{}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);

        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    in_dim: w[0],
                    out_dim: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = slot.end();
                slot
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().last().map_or(0, LayerSlot::end)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(Error::dims("network parameters", expected, params.len()));
        }
        Ok(())
    }

    /// Split a flat vector into per-layer `(weights, bias)` pairs.
    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<DenseLayer>> {
        self.check_params(params)?;
        Ok(self
            .layers()
            .into_iter()
            .map(|slot| DenseLayer {
                in_dim: slot.in_dim,
                out_dim: slot.out_dim,
                weights: params[slot.weight_offset..slot.bias_offset].to_vec(),
                bias: params[slot.bias_offset..slot.end()].to_vec(),
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[DenseLayer]) -> Result<ParamVector> {
        let slots = self.layers();
        if slots.len() != layers.len() {
            return Err(Error::dims("layer count", slots.len(), layers.len()));
        }
        let mut out = Vec::with_capacity(self.num_params());
        for (slot, layer) in slots.iter().zip(layers) {
            if layer.weights.len() != slot.in_dim * slot.out_dim || layer.bias.len() != slot.out_dim
            {
                return Err(Error::dims(
                    "layer shape",
                    slot.in_dim * slot.out_dim + slot.out_dim,
                    layer.weights.len() + layer.bias.len(),
                ));
            }
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        Ok(ParamVector(out))
    }
}

/// One dense layer with its weights in row-major `(out_dim, in_dim)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Pre-activations and activations of every layer for a single input.
///
/// `activations[0]` is the input itself; `activations[i + 1]` is the output of
/// layer `i`. The last entry is the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

/// Uniform Xavier weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> ParamVector {
    let mut params = vec![0.0; spec.num_params()];
    for slot in spec.layers() {
        let bound = (6.0 / (slot.in_dim + slot.out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
        for w in &mut params[slot.weight_offset..slot.bias_offset] {
            *w = dist.sample(rng);
        }
    }
    ParamVector(params)
}

pub fn forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if input.len() != spec.input_dim {
        return Err(Error::dims("network input", spec.input_dim, input.len()));
    }
    let batch = forward_batch(spec, params, input, 1)?;
    let output = batch.output().to_vec();
    Ok((
        output,
        ForwardCache {
            pre_activations: batch.pre_activations,
            activations: batch.activations,
        },
    ))
}

/// Gradient of `output_grad · output` with respect to every parameter.
pub fn backward(
    spec: &MlpSpec,
    params: &[f64],
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<ParamVector> {
    let mut grad = ParamVector::zeros(spec.num_params());
    backward_accumulate(spec, params, cache, output_grad, 1.0, grad.as_mut_slice())?;
    Ok(grad)
}

/// `grad += scale * dL/dθ`; avoids allocating a fresh gradient per sample.
pub fn backward_accumulate(
    spec: &MlpSpec,
    params: &[f64],
    cache: &ForwardCache,
    output_grad: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    spec.check_params(params)?;
    spec.check_params(grad)?;
    let slots = spec.layers();
    if cache.activations.len() != slots.len() + 1 || cache.pre_activations.len() != slots.len() {
        return Err(Error::dims(
            "forward cache layers",
            slots.len(),
            cache.pre_activations.len(),
        ));
    }
    if output_grad.len() != spec.output_dim {
        return Err(Error::dims("output gradient", spec.output_dim, output_grad.len()));
    }

    // delta holds dL/dz for the current layer.
    let mut delta: Vec<f64> = output_grad.iter().map(|g| g * scale).collect();
    for (i, slot) in slots.iter().enumerate().rev() {
        let x = &cache.activations[i];
        if x.len() != slot.in_dim || cache.pre_activations[i].len() != slot.out_dim {
            return Err(Error::dims("forward cache shape", slot.in_dim, x.len()));
        }
        let g = &mut *grad;
        for (row, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let gw = &mut g[slot.weight_offset + row * slot.in_dim..slot.weight_offset + (row + 1) * slot.in_dim];
            for (gwi, xi) in gw.iter_mut().zip(x) {
                *gwi += d * xi;
            }
            g[slot.bias_offset + row] += d;
        }
        if i == 0 {
            break;
        }
        let w = &params[slot.weight_offset..slot.bias_offset];
        let mut upstream = vec![0.0; slot.in_dim];
        for (row, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (u, wi) in upstream.iter_mut().zip(&w[row * slot.in_dim..(row + 1) * slot.in_dim]) {
                *u += d * wi;
            }
        }
        let z_prev = &cache.pre_activations[i - 1];
        for ((u, &z), &y) in upstream.iter_mut().zip(z_prev).zip(x) {
            *u *= spec.activation.derivative(z, y);
        }
        delta = upstream;
    }
    Ok(())
}

/// `c = alpha · a · b + beta · c` for strided `m × k` and `k × n` operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    beta: f64,
    (c, rsc, csc): (&mut [f64], usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: left operand too short");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: right operand too short");
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: output too short");
    // SAFETY: the assertions above keep every strided access inside the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Layer-by-layer values for a batch of inputs, each stored row-major
/// (`rows × width`). `activations[0]` holds the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCache {
    pub rows: usize,
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl BatchCache {
    /// Network outputs, `rows × output_dim`.
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

/// Forward pass for `rows` inputs stored row-major in `inputs`.
pub fn forward_batch(spec: &MlpSpec, params: &[f64], inputs: &[f64], rows: usize) -> Result<BatchCache> {
    spec.check_params(params)?;
    if inputs.len() != rows * spec.input_dim {
        return Err(Error::dims("network input batch", rows * spec.input_dim, inputs.len()));
    }
    let slots = spec.layers();
    let last = slots.len() - 1;
    let mut pre_activations = Vec::with_capacity(slots.len());
    let mut activations = Vec::with_capacity(slots.len() + 1);
    activations.push(inputs.to_vec());
    for (i, slot) in slots.iter().enumerate() {
        let w = &params[slot.weight_offset..slot.bias_offset];
        let b = &params[slot.bias_offset..slot.end()];
        let mut z = Vec::with_capacity(rows * slot.out_dim);
        for _ in 0..rows {
            z.extend_from_slice(b);
        }
        // zᵀ = W · xᵀ: the weight matrix takes the tall side of the kernel so a
        // single row does not pay for a padded row tile.
        gemm(
            (slot.out_dim, slot.in_dim, rows),
            1.0,
            (w, slot.in_dim, 1),
            (&activations[i], 1, slot.in_dim),
            1.0,
            (&mut z, 1, slot.out_dim),
        );
        let y = if i == last {
            z.clone()
        } else {
            z.iter().map(|&v| spec.activation.apply(v)).collect()
        };
        pre_activations.push(z);
        activations.push(y);
    }
    Ok(BatchCache {
        rows,
        pre_activations,
        activations,
    })
}

/// `grad += Σ_rows output_grads[row] · d output[row] / dθ`.
pub fn backward_batch_accumulate(
    spec: &MlpSpec,
    params: &[f64],
    cache: &BatchCache,
    output_grads: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    spec.check_params(params)?;
    spec.check_params(grad)?;
    let slots = spec.layers();
    let rows = cache.rows;
    if cache.activations.len() != slots.len() + 1 || cache.pre_activations.len() != slots.len() {
        return Err(Error::dims("batch cache layers", slots.len(), cache.pre_activations.len()));
    }
    if output_grads.len() != rows * spec.output_dim {
        return Err(Error::dims("output gradient batch", rows * spec.output_dim, output_grads.len()));
    }
    if rows == 0 {
        return Ok(());
    }
    let mut delta = output_grads.to_vec();
    for (i, slot) in slots.iter().enumerate().rev() {
        let x = &cache.activations[i];
        if x.len() != rows * slot.in_dim {
            return Err(Error::dims("batch cache shape", rows * slot.in_dim, x.len()));
        }
        // dW (out × in) += deltaᵀ · x
        gemm(
            (slot.out_dim, rows, slot.in_dim),
            1.0,
            (&delta, 1, slot.out_dim),
            (x, slot.in_dim, 1),
            1.0,
            (&mut grad[slot.weight_offset..slot.bias_offset], slot.in_dim, 1),
        );
        let gb = &mut grad[slot.bias_offset..slot.end()];
        for row in delta.chunks_exact(slot.out_dim) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if i == 0 {
            break;
        }
        let w = &params[slot.weight_offset..slot.bias_offset];
        let mut upstream = vec![0.0; rows * slot.in_dim];
        gemm(
            (rows, slot.out_dim, slot.in_dim),
            1.0,
            (&delta, slot.out_dim, 1),
            (w, slot.in_dim, 1),
            0.0,
            (&mut upstream, slot.in_dim, 1),
        );
        let z_prev = &cache.pre_activations[i - 1];
        for ((u, &z), &y) in upstream.iter_mut().zip(z_prev).zip(x) {
            *u *= spec.activation.derivative(z, y);
        }
        delta = upstream;
    }
    Ok(())
}
