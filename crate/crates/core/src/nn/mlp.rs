use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
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
}

/// Fully-connected network shape: `layer_sizes = [input, hidden…, output]`,
/// activation on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Weight,
    Bias,
}

/// One contiguous run of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self { layer_sizes, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(param_err("an MLP needs an input, at least one hidden layer and an output"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(param_err("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Weight (row-major `fan_in x fan_out`) then bias, layer by layer.
    pub fn manifest(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        let mut offset = 0;
        for (layer, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push(Segment {
                layer,
                kind: SegmentKind::Weight,
                offset,
                rows: fan_in,
                cols: fan_out,
            });
            offset += fan_in * fan_out;
            out.push(Segment {
                layer,
                kind: SegmentKind::Bias,
                offset,
                rows: 1,
                cols: fan_out,
            });
            offset += fan_out;
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `±√(1/fan_in)` initialization for every weight and bias.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.n_params()];
        for seg in self.manifest() {
            let bound = (1.0 / self.layer_sizes[seg.layer] as f64).sqrt();
            for v in &mut values[seg.offset..seg.offset + seg.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        ParamVector::new(values)
    }

    fn weight<'a>(&self, params: &'a ParamVector, layer: usize) -> ArrayView2<'a, f64> {
        let (off, fi, fo) = self.weight_offset(layer);
        ArrayView2::from_shape((fi, fo), &params.values[off..off + fi * fo]).expect("layout")
    }

    fn bias<'a>(&self, params: &'a ParamVector, layer: usize) -> ArrayView1<'a, f64> {
        let (off, fi, fo) = self.weight_offset(layer);
        let b = off + fi * fo;
        ArrayView1::from(&params.values[b..b + fo])
    }

    fn weight_offset(&self, layer: usize) -> (usize, usize, usize) {
        let off: usize = self.layer_sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (off, self.layer_sizes[layer], self.layer_sizes[layer + 1])
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Flat parameter storage. Every mutation through this type assigns a fresh
/// generation id so forward caches can detect staleness.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    generation: u64,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            generation: next_generation(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable access; bumps the generation.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn fill(&mut self, v: f64) {
        self.values_mut().iter_mut().for_each(|x| *x = v);
    }

    pub fn copy_from(&mut self, other: &ParamVector) {
        self.values.clear();
        self.values.extend_from_slice(&other.values);
        self.generation = other.generation;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.values_mut().iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    layer_sizes: Vec<usize>,
    /// `activations[0]` is the input; `activations[l]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("non-empty").view()
    }
}

fn check_params(params: &ParamVector, spec: &MlpSpec) -> Result<()> {
    spec.validate()?;
    if params.len() != spec.n_params() {
        return Err(param_err(format!(
            "parameter vector has {} entries, layout needs {}",
            params.len(),
            spec.n_params()
        )));
    }
    Ok(())
}

/// Batched forward pass; rows of `input` are samples.
pub fn forward_batch(params: &ParamVector, spec: &MlpSpec, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
    check_params(params, spec)?;
    if input.ncols() != spec.input_dim() {
        return Err(param_err(format!(
            "input width {} does not match first layer {}",
            input.ncols(),
            spec.input_dim()
        )));
    }
    let n_layers = spec.n_layers();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut pre_activations = Vec::with_capacity(n_layers - 1);
    activations.push(input.to_owned());
    for layer in 0..n_layers {
        let mut z = activations[layer].dot(&spec.weight(params, layer));
        z += &spec.bias(params, layer);
        if layer + 1 < n_layers {
            let y = z.mapv(|v| spec.activation.apply(v));
            pre_activations.push(z);
            activations.push(y);
        } else {
            activations.push(z);
        }
    }
    let out = activations.last().expect("non-empty").clone();
    Ok((
        out,
        ForwardCache {
            generation: params.generation(),
            layer_sizes: spec.layer_sizes.clone(),
            activations,
            pre_activations,
        },
    ))
}

/// Forward pass without retaining intermediates.
pub fn predict_batch(params: &ParamVector, spec: &MlpSpec, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_params(params, spec)?;
    if input.ncols() != spec.input_dim() {
        return Err(param_err("input width does not match first layer"));
    }
    let n_layers = spec.n_layers();
    let mut x = input.dot(&spec.weight(params, 0));
    x += &spec.bias(params, 0);
    for layer in 1..n_layers {
        let act = spec.activation;
        x.mapv_inplace(|v| act.apply(v));
        let mut z = x.dot(&spec.weight(params, layer));
        z += &spec.bias(params, layer);
        x = z;
    }
    Ok(x)
}

/// Reverse-mode pass for `Σ_rows output · upstream`. Parameter gradients are
/// accumulated into `grad`; the gradient with respect to the input is returned.
pub fn backward_batch(
    params: &ParamVector,
    spec: &MlpSpec,
    cache: &ForwardCache,
    upstream: ArrayView2<'_, f64>,
    grad: &mut ParamVector,
) -> Result<Array2<f64>> {
    if grad.len() != spec.n_params() {
        return Err(param_err("gradient buffer has the wrong length"));
    }
    backward_impl(params, spec, cache, upstream, Some(grad.values_mut()))
}

/// Gradient of `Σ_rows output · upstream` with respect to the input only.
pub fn input_gradient(params: &ParamVector, spec: &MlpSpec, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    backward_impl(params, spec, cache, upstream, None)
}

fn backward_impl(
    params: &ParamVector,
    spec: &MlpSpec,
    cache: &ForwardCache,
    upstream: ArrayView2<'_, f64>,
    mut grad: Option<&mut [f64]>,
) -> Result<Array2<f64>> {
    if cache.generation != params.generation() || cache.layer_sizes != spec.layer_sizes {
        return Err(Error::Usage("forward cache does not belong to these parameters".into()));
    }
    if upstream.dim() != (cache.batch_size(), spec.output_dim()) {
        return Err(param_err("upstream shape does not match network output"));
    }
    let n_layers = spec.n_layers();
    let mut delta = upstream.to_owned();
    for layer in (0..n_layers).rev() {
        if let Some(g) = grad.as_deref_mut() {
            let (off, fi, fo) = spec.weight_offset(layer);
            let (gw, gb) = g[off..off + fi * fo + fo].split_at_mut(fi * fo);
            let mut gw = ArrayViewMut2::from_shape((fi, fo), gw).expect("layout");
            general_mat_mul(1.0, &cache.activations[layer].t(), &delta, 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(gb);
            gb += &delta.sum_axis(Axis(0));
        }
        let mut d_in = delta.dot(&spec.weight(params, layer).t());
        if layer > 0 {
            let z = &cache.pre_activations[layer - 1];
            let y = &cache.activations[layer];
            let act = spec.activation;
            ndarray::Zip::from(&mut d_in)
                .and(z)
                .and(y)
                .for_each(|d, &z, &y| *d *= act.derivative(z, y));
        }
        delta = d_in;
    }
    Ok(delta)
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &ParamVector, spec: &MlpSpec, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
    let (out, cache) = forward_batch(params, spec, x)?;
    Ok((out.into_raw_vec_and_offset().0, cache))
}

/// Gradient of `output · upstream` with respect to the parameters.
pub fn mlp_backward(params: &ParamVector, spec: &MlpSpec, cache: &ForwardCache, upstream: &[f64]) -> Result<ParamVector> {
    let up = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|_| param_err("upstream shape"))?;
    let mut grad = ParamVector::zeros(spec.n_params());
    if cache.batch_size() != 1 {
        return Err(param_err("single-sample backward on a batched cache"));
    }
    backward_batch(params, spec, cache, up, &mut grad)?;
    Ok(grad)
}

/// Row-stacks equal-length vectors into a matrix.
pub fn stack_rows(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (mut dst, src) in m.outer_iter_mut().zip(rows) {
        dst.assign(&ArrayView1::from(*src));
    }
    m
}
