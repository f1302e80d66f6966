//! Fully-connected networks with analytic gradients and an Adam optimizer.
//!
//! Parameters live in one flat [`ParameterSet`]; layer `l` stores its weight
//! matrix row-major (`out × in`) followed by its bias vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// `scale[k] · tanh(z[k])`.
    Bounded { scale: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_layers: Vec<usize>,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            hidden_layers,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::domain("network dimensions must be >= 1"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::domain(
                "network needs at least one hidden layer, all widths >= 1",
            ));
        }
        if let OutputActivation::Bounded { scale } = &self.output_activation {
            if scale.len() != self.output_dim || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::domain(
                    "bounded output needs one positive scale per output dimension",
                ));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_layers);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    fn widest(&self) -> usize {
        self.hidden_layers
            .iter()
            .copied()
            .chain([self.input_dim, self.output_dim])
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<S> {
    pub values: Vec<S>,
}

impl<S: Real> ParameterSet<S> {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            values: vec![S::zero(); spec.parameter_count()],
        }
    }

    /// Uniform fan-in initialization `U(−1/√fan_in, 1/√fan_in)`, with the last
    /// layer additionally scaled by `final_layer_scale`.
    pub fn init<R: Rng>(spec: &MlpSpec, final_layer_scale: f64, rng: &mut R) -> Self {
        let shapes = spec.layer_shapes();
        let mut values = Vec::with_capacity(spec.parameter_count());
        for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == shapes.len() {
                bound *= final_layer_scale;
            }
            for _ in 0..(fan_in * fan_out + fan_out) {
                values.push(S::lit(rng.random_range(-bound..=bound)));
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self ← ρ·live + (1 − ρ)·self`.
    pub fn soft_update_from(&mut self, live: &Self, rho: S) {
        let keep = S::one() - rho;
        for (t, &l) in self.values.iter_mut().zip(&live.values) {
            *t = rho * l + keep * *t;
        }
    }

    pub fn distance(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            .sqrt()
    }

    /// Little-endian `f32` bytes.
    pub fn to_le_f32_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .flat_map(|&v| cast::<S, f32>(v).to_le_bytes())
            .collect()
    }

    pub fn from_le_f32_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Checkpoint("parameter block is not a multiple of 4 bytes".into()));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| cast::<f32, S>(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok(Self { values })
    }

    /// Weights and bias of layer `l` as `(weights, bias)` slices.
    pub fn layer(&self, spec: &MlpSpec, l: usize) -> (&[S], &[S]) {
        let (offset, fan_in, fan_out) = layer_offset(spec, l);
        let w = &self.values[offset..offset + fan_in * fan_out];
        let b = &self.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (w, b)
    }
}

fn layer_offset(spec: &MlpSpec, l: usize) -> (usize, usize, usize) {
    let shapes = spec.layer_shapes();
    let offset = shapes[..l].iter().map(|(i, o)| i * o + o).sum();
    (offset, shapes[l].0, shapes[l].1)
}

#[inline]
fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = S::zero();
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy<S: Real>(y: &mut [S], alpha: S, x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Per-layer activations kept by a batched forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<S> {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the post-activation output of layer `l`.
    acts: Vec<Vec<S>>,
    /// Pre-activation of the final layer.
    output_pre: Vec<S>,
}

impl<S: Real> ForwardCache<S> {
    pub fn output(&self) -> &[S] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Evaluates a batch of `batch` inputs laid out row-major in `inputs`.
pub fn forward_batch<S: Real>(
    spec: &MlpSpec,
    params: &ParameterSet<S>,
    inputs: &[S],
    batch: usize,
    cache: &mut ForwardCache<S>,
) -> Result<()> {
    if inputs.len() != batch * spec.input_dim {
        return Err(Error::domain(format!(
            "expected {} inputs ({} x {}), got {}",
            batch * spec.input_dim,
            batch,
            spec.input_dim,
            inputs.len()
        )));
    }
    if params.len() != spec.parameter_count() {
        return Err(Error::domain(format!(
            "parameter count {} does not match spec ({})",
            params.len(),
            spec.parameter_count()
        )));
    }
    let shapes = spec.layer_shapes();
    cache.batch = batch;
    cache.acts.resize_with(shapes.len() + 1, Vec::new);
    cache.acts[0].clear();
    cache.acts[0].extend_from_slice(inputs);
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let w = &params.values[offset..offset + fan_in * fan_out];
        let b = &params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let (prev, rest) = cache.acts.split_at_mut(l + 1);
        let x_all = &prev[l];
        let y_all = &mut rest[0];
        y_all.clear();
        y_all.resize(batch * fan_out, S::zero());
        for n in 0..batch {
            let x = &x_all[n * fan_in..(n + 1) * fan_in];
            let y = &mut y_all[n * fan_out..(n + 1) * fan_out];
            for j in 0..fan_out {
                y[j] = b[j] + dot(&w[j * fan_in..(j + 1) * fan_in], x);
            }
        }
        let last = l + 1 == shapes.len();
        if !last {
            for v in y_all.iter_mut() {
                *v = v.max(S::zero());
            }
        } else {
            cache.output_pre.clear();
            cache.output_pre.extend_from_slice(y_all);
            if let OutputActivation::Bounded { scale } = &spec.output_activation {
                for (k, v) in y_all.iter_mut().enumerate() {
                    *v = S::lit(scale[k % fan_out]) * v.tanh();
                }
            }
        }
    }
    Ok(())
}

/// Gradients of `Σ output_grad · output` with respect to parameters (accumulated
/// into `param_grad`) and, if requested, inputs (overwritten).
pub fn backward_batch<S: Real>(
    spec: &MlpSpec,
    params: &ParameterSet<S>,
    cache: &ForwardCache<S>,
    output_grad: &[S],
    param_grad: &mut [S],
    mut input_grad: Option<&mut [S]>,
) -> Result<()> {
    let batch = cache.batch;
    if output_grad.len() != batch * spec.output_dim {
        return Err(Error::domain("output gradient has the wrong length"));
    }
    if param_grad.len() != spec.parameter_count() {
        return Err(Error::domain("parameter gradient has the wrong length"));
    }
    if let Some(g) = input_grad.as_deref() {
        if g.len() != batch * spec.input_dim {
            return Err(Error::domain("input gradient has the wrong length"));
        }
    }
    let shapes = spec.layer_shapes();
    let mut delta: Vec<S> = output_grad.to_vec();
    if let OutputActivation::Bounded { scale } = &spec.output_activation {
        let d = spec.output_dim;
        for (k, g) in delta.iter_mut().enumerate() {
            let t = cache.output_pre[k].tanh();
            *g *= S::lit(scale[k % d]) * (S::one() - t * t);
        }
    }
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for &(i, o) in &shapes {
        offsets.push(off);
        off += i * o + o;
    }
    let mut prev_delta: Vec<S> = Vec::with_capacity(batch * spec.widest());
    for l in (0..shapes.len()).rev() {
        let (fan_in, fan_out) = shapes[l];
        let offset = offsets[l];
        let w = &params.values[offset..offset + fan_in * fan_out];
        let (gw, gb) = param_grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        let x_all = &cache.acts[l];
        let need_dx = l > 0 || input_grad.is_some();
        prev_delta.clear();
        if need_dx {
            prev_delta.resize(batch * fan_in, S::zero());
        }
        for n in 0..batch {
            let x = &x_all[n * fan_in..(n + 1) * fan_in];
            let dn = &delta[n * fan_out..(n + 1) * fan_out];
            for j in 0..fan_out {
                let g = dn[j];
                if g == S::zero() {
                    continue;
                }
                gb[j] += g;
                axpy(&mut gw[j * fan_in..(j + 1) * fan_in], g, x);
                if need_dx {
                    axpy(
                        &mut prev_delta[n * fan_in..(n + 1) * fan_in],
                        g,
                        &w[j * fan_in..(j + 1) * fan_in],
                    );
                }
            }
        }
        if l > 0 {
            // ReLU derivative of the previous layer's output.
            for (d, &a) in prev_delta.iter_mut().zip(x_all.iter()) {
                if a <= S::zero() {
                    *d = S::zero();
                }
            }
            std::mem::swap(&mut delta, &mut prev_delta);
        } else if let Some(g) = input_grad.as_deref_mut() {
            g.copy_from_slice(&prev_delta);
        }
    }
    Ok(())
}

/// Single-input forward pass.
pub fn forward<S: Real>(spec: &MlpSpec, params: &ParameterSet<S>, input: &[S]) -> Result<Vec<S>> {
    if input.len() != spec.input_dim {
        return Err(Error::domain(format!(
            "input length {} != input_dim {}",
            input.len(),
            spec.input_dim
        )));
    }
    let mut cache = ForwardCache::default();
    forward_batch(spec, params, input, 1, &mut cache)?;
    Ok(cache.output().to_vec())
}

/// Parameter and input gradients of `output_grad · f(input)` for a single input.
pub fn backward<S: Real>(
    spec: &MlpSpec,
    params: &ParameterSet<S>,
    input: &[S],
    output_grad: &[S],
) -> Result<(ParameterSet<S>, Vec<S>)> {
    if input.len() != spec.input_dim {
        return Err(Error::domain("input length does not match spec"));
    }
    if output_grad.len() != spec.output_dim {
        return Err(Error::domain("output gradient length does not match spec"));
    }
    let mut cache = ForwardCache::default();
    forward_batch(spec, params, input, 1, &mut cache)?;
    let mut pg = vec![S::zero(); spec.parameter_count()];
    let mut ig = vec![S::zero(); spec.input_dim];
    backward_batch(spec, params, &cache, output_grad, &mut pg, Some(&mut ig))?;
    Ok((ParameterSet { values: pg }, ig))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates with the step count for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected adaptive-moment step. Rejects non-finite gradients
/// without touching parameters or state.
pub fn optimize_step<S: Real>(
    params: &mut ParameterSet<S>,
    grad: &[S],
    state: &mut AdamState<S>,
    lr: S,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::domain("gradient/optimizer length mismatch"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::domain(format!("non-finite gradient at parameter {i}")));
    }
    let (b1, b2, eps) = (S::lit(cfg.beta1), S::lit(cfg.beta2), S::lit(cfg.epsilon));
    state.t += 1;
    let t = state.t as i32;
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    let step = lr / c1;
    let c2_sqrt = c2.sqrt();
    for (((p, &g), m), v) in params
        .values
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        *p -= step * *m / (v.sqrt() / c2_sqrt + eps);
    }
    Ok(())
}
