//! A small fully connected network trained with plain mini-batch SGD.
//!
//! Layer `k` (1-based) is called `fck`; its weight matrix (row-major,
//! `out x in`) and bias vector share that name in the [`LayerSchema`].

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::Sample;
use crate::error::ModelError;
use crate::params::{LayerSchema, ParameterVector};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    schema: Arc<LayerSchema>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-step extension points for local training.
///
/// `add_gradient` contributes an extra loss term's gradient; `project` runs
/// after every parameter update.
pub trait TrainingHook {
    fn add_gradient(&self, _params: &[f64], _grad: &mut [f64]) {}
    fn project(&self, _params: &mut [f64]) {}
}

/// Activations kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer, `batch x dims[k]`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer, `batch x dims[k + 1]`.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn logits(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn layer_name(k: usize) -> alloc::string::String {
    format!("fc{}", k + 1)
}

impl Mlp {
    pub fn new(dims: &[usize]) -> Result<Self, ModelError> {
        if dims.len() < 3 || dims.contains(&0) {
            return Err(ModelError::InvalidArchitecture);
        }
        let schema = LayerSchema::new(dims.windows(2).enumerate().map(|(k, w)| (layer_name(k), w[0] * w[1] + w[1])))?;
        Ok(Self { dims: dims.to_vec(), schema: Arc::new(schema) })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn schema(&self) -> &Arc<LayerSchema> {
        &self.schema
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.schema.total_len()
    }

    fn layer_offset(&self, k: usize) -> usize {
        self.schema.layers()[k].offset
    }

    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(&self, seed: u64) -> ParameterVector {
        let mut rng = rng_from(seed);
        let mut values = vec![0.0; self.param_count()];
        for k in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.dims[k], self.dims[k + 1]);
            let bound = libm::sqrt(6.0 / fan_in as f64);
            let off = self.layer_offset(k);
            for w in &mut values[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        ParameterVector::new(values, self.schema.clone()).expect("schema-sized init")
    }

    pub fn zeros(&self) -> ParameterVector {
        ParameterVector::zeros(self.schema.clone())
    }

    fn check_params(&self, params: &ParameterVector) -> Result<(), ModelError> {
        if params.len() != self.param_count() || **params.schema() != *self.schema {
            return Err(crate::error::ParamError::SchemaMismatch.into());
        }
        Ok(())
    }

    /// Logits for a batch, plus the cache needed by [`Mlp::backward`].
    pub fn forward(&self, params: &ParameterVector, batch: &[&[f64]]) -> Result<ForwardCache, ModelError> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(ModelError::Empty);
        }
        let d_in = self.input_dim();
        let mut input = Vec::with_capacity(batch.len() * d_in);
        for row in batch {
            if row.len() != d_in {
                return Err(ModelError::DimensionMismatch { expected: d_in, actual: row.len() });
            }
            input.extend_from_slice(row);
        }
        Ok(self.forward_flat(params.values(), input, batch.len()))
    }

    fn forward_flat(&self, p: &[f64], input: Vec<f64>, batch: usize) -> ForwardCache {
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut a = input;
        for k in 0..layers {
            let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
            let off = self.layer_offset(k);
            let w = &p[off..off + n_in * n_out];
            let b = &p[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut z = vec![0.0; batch * n_out];
            for r in 0..batch {
                let x = &a[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    let mut acc = b[o];
                    for i in 0..n_in {
                        acc += wr[i] * x[i];
                    }
                    z[r * n_out + o] = acc;
                }
            }
            let next =
                if k + 1 < layers { z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect() } else { Vec::new() };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        ForwardCache { batch, inputs, pre }
    }

    /// Gradient of the batch-mean cross-entropy with respect to every parameter.
    pub fn backward(
        &self,
        params: &ParameterVector,
        cache: &ForwardCache,
        labels: &[usize],
    ) -> Result<ParameterVector, ModelError> {
        self.check_params(params)?;
        if labels.len() != cache.batch {
            return Err(ModelError::DimensionMismatch { expected: cache.batch, actual: labels.len() });
        }
        let classes = self.num_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::LabelOutOfRange { label, classes });
        }
        let mut grad = vec![0.0; self.param_count()];
        self.backward_flat(params.values(), cache, labels, &mut grad);
        Ok(ParameterVector::new(grad, self.schema.clone())?)
    }

    fn backward_flat(&self, p: &[f64], cache: &ForwardCache, labels: &[usize], grad: &mut [f64]) {
        let batch = cache.batch;
        let classes = self.num_classes();
        let scale = 1.0 / batch as f64;
        let mut dz = softmax_rows(cache.logits(), classes);
        for (r, &y) in labels.iter().enumerate() {
            dz[r * classes + y] -= 1.0;
        }
        for v in &mut dz {
            *v *= scale;
        }
        for k in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
            let off = self.layer_offset(k);
            let a = &cache.inputs[k];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for r in 0..batch {
                    let x = &a[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let d = dz[r * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            row[i] += d * x[i];
                        }
                    }
                }
            }
            if k == 0 {
                break;
            }
            let w = &p[off..off + n_in * n_out];
            let z_prev = &cache.pre[k - 1];
            let mut dprev = vec![0.0; batch * n_in];
            for r in 0..batch {
                for o in 0..n_out {
                    let d = dz[r * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    let out = &mut dprev[r * n_in..(r + 1) * n_in];
                    for i in 0..n_in {
                        out[i] += d * wr[i];
                    }
                }
            }
            for (g, &z) in dprev.iter_mut().zip(z_prev) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            dz = dprev;
        }
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, params: &ParameterVector, data: &[Sample]) -> Result<f64, ModelError> {
        let cache = self.forward_samples(params, data)?;
        let classes = self.num_classes();
        let probs = softmax_rows(cache.logits(), classes);
        let mut total = 0.0;
        for (r, s) in data.iter().enumerate() {
            if s.label >= classes {
                return Err(ModelError::LabelOutOfRange { label: s.label, classes });
            }
            total -= libm::log(probs[r * classes + s.label].max(1e-300));
        }
        Ok(total / data.len() as f64)
    }

    fn forward_samples(&self, params: &ParameterVector, data: &[Sample]) -> Result<ForwardCache, ModelError> {
        let rows: Vec<&[f64]> = data.iter().map(|s| s.features.as_slice()).collect();
        self.forward(params, &rows)
    }

    /// Arg-max class per sample; ties go to the lowest class index.
    pub fn predict(&self, params: &ParameterVector, data: &[Sample]) -> Result<Vec<usize>, ModelError> {
        let cache = self.forward_samples(params, data)?;
        let classes = self.num_classes();
        Ok(cache.logits().chunks(classes).map(argmax).collect())
    }

    /// Top-1 accuracy.
    pub fn evaluate(&self, params: &ParameterVector, test: &[Sample]) -> Result<f64, ModelError> {
        if test.is_empty() {
            return Err(ModelError::Empty);
        }
        let predictions = self.predict(params, test)?;
        let correct = predictions.iter().zip(test).filter(|(p, s)| **p == s.label).count();
        Ok(correct as f64 / test.len() as f64)
    }

    /// Mini-batch SGD from `start`: `epochs * ceil(n / batch_size)` steps, with
    /// a fresh seeded shuffle each epoch.
    pub fn local_train(
        &self,
        start: &ParameterVector,
        data: &[Sample],
        cfg: &TrainConfig,
        hook: Option<&dyn TrainingHook>,
    ) -> Result<ParameterVector, ModelError> {
        self.check_params(start)?;
        cfg.validate()?;
        if data.is_empty() {
            return Err(ModelError::Empty);
        }
        let d_in = self.input_dim();
        let classes = self.num_classes();
        for s in data {
            if s.features.len() != d_in {
                return Err(ModelError::DimensionMismatch { expected: d_in, actual: s.features.len() });
            }
            if s.label >= classes {
                return Err(ModelError::LabelOutOfRange { label: s.label, classes });
            }
        }
        let mut rng = rng_from(cfg.seed);
        let mut params = start.values().to_vec();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; params.len()];
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut input = Vec::with_capacity(chunk.len() * d_in);
                let mut labels = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    input.extend_from_slice(&data[i].features);
                    labels.push(data[i].label);
                }
                let cache = self.forward_flat(&params, input, chunk.len());
                grad.iter_mut().for_each(|g| *g = 0.0);
                self.backward_flat(&params, &cache, &labels, &mut grad);
                if let Some(h) = hook {
                    h.add_gradient(&params, &mut grad);
                }
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
                if let Some(h) = hook {
                    h.project(&mut params);
                }
            }
        }
        Ok(ParameterVector::new(params, self.schema.clone())?)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise numerically stable softmax of a `rows x classes` matrix.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - max)).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}
