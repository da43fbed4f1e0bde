//! Dense feed-forward classifier trained with plain minibatch SGD.
//!
//! Hidden layers use ReLU, the output layer softmax. All arithmetic is f64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `fan_out x fan_in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layers: Vec<DenseLayer>,
}

impl ModelParams {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::invalid(format!(
                    "layer {i}: bias length {} != fan-out {}",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            if layer.fan_in() == 0 || layer.fan_out() == 0 {
                return Err(Error::invalid(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::invalid(format!(
                    "layer {} fan-in {} does not chain with layer {i} fan-out {}",
                    i + 1,
                    pair[1].fan_in(),
                    pair[0].fan_out()
                )));
            }
        }
        if !layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
        {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self { layers })
    }

    /// All-zero parameters with the given widths.
    pub fn zeros(architecture: &[usize]) -> Result<Self> {
        check_architecture(architecture)?;
        Ok(Self {
            layers: architecture
                .windows(2)
                .map(|w| DenseLayer {
                    weights: Array2::zeros((w[1], w[0])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn architecture(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in())
            .chain(self.layers.iter().map(DenseLayer::fan_out))
            .collect()
    }

    pub fn num_inputs(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.architecture() == other.architecture()
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.scaled_add(alpha, &src.weights);
            dst.bias.scaled_add(alpha, &src.bias);
        }
    }

    /// Parameters in checkpoint order: per layer, row-major weights then bias.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    pub fn iter_values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.architecture();
        let mut out = Vec::with_capacity(4 + 4 * arch.len() + 8 * self.num_parameters());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        for w in &arch {
            out.extend_from_slice(&(*w as u32).to_le_bytes());
        }
        for v in self.flat_values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::invalid(format!("checkpoint truncated in {what}")));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        let count = u32::from_le_bytes(take(4, "header")?.try_into().unwrap()) as usize;
        let mut arch = Vec::with_capacity(count);
        for _ in 0..count {
            arch.push(u32::from_le_bytes(take(4, "header")?.try_into().unwrap()) as usize);
        }
        let mut model = Self::zeros(&arch)?;
        for v in model.iter_values_mut() {
            *v = f64::from_le_bytes(take(8, "parameters")?.try_into().unwrap());
        }
        if !cursor.is_empty() {
            return Err(Error::invalid(format!(
                "checkpoint has {} trailing bytes",
                cursor.len()
            )));
        }
        Self::from_layers(model.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_architecture(architecture: &[usize]) -> Result<()> {
    if architecture.len() < 2 {
        return Err(Error::invalid(format!(
            "architecture needs at least input and output widths, got {architecture:?}"
        )));
    }
    if architecture.contains(&0) {
        return Err(Error::invalid(format!(
            "architecture widths must be positive, got {architecture:?}"
        )));
    }
    Ok(())
}

/// Uniform weights in `±sqrt(6 / fan_in)`, zero biases.
pub fn init_model<R: Rng + ?Sized>(architecture: &[usize], rng: &mut R) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(architecture)?;
    for layer in &mut model.layers {
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        layer
            .weights
            .mapv_inplace(|_| rng.random_range(-bound..bound));
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 32,
            local_epochs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::invalid("batch_size and local_epochs must be positive"));
        }
        Ok(())
    }
}

/// Labeled feature rows held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_input(model: &ModelParams, batch: &ArrayView2<f64>) -> Result<()> {
    if batch.ncols() != model.num_inputs() {
        return Err(Error::invalid(format!(
            "batch has {} columns, model expects {}",
            batch.ncols(),
            model.num_inputs()
        )));
    }
    Ok(())
}

fn check_labels(model: &ModelParams, rows: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::invalid(format!(
            "{rows} rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

fn affine(layer: &DenseLayer, input: &ArrayView2<f64>) -> Array2<f64> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Post-activation outputs of every layer; the last entry holds probabilities.
fn forward_all(model: &ModelParams, batch: &ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len());
    let last = model.layers.len() - 1;
    for (i, layer) in model.layers.iter().enumerate() {
        let input = match activations.last() {
            Some(a) => a.view(),
            None => batch.view(),
        };
        let mut z = affine(layer, &input);
        if i == last {
            softmax_rows(&mut z);
        } else {
            z.mapv_inplace(|v| v.max(0.0));
        }
        activations.push(z);
    }
    activations
}

pub fn forward(model: &ModelParams, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(model, &batch)?;
    Ok(forward_all(model, &batch).pop().expect("model has layers"))
}

fn sample_loss(prob: f64) -> f64 {
    -prob.max(PROB_FLOOR).ln()
}

/// Mean softmax cross-entropy and its exact gradient.
pub fn loss_and_grad(
    model: &ModelParams,
    batch: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, ModelParams)> {
    check_input(model, &batch)?;
    check_labels(model, batch.nrows(), labels)?;
    if labels.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = labels.len() as f64;
    let activations = forward_all(model, &batch);
    let probs = activations.last().expect("model has layers");

    let loss = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| sample_loss(probs[[r, l]]))
        .sum::<f64>()
        / n;

    // d(mean CE)/d(logits) = (p - onehot) / n
    let mut delta = probs.clone();
    for (r, &l) in labels.iter().enumerate() {
        delta[[r, l]] -= 1.0;
    }
    delta /= n;

    let mut grads = Vec::with_capacity(model.layers.len());
    for i in (0..model.layers.len()).rev() {
        let input = if i == 0 {
            batch.view()
        } else {
            activations[i - 1].view()
        };
        let weights_grad = delta.t().dot(&input);
        let bias_grad = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut prev = delta.dot(&model.layers[i].weights);
            Zip::from(&mut prev)
                .and(&activations[i - 1])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = prev;
        }
        grads.push(DenseLayer {
            weights: weights_grad,
            bias: bias_grad,
        });
    }
    grads.reverse();
    Ok((loss, ModelParams { layers: grads }))
}

/// Local training on one client: `E` epochs of shuffled minibatch SGD.
///
/// The trailing partial batch is trained on. The input model is left untouched.
pub fn client_update<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &Samples,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("client has no samples"));
    }
    check_input(model, &data.features.view())?;
    check_labels(model, data.len(), &data.labels)?;

    let mut w = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut labels = Vec::with_capacity(config.batch_size);
    for _ in 0..config.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.features.select(Axis(0), chunk);
            labels.clear();
            labels.extend(chunk.iter().map(|&i| data.labels[i]));
            let (_, grad) = loss_and_grad(&w, batch.view(), &labels)?;
            w.scaled_add(-config.learning_rate, &grad);
        }
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CategoryLoss {
    pub summed_loss: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub num_samples: usize,
    pub correct: usize,
    /// Present only for categories with at least one sample.
    pub per_category_loss: BTreeMap<usize, CategoryLoss>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.num_samples == 0 {
            0.0
        } else {
            self.correct as f64 / self.num_samples as f64
        }
    }

    /// Summed cross-entropy, accumulated category by category in ascending id order.
    pub fn total_loss(&self) -> f64 {
        self.per_category_loss.values().map(|c| c.summed_loss).sum()
    }

    pub fn mean_loss(&self) -> f64 {
        if self.num_samples == 0 {
            0.0
        } else {
            self.total_loss() / self.num_samples as f64
        }
    }

    /// Folds one batch of predictions into the report.
    pub fn absorb(&mut self, model: &ModelParams, batch: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        check_input(model, &batch)?;
        check_labels(model, batch.nrows(), labels)?;
        let probs = forward_all(model, &batch).pop().expect("model has layers");
        for (r, &label) in labels.iter().enumerate() {
            let row = probs.slice(s![r, ..]);
            let predicted = argmax(row.iter().copied());
            if predicted == label {
                self.correct += 1;
            }
            let entry = self.per_category_loss.entry(label).or_default();
            entry.summed_loss += sample_loss(row[label]);
            entry.count += 1;
        }
        self.num_samples += labels.len();
        Ok(())
    }
}

/// First index of the maximum value.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn evaluate(model: &ModelParams, samples: &Samples) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut report = EvalReport::default();
    report.absorb(model, samples.features.view(), &samples.labels)?;
    Ok(report)
}
