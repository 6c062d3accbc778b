//! Multilayer perceptron with analytic backpropagation.
//!
//! Parameters live in one flat `f64` buffer in canonical order: for each
//! layer, the weight matrix row-major with shape `(out, in)`, then the bias.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::params::ParamVector;
use crate::rng::{rng_from_seed, SimRng};

/// Floor applied to probabilities inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Hidden layers of the MNIST MLP (`FC:512,256,128`).
pub const PRESET_MNIST_MLP: &[usize] = &[512, 256, 128];
/// Desk-scale hidden layers.
pub const PRESET_TINY: &[usize] = &[64, 32];

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("an MLP needs at least an input and an output layer, all of positive width")]
    BadDims,
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("label {label} is not below the class count {classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("virtual teacher needs at least two classes")]
    SingleClass,
    #[error("teacher confidence {beta} must lie in (1/{classes}, 1]")]
    BadBeta { beta: f64, classes: usize },
    #[error("row {row} sums to {sum}, not 1")]
    NotNormalized { row: usize, sum: f64 },
    #[error("cannot train or evaluate on an empty data slice")]
    EmptyData,
    #[error("learning rate must be positive and momentum in [0, 1)")]
    BadOptimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All parameters zero.
    pub fn zeros(dims: &[usize]) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::BadDims);
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count_for(dims)],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_random(dims: &[usize], seed: u64) -> Result<Self, NnError> {
        let mut m = Self::zeros(dims)?;
        let mut rng = rng_from_seed(seed);
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut m.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn get_params(&self) -> ParamVector {
        ParamVector::new(self.params.clone())
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<(), NnError> {
        if v.len() != self.params.len() {
            return Err(NnError::Shape {
                expected: self.params.len(),
                got: v.len(),
            });
        }
        self.params.copy_from_slice(v);
        Ok(())
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let at = offset;
            offset += w[0] * w[1] + w[1];
            (at, w[0], w[1])
        })
    }

    fn check_batch(&self, x: &[f64]) -> Result<usize, NnError> {
        let d = self.input_dim();
        if !x.len().is_multiple_of(d) {
            return Err(NnError::Shape {
                expected: d * (x.len() / d + 1),
                got: x.len(),
            });
        }
        Ok(x.len() / d)
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward_all(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let n_layers = self.dims.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, (at, fan_in, fan_out)) in self.layers().enumerate() {
            let w = &self.params[at..at + fan_in * fan_out];
            let b = &self.params[at + fan_in * fan_out..at + fan_in * fan_out + fan_out];
            let input = &acts[l];
            let mut out = vec![0.0; batch * fan_out];
            for s in 0..batch {
                let xi = &input[s * fan_in..(s + 1) * fan_in];
                let row = &mut out[s * fan_out..(s + 1) * fan_out];
                for (o, z) in row.iter_mut().enumerate() {
                    let wo = &w[o * fan_in..(o + 1) * fan_in];
                    *z = b[o] + dot(wo, xi);
                }
                if l + 1 < n_layers {
                    row.iter_mut().for_each(|z| *z = z.max(0.0));
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Logits for a row-major batch of inputs.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let batch = self.check_batch(x)?;
        Ok(self.forward_all(x, batch).pop().unwrap())
    }

    /// Mean loss and its gradient over a batch.
    ///
    /// Both losses share the logit gradient `(softmax(z) - t) / B`, where `t`
    /// is the one-hot label or the teacher row.
    pub fn loss_and_gradient(
        &self,
        x: &[f64],
        targets: Targets<'_>,
        loss: LossKind,
    ) -> Result<(f64, Vec<f64>), NnError> {
        let batch = self.check_batch(x)?;
        let classes = self.num_classes();
        let soft = targets.to_rows(batch, classes)?;
        let mut acts = self.forward_all(x, batch);
        let mut probs = acts.pop().unwrap();
        probs.chunks_mut(classes).for_each(softmax_in_place);
        let value = match loss {
            LossKind::CrossEntropy => cross_entropy_rows(&probs, &soft, classes),
            LossKind::Kl => kl_rows(&probs, &soft, classes),
        };

        let scale = 1.0 / batch as f64;
        let mut delta: Vec<f64> = probs
            .iter()
            .zip(&soft)
            .map(|(p, t)| (p - t) * scale)
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        for (l, &(at, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &acts[l];
            let (gw, rest) = grad[at..].split_at_mut(fan_in * fan_out);
            let gb = &mut rest[..fan_out];
            for s in 0..batch {
                let d = &delta[s * fan_out..(s + 1) * fan_out];
                let xi = &input[s * fan_in..(s + 1) * fan_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        axpy(dv, xi, &mut gw[o * fan_in..(o + 1) * fan_in]);
                    }
                    gb[o] += dv;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[at..at + fan_in * fan_out];
            let mut prev = vec![0.0; batch * fan_in];
            for s in 0..batch {
                let d = &delta[s * fan_out..(s + 1) * fan_out];
                let pr = &mut prev[s * fan_in..(s + 1) * fan_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        axpy(dv, &w[o * fan_in..(o + 1) * fan_in], pr);
                    }
                }
                // ReLU derivative, taken as 0 at the kink
                for (g, &a) in pr.iter_mut().zip(&input[s * fan_in..(s + 1) * fan_in]) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = prev;
            acts.truncate(l + 1);
        }
        Ok((value, grad))
    }

    /// Gradient of the selected mean-reduced loss, in canonical order.
    pub fn backward(
        &self,
        x: &[f64],
        targets: Targets<'_>,
        loss: LossKind,
    ) -> Result<Vec<f64>, NnError> {
        self.loss_and_gradient(x, targets, loss).map(|(_, g)| g)
    }

    /// Mean loss only, without the backward pass.
    pub fn loss(&self, x: &[f64], targets: Targets<'_>, loss: LossKind) -> Result<f64, NnError> {
        let batch = self.check_batch(x)?;
        let classes = self.num_classes();
        let soft = targets.to_rows(batch, classes)?;
        let mut probs = self.forward(x)?;
        probs.chunks_mut(classes).for_each(softmax_in_place);
        Ok(match loss {
            LossKind::CrossEntropy => cross_entropy_rows(&probs, &soft, classes),
            LossKind::Kl => kl_rows(&probs, &soft, classes),
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Supervision for one batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    /// Row-major probability rows, one per sample.
    Soft(&'a [f64]),
}

impl Targets<'_> {
    fn to_rows(self, batch: usize, classes: usize) -> Result<Vec<f64>, NnError> {
        match self {
            Targets::Hard(labels) => {
                if labels.len() != batch {
                    return Err(NnError::Shape {
                        expected: batch,
                        got: labels.len(),
                    });
                }
                let mut rows = vec![0.0; batch * classes];
                for (s, &y) in labels.iter().enumerate() {
                    if y >= classes {
                        return Err(NnError::BadLabel { label: y, classes });
                    }
                    rows[s * classes + y] = 1.0;
                }
                Ok(rows)
            }
            Targets::Soft(rows) => {
                if rows.len() != batch * classes {
                    return Err(NnError::Shape {
                        expected: batch * classes,
                        got: rows.len(),
                    });
                }
                Ok(rows.to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// KL(teacher || student).
    Kl,
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    row.iter_mut().for_each(|z| *z /= total);
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut row = logits.to_vec();
    softmax_in_place(&mut row);
    row
}

fn cross_entropy_rows(probs: &[f64], targets: &[f64], classes: usize) -> f64 {
    let batch = probs.len() / classes;
    let total: f64 = probs
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(LOG_EPS).ln())
        .sum();
    total / batch as f64
}

fn kl_rows(student: &[f64], teacher: &[f64], classes: usize) -> f64 {
    let batch = student.len() / classes;
    let total: f64 = student
        .iter()
        .zip(teacher)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&s, &t)| t * (t.ln() - s.max(LOG_EPS).ln()))
        .sum();
    total / batch as f64
}

fn check_rows(rows: &[f64], classes: usize) -> Result<(), NnError> {
    if classes == 0 || !rows.len().is_multiple_of(classes) {
        return Err(NnError::Shape {
            expected: classes,
            got: rows.len(),
        });
    }
    for (row, chunk) in rows.chunks(classes).enumerate() {
        let sum: f64 = chunk.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NnError::NotNormalized { row, sum });
        }
    }
    Ok(())
}

/// `-(1/B) Σ_k ln p[k, y_k]` over row-major probability rows.
pub fn ce_loss(probs: &[f64], labels: &[usize], classes: usize) -> Result<f64, NnError> {
    check_rows(probs, classes)?;
    let targets = Targets::Hard(labels).to_rows(probs.len() / classes, classes)?;
    Ok(cross_entropy_rows(probs, &targets, classes))
}

/// Mean over the batch of `Σ_c t_c (ln t_c − ln s_c)`, with `0 ln 0 = 0`.
pub fn kl_loss(student: &[f64], teacher: &[f64], classes: usize) -> Result<f64, NnError> {
    if student.len() != teacher.len() {
        return Err(NnError::Shape {
            expected: student.len(),
            got: teacher.len(),
        });
    }
    check_rows(student, classes)?;
    check_rows(teacher, classes)?;
    Ok(kl_rows(student, teacher, classes))
}

/// Virtual-teacher soft label: `beta` on the true class, the rest of the
/// mass spread evenly over the other classes.
///
/// One off-class entry absorbs the rounding slack so that summing the row in
/// index order gives exactly 1.
pub fn vt_labels(class: usize, classes: usize, beta: f64) -> Result<Vec<f64>, NnError> {
    if classes < 2 {
        return Err(NnError::SingleClass);
    }
    if class >= classes {
        return Err(NnError::BadLabel {
            label: class,
            classes,
        });
    }
    if !(beta > 1.0 / classes as f64 && beta <= 1.0) {
        return Err(NnError::BadBeta { beta, classes });
    }
    let other = (1.0 - beta) / (classes - 1) as f64;
    let mut row = vec![other; classes];
    row[class] = beta;
    let slack = if class == classes - 1 { classes - 2 } else { classes - 1 };
    let mut total: f64 = row.iter().sum();
    if total != 1.0 {
        row[slack] += 1.0 - total;
        // nudge one ulp at a time; the partial sums are monotone in the slack
        for _ in 0..256 {
            total = row.iter().sum();
            if total == 1.0 {
                break;
            }
            row[slack] = if total > 1.0 {
                row[slack].next_down()
            } else {
                row[slack].next_up()
            };
        }
    }
    Ok(row)
}

/// SGD with classic momentum: `v ← μ v + g`, `w ← w − η v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub eta: f64,
    pub mu: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(eta: f64, mu: f64, param_count: usize) -> Result<Self, NnError> {
        if !(eta > 0.0 && eta.is_finite() && (0.0..1.0).contains(&mu)) {
            return Err(NnError::BadOptimizer);
        }
        Ok(Self {
            eta,
            mu,
            velocity: vec![0.0; param_count],
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NnError> {
        if grad.len() != params.len() || grad.len() != self.velocity.len() {
            return Err(NnError::Shape {
                expected: self.velocity.len(),
                got: grad.len(),
            });
        }
        for ((w, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.mu * *v + g;
            *w -= self.eta * *v;
        }
        Ok(())
    }
}

/// What a node minimizes during local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CrossEntropy,
    /// KL against virtual-teacher soft labels with confidence `beta`.
    VirtualTeacher { beta: f64 },
}

/// Run `epochs` shuffled passes of mini-batch SGD over `indices`.
///
/// A batch size larger than the slice degrades to one full batch per epoch;
/// the trailing partial batch of an epoch is kept. Returns the mean training
/// loss of the last epoch (0 when `epochs == 0`).
#[allow(clippy::too_many_arguments)]
pub fn train_local(
    model: &mut Mlp,
    opt: &mut Sgd,
    ds: &LabeledDataset,
    indices: &[usize],
    epochs: usize,
    batch_size: usize,
    objective: Objective,
    rng: &mut SimRng,
) -> Result<f64, NnError> {
    if indices.is_empty() {
        return Err(NnError::EmptyData);
    }
    if ds.feature_dim() != model.input_dim() {
        return Err(NnError::Shape {
            expected: model.input_dim(),
            got: ds.feature_dim(),
        });
    }
    let classes = model.num_classes();
    let teacher: Option<Vec<Vec<f64>>> = match objective {
        Objective::CrossEntropy => None,
        Objective::VirtualTeacher { beta } => Some(
            (0..classes)
                .map(|c| vt_labels(c, classes, beta))
                .collect::<Result<_, _>>()?,
        ),
    };
    let batch_size = batch_size.clamp(1, indices.len());
    let mut order = indices.to_vec();
    let mut last_loss = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let (x, y) = ds.gather(chunk);
            let (loss, grad) = match &teacher {
                None => model.loss_and_gradient(&x, Targets::Hard(&y), LossKind::CrossEntropy)?,
                Some(rows) => {
                    let soft: Vec<f64> = y.iter().flat_map(|&c| rows[c].iter().copied()).collect();
                    model.loss_and_gradient(&x, Targets::Soft(&soft), LossKind::Kl)?
                }
            };
            opt.step(&mut model.params, &grad)?;
            epoch_loss += loss;
            batches += 1;
        }
        last_loss = epoch_loss / batches as f64;
    }
    Ok(last_loss)
}

/// Accuracy and mean cross-entropy of `model` on a whole dataset.
///
/// Predictions take the arg-max logit, lowest class index on ties.
pub fn evaluate(model: &Mlp, ds: &LabeledDataset) -> Result<(f64, f64), NnError> {
    if ds.is_empty() {
        return Err(NnError::EmptyData);
    }
    if ds.feature_dim() != model.input_dim() {
        return Err(NnError::Shape {
            expected: model.input_dim(),
            got: ds.feature_dim(),
        });
    }
    let classes = model.num_classes();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (mut correct, mut loss_sum) = (0usize, 0.0);
    for chunk in all.chunks(512) {
        let (x, y) = ds.gather(chunk);
        let logits = model.forward(&x)?;
        for (row, &label) in logits.chunks(classes).zip(&y) {
            if label >= classes {
                return Err(NnError::BadLabel { label, classes });
            }
            if argmax(row) == label {
                correct += 1;
            }
            let p = softmax(row);
            loss_sum -= p[label].max(LOG_EPS).ln();
        }
    }
    let n = ds.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
