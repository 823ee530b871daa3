//! Minimal dense feedforward-network engine: ReLU hidden layers, softmax
//! output, analytic gradients, and deterministic mini-batch SGD.
//!
//! Every model in the system (sub-models, references, retrained baselines,
//! membership-inference attack models) is an [`MlpModel`] trained through
//! this module, so all methods share one training algorithm.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EtidError, Result};
use crate::matrix::Matrix;

/// Floor applied to probabilities before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    KlToTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(EtidError::validation(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(EtidError::validation("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Supervision signal for a training or gradient computation.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Class indices, one per input row.
    Hard(Vec<usize>),
    /// One probability distribution per input row.
    Soft(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(v) => v.len(),
            Targets::Soft(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, n_rows: usize, n_classes: usize) -> Result<()> {
        if self.len() != n_rows {
            return Err(EtidError::shape(
                format!("{n_rows} target rows"),
                format!("{} target rows", self.len()),
            ));
        }
        match self {
            Targets::Hard(labels) => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
                    return Err(EtidError::validation(format!(
                        "label {bad} out of range for {n_classes} classes"
                    )));
                }
            }
            Targets::Soft(m) => {
                if m.cols() != n_classes {
                    return Err(EtidError::shape(
                        format!("{n_classes} target columns"),
                        format!("{} target columns", m.cols()),
                    ));
                }
                for (i, row) in m.iter_rows().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                        return Err(EtidError::validation(format!(
                            "soft-target row {i} is not a probability distribution (sum {sum})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Hard(v) => Targets::Hard(indices.iter().map(|&i| v[i]).collect()),
            Targets::Soft(m) => Targets::Soft(m.select_rows(indices)),
        }
    }
}

/// Per-parameter gradients, same shapes as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Dense feedforward classifier: ReLU hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    /// Per layer, in_dim x out_dim.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Seeded Glorot-uniform weights, zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(EtidError::validation(format!(
                "layer_sizes must have >= 2 nonzero entries, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            weights.push(Matrix::from_vec(fan_in, fan_out, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2
            || weights.len() != layer_sizes.len() - 1
            || biases.len() != layer_sizes.len() - 1
        {
            return Err(EtidError::validation("inconsistent layer structure"));
        }
        for (i, w) in layer_sizes.windows(2).enumerate() {
            if weights[i].rows() != w[0] || weights[i].cols() != w[1] || biases[i].len() != w[1] {
                return Err(EtidError::validation(format!(
                    "layer {i} parameter shapes do not match layer_sizes"
                )));
            }
        }
        Ok(MlpModel {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(EtidError::shape(
                format!("{} input columns", self.input_dim()),
                format!("{} input columns", x.cols()),
            ));
        }
        Ok(())
    }

    /// Per-row class-probability distributions for a batch of inputs.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).pop().unwrap())
    }

    /// Activations of every layer, input first, softmax output last.
    fn forward_cached(&self, x: &Matrix) -> Vec<Matrix> {
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.clone());
        for l in 0..n_layers {
            let mut z = acts[l].matmul(&self.weights[l]);
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (c, b) in self.biases[l].iter().enumerate() {
                    row[c] += b;
                }
            }
            if l + 1 < n_layers {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            } else {
                softmax_rows(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Loss value and analytic gradients for one batch.
    pub fn loss_and_grads(
        &self,
        x: &Matrix,
        targets: &Targets,
        loss: LossKind,
    ) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        targets.validate(x.rows(), self.num_classes())?;
        if x.rows() == 0 {
            return Err(EtidError::validation("empty batch"));
        }
        let acts = self.forward_cached(x);
        let probs = acts.last().unwrap();
        let n = x.rows() as f64;
        let loss_value = batch_loss(probs, targets, loss);

        // delta at the output: (p - t) / N for both softmax+CE and KL(t||p).
        let mut delta = probs.clone();
        match targets {
            Targets::Hard(labels) => {
                for (r, &y) in labels.iter().enumerate() {
                    let v = delta.get(r, y) - 1.0;
                    delta.set(r, y, v);
                }
            }
            Targets::Soft(t) => {
                for r in 0..delta.rows() {
                    let trow = t.row(r);
                    let drow = delta.row_mut(r);
                    for c in 0..trow.len() {
                        drow[c] -= trow[c];
                    }
                }
            }
        }
        for v in delta.data_mut() {
            *v /= n;
        }

        let n_layers = self.weights.len();
        let mut w_grads = vec![Matrix::zeros(0, 0); n_layers];
        let mut b_grads = vec![Vec::new(); n_layers];
        for l in (0..n_layers).rev() {
            w_grads[l] = acts[l].t_matmul(&delta);
            let mut bg = vec![0.0; self.biases[l].len()];
            for row in delta.iter_rows() {
                for (c, v) in row.iter().enumerate() {
                    bg[c] += v;
                }
            }
            b_grads[l] = bg;
            if l > 0 {
                let mut prev = delta.matmul_t(&self.weights[l]);
                // ReLU derivative via the cached activation.
                for r in 0..prev.rows() {
                    let arow = acts[l].row(r);
                    let prow = prev.row_mut(r);
                    for c in 0..arow.len() {
                        if arow[c] <= 0.0 {
                            prow[c] = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((
            loss_value,
            Gradients {
                weights: w_grads,
                biases: b_grads,
            },
        ))
    }

    fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                *wv -= lr * gv;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bv, gv) in b.iter_mut().zip(g) {
                *bv -= lr * gv;
            }
        }
    }

    /// Mean loss over the whole set, without gradients.
    pub fn evaluate_loss(&self, x: &Matrix, targets: &Targets, loss: LossKind) -> Result<f64> {
        self.check_input(x)?;
        targets.validate(x.rows(), self.num_classes())?;
        let probs = self.forward(x)?;
        Ok(batch_loss(&probs, targets, loss))
    }

    /// Deterministic mini-batch SGD. `epochs == 0` returns the model unchanged.
    pub fn train(self, x: &Matrix, targets: &Targets, cfg: &TrainConfig) -> Result<MlpModel> {
        self.train_until(x, targets, cfg, None)
    }

    /// SGD with an optional early stop once the full-set loss drops below `tol`.
    pub fn train_until(
        mut self,
        x: &Matrix,
        targets: &Targets,
        cfg: &TrainConfig,
        tol: Option<f64>,
    ) -> Result<MlpModel> {
        cfg.validate()?;
        self.check_input(x)?;
        targets.validate(x.rows(), self.num_classes())?;
        if cfg.epochs == 0 || x.rows() == 0 {
            return Ok(self);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for _ in 0..cfg.epochs {
            if let Some(tol) = tol {
                if self.evaluate_loss(x, targets, cfg.loss)? < tol {
                    break;
                }
            }
            if cfg.shuffle {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(cfg.batch_size) {
                let bx = x.select_rows(chunk);
                let bt = targets.select(chunk);
                let (_, grads) = self.loss_and_grads(&bx, &bt, cfg.loss)?;
                self.apply_gradients(&grads, cfg.learning_rate);
            }
        }
        debug_assert!(self.weights.iter().all(Matrix::all_finite));
        Ok(self)
    }
}

fn softmax_rows(z: &mut Matrix) {
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
            if *v < 1e-300 {
                *v = 1e-300;
            }
        }
    }
}

fn batch_loss(probs: &Matrix, targets: &Targets, loss: LossKind) -> f64 {
    let n = probs.rows() as f64;
    match (loss, targets) {
        (LossKind::CrossEntropy, Targets::Hard(labels)) => {
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                total -= probs.get(r, y).max(PROB_CLAMP).ln();
            }
            total / n
        }
        (LossKind::CrossEntropy, Targets::Soft(t)) => {
            // Soft cross-entropy; shares the (p - t) gradient with KL.
            let mut total = 0.0;
            for r in 0..probs.rows() {
                for (c, &tv) in t.row(r).iter().enumerate() {
                    if tv > 0.0 {
                        total -= tv * probs.get(r, c).max(PROB_CLAMP).ln();
                    }
                }
            }
            total / n
        }
        (LossKind::KlToTargets, Targets::Soft(t)) => {
            let mut total = 0.0;
            for r in 0..probs.rows() {
                for (c, &tv) in t.row(r).iter().enumerate() {
                    if tv > 0.0 {
                        let tv_c = tv.max(PROB_CLAMP);
                        total += tv_c * (tv_c / probs.get(r, c).max(PROB_CLAMP)).ln();
                    }
                }
            }
            (total / n).max(0.0)
        }
        (LossKind::KlToTargets, Targets::Hard(labels)) => {
            // One-hot reference: KL reduces to cross-entropy.
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                total -= probs.get(r, y).max(PROB_CLAMP).ln();
            }
            total / n
        }
    }
}

/// Mean KL divergence from `reference` rows to `model` rows.
pub fn mean_kl(reference: &Matrix, model: &Matrix) -> f64 {
    assert_eq!(reference.rows(), model.rows());
    assert_eq!(reference.cols(), model.cols());
    let targets = Targets::Soft(reference.clone());
    batch_loss(model, &targets, LossKind::KlToTargets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(sizes: &[usize]) -> MlpModel {
        let weights = sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        MlpModel::from_parts(sizes.to_vec(), weights, biases).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let m = zero_model(&[3, 2]);
        let x = Matrix::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let out = m.forward(&x).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let m = MlpModel::new(&[4, 6, 3], 7).unwrap();
        let x = Matrix::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = m.forward(&x).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn softmax_of_known_logits() {
        // logits [ln 3, ln 1] -> [0.75, 0.25]
        let mut sizes = zero_model(&[2, 2]);
        sizes.biases[0] = vec![3.0f64.ln(), 0.0];
        let x = Matrix::zeros(1, 2);
        let out = sizes.forward(&x).unwrap();
        assert!((out.get(0, 0) - 0.75).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MlpModel::new(&[4, 3], 0).unwrap();
        let x = Matrix::zeros(2, 5);
        assert!(matches!(m.forward(&x), Err(EtidError::Shape { .. })));
    }

    #[test]
    fn kl_to_own_output_is_zero() {
        let m = MlpModel::new(&[3, 5, 4], 11).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.5, 1.0, 0.0]).unwrap();
        let own = m.forward(&x).unwrap();
        let loss = m
            .evaluate_loss(&x, &Targets::Soft(own), LossKind::KlToTargets)
            .unwrap();
        assert!(loss.abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn kl_one_hot_vs_uniform_is_ln2() {
        let m = zero_model(&[2, 2]);
        let x = Matrix::zeros(1, 2);
        let t = Targets::Soft(Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap());
        let loss = m.evaluate_loss(&x, &t, LossKind::KlToTargets).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn invalid_soft_target_rejected() {
        let m = zero_model(&[2, 2]);
        let x = Matrix::zeros(1, 2);
        let bad = Targets::Soft(Matrix::from_vec(1, 2, vec![0.9, 0.3]).unwrap());
        assert!(m
            .evaluate_loss(&x, &bad, LossKind::KlToTargets)
            .is_err());
        let neg = Targets::Soft(Matrix::from_vec(1, 2, vec![1.5, -0.5]).unwrap());
        assert!(m.evaluate_loss(&x, &neg, LossKind::KlToTargets).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = MlpModel::new(&[3, 4, 2], 5).unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let t = Targets::Hard(vec![0, 1]);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 0,
            batch_size: 2,
            seed: 1,
            shuffle: true,
            loss: LossKind::CrossEntropy,
        };
        let trained = m.clone().train(&x, &t, &cfg).unwrap();
        assert_eq!(m, trained);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let x = Matrix::from_vec(4, 3, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        let t = Targets::Hard(vec![0, 1, 1, 0]);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 2,
            seed: 42,
            shuffle: true,
            loss: LossKind::CrossEntropy,
        };
        let a = MlpModel::new(&[3, 6, 2], 9)
            .unwrap()
            .train(&x, &t, &cfg)
            .unwrap();
        let b = MlpModel::new(&[3, 6, 2], 9)
            .unwrap()
            .train(&x, &t, &cfg)
            .unwrap();
        assert_eq!(a, b);
    }
}
