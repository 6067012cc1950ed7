//! Two-layer perceptron probe (`dim -> 64 -> 2`) separating A from O.
//!
//! Forward pass: `hidden = relu(W1 x + b1)`, `logits = W2 hidden + b2`,
//! `p = softmax(logits)` with `p[0] = P(A)`. Training minimizes mean
//! cross-entropy with mini-batch SGD or Adam. All arithmetic is `f64`.
//!
//! Parameters live in one flat vector laid out as `W1 (64 x dim, row-major)`,
//! `b1 (64)`, `W2 (2 x 64, row-major)`, `b2 (2)`; gradients share the layout.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{rng, Rng};

pub const HIDDEN: usize = 64;
pub const OUTPUTS: usize = 2;
pub const MODEL_MAGIC: &[u8; 8] = b"SUBJPRM1";
pub const MODEL_FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("input has {found} features, model expects {expected}")]
    Dimension { expected: usize, found: usize },

    #[error("training set is empty")]
    EmptyDataset,

    #[error("training set contains only {0} items; both A and O are required")]
    SingleClass(Label),

    #[error("input contains a non-finite value")]
    NonFiniteInput,

    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid training config: {0}")]
    Config(String),

    #[error("model format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Class label of a training item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    O,
}

impl Label {
    fn index(self) -> usize {
        match self {
            Label::A => 0,
            Label::O => 1,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::A => "A",
            Label::O => "O",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn new(x: Vec<f64>, label: Label) -> Self {
        Sample { x, label }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub language: String,
    pub layer: usize,
    pub seed: u64,
    pub epochs_trained: usize,
}

/// Which parameter block a flat index falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamBlock {
    W1,
    B1,
    W2,
    B2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    dim: usize,
    params: Vec<f64>,
    pub meta: ProbeMeta,
}

pub fn param_count(dim: usize) -> usize {
    HIDDEN * dim + HIDDEN + OUTPUTS * HIDDEN + OUTPUTS
}

impl ProbeModel {
    pub fn zeros(dim: usize) -> Self {
        ProbeModel { dim, params: vec![0.0; param_count(dim)], meta: ProbeMeta::default() }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn initialized(dim: usize, rng: &mut Rng) -> Self {
        let mut model = Self::zeros(dim);
        let a1 = (6.0 / (dim + HIDDEN) as f64).sqrt();
        let a2 = (6.0 / (HIDDEN + OUTPUTS) as f64).sqrt();
        let (w1_end, b1_end, w2_end) = model.offsets();
        for w in &mut model.params[..w1_end] {
            *w = rng.random_range(-a1..a1);
        }
        for w in &mut model.params[b1_end..w2_end] {
            *w = rng.random_range(-a2..a2);
        }
        model
    }

    /// Builds a model from raw parameter blocks.
    pub fn from_parts(dim: usize, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) -> Result<Self, ProbeError> {
        let sizes = [(w1.len(), HIDDEN * dim), (b1.len(), HIDDEN), (w2.len(), OUTPUTS * HIDDEN), (b2.len(), OUTPUTS)];
        for (found, expected) in sizes {
            if found != expected {
                return Err(ProbeError::Dimension { expected, found });
            }
        }
        let params = [w1, b1, w2, b2].concat();
        Ok(ProbeModel { dim, params, meta: ProbeMeta::default() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = HIDDEN * self.dim;
        let b1 = w1 + HIDDEN;
        let w2 = b1 + OUTPUTS * HIDDEN;
        (w1, b1, w2)
    }

    pub fn block_of(&self, index: usize) -> ParamBlock {
        let (w1, b1, w2) = self.offsets();
        match index {
            i if i < w1 => ParamBlock::W1,
            i if i < b1 => ParamBlock::B1,
            i if i < w2 => ParamBlock::W2,
            _ => ParamBlock::B2,
        }
    }

    pub fn block_range(&self, block: ParamBlock) -> std::ops::Range<usize> {
        let (w1, b1, w2) = self.offsets();
        match block {
            ParamBlock::W1 => 0..w1,
            ParamBlock::B1 => w1..b1,
            ParamBlock::W2 => b1..w2,
            ParamBlock::B2 => w2..self.params.len(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ProbeError> {
        if x.len() != self.dim {
            return Err(ProbeError::Dimension { expected: self.dim, found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFiniteInput);
        }
        Ok(())
    }

    /// Hidden activations and logits for one input. Input must be validated.
    fn activations(&self, x: &[f64], hidden: &mut [f64; HIDDEN]) -> [f64; OUTPUTS] {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &self.params[..w1_end];
        let b1 = &self.params[w1_end..b1_end];
        let w2 = &self.params[b1_end..w2_end];
        let b2 = &self.params[w2_end..];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &w1[j * self.dim..(j + 1) * self.dim];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
            *h = z.max(0.0);
        }
        let mut logits = [0.0; OUTPUTS];
        for (k, l) in logits.iter_mut().enumerate() {
            let row = &w2[k * HIDDEN..(k + 1) * HIDDEN];
            *l = row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>() + b2[k];
        }
        logits
    }

    /// Returns `(P(A), P(O))`.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64), ProbeError> {
        self.check_input(x)?;
        let mut hidden = [0.0; HIDDEN];
        let p = softmax(self.activations(x, &mut hidden));
        Ok((p[0], p[1]))
    }

    /// `P(A)` for a stored `f32` embedding.
    pub fn prob_a(&self, x: &[f32]) -> Result<f64, ProbeError> {
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        Ok(self.forward(&x)?.0)
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64, ProbeError> {
        let mut hidden = [0.0; HIDDEN];
        let mut total = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            let logits = self.activations(&s.x, &mut hidden);
            total += cross_entropy(logits, s.label);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>), ProbeError> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_grad(batch, &mut grad)?;
        Ok((loss, grad))
    }

    fn accumulate_grad(&self, batch: &[Sample], grad: &mut [f64]) -> Result<f64, ProbeError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &self.params[b1_end..w2_end];
        let scale = 1.0 / batch.len() as f64;
        let mut hidden = [0.0; HIDDEN];
        let mut total = 0.0;

        for s in batch {
            self.check_input(&s.x)?;
            let logits = self.activations(&s.x, &mut hidden);
            total += cross_entropy(logits, s.label);

            let mut d_logits = softmax(logits);
            d_logits[s.label.index()] -= 1.0;
            d_logits.iter_mut().for_each(|d| *d *= scale);

            let (g_head, g_tail) = grad.split_at_mut(b1_end);
            let (g_w2, g_b2) = g_tail.split_at_mut(OUTPUTS * HIDDEN);
            for k in 0..OUTPUTS {
                g_b2[k] += d_logits[k];
                for j in 0..HIDDEN {
                    g_w2[k * HIDDEN + j] += d_logits[k] * hidden[j];
                }
            }

            let (g_w1, g_b1) = g_head.split_at_mut(w1_end);
            for j in 0..HIDDEN {
                // relu'(z) is taken as 0 at z == 0
                if hidden[j] <= 0.0 {
                    continue;
                }
                let d_h: f64 = (0..OUTPUTS).map(|k| d_logits[k] * w2[k * HIDDEN + j]).sum();
                g_b1[j] += d_h;
                let row = &mut g_w1[j * self.dim..(j + 1) * self.dim];
                row.iter_mut().zip(&s.x).for_each(|(g, v)| *g += d_h * v);
            }
        }
        Ok(total * scale)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), ProbeError> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(HIDDEN as u32).to_le_bytes())?;
        out.write_all(&(self.meta.layer as u32).to_le_bytes())?;
        out.write_all(&self.meta.seed.to_le_bytes())?;
        out.write_all(&(self.meta.epochs_trained as u32).to_le_bytes())?;
        out.write_all(&(self.meta.language.len() as u16).to_le_bytes())?;
        out.write_all(self.meta.language.as_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, ProbeError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut offset = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ProbeError> {
            if bytes.len() - offset < n {
                return Err(ProbeError::Format { offset, message: "truncated".into() });
            }
            offset += n;
            Ok(&bytes[offset - n..offset])
        };
        if take(8)? != MODEL_MAGIC {
            return Err(ProbeError::Format { offset: 0, message: "bad magic".into() });
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(ProbeError::Format { offset: 8, message: format!("unsupported version {version}") });
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let hidden = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if hidden != HIDDEN {
            return Err(ProbeError::Format { offset: 14, message: format!("hidden size {hidden}, expected {HIDDEN}") });
        }
        let layer = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let epochs_trained = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let lang_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let language = String::from_utf8(take(lang_len)?.to_vec())
            .map_err(|_| ProbeError::Format { offset: 36, message: "language is not UTF-8".into() })?;
        let params = take(8 * param_count(dim))?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if offset != bytes.len() {
            return Err(ProbeError::Format { offset, message: "trailing bytes".into() });
        }
        Ok(ProbeModel { dim, params, meta: ProbeMeta { language, layer, seed, epochs_trained } })
    }
}

fn softmax(logits: [f64; OUTPUTS]) -> [f64; OUTPUTS] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

fn cross_entropy(logits: [f64; OUTPUTS], label: Label) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label.index()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, learning_rate: 1e-3, batch_size: 32, seed: 0, optimizer: Optimizer::Adam }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.epochs < 1 {
            return Err(ProbeError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(ProbeError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ProbeModel,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains a probe. The result is a pure function of `(dataset, config)`:
/// the seeded stream first initializes the weights, then reshuffles the
/// dataset at the start of every epoch.
pub fn train(dataset: &[Sample], config: &TrainConfig) -> Result<TrainOutcome, ProbeError> {
    config.validate()?;
    let first = dataset.first().ok_or(ProbeError::EmptyDataset)?;
    let dim = first.x.len();
    for s in dataset {
        if s.x.len() != dim {
            return Err(ProbeError::Dimension { expected: dim, found: s.x.len() });
        }
        if s.x.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFiniteInput);
        }
    }
    if dataset.iter().all(|s| s.label == first.label) {
        return Err(ProbeError::SingleClass(first.label));
    }

    let mut rng = rng(config.seed);
    let mut model = ProbeModel::initialized(dim, &mut rng);
    model.meta.seed = config.seed;
    let n_params = model.params.len();
    let mut grad = vec![0.0; n_params];
    let mut adam = AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let loss = model.accumulate_grad(&batch, &mut grad)?;
            epoch_loss += loss * chunk.len() as f64;
            match config.optimizer {
                Optimizer::Sgd => {
                    model.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= config.learning_rate * g);
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let c1 = 1.0 - ADAM_BETA1.powi(adam.t);
                    let c2 = 1.0 - ADAM_BETA2.powi(adam.t);
                    let state = adam.m.iter_mut().zip(adam.v.iter_mut());
                    for ((p, &g), (m, v)) in model.params.iter_mut().zip(&grad).zip(state) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        let epoch_loss = epoch_loss / dataset.len() as f64;
        if !epoch_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(ProbeError::NonFiniteLoss { epoch });
        }
        loss_history.push(epoch_loss);
    }
    model.meta.epochs_trained = config.epochs;
    Ok(TrainOutcome { model, loss_history })
}

/// Fraction of `dataset` classified correctly at the 0.5 threshold; ties go
/// to O.
pub fn accuracy(model: &ProbeModel, dataset: &[Sample]) -> Result<f64, ProbeError> {
    let mut correct = 0usize;
    for s in dataset {
        let (p_a, _) = model.forward(&s.x)?;
        let predicted = if p_a > 0.5 { Label::A } else { Label::O };
        correct += (predicted == s.label) as usize;
    }
    Ok(correct as f64 / dataset.len().max(1) as f64)
}

pub const GRADCHECK_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Candidates passed over because the finite-difference step moved a
    /// hidden unit across the ReLU kink.
    pub skipped_kinks: usize,
}

impl ProbeModel {
    /// Sign pattern of every hidden unit over `batch`.
    fn activation_pattern(&self, batch: &[Sample]) -> Vec<bool> {
        let mut hidden = [0.0; HIDDEN];
        let mut pattern = Vec::with_capacity(batch.len() * HIDDEN);
        for s in batch {
            self.activations(&s.x, &mut hidden);
            pattern.extend(hidden.iter().map(|&h| h > 0.0));
        }
        pattern
    }
}

/// Candidate order for a gradient check: one index from each block, then
/// every index in random order.
fn gradcheck_candidates(model: &ProbeModel, seed: u64) -> Vec<usize> {
    let mut rng = rng(seed);
    let mut order: Vec<usize> = [ParamBlock::W1, ParamBlock::B1, ParamBlock::W2, ParamBlock::B2]
        .into_iter()
        .map(|b| rng.random_range(model.block_range(b)))
        .collect();
    let mut rest: Vec<usize> = (0..model.params.len()).collect();
    rest.shuffle(&mut rng);
    order.extend(rest);
    let mut seen = vec![false; model.params.len()];
    order.retain(|&i| !std::mem::replace(&mut seen[i], true));
    order
}

/// Max relative error `|g - fd| / max(1e-8, |g| + |fd|)` between
/// `analytic` and central finite differences of the batch loss, over
/// `n_params` parameters drawn with `seed`.
///
/// A step that changes the ReLU activation pattern of the batch straddles a
/// point where the loss is not differentiable; such parameters are skipped
/// and another one is drawn.
pub fn gradient_check_against(
    model: &ProbeModel,
    batch: &[Sample],
    analytic: &[f64],
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport, ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptyDataset);
    }
    let base_pattern = model.activation_pattern(batch);
    let (_, hidden_end, _) = model.offsets();
    let mut probe = model.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };

    for i in gradcheck_candidates(model, seed) {
        if report.checked == n_params {
            break;
        }
        let original = probe.params[i];
        probe.params[i] = original + GRADCHECK_STEP;
        let plus = probe.loss(batch)?;
        let kink_plus = i < hidden_end && probe.activation_pattern(batch) != base_pattern;
        probe.params[i] = original - GRADCHECK_STEP;
        let minus = probe.loss(batch)?;
        let kink_minus = i < hidden_end && probe.activation_pattern(batch) != base_pattern;
        probe.params[i] = original;
        if kink_plus || kink_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Checks the backward pass of `model` on `batch` against finite
/// differences.
pub fn gradient_check(model: &ProbeModel, batch: &[Sample], n_params: usize, seed: u64) -> Result<GradCheckReport, ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptyDataset);
    }
    let (_, analytic) = model.loss_and_grad(batch)?;
    gradient_check_against(model, batch, &analytic, n_params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_model(dim: usize, seed: u64) -> ProbeModel {
        let mut model = ProbeModel::initialized(dim, &mut rng(seed));
        // non-zero biases so the check also exercises them
        let mut r = rng(seed ^ 0xb1);
        for block in [ParamBlock::B1, ParamBlock::B2] {
            for i in model.block_range(block) {
                model.params[i] = r.random_range(-0.5..0.5);
            }
        }
        model
    }

    fn random_batch(dim: usize, n: usize, seed: u64) -> Vec<Sample> {
        let mut r = rng(seed);
        (0..n)
            .map(|i| {
                let x = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
                Sample::new(x, if i % 2 == 0 { Label::A } else { Label::O })
            })
            .collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ProbeModel::zeros(5);
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.0, 9.0]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn hand_computed_forward() {
        // hidden unit 0 reads x[0]; W2 sends it to +1 / -1 logits.
        let dim = 2;
        let mut w1 = vec![0.0; HIDDEN * dim];
        w1[0] = 1.0;
        let mut w2 = vec![0.0; OUTPUTS * HIDDEN];
        w2[0] = 1.0;
        w2[HIDDEN] = -1.0;
        let m = ProbeModel::from_parts(dim, &w1, &[0.0; HIDDEN], &w2, &[0.0; 2]).unwrap();
        let (p_a, p_o) = m.forward(&[1.0, 0.0]).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p_a - expected).abs() < 1e-12);
        assert!((p_a - 0.8808).abs() < 1e-4);
        assert!((p_a + p_o - 1.0).abs() < 1e-12);
        // relu clips the negative side
        assert_eq!(m.forward(&[-1.0, 0.0]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn wrong_length_input() {
        let m = ProbeModel::zeros(3);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(ProbeError::Dimension { expected: 3, found: 2 })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let model = random_model(6, seed);
            let batch = random_batch(6, 8, 100 + seed);
            let report = gradient_check(&model, &batch, 200, seed).unwrap();
            assert_eq!(report.checked, 200);
            assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn kink_straddling_parameters_are_skipped() {
        // hidden unit 0 sits 1e-4 above its kink, inside the step
        let dim = 1;
        let mut w1 = vec![0.0; HIDDEN];
        w1[0] = 1.0;
        let mut b1 = vec![0.0; HIDDEN];
        b1[0] = 1e-4;
        let mut w2 = vec![0.0; OUTPUTS * HIDDEN];
        w2[0] = 3.0;
        let model = ProbeModel::from_parts(dim, &w1, &b1, &w2, &[0.1, -0.1]).unwrap();
        let batch = vec![Sample::new(vec![0.0], Label::A), Sample::new(vec![0.0], Label::O)];
        let n = model.params().len();
        let report = gradient_check(&model, &batch, n, 1).unwrap();
        assert!(report.skipped_kinks >= 1);
        assert_eq!(report.checked + report.skipped_kinks, n);
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn negated_w2_gradient_is_detected() {
        let model = random_model(6, 1);
        let batch = random_batch(6, 8, 2);
        let (_, mut grad) = model.loss_and_grad(&batch).unwrap();
        for i in model.block_range(ParamBlock::W2) {
            grad[i] = -grad[i];
        }
        let report = gradient_check_against(&model, &batch, &grad, 100, 3).unwrap();
        assert!((report.max_rel_error - 1.0).abs() < 1e-3, "{report:?}");
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let model = random_model(4, 9);
        let single = random_batch(4, 1, 10);
        let dup: Vec<Sample> = std::iter::repeat_n(single[0].clone(), 5).collect();
        let (l1, g1) = model.loss_and_grad(&single).unwrap();
        let (l5, g5) = model.loss_and_grad(&dup).unwrap();
        assert!((l1 - l5).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g5) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![Sample::new(vec![1.0], Label::A), Sample::new(vec![2.0], Label::A)];
        assert!(matches!(train(&data, &TrainConfig::default()), Err(ProbeError::SingleClass(Label::A))));
        assert!(matches!(train(&[], &TrainConfig::default()), Err(ProbeError::EmptyDataset)));
    }

    #[test]
    fn exploding_learning_rate_reports_epoch() {
        let data = vec![Sample::new(vec![1e150, 1e150], Label::A), Sample::new(vec![-1e150, -1e150], Label::O)];
        let cfg = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 1e300, ..TrainConfig::default() };
        assert!(matches!(train(&data, &cfg), Err(ProbeError::NonFiniteLoss { epoch: 0 })));
    }

    #[test]
    fn invalid_train_config() {
        let data = random_batch(2, 4, 1);
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&data, &cfg), Err(ProbeError::Config(_))));
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut model = random_model(7, 4);
        model.meta = ProbeMeta { language: "eu".into(), layer: 10, seed: 99, epochs_trained: 20 };
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = ProbeModel::read_from(&buf[..]).unwrap();
        assert_eq!(back.meta, model.meta);
        assert!(back.params().iter().zip(model.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ProbeModel::read_from(&buf[..buf.len() - 1]).is_err());
    }
}
