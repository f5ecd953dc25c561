//! One-hidden-layer ReLU network with softmax cross-entropy and Adam.
//!
//! The model is deliberately minimal: `logits = W2 * relu(W1 * x + b1) + b2`.
//! That is exactly the architecture the branch-and-bound verifier reasons
//! about, so the two modules share the same weight layout. Everything here
//! is deterministic given the seeds in [`TrainConfig`]: weight init draws
//! from a dedicated ChaCha8 stream, and epoch shuffles from another.
//!
//! Numerical conventions, chosen once and relied on everywhere:
//! * softmax and cross-entropy use the max-subtracted log-sum-exp form;
//! * `relu'(0) = 0`;
//! * argmax ties resolve to the lowest class index;
//! * minibatch gradients are averaged over the actual batch length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytes::ByteReader;
use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const MODEL_MAGIC: [u8; 4] = *b"RMLP";
const MODEL_VERSION: u8 = 1;

/// `logits = w2 * relu(w1 * x + b1) + b2`.
///
/// Weight matrices are row-major: `w1` is `hidden_dim x input_dim`, `w2` is
/// `num_classes x hidden_dim`. Fields are public because the attack and
/// verifier modules read them directly.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

/// Training hyperparameters. `seed` drives the epoch shuffle stream.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor, plus the shared
/// step counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m_w1: Matrix<T>,
    v_w1: Matrix<T>,
    m_b1: Vec<T>,
    v_b1: Vec<T>,
    m_w2: Matrix<T>,
    v_w2: Matrix<T>,
    m_b2: Vec<T>,
    v_b2: Vec<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh all-zero state shaped like `model`.
    pub fn new(model: &MlpModel<T>) -> Self {
        AdamState {
            m_w1: Matrix::zeros(model.w1.rows(), model.w1.cols()),
            v_w1: Matrix::zeros(model.w1.rows(), model.w1.cols()),
            m_b1: vec![T::zero(); model.b1.len()],
            v_b1: vec![T::zero(); model.b1.len()],
            m_w2: Matrix::zeros(model.w2.rows(), model.w2.cols()),
            v_w2: Matrix::zeros(model.w2.rows(), model.w2.cols()),
            m_b2: vec![T::zero(); model.b2.len()],
            v_b2: vec![T::zero(); model.b2.len()],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl<T: Scalar> MlpModel<T> {
    /// All-zero model of the given shape.
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        MlpModel {
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: vec![T::zero(); hidden_dim],
            w2: Matrix::zeros(num_classes, hidden_dim),
            b2: vec![T::zero(); num_classes],
        }
    }

    /// Seeded uniform init: each weight layer is drawn from
    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`; biases start at
    /// zero. The draw order (`w1` row-major, then `w2` row-major) is part of
    /// the determinism contract.
    pub fn init(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(input_dim, hidden_dim, num_classes);
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        for w in model.w1.as_mut_slice() {
            *w = T::cast(rng.gen_range(-a1..a1));
        }
        let a2 = (6.0 / (hidden_dim + num_classes) as f64).sqrt();
        for w in model.w2.as_mut_slice() {
            *w = T::cast(rng.gen_range(-a2..a2));
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.rows()
    }

    /// Pre-activation of the hidden layer: `w1 * x + b1`.
    pub fn hidden_pre(&self, x: &[T]) -> Vec<T> {
        let mut z = self.w1.matvec(x);
        for (zi, &bi) in z.iter_mut().zip(&self.b1) {
            *zi += bi;
        }
        z
    }

    /// Post-ReLU hidden activations — the penultimate feature embedding.
    pub fn penultimate(&self, x: &[T]) -> Vec<T> {
        let mut h = self.hidden_pre(x);
        for v in &mut h {
            *v = v.max(T::zero());
        }
        h
    }

    /// Class logits for one input.
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let h = self.penultimate(x);
        let mut logits = self.w2.matvec(&h);
        for (li, &bi) in logits.iter_mut().zip(&self.b2) {
            *li += bi;
        }
        logits
    }

    /// Predicted class: argmax over logits, ties to the lowest index.
    pub fn predict(&self, x: &[T]) -> usize {
        argmax(&self.forward(x))
    }

    /// Stable cross-entropy loss of one example.
    pub fn loss(&self, x: &[T], y: usize) -> T {
        let logits = self.forward(x);
        debug_assert!(y < logits.len());
        log_sum_exp(&logits) - logits[y]
    }

    /// Cross-entropy loss and its gradient with respect to the input.
    ///
    /// Backpropagates `softmax(logits) - onehot(y)` through both layers,
    /// masking hidden units whose pre-activation is not strictly positive.
    pub fn loss_grad_input(&self, x: &[T], y: usize) -> (T, Vec<T>) {
        let z = self.hidden_pre(x);
        let h: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
        let mut logits = self.w2.matvec(&h);
        for (li, &bi) in logits.iter_mut().zip(&self.b2) {
            *li += bi;
        }
        debug_assert!(y < logits.len());
        let loss = log_sum_exp(&logits) - logits[y];

        let mut dlogits = logits;
        softmax_in_place(&mut dlogits);
        dlogits[y] -= T::one();

        let mut dh = vec![T::zero(); h.len()];
        self.w2.matvec_t_into(&dlogits, &mut dh);
        for (g, &zi) in dh.iter_mut().zip(&z) {
            if zi <= T::zero() {
                *g = T::zero();
            }
        }

        let mut dx = vec![T::zero(); x.len()];
        self.w1.matvec_t_into(&dh, &mut dx);
        (loss, dx)
    }

    /// Mean cross-entropy over a labeled set.
    pub fn mean_loss(&self, data: &[(Vec<T>, usize)]) -> T {
        let n = T::from_usize(data.len().max(1)).unwrap();
        data.iter().map(|(x, y)| self.loss(x, *y)).sum::<T>() / n
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the runner-up class: the largest logit excluding `skip`, ties to
/// the lowest index.
pub fn runner_up<T: Scalar>(logits: &[T], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in logits.iter().enumerate() {
        if i == skip {
            continue;
        }
        if best == usize::MAX || v > logits[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted `log(sum(exp(v)))`.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let m = values.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let s: T = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Replaces logits with softmax probabilities, max-subtracted for stability.
pub fn softmax_in_place<T: Scalar>(values: &mut [T]) {
    let m = values.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in values.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// One Adam update of a parameter tensor. `t` is the post-increment step
/// count used for bias correction.
fn adam_update<T: Scalar>(theta: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, lr: T) {
    let b1 = T::cast(ADAM_BETA1);
    let b2 = T::cast(ADAM_BETA2);
    let eps = T::cast(ADAM_EPS);
    let one = T::one();
    let bc1 = one - b1.powi(t as i32);
    let bc2 = one - b2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + (one - b1) * grad[i];
        v[i] = b2 * v[i] + (one - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

struct GradBuffers<T> {
    w1: Matrix<T>,
    b1: Vec<T>,
    w2: Matrix<T>,
    b2: Vec<T>,
}

impl<T: Scalar> GradBuffers<T> {
    fn new(model: &MlpModel<T>) -> Self {
        GradBuffers {
            w1: Matrix::zeros(model.w1.rows(), model.w1.cols()),
            b1: vec![T::zero(); model.b1.len()],
            w2: Matrix::zeros(model.w2.rows(), model.w2.cols()),
            b2: vec![T::zero(); model.b2.len()],
        }
    }

    fn zero(&mut self) {
        self.w1.as_mut_slice().fill(T::zero());
        self.b1.fill(T::zero());
        self.w2.as_mut_slice().fill(T::zero());
        self.b2.fill(T::zero());
    }
}

/// Minibatch Adam training, mutating `model` and `state` in place.
///
/// Each epoch visits every example once in a freshly shuffled order drawn
/// from a ChaCha8 stream seeded by `cfg.seed`; gradients are averaged per
/// batch and one Adam step is taken per batch. `epochs = 0` is a no-op.
pub fn train<T: Scalar>(
    model: &mut MlpModel<T>,
    state: &mut AdamState<T>,
    data: &[(Vec<T>, usize)],
    cfg: &TrainConfig,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train: empty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train: batch_size must be at least 1"));
    }
    let (input_dim, num_classes) = (model.input_dim(), model.num_classes());
    for (i, (x, y)) in data.iter().enumerate() {
        if x.len() != input_dim {
            return Err(Error::invalid(format!(
                "train: example {i} has {} features, model expects {input_dim}",
                x.len()
            )));
        }
        if *y >= num_classes {
            return Err(Error::invalid(format!(
                "train: example {i} has label {y}, model has {num_classes} classes"
            )));
        }
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut grads = GradBuffers::new(model);
    let lr = T::cast(cfg.learning_rate);

    // Per-sample scratch, reused across the whole call.
    let hidden = model.hidden_dim();
    let mut z = vec![T::zero(); hidden];
    let mut h = vec![T::zero(); hidden];
    let mut logits = vec![T::zero(); num_classes];
    let mut dh = vec![T::zero(); hidden];

    for _ in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut shuffle_rng);
        for batch in indices.chunks(cfg.batch_size) {
            grads.zero();
            for &idx in batch {
                let (x, y) = &data[idx];
                // Forward.
                for r in 0..hidden {
                    z[r] = crate::linalg::dot(model.w1.row(r), x) + model.b1[r];
                    h[r] = z[r].max(T::zero());
                }
                for c in 0..num_classes {
                    logits[c] = crate::linalg::dot(model.w2.row(c), &h) + model.b2[c];
                }
                // Backward: dlogits = softmax - onehot.
                softmax_in_place(&mut logits);
                logits[*y] -= T::one();
                for c in 0..num_classes {
                    let d = logits[c];
                    grads.b2[c] += d;
                    crate::linalg::axpy(d, &h, grads.w2.row_mut(c));
                }
                model.w2.matvec_t_into(&logits, &mut dh);
                for r in 0..hidden {
                    if z[r] <= T::zero() {
                        continue;
                    }
                    let d = dh[r];
                    grads.b1[r] += d;
                    crate::linalg::axpy(d, x, grads.w1.row_mut(r));
                }
            }
            let scale = T::one() / T::from_usize(batch.len()).unwrap();
            for g in grads.w1.as_mut_slice() {
                *g *= scale;
            }
            for g in &mut grads.b1 {
                *g *= scale;
            }
            for g in grads.w2.as_mut_slice() {
                *g *= scale;
            }
            for g in &mut grads.b2 {
                *g *= scale;
            }

            state.step += 1;
            let t = state.step;
            adam_update(
                model.w1.as_mut_slice(),
                grads.w1.as_slice(),
                state.m_w1.as_mut_slice(),
                state.v_w1.as_mut_slice(),
                t,
                lr,
            );
            adam_update(&mut model.b1, &grads.b1, &mut state.m_b1, &mut state.v_b1, t, lr);
            adam_update(
                model.w2.as_mut_slice(),
                grads.w2.as_slice(),
                state.m_w2.as_mut_slice(),
                state.v_w2.as_mut_slice(),
                t,
                lr,
            );
            adam_update(&mut model.b2, &grads.b2, &mut state.m_b2, &mut state.v_b2, t, lr);
        }
    }
    Ok(())
}

/// Fraction of dataset samples whose prediction matches their label.
pub fn accuracy<T: Scalar>(model: &MlpModel<T>, data: &Dataset<T>) -> Result<f64> {
    if data.samples.is_empty() {
        return Err(Error::invalid("accuracy: empty dataset"));
    }
    let correct = data
        .samples
        .iter()
        .filter(|s| model.predict(&s.features) == s.label)
        .count();
    Ok(correct as f64 / data.samples.len() as f64)
}

/// Writes a model as `RMLP` + version + u32-LE dims + f64-LE parameter
/// blocks (`w1` row-major, `b1`, `w2` row-major, `b2`).
pub fn save_model<T: Scalar>(model: &MlpModel<T>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&[MODEL_VERSION])?;
    for dim in [model.input_dim(), model.hidden_dim(), model.num_classes()] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for block in [
        model.w1.as_slice(),
        &model.b1,
        model.w2.as_slice(),
        &model.b2,
    ] {
        for &v in block {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a model written by [`save_model`]. Any structural problem —
/// wrong magic, unknown version, truncation, trailing bytes — is a format
/// error naming the byte offset.
pub fn load_model<T: Scalar>(path: &Path) -> Result<MlpModel<T>> {
    let file = File::open(path)?;
    let mut r = ByteReader::new(BufReader::new(file), path);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "model magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {magic:02x?}, expected {MODEL_MAGIC:02x?}"),
        });
    }
    let version = r.read_u8("model version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            message: format!("unsupported model version {version}"),
        });
    }
    let input_dim = r.read_u32_le("input_dim")? as usize;
    let hidden_dim = r.read_u32_le("hidden_dim")? as usize;
    let num_classes = r.read_u32_le("num_classes")? as usize;
    if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
        return Err(r.format_error(format!(
            "degenerate model shape {input_dim}x{hidden_dim}x{num_classes}"
        )));
    }
    let mut model = MlpModel::<T>::zeros(input_dim, hidden_dim, num_classes);
    for (block, what) in [
        (model.w1.as_mut_slice(), "w1 parameters"),
        (&mut model.b1[..], "b1 parameters"),
        (model.w2.as_mut_slice(), "w2 parameters"),
        (&mut model.b2[..], "b2 parameters"),
    ] {
        for v in block {
            *v = T::cast(r.read_f64_le(what)?);
        }
    }
    r.expect_eof("model parameters")?;
    Ok(model)
}
