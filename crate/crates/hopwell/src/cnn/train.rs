//! Cross-entropy loss, the Adam optimizer and the epoch loop.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::network::{Cnn, DropoutPlan, Gradients};
use super::scalar::Scalar;
use super::{CnnConfig, CnnError, CnnModel, TrainConfig};
use crate::dataio::{make_batches, DatasetSplit};
use crate::seeds::derive_seed;

/// Mean softmax cross-entropy, stabilized by max subtraction.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> T {
    softmax_ce(logits, labels).0
}

/// Loss plus `d(loss)/d(logits) = (softmax - onehot) / N`.
pub fn softmax_ce_grad<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> (T, Array2<T>) {
    softmax_ce(logits, labels)
}

fn softmax_ce<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> (T, Array2<T>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "logit rows must match label count");
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut dlogits = Array2::<T>::zeros(logits.raw_dim());
    let mut total = T::zero();
    for (i, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &v in row.iter() {
            sum = sum + (v - max).exp();
        }
        let lse = max + sum.ln();
        total = total + (lse - row[label as usize]);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let target = if j == label as usize { T::one() } else { T::zero() };
            dlogits[(i, j)] = (p - target) * inv_n;
        }
    }
    (total * inv_n, dlogits)
}

/// Fraction of rows whose argmax equals the label (ties to lowest index).
pub fn accuracy<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> f64 {
    let mut hits = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label as usize {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// Bias-corrected Adam. Holds first/second moments shaped like the
/// trainable parameters and the shared step counter.
pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: usize,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&[T]]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    /// One update: `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn apply(
        &mut self,
        params: &mut [&mut [T]],
        grads: &Gradients<T>,
        lr: T,
        beta1: T,
        beta2: T,
        epsilon: T,
    ) {
        assert_eq!(params.len(), grads.tensors.len(), "param/grad arity");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - beta1.powi(t);
        let bc2 = T::one() - beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (T::one() - beta1) * g;
                v[i] = beta2 * v[i] + (T::one() - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// One line of the training log, emitted as JSON lines by the harness.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

/// Trains a CNN on the split's training part. Batches are reshuffled per
/// epoch with seeds derived from the train seed, so the whole run is a
/// pure function of its configuration.
pub fn train_cnn(
    split: &DatasetSplit,
    cnn_cfg: &CnnConfig,
    train_cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<EpochLog>), CnnError> {
    if split.train.is_empty() {
        return Err(CnnError::EmptyTrainSplit);
    }
    let mut net = Cnn::<f32>::glorot(
        cnn_cfg.stack_spec(),
        derive_seed(cnn_cfg.seed, "glorot-init"),
    );
    let mut adam = AdamState::<f32>::new(&net.trainable_params());
    let mut dropout_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(train_cfg.seed, "dropout"));
    let (lr, b1, b2, eps) = (
        train_cfg.learning_rate as f32,
        train_cfg.adam_beta1 as f32,
        train_cfg.adam_beta2 as f32,
        train_cfg.adam_epsilon as f32,
    );
    let mut log = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let batches = make_batches(
            &split.train,
            train_cfg.batch_size,
            Some(derive_seed(train_cfg.seed, &format!("epoch-{epoch}"))),
        )?;
        let mut loss_sum = 0.0f64;
        let mut hit_sum = 0.0f64;
        let mut count = 0usize;
        for batch in &batches {
            let (logits, tape) =
                net.forward_train(batch.pixels.view(), DropoutPlan::Sample(&mut dropout_rng))?;
            let (loss, dlogits) = softmax_ce_grad(&logits, &batch.labels);
            let grads = net.backward(tape, &dlogits)?;
            let mut params = net.trainable_params_mut();
            adam.apply(&mut params, &grads, lr, b1, b2, eps);
            loss_sum += loss as f64 * batch.len() as f64;
            hit_sum += accuracy(&logits, &batch.labels) * batch.len() as f64;
            count += batch.len();
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / count as f64,
            train_acc: hit_sum / count as f64,
        });
    }
    Ok((
        CnnModel {
            config: cnn_cfg.clone(),
            net,
        },
        log,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::NUM_CLASSES;
    use ndarray::array;

    #[test]
    fn uniform_logits_loss_is_ln_10() {
        let logits = Array2::<f64>::zeros((3, NUM_CLASSES));
        let labels = [0u8, 5, 9];
        let loss = cross_entropy(&logits, &labels);
        assert!((loss - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_class_loss_is_zero() {
        let mut logits = Array2::<f64>::zeros((1, NUM_CLASSES));
        logits[(0, 3)] = 1000.0;
        let (loss, grad) = softmax_ce_grad(&logits, &[3u8]);
        assert!(loss.abs() < 1e-12);
        // saturated softmax carries no learning signal
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(grad_norm < 1e-6, "grad norm {grad_norm}");
    }

    #[test]
    fn four_sample_batch_matches_high_precision_reference() {
        // expected value computed once with 50-digit decimal arithmetic
        let logits: Array2<f64> = array![
            [0.5, -1.2, 2.1, 0.0, 0.3, -0.7, 1.5, -2.0, 0.8, 0.1],
            [-0.4, 1.9, -0.5, 0.25, -1.1, 0.6, 0.0, 2.3, -0.9, 1.2],
            [2.2, 0.1, -1.7, 1.05, 0.45, -0.35, 0.9, -1.25, 0.65, -0.15],
            [-2.1, -0.8, 0.35, 1.45, -0.55, 2.05, -1.35, 0.75, 1.85, -0.25],
        ];
        let labels = [2u8, 7, 0, 5];
        let loss = cross_entropy(&logits, &labels);
        assert!((loss - 0.969_487_928_336_863_8).abs() < 1e-14, "loss {loss}");
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut logits: Array2<f64> = array![
            [0.5, -1.2, 2.1, 0.0, 0.3, -0.7, 1.5, -2.0, 0.8, 0.1],
            [-0.4, 1.9, -0.5, 0.25, -1.1, 0.6, 0.0, 2.3, -0.9, 1.2],
        ];
        let labels = [4u8, 1];
        let (_, grad) = softmax_ce_grad(&logits, &labels);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..NUM_CLASSES {
                let orig = logits[(i, j)];
                logits[(i, j)] = orig + h;
                let up = cross_entropy(&logits, &labels);
                logits[(i, j)] = orig - h;
                let dn = cross_entropy(&logits, &labels);
                logits[(i, j)] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (fd - grad[(i, j)]).abs() < 1e-8,
                    "fd {fd} vs analytic {} at ({i},{j})",
                    grad[(i, j)]
                );
            }
        }
    }

    fn scalar_gradients(g: f64) -> Gradients<f64> {
        Gradients {
            tensors: vec![vec![g]],
            shapes: vec![vec![1]],
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut w = [1.0f64];
        let mut state = AdamState::new(&[&w[..]]);
        let grads = scalar_gradients(0.37);
        {
            let mut params: Vec<&mut [f64]> = vec![&mut w[..]];
            state.apply(&mut params, &grads, 0.01, 0.9, 0.999, 1e-8);
        }
        // bias-corrected moments cancel at t=1, so the update is -lr*sign(g)
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6, "w = {}", w[0]);
    }

    #[test]
    fn adam_zero_gradient_leaves_weight_and_decays_moments() {
        let mut w = [0.5f64];
        let mut state = AdamState::new(&[&w[..]]);
        {
            let mut params: Vec<&mut [f64]> = vec![&mut w[..]];
            state.apply(&mut params, &scalar_gradients(1.0), 0.1, 0.9, 0.999, 1e-8);
        }
        let w_after_first = w[0];
        let m_after_first = state.first_moments()[0][0];
        // fresh zero-gradient step from a zero state moves nothing
        let mut w2 = [0.5f64];
        let mut fresh = AdamState::new(&[&w2[..]]);
        {
            let mut params: Vec<&mut [f64]> = vec![&mut w2[..]];
            fresh.apply(&mut params, &scalar_gradients(0.0), 0.1, 0.9, 0.999, 1e-8);
        }
        assert_eq!(w2[0], 0.5);
        // zero gradient on a warm state decays the first moment by beta1
        {
            let mut params: Vec<&mut [f64]> = vec![&mut w[..]];
            state.apply(&mut params, &scalar_gradients(0.0), 0.1, 0.9, 0.999, 1e-8);
        }
        let m_after_zero = state.first_moments()[0][0];
        assert!((m_after_zero - 0.9 * m_after_first).abs() < 1e-15);
        assert_ne!(w[0], w_after_first); // momentum keeps moving the weight
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(w) = w^2 from w = 1 with lr = 0.1; |w| < 0.1 after 100 steps
        // (a high-precision rerun gives |w| ~ 2.9e-3)
        let mut w = [1.0f64];
        let mut state = AdamState::new(&[&w[..]]);
        for _ in 0..100 {
            let g = 2.0 * w[0];
            let mut params: Vec<&mut [f64]> = vec![&mut w[..]];
            state.apply(&mut params, &scalar_gradients(g), 0.1, 0.9, 0.999, 1e-8);
        }
        assert!(w[0].abs() < 0.1, "w = {}", w[0]);
        assert!((w[0].abs() - 0.002_936_675_681_102_59).abs() < 1e-9);
    }
}
