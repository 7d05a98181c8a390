//! The convolutional network: a stack of conv blocks plus a detachable
//! fully connected head. Generic over the scalar so gradient checks can run
//! the identical code path in double precision.

use ndarray::{Array1, Array2, Array4, ArrayView4};
use rand::distr::Uniform;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::layers::{
    self, BnCache, ConvCache, PoolCache, batchnorm_backward, batchnorm_forward_eval,
    batchnorm_forward_train, conv_backward, conv_forward, dropout_apply_mask, dropout_forward,
    linear_backward, linear_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward,
};
use super::scalar::Scalar;
use super::CnnError;
use crate::dataio::{IMAGE_SIDE, NUM_CLASSES};

/// One conv block: 3x3 conv, optional batch norm, ReLU, optional 2x2
/// max-pool, optional dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub batchnorm: bool,
    pub pool: bool,
    pub dropout: f64,
}

/// Full architecture description, independent of the named presets so tests
/// can build arbitrarily small stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub in_channels: usize,
    pub input_hw: usize,
    pub convs: Vec<ConvSpec>,
}

impl StackSpec {
    /// Spatial side length after each block (pooling floors odd sizes).
    pub fn shape_chain(&self) -> Vec<(usize, usize)> {
        let mut hw = self.input_hw;
        let mut chain = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            if conv.pool {
                hw /= 2;
            }
            chain.push((conv.out_channels, hw));
        }
        chain
    }

    pub fn feature_dim(&self) -> usize {
        let (c, hw) = *self.shape_chain().last().expect("at least one conv block");
        c * hw * hw
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm<T: Scalar> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvBlock<T: Scalar> {
    pub weight: Array4<T>, // (C_out, C_in, 3, 3)
    pub bias: Array1<T>,
    pub bn: Option<BatchNorm<T>>,
    pub pool: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Linear<T: Scalar> {
    pub weight: Array2<T>, // (feature_dim, 10)
    pub bias: Array1<T>,
}

/// The network proper. Immutable (and thread-shareable) once training ends;
/// only training-mode forwards mutate it, via batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Cnn<T: Scalar> {
    pub spec: StackSpec,
    pub(crate) blocks: Vec<ConvBlock<T>>,
    pub(crate) head: Linear<T>,
}

/// Activation caches from one training-mode forward pass. Consumed by
/// [`Cnn::backward`], which makes "backward without a cached forward"
/// unrepresentable.
pub struct ForwardTape<T: Scalar> {
    blocks: Vec<BlockTape<T>>,
    flat_input: Array2<T>,
    batch: usize,
}

struct BlockTape<T: Scalar> {
    conv: ConvCache<T>,
    bn: Option<BnCache<T>>,
    relu_mask: Vec<bool>,
    pool: Option<PoolCache>,
    dropout_mask: Option<Vec<T>>,
}

/// Per-parameter gradients, ordered like [`Cnn::trainable_params`].
pub struct Gradients<T: Scalar> {
    pub tensors: Vec<Vec<T>>,
    pub shapes: Vec<Vec<usize>>,
}

/// How a training-mode forward should treat dropout.
pub enum DropoutPlan<'a> {
    /// No dropout (used by gradient probes; equivalent to rate 0).
    Off,
    /// Sample fresh masks from the given stream.
    Sample(&'a mut ChaCha12Rng),
}

impl<T: Scalar> Cnn<T> {
    /// Glorot-uniform initialization: every weight tensor is drawn from
    /// `U[-L, L]` with `L = sqrt(6 / (fan_in + fan_out))`; biases start at
    /// zero, batch-norm at identity. Deterministic under `seed`.
    pub fn glorot(spec: StackSpec, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(spec.convs.len());
        let mut c_in = spec.in_channels;
        for conv in &spec.convs {
            let c_out = conv.out_channels;
            let fan_in = c_in * layers::KERNEL * layers::KERNEL;
            let fan_out = c_out * layers::KERNEL * layers::KERNEL;
            let weight = glorot_tensor(
                &mut rng,
                &[c_out, c_in, layers::KERNEL, layers::KERNEL],
                fan_in,
                fan_out,
            )
            .into_shape_with_order((c_out, c_in, layers::KERNEL, layers::KERNEL))
            .expect("conv weight shape");
            let bn = conv.batchnorm.then(|| BatchNorm {
                gamma: Array1::ones(c_out),
                beta: Array1::zeros(c_out),
                running_mean: Array1::zeros(c_out),
                running_var: Array1::ones(c_out),
            });
            blocks.push(ConvBlock {
                weight,
                bias: Array1::zeros(c_out),
                bn,
                pool: conv.pool,
                dropout: conv.dropout,
            });
            c_in = c_out;
        }
        let feature_dim = spec.feature_dim();
        let head_weight = glorot_tensor(&mut rng, &[feature_dim, NUM_CLASSES], feature_dim, NUM_CLASSES)
            .into_shape_with_order((feature_dim, NUM_CLASSES))
            .expect("head weight shape");
        let head = Linear {
            weight: head_weight,
            bias: Array1::zeros(NUM_CLASSES),
        };
        Self { spec, blocks, head }
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    fn check_input(&self, x: &ArrayView4<T>) -> Result<(), CnnError> {
        let dim = x.dim();
        if dim.1 != self.spec.in_channels || dim.2 != self.spec.input_hw || dim.3 != self.spec.input_hw
        {
            return Err(CnnError::ShapeMismatch {
                expected: format!(
                    "(N, {}, {}, {})",
                    self.spec.in_channels, self.spec.input_hw, self.spec.input_hw
                ),
                found: format!("{dim:?}"),
            });
        }
        Ok(())
    }

    /// Evaluation-mode feature extraction: conv stack only, dropout inert,
    /// batch-norm on running statistics. Output `(N, feature_dim)`,
    /// flattened row-major per sample, not yet normalized.
    pub fn forward_features(&self, x: ArrayView4<T>) -> Result<Array2<T>, CnnError> {
        self.check_input(&x)?;
        let mut cur = x.to_owned();
        for block in &self.blocks {
            let (mut out, _) = conv_forward(cur.view(), &block.weight, &block.bias);
            if let Some(bn) = &block.bn {
                out = batchnorm_forward_eval(
                    out.view(),
                    &bn.gamma,
                    &bn.beta,
                    &bn.running_mean,
                    &bn.running_var,
                );
            }
            relu_forward(&mut out);
            if block.pool {
                let (pooled, _) = maxpool_forward(out.view());
                out = pooled;
            }
            cur = out;
        }
        let n = cur.dim().0;
        let d = self.feature_dim();
        Ok(cur
            .into_shape_with_order((n, d))
            .expect("contiguous feature flatten"))
    }

    /// Evaluation-mode logits (features → fully connected head).
    pub fn forward_logits(&self, x: ArrayView4<T>) -> Result<Array2<T>, CnnError> {
        let feats = self.forward_features(x)?;
        Ok(linear_forward(&feats, &self.head.weight, &self.head.bias))
    }

    /// Training-mode forward. Batch norm uses batch statistics and records
    /// the running-stat update; dropout follows `plan`. Running statistics
    /// on `self` are updated in place.
    pub fn forward_train(
        &mut self,
        x: ArrayView4<T>,
        plan: DropoutPlan<'_>,
    ) -> Result<(Array2<T>, ForwardTape<T>), CnnError> {
        let (logits, tape, updates) = self.forward_train_inner(x, plan)?;
        for (idx, mean, var) in updates {
            let bn = self.blocks[idx].bn.as_mut().expect("bn present");
            let momentum = T::from_f64(layers::BN_MOMENTUM);
            let keep = T::one() - momentum;
            for ((rm, rv), (m, v)) in bn
                .running_mean
                .iter_mut()
                .zip(bn.running_var.iter_mut())
                .zip(mean.iter().zip(var.iter()))
            {
                *rm = keep * *rm + momentum * *m;
                *rv = keep * *rv + momentum * *v;
            }
        }
        Ok((logits, tape))
    }

    /// Training-mode forward without side effects: batch statistics are
    /// used but running stats stay untouched. This is the function the
    /// finite-difference gradient checks probe.
    pub fn train_logits_probe(&self, x: ArrayView4<T>) -> Result<Array2<T>, CnnError> {
        let (logits, _, _) = self.forward_train_inner(x, DropoutPlan::Off)?;
        Ok(logits)
    }

    #[allow(clippy::type_complexity)]
    fn forward_train_inner(
        &self,
        x: ArrayView4<T>,
        mut plan: DropoutPlan<'_>,
    ) -> Result<(Array2<T>, ForwardTape<T>, Vec<(usize, Vec<T>, Vec<T>)>), CnnError> {
        self.check_input(&x)?;
        let n = x.dim().0;
        let mut cur = x.to_owned();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        let mut running_updates = Vec::new();
        for (idx, block) in self.blocks.iter().enumerate() {
            let (mut out, conv_cache) = conv_forward(cur.view(), &block.weight, &block.bias);
            let bn_cache = if let Some(bn) = &block.bn {
                let (normed, cache) = batchnorm_forward_train(out.view(), &bn.gamma, &bn.beta);
                out = normed;
                running_updates.push((idx, cache.batch_mean.clone(), cache.batch_var_unbiased.clone()));
                Some(cache)
            } else {
                None
            };
            let relu_mask = relu_forward(&mut out);
            let pool_cache = if block.pool {
                let (pooled, cache) = maxpool_forward(out.view());
                out = pooled;
                Some(cache)
            } else {
                None
            };
            let dropout_mask = if block.dropout > 0.0 {
                match &mut plan {
                    DropoutPlan::Off => None,
                    DropoutPlan::Sample(rng) => Some(dropout_forward(&mut out, block.dropout, rng)),
                }
            } else {
                None
            };
            tapes.push(BlockTape {
                conv: conv_cache,
                bn: bn_cache,
                relu_mask,
                pool: pool_cache,
                dropout_mask,
            });
            cur = out;
        }
        let d = self.feature_dim();
        let flat = cur
            .into_shape_with_order((n, d))
            .expect("contiguous feature flatten");
        let logits = linear_forward(&flat, &self.head.weight, &self.head.bias);
        Ok((
            logits,
            ForwardTape {
                blocks: tapes,
                flat_input: flat,
                batch: n,
            },
            running_updates,
        ))
    }

    /// Backpropagates `dlogits` through the head and the conv stack,
    /// consuming the tape. Gradient order matches [`Self::trainable_params`].
    pub fn backward(&self, tape: ForwardTape<T>, dlogits: &Array2<T>) -> Result<Gradients<T>, CnnError> {
        if dlogits.dim().0 != tape.batch {
            return Err(CnnError::ShapeMismatch {
                expected: format!("({}, {})", tape.batch, NUM_CLASSES),
                found: format!("{:?}", dlogits.dim()),
            });
        }
        let head_grads = linear_backward(dlogits, &tape.flat_input, &self.head.weight);
        // reshape flat gradient back to the last block's output shape
        let chain = self.spec.shape_chain();
        let (last_c, last_hw) = *chain.last().expect("non-empty stack");
        let mut dcur = head_grads
            .dinput
            .into_shape_with_order((tape.batch, last_c, last_hw, last_hw))
            .expect("contiguous gradient reshape");

        // collect per-block grads walking backwards, then reverse
        let mut rev: Vec<(Vec<T>, Vec<usize>)> = Vec::new();
        for (block, btape) in self.blocks.iter().zip(tape.blocks).rev() {
            if let Some(mask) = &btape.dropout_mask {
                dropout_apply_mask(&mut dcur, mask);
            }
            if let Some(pool) = &btape.pool {
                dcur = maxpool_backward(dcur.view(), pool);
            }
            relu_backward(&mut dcur, &btape.relu_mask);
            let mut bn_grads = None;
            if let Some(bn) = &block.bn {
                let cache = btape.bn.as_ref().expect("bn cache recorded in forward");
                let grads = batchnorm_backward(dcur.view(), &bn.gamma, cache);
                dcur = grads.dinput;
                bn_grads = Some((grads.dgamma, grads.dbeta));
            }
            let conv_grads = conv_backward(dcur.view(), &block.weight, &btape.conv);
            dcur = conv_grads.dinput;
            // push in reverse declaration order; fixed up below
            if let Some((dgamma, dbeta)) = bn_grads {
                rev.push((dbeta.to_vec(), vec![dbeta.len()]));
                rev.push((dgamma.to_vec(), vec![dgamma.len()]));
            }
            rev.push((conv_grads.dbias.to_vec(), vec![conv_grads.dbias.len()]));
            let wshape = conv_grads.dweight.shape().to_vec();
            rev.push((
                conv_grads.dweight.into_iter().collect(),
                wshape,
            ));
        }
        rev.reverse();
        let mut tensors: Vec<Vec<T>> = Vec::with_capacity(rev.len() + 2);
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(rev.len() + 2);
        for (t, s) in rev {
            tensors.push(t);
            shapes.push(s);
        }
        let wshape = head_grads.dweight.shape().to_vec();
        tensors.push(head_grads.dweight.into_iter().collect());
        shapes.push(wshape);
        tensors.push(head_grads.dbias.to_vec());
        shapes.push(vec![NUM_CLASSES]);
        Ok(Gradients { tensors, shapes })
    }

    /// Trainable parameters in declaration order: per block `weight, bias,
    /// [gamma, beta]`, then head `weight, bias`. Returned as flat slices.
    pub fn trainable_params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(block.weight.as_slice().expect("contiguous weight"));
            out.push(block.bias.as_slice().expect("contiguous bias"));
            if let Some(bn) = &block.bn {
                out.push(bn.gamma.as_slice().expect("contiguous gamma"));
                out.push(bn.beta.as_slice().expect("contiguous beta"));
            }
        }
        out.push(self.head.weight.as_slice().expect("contiguous head weight"));
        out.push(self.head.bias.as_slice().expect("contiguous head bias"));
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push(block.weight.as_slice_mut().expect("contiguous weight"));
            out.push(block.bias.as_slice_mut().expect("contiguous bias"));
            if let Some(bn) = &mut block.bn {
                out.push(bn.gamma.as_slice_mut().expect("contiguous gamma"));
                out.push(bn.beta.as_slice_mut().expect("contiguous beta"));
            }
        }
        out.push(self.head.weight.as_slice_mut().expect("contiguous head weight"));
        out.push(self.head.bias.as_slice_mut().expect("contiguous head bias"));
        out
    }

    /// Human-readable names aligned with [`Self::trainable_params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            out.push(format!("conv{}.weight", i + 1));
            out.push(format!("conv{}.bias", i + 1));
            if block.bn.is_some() {
                out.push(format!("conv{}.bn.gamma", i + 1));
                out.push(format!("conv{}.bn.beta", i + 1));
            }
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    /// All tensors including batch-norm running statistics, in checkpoint
    /// declaration order: per block `weight, bias, [gamma, beta,
    /// running_mean, running_var]`, then head `weight, bias`.
    pub fn all_tensors(&self) -> Vec<(&[T], Vec<usize>)> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push((
                block.weight.as_slice().expect("contiguous"),
                block.weight.shape().to_vec(),
            ));
            out.push((block.bias.as_slice().expect("contiguous"), vec![block.bias.len()]));
            if let Some(bn) = &block.bn {
                out.push((bn.gamma.as_slice().expect("contiguous"), vec![bn.gamma.len()]));
                out.push((bn.beta.as_slice().expect("contiguous"), vec![bn.beta.len()]));
                out.push((
                    bn.running_mean.as_slice().expect("contiguous"),
                    vec![bn.running_mean.len()],
                ));
                out.push((
                    bn.running_var.as_slice().expect("contiguous"),
                    vec![bn.running_var.len()],
                ));
            }
        }
        out.push((
            self.head.weight.as_slice().expect("contiguous"),
            self.head.weight.shape().to_vec(),
        ));
        out.push((
            self.head.bias.as_slice().expect("contiguous"),
            vec![self.head.bias.len()],
        ));
        out
    }

    pub(crate) fn all_tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push(block.weight.as_slice_mut().expect("contiguous"));
            out.push(block.bias.as_slice_mut().expect("contiguous"));
            if let Some(bn) = &mut block.bn {
                out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                out.push(bn.beta.as_slice_mut().expect("contiguous"));
                out.push(bn.running_mean.as_slice_mut().expect("contiguous"));
                out.push(bn.running_var.as_slice_mut().expect("contiguous"));
            }
        }
        out.push(self.head.weight.as_slice_mut().expect("contiguous"));
        out.push(self.head.bias.as_slice_mut().expect("contiguous"));
        out
    }
}

fn glorot_tensor<T: Scalar>(
    rng: &mut ChaCha12Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Array1<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(T::from_f64(-limit), T::from_f64(limit))
        .expect("valid uniform bounds");
    let len: usize = shape.iter().product();
    Array1::from_iter((0..len).map(|_| rng.sample(&dist)))
}

/// Standard 28x28 single-channel input spec for a named architecture.
pub fn mnist_stack(convs: Vec<ConvSpec>) -> StackSpec {
    StackSpec {
        in_channels: 1,
        input_hw: IMAGE_SIDE,
        convs,
    }
}
