//! Mini-batch Adam training with best-validation-epoch selection.

use std::fmt;

use super::network::{mse_loss, Network, TrainCache, Workspace};
use super::scalar::Scalar;
use crate::domain::check_len;
use crate::error::{Error, Result};
use crate::rng::SpeckleRng;
use crate::synth::Sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// The learning rate is multiplied by this after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            adam: AdamParams::default(),
            seed: 0,
            patience: None,
            lr_decay: 1.0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::invalid(
                "adam betas must lie in [0, 1) and eps be > 0",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for TrainOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epochs={} batch={} lr={:?} lr_decay={:?} beta1={:?} beta2={:?} adam_eps={:?} seed={} patience={}",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.lr_decay,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.seed,
            self.patience.map_or("none".to_string(), |p| p.to_string())
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork<T: Scalar> {
    pub network: Network<T>,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
    pub dataset_hash: u32,
    pub options: String,
}

/// Prepared inputs and targets, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<T> {
    pub n: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub inputs: Vec<T>,
    pub targets: Vec<T>,
}

impl<T: Scalar> TensorSet<T> {
    /// One image per sample; targets are the spectra.
    pub fn from_samples(net: &Network<T>, samples: &[Sample]) -> Result<Self> {
        let (il, ol) = (net.input_len(), net.output_len());
        let mut inputs = vec![T::zero(); samples.len() * il];
        let mut targets = Vec::with_capacity(samples.len() * ol);
        for (s, chunk) in samples.iter().zip(inputs.chunks_exact_mut(il)) {
            net.prepare_input(s.image.pixels(), chunk)?;
            check_len("training target", ol, s.spectrum.len())?;
            targets.extend(s.spectrum.values().iter().map(|&v| T::of(v)));
        }
        Ok(Self {
            n: samples.len(),
            input_len: il,
            output_len: ol,
            inputs,
            targets,
        })
    }

    /// Sample `i` stacks sample `i` of every fiber as input channels; targets
    /// interleave the spectra as `(channel, fiber)`.
    pub fn from_fiber_groups(net: &Network<T>, per_fiber: &[&[Sample]]) -> Result<Self> {
        let fibers = per_fiber.len();
        check_len(
            "multi-fiber input channels",
            net.spec().input_shape.c,
            fibers,
        )?;
        let n = per_fiber.first().map_or(0, |s| s.len());
        for s in per_fiber {
            check_len("multi-fiber samples per fiber", n, s.len())?;
        }
        let (il, ol) = (net.input_len(), net.output_len());
        let pixels = il / fibers;
        let mut raw = vec![0.0; il];
        let mut inputs = vec![T::zero(); n * il];
        let mut targets = vec![T::zero(); n * ol];
        for i in 0..n {
            for (f, samples) in per_fiber.iter().enumerate() {
                let s = &samples[i];
                check_len("multi-fiber image pixels", pixels, s.image.len())?;
                check_len("multi-fiber target", ol / fibers, s.spectrum.len())?;
                for (p, &v) in s.image.pixels().iter().enumerate() {
                    raw[p * fibers + f] = v;
                }
                for (j, &v) in s.spectrum.values().iter().enumerate() {
                    targets[i * ol + j * fibers + f] = T::of(v);
                }
            }
            net.prepare_input(&raw, &mut inputs[i * il..(i + 1) * il])?;
        }
        Ok(Self {
            n,
            input_len: il,
            output_len: ol,
            inputs,
            targets,
        })
    }

    pub fn input(&self, i: usize) -> &[T] {
        &self.inputs[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn target(&self, i: usize) -> &[T] {
        &self.targets[i * self.output_len..(i + 1) * self.output_len]
    }

    pub fn hash(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.inputs.iter().chain(&self.targets) {
            h.update(&v.as_f64().to_le_bytes());
        }
        h.finalize()
    }
}

/// Mean per-sample MSE in inference mode.
pub fn evaluate_loss<T: Scalar>(net: &Network<T>, set: &TensorSet<T>) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut ws = Workspace::default();
    let mut grad = vec![T::zero(); CHUNK * set.output_len];
    let mut acc = 0.0;
    let mut start = 0;
    while start < set.n {
        let m = CHUNK.min(set.n - start);
        let x = &set.inputs[start * set.input_len..(start + m) * set.input_len];
        let t = &set.targets[start * set.output_len..(start + m) * set.output_len];
        let y = net.forward_infer(x, m, &mut ws)?;
        acc += mse_loss(y, t, &mut grad[..m * set.output_len])? * m as f64;
        start += m;
    }
    Ok(acc / set.n as f64)
}

struct Adam<T> {
    m: Vec<Vec<Vec<T>>>,
    v: Vec<Vec<Vec<T>>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(net: &Network<T>) -> Self {
        let zeros: Vec<Vec<Vec<T>>> = net
            .params()
            .iter()
            .map(|p| {
                p.trainable
                    .iter()
                    .map(|t| vec![T::zero(); t.len()])
                    .collect()
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Network<T>, grads: &[Vec<Vec<T>>], lr: f64, p: &AdamParams) {
        self.step += 1;
        let (b1, b2) = (T::of(p.beta1), T::of(p.beta2));
        let c1 = 1.0 - p.beta1.powi(self.step);
        let c2 = 1.0 - p.beta2.powi(self.step);
        let step = T::of(lr / c1);
        let c2s = T::of(c2.sqrt());
        let eps = T::of(p.eps);
        for (li, layer) in net.params_mut().iter_mut().enumerate() {
            for (ti, tensor) in layer.trainable.iter_mut().enumerate() {
                let g = &grads[li][ti];
                let m = &mut self.m[li][ti];
                let v = &mut self.v[li][ti];
                for k in 0..tensor.len() {
                    m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                    v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                    // lr * mhat / (sqrt(vhat) + eps) with the bias corrections folded in.
                    tensor[k] = tensor[k] - step * m[k] / (v[k].sqrt() / c2s + eps);
                }
            }
        }
    }
}

/// Trains with shuffled mini-batches and returns the weights of the epoch
/// with the lowest validation loss.
pub fn train<T: Scalar>(
    mut net: Network<T>,
    train_set: &TensorSet<T>,
    val_set: &TensorSet<T>,
    opts: &TrainOptions,
) -> Result<TrainedNetwork<T>> {
    opts.validate()?;
    if train_set.n == 0 || val_set.n == 0 {
        return Err(Error::invalid(
            "training and validation splits must be non-empty",
        ));
    }
    for set in [train_set, val_set] {
        check_len("training set input length", net.input_len(), set.input_len)?;
        check_len(
            "training set output length",
            net.output_len(),
            set.output_len,
        )?;
    }
    let mut rng = SpeckleRng::new(opts.seed);
    let mut adam = Adam::new(&net);
    let mut cache = TrainCache::default();
    let bs = opts.batch_size.min(train_set.n);
    let mut bx = vec![T::zero(); bs * net.input_len()];
    let mut bt = vec![T::zero(); bs * net.output_len()];
    let mut grad = vec![T::zero(); bs * net.output_len()];
    let mut order: Vec<usize> = (0..train_set.n).collect();

    let initial = evaluate_loss(&net, val_set)?;
    let mut best = (0usize, initial, net.clone());
    let mut history = Vec::with_capacity(opts.epochs);
    let mut lr = opts.learning_rate;
    for epoch in 1..=opts.epochs {
        rng.shuffle(&mut order);
        let mut acc = 0.0;
        for batch in order.chunks(bs) {
            let m = batch.len();
            for (k, &i) in batch.iter().enumerate() {
                bx[k * train_set.input_len..(k + 1) * train_set.input_len]
                    .copy_from_slice(train_set.input(i));
                bt[k * train_set.output_len..(k + 1) * train_set.output_len]
                    .copy_from_slice(train_set.target(i));
            }
            let ol = m * net.output_len();
            net.forward_train(&bx[..m * net.input_len()], m, &mut cache, &mut rng, true)?;
            let loss = mse_loss(net.train_output(&cache), &bt[..ol], &mut grad[..ol])?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            acc += loss * m as f64;
            net.backward(&mut cache, &grad[..ol])?;
            adam.update(&mut net, &cache.grads, lr, &opts.adam);
        }
        lr *= opts.lr_decay;
        let train_loss = acc / train_set.n as f64;
        let val_loss = evaluate_loss(&net, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: val_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, net.clone());
        } else if let Some(p) = opts.patience {
            if epoch - best.0 >= p {
                break;
            }
        }
    }
    Ok(TrainedNetwork {
        network: best.2,
        history,
        best_epoch: best.0,
        dataset_hash: train_set.hash() ^ val_set.hash().rotate_left(16),
        options: opts.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{ArchConfig, InputNorm, LayerSpec, NetworkSpec, Shape};

    /// Noisy linear regression problem.
    fn linear_sets(seed: u64) -> (TensorSet<f64>, TensorSet<f64>) {
        let mut rng = SpeckleRng::new(seed);
        let w: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let mut make = |n: usize| {
            let inputs: Vec<f64> = (0..n * 4).map(|_| rng.normal()).collect();
            let targets: Vec<f64> = inputs
                .chunks(4)
                .flat_map(|x| {
                    (0..3)
                        .map(|j| (0..4).map(|i| x[i] * w[i * 3 + j]).sum::<f64>())
                        .collect::<Vec<_>>()
                })
                .collect();
            TensorSet {
                n,
                input_len: 4,
                output_len: 3,
                inputs,
                targets,
            }
        };
        (make(256), make(64))
    }

    fn mlp() -> NetworkSpec {
        NetworkSpec {
            input_shape: Shape::flat(4),
            layers: vec![
                LayerSpec::Dense { units: 16 },
                LayerSpec::batch_norm(),
                LayerSpec::leaky_relu(),
                LayerSpec::Dropout { keep_prob: 0.9 },
                LayerSpec::Dense { units: 3 },
            ],
            output_dim: 3,
            input_norm: InputNorm::None,
        }
    }

    #[test]
    fn validation_loss_decreases() {
        let (tr, va) = linear_sets(1);
        let net = Network::new(mlp(), &mut SpeckleRng::new(2)).unwrap();
        let opts = TrainOptions {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let out = train(net, &tr, &va, &opts).unwrap();
        let first = out.history[0].val_loss;
        let best = out
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.2 * first, "{first} -> {best}");
        assert_eq!(out.history[out.best_epoch - 1].val_loss, best);
        assert!((evaluate_loss(&out.network, &va).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (tr, va) = linear_sets(3);
        let net = Network::new(mlp(), &mut SpeckleRng::new(4)).unwrap();
        let opts = TrainOptions {
            epochs: 3,
            learning_rate: 0.0,
            ..Default::default()
        };
        let out = train(net.clone(), &tr, &va, &opts).unwrap();
        let mut last = out.network.clone();
        // Running statistics may move; trainable tensors may not.
        for (a, b) in last.params_mut().iter_mut().zip(net.params()) {
            assert_eq!(a.trainable, b.trainable);
        }
        let losses: Vec<f64> = out.history.iter().map(|e| e.train_loss).collect();
        let spread = losses.iter().cloned().fold(f64::MIN, f64::max)
            - losses.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.1 * losses[0], "{losses:?}");
    }

    #[test]
    fn seeded_training_is_bit_reproducible() {
        let (tr, va) = linear_sets(5);
        let run = || {
            let net = Network::<f64>::new(mlp(), &mut SpeckleRng::new(6)).unwrap();
            train(
                net,
                &tr,
                &va,
                &TrainOptions {
                    epochs: 3,
                    seed: 9,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (mut tr, va) = linear_sets(7);
        tr.targets.iter_mut().for_each(|v| *v *= 1e200);
        let net = Network::<f64>::new(mlp(), &mut SpeckleRng::new(8)).unwrap();
        match train(
            net,
            &tr,
            &va,
            &TrainOptions {
                epochs: 2,
                ..Default::default()
            },
        ) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_split_is_rejected() {
        let (tr, mut va) = linear_sets(7);
        va.n = 0;
        va.inputs.clear();
        va.targets.clear();
        let net = Network::<f64>::new(mlp(), &mut SpeckleRng::new(8)).unwrap();
        assert!(matches!(
            train(net, &tr, &va, &TrainOptions::default()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn fiber_groups_interleave_channels() {
        use crate::domain::{SpeckleImage, Spectrum};
        let spec = ArchConfig::small()
            .with_input((2, 2))
            .with_filters(vec![])
            .multi_fiber(
                2,
                &crate::nn::spec::UpsampleHead {
                    dense: 4,
                    seed_channels: 2,
                    ..Default::default()
                },
            )
            .unwrap();
        let net = Network::<f64>::new(spec, &mut SpeckleRng::new(1)).unwrap();
        let sample = |v: f64| Sample {
            image: SpeckleImage::new(2, 2, vec![v, 2.0 * v, 3.0 * v, 4.0 * v]).unwrap(),
            spectrum: Spectrum::new((0..43).map(|j| v * j as f64).collect()).unwrap(),
            shift: None,
        };
        let a = [sample(1.0)];
        let b = [sample(2.0)];
        let set = TensorSet::from_fiber_groups(&net, &[&a, &b]).unwrap();
        // Each channel is standardized on its own, so both fibers read the
        // z-scores of 1, 2, 3, 4.
        let z = 1.0 / 1.25f64.sqrt();
        let want = [
            -1.5 * z,
            -1.5 * z,
            -0.5 * z,
            -0.5 * z,
            0.5 * z,
            0.5 * z,
            1.5 * z,
            1.5 * z,
        ];
        for (a, b) in set.input(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(&set.target(0)[..6], &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0]);
    }
}
