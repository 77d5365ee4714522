//! Finite-difference verification of backpropagation.

use super::network::{mse_loss, Network, TrainCache};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::rng::SpeckleRng;

/// Gradients whose magnitudes both fall below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: usize,
    pub kind: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub layers: Vec<LayerCheck>,
}

/// `|a - b| / max(|a|, |b|, GRAD_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Compares backpropagated gradients of the batch MSE loss with central
/// differences on up to `per_layer` randomly chosen parameters of every layer
/// that has any. Dropout masks are held fixed by reseeding before each pass,
/// and running statistics are not touched.
pub fn gradient_check<T: Scalar>(
    net: &Network<T>,
    input: &[T],
    target: &[T],
    n: usize,
    epsilon: f64,
    per_layer: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut work = net.clone();
    let mut cache = TrainCache::default();
    let mask_seed = seed ^ 0x5eed;
    let mut grad_out = vec![T::zero(); target.len()];

    work.forward_train(input, n, &mut cache, &mut SpeckleRng::new(mask_seed), false)?;
    mse_loss(work.train_output(&cache), target, &mut grad_out)?;
    work.backward(&mut cache, &grad_out)?;
    let analytic = cache.grads.clone();
    if analytic
        .iter()
        .flatten()
        .flatten()
        .any(|g| !g.as_f64().is_finite())
    {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let mut loss_at = |work: &mut Network<T>| -> Result<f64> {
        work.forward_train(input, n, &mut cache, &mut SpeckleRng::new(mask_seed), false)?;
        mse_loss(work.train_output(&cache), target, &mut grad_out)
    };

    let mut pick = SpeckleRng::new(seed);
    let mut layers = Vec::new();
    for li in 0..net.params().len() {
        let sizes: Vec<usize> = net.params()[li].trainable.iter().map(Vec::len).collect();
        let total: usize = sizes.iter().sum();
        if total == 0 {
            continue;
        }
        let chosen = pick.choose_distinct(total, per_layer.min(total));
        let mut worst = 0.0f64;
        for flat in chosen {
            let (mut t, mut idx) = (0, flat);
            while idx >= sizes[t] {
                idx -= sizes[t];
                t += 1;
            }
            let orig = work.params()[li].trainable[t][idx];
            work.params_mut()[li].trainable[t][idx] = T::of(orig.as_f64() + epsilon);
            let up = loss_at(&mut work)?;
            work.params_mut()[li].trainable[t][idx] = T::of(orig.as_f64() - epsilon);
            let down = loss_at(&mut work)?;
            work.params_mut()[li].trainable[t][idx] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(Error::NonFinite("numeric gradient".into()));
            }
            worst = worst.max(relative_error(analytic[li][t][idx].as_f64(), numeric));
        }
        layers.push(LayerCheck {
            layer: li,
            kind: net.spec().layers[li].name(),
            checked: per_layer.min(total),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max),
        layers,
    })
}

/// Small network containing every layer kind, used by the gradient tests.
pub fn all_layer_kinds_spec() -> super::spec::NetworkSpec {
    use super::spec::{InputNorm, LayerSpec, NetworkSpec, Shape};
    NetworkSpec {
        input_shape: Shape::new(5, 4, 2),
        layers: vec![
            LayerSpec::Conv2d {
                kernel: (2, 2),
                filters: 4,
            },
            LayerSpec::batch_norm(),
            LayerSpec::leaky_relu(),
            LayerSpec::Conv2d {
                kernel: (2, 1),
                filters: 3,
            },
            LayerSpec::batch_norm(),
            LayerSpec::leaky_relu(),
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 12 },
            LayerSpec::leaky_relu(),
            LayerSpec::dropout(),
            LayerSpec::Dense { units: 8 },
            LayerSpec::Sequence { length: 4 },
            LayerSpec::Conv1dUpsample {
                kernel: 3,
                filters: 3,
                stride: 2,
            },
            LayerSpec::leaky_relu(),
            LayerSpec::Conv1dUpsample {
                kernel: 1,
                filters: 2,
                stride: 1,
            },
        ],
        output_dim: 18,
        input_norm: InputNorm::None,
    }
}

#[cfg(test)]
mod tests {
    use super::super::spec::{build_cnn_small, InputNorm, LayerSpec, NetworkSpec, Shape};
    use super::*;

    fn random_batch(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = SpeckleRng::new(seed);
        (0..len).map(|_| rng.normal()).collect()
    }

    #[test]
    fn every_layer_kind_passes() {
        let spec = all_layer_kinds_spec();
        let net = Network::<f64>::new(spec, &mut SpeckleRng::new(1)).unwrap();
        let n = 6;
        let x = random_batch(n * net.input_len(), 2);
        let t = random_batch(n * net.output_len(), 3);
        let report = gradient_check(&net, &x, &t, n, 1e-5, 200, 4).unwrap();
        let kinds: std::collections::BTreeSet<_> = report.layers.iter().map(|l| l.kind).collect();
        assert_eq!(kinds.len(), 4, "{kinds:?}");
        assert!(report.max_rel_error < 1e-4, "{report:#?}");
    }

    #[test]
    fn linear_network_is_nearly_exact() {
        let spec = NetworkSpec {
            input_shape: Shape::new(3, 3, 1),
            layers: vec![
                LayerSpec::Conv2d {
                    kernel: (2, 2),
                    filters: 2,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 3 },
            ],
            output_dim: 3,
            input_norm: InputNorm::None,
        };
        let net = Network::<f64>::new(spec, &mut SpeckleRng::new(5)).unwrap();
        let x = random_batch(4 * 9, 6);
        let t = random_batch(4 * 3, 7);
        let report = gradient_check(&net, &x, &t, 4, 1e-5, 200, 8).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:#?}");
    }

    #[test]
    fn small_cnn_passes() {
        let net = Network::<f64>::new(build_cnn_small(), &mut SpeckleRng::new(9)).unwrap();
        let n = 4;
        let x = random_batch(n * 25, 10);
        let t = random_batch(n * 43, 11);
        let report = gradient_check(&net, &x, &t, n, 1e-5, 200, 12).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:#?}");
        for l in &report.layers {
            let total: usize = net.params()[l.layer].trainable.iter().map(Vec::len).sum();
            assert_eq!(l.checked, total.min(200));
        }
    }
}
