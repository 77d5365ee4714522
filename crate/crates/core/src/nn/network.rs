//! Parameter storage, batched forward/backward passes and inference.

use super::layers::{self, Conv1dDims, ConvDims};
use super::scalar::Scalar;
use super::spec::{InputNorm, LayerSpec, NetworkSpec, Shape};
use crate::error::{Error, Result};
use crate::rng::SpeckleRng;

/// Tensors owned by one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// Weights then biases (conv, dense) or scale then shift (batch norm).
    pub trainable: Vec<Vec<T>>,
    /// Batch-norm running mean and variance.
    pub running: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    params: Vec<LayerParams<T>>,
}

/// Reusable inference buffers; grow on first use, then stay allocated.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    a: Vec<T>,
    b: Vec<T>,
    scratch: Vec<T>,
}

impl<T> Default for Workspace<T> {
    fn default() -> Self {
        Self {
            a: Vec::new(),
            b: Vec::new(),
            scratch: Vec::new(),
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn new(spec: NetworkSpec, rng: &mut SpeckleRng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let params = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, &input)| {
                let out = layer.output_shape(input).expect("validated");
                let trainable = match *layer {
                    LayerSpec::Conv2d {
                        kernel: (kh, kw),
                        filters,
                    } => {
                        let fan_in = kh * kw * input.c;
                        let fan_out = kh * kw * filters;
                        vec![
                            glorot(rng, fan_in * filters, fan_in, fan_out),
                            vec![T::zero(); filters],
                        ]
                    }
                    LayerSpec::Dense { units } => {
                        let fan_in = input.len();
                        vec![
                            glorot(rng, fan_in * units, fan_in, units),
                            vec![T::zero(); units],
                        ]
                    }
                    LayerSpec::Conv1dUpsample {
                        kernel, filters, ..
                    } => {
                        let fan_in = kernel * input.c;
                        let fan_out = kernel * filters;
                        vec![
                            glorot(rng, input.c * kernel * filters, fan_in, fan_out),
                            vec![T::zero(); filters],
                        ]
                    }
                    LayerSpec::BatchNorm { .. } => {
                        vec![vec![T::one(); out.c], vec![T::zero(); out.c]]
                    }
                    _ => Vec::new(),
                };
                let running = match layer {
                    LayerSpec::BatchNorm { .. } => {
                        vec![vec![T::zero(); out.c], vec![T::one(); out.c]]
                    }
                    _ => Vec::new(),
                };
                LayerParams { trainable, running }
            })
            .collect();
        Ok(Self {
            spec,
            shapes,
            params,
        })
    }

    /// Rebuilds a network from stored tensors, checking every size.
    pub fn from_params(spec: NetworkSpec, params: Vec<LayerParams<T>>) -> Result<Self> {
        let shapes = spec.shapes()?;
        crate::domain::check_len("network layer count", spec.layers.len(), params.len())?;
        for ((layer, input), p) in spec.layers.iter().zip(&shapes).zip(&params) {
            let want = layer.param_shapes(*input);
            let want_run = layer.running_shapes(*input);
            crate::domain::check_len("layer tensor count", want.len(), p.trainable.len())?;
            crate::domain::check_len(
                "layer running tensor count",
                want_run.len(),
                p.running.len(),
            )?;
            for (dims, t) in want
                .iter()
                .chain(&want_run)
                .zip(p.trainable.iter().chain(&p.running))
            {
                crate::domain::check_len("layer tensor size", dims.iter().product(), t.len())?;
            }
        }
        Ok(Self {
            spec,
            shapes,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Activation shape entering each layer, then the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape.len()
    }

    pub fn output_len(&self) -> usize {
        self.spec.output_dim
    }

    /// Converts raw channels-last pixels into network input, applying the
    /// spec's normalization.
    pub fn prepare_input(&self, raw: &[f64], out: &mut [T]) -> Result<()> {
        crate::domain::check_len("network input", self.input_len(), raw.len())?;
        let c = self.spec.input_shape.c;
        match self.spec.input_norm {
            InputNorm::None => {
                for (o, &v) in out.iter_mut().zip(raw) {
                    *o = T::of(v);
                }
            }
            InputNorm::Standardize => {
                let pixels = (raw.len() / c) as f64;
                for ch in 0..c {
                    let mean = raw.iter().skip(ch).step_by(c).sum::<f64>() / pixels;
                    let var = raw
                        .iter()
                        .skip(ch)
                        .step_by(c)
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                        / pixels;
                    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
                    for i in (ch..raw.len()).step_by(c) {
                        out[i] = T::of((raw[i] - mean) * scale);
                    }
                }
            }
        }
        Ok(())
    }

    /// Inference-mode forward pass over `n` prepared inputs. Returns the
    /// outputs, which live in the workspace.
    pub fn forward_infer<'w>(
        &self,
        input: &[T],
        n: usize,
        ws: &'w mut Workspace<T>,
    ) -> Result<&'w [T]> {
        crate::domain::check_len("network batch input", n * self.input_len(), input.len())?;
        let max_act = self.shapes.iter().map(|s| s.len()).max().unwrap_or(0) * n;
        let scratch = self.scratch_len(n);
        grow(&mut ws.a, max_act);
        grow(&mut ws.b, max_act);
        grow(&mut ws.scratch, scratch);
        ws.a[..input.len()].copy_from_slice(input);
        let mut in_a = true;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (src, dst) = if in_a {
                (&ws.a, &mut ws.b)
            } else {
                (&ws.b, &mut ws.a)
            };
            let (ins, outs) = (self.shapes[i], self.shapes[i + 1]);
            let x = &src[..n * ins.len()];
            let y = &mut dst[..n * outs.len()];
            let p = &self.params[i];
            match *layer {
                LayerSpec::Conv2d {
                    kernel: (kh, kw), ..
                } => {
                    let d = ConvDims {
                        input: ins,
                        output: outs,
                        kh,
                        kw,
                    };
                    layers::conv2d_forward(
                        &d,
                        n,
                        x,
                        &p.trainable[0],
                        &p.trainable[1],
                        &mut ws.scratch,
                        y,
                    );
                }
                LayerSpec::BatchNorm { eps, .. } => layers::batchnorm_infer(
                    ins.c,
                    T::of(eps),
                    &p.trainable[0],
                    &p.trainable[1],
                    &p.running[0],
                    &p.running[1],
                    x,
                    y,
                ),
                LayerSpec::LeakyRelu { slope } => layers::leaky_forward(T::of(slope), x, y),
                LayerSpec::Dropout { .. } | LayerSpec::Flatten | LayerSpec::Sequence { .. } => {
                    y.copy_from_slice(x)
                }
                LayerSpec::Dense { units } => layers::dense_forward(
                    n,
                    ins.len(),
                    units,
                    x,
                    &p.trainable[0],
                    &p.trainable[1],
                    y,
                ),
                LayerSpec::Conv1dUpsample {
                    kernel,
                    filters,
                    stride,
                } => {
                    let d = conv1d_dims(ins, outs, kernel, filters, stride);
                    layers::conv1d_up_forward(
                        &d,
                        n,
                        x,
                        &p.trainable[0],
                        &p.trainable[1],
                        &mut ws.scratch,
                        y,
                    );
                }
            }
            in_a = !in_a;
        }
        let out = if in_a { &ws.a } else { &ws.b };
        Ok(&out[..n * self.output_len()])
    }

    /// Single-sample inference from raw pixels into `out`, negatives clamped
    /// to zero. Allocation-free once the workspace has grown.
    pub fn predict_into(
        &self,
        raw: &[f64],
        ws: &mut Workspace<T>,
        input: &mut Vec<T>,
        out: &mut [f64],
    ) -> Result<()> {
        crate::domain::check_len("prediction output", self.output_len(), out.len())?;
        grow(input, self.input_len());
        self.prepare_input(raw, &mut input[..self.input_len()])?;
        let y = self.forward_infer(&input[..self.input_len()], 1, ws)?;
        for (o, &v) in out.iter_mut().zip(y) {
            *o = v.as_f64().max(0.0);
        }
        Ok(())
    }

    fn scratch_len(&self, n: usize) -> usize {
        self.spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let (ins, outs) = (self.shapes[i], self.shapes[i + 1]);
                match *layer {
                    LayerSpec::Conv2d {
                        kernel: (kh, kw), ..
                    } => ConvDims {
                        input: ins,
                        output: outs,
                        kh,
                        kw,
                    }
                    .cols_len(n),
                    LayerSpec::Conv1dUpsample {
                        kernel,
                        filters,
                        stride,
                    } => conv1d_dims(ins, outs, kernel, filters, stride).contrib_len(n),
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }

    /// Training-mode forward pass: batch statistics, sampled dropout masks and
    /// cached activations for [`Network::backward`]. Running statistics are
    /// updated when `update_running` is set.
    pub fn forward_train(
        &mut self,
        input: &[T],
        n: usize,
        cache: &mut TrainCache<T>,
        rng: &mut SpeckleRng,
        update_running: bool,
    ) -> Result<()> {
        crate::domain::check_len("network batch input", n * self.input_len(), input.len())?;
        cache.prepare(self, n);
        cache.acts[0][..input.len()].copy_from_slice(input);
        for i in 0..self.spec.layers.len() {
            let (ins, outs) = (self.shapes[i], self.shapes[i + 1]);
            let (before, after) = cache.acts.split_at_mut(i + 1);
            let x = &before[i][..n * ins.len()];
            let y = &mut after[0][..n * outs.len()];
            let p = &mut self.params[i];
            match self.spec.layers[i] {
                LayerSpec::Conv2d {
                    kernel: (kh, kw), ..
                } => {
                    let d = ConvDims {
                        input: ins,
                        output: outs,
                        kh,
                        kw,
                    };
                    layers::conv2d_forward(
                        &d,
                        n,
                        x,
                        &p.trainable[0],
                        &p.trainable[1],
                        &mut cache.scratch,
                        y,
                    );
                }
                LayerSpec::BatchNorm { momentum, eps } => {
                    let c = ins.c;
                    let aux = &mut cache.aux[i];
                    let (xhat, stats) = aux.split_at_mut(n * ins.len());
                    let (inv_std, rest) = stats.split_at_mut(c);
                    let (bm, bv) = rest.split_at_mut(c);
                    layers::batchnorm_train(
                        c,
                        T::of(eps),
                        &p.trainable[0],
                        &p.trainable[1],
                        x,
                        xhat,
                        inv_std,
                        bm,
                        &mut bv[..c],
                        y,
                    );
                    if update_running {
                        let mom = T::of(momentum);
                        let rest = T::one() - mom;
                        for j in 0..c {
                            p.running[0][j] = mom * p.running[0][j] + rest * bm[j];
                            p.running[1][j] = mom * p.running[1][j] + rest * bv[j];
                        }
                    }
                }
                LayerSpec::LeakyRelu { slope } => layers::leaky_forward(T::of(slope), x, y),
                LayerSpec::Dropout { keep_prob } => {
                    let mask = &mut cache.aux[i][..n * ins.len()];
                    let scale = T::of(1.0 / keep_prob);
                    for ((m, o), &v) in mask.iter_mut().zip(y.iter_mut()).zip(x) {
                        *m = if keep_prob >= 1.0 || rng.uniform() < keep_prob {
                            scale
                        } else {
                            T::zero()
                        };
                        *o = v * *m;
                    }
                }
                LayerSpec::Flatten | LayerSpec::Sequence { .. } => y.copy_from_slice(x),
                LayerSpec::Dense { units } => layers::dense_forward(
                    n,
                    ins.len(),
                    units,
                    x,
                    &p.trainable[0],
                    &p.trainable[1],
                    y,
                ),
                LayerSpec::Conv1dUpsample {
                    kernel,
                    filters,
                    stride,
                } => {
                    let d = conv1d_dims(ins, outs, kernel, filters, stride);
                    layers::conv1d_up_forward(
                        &d,
                        n,
                        x,
                        &p.trainable[0],
                        &p.trainable[1],
                        &mut cache.scratch,
                        y,
                    );
                }
            }
        }
        cache.batch = n;
        Ok(())
    }

    /// Output of the last [`Network::forward_train`].
    pub fn train_output<'c>(&self, cache: &'c TrainCache<T>) -> &'c [T] {
        &cache.acts[self.spec.layers.len()][..cache.batch * self.output_len()]
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the outputs of the
    /// last training forward pass) into `cache.grads`.
    pub fn backward(&self, cache: &mut TrainCache<T>, d_out: &[T]) -> Result<()> {
        let n = cache.batch;
        crate::domain::check_len("output gradient", n * self.output_len(), d_out.len())?;
        let layers_n = self.spec.layers.len();
        cache.dcur[..d_out.len()].copy_from_slice(d_out);
        for i in (0..layers_n).rev() {
            let (ins, outs) = (self.shapes[i], self.shapes[i + 1]);
            let need_dx = i > 0;
            let x = &cache.acts[i][..n * ins.len()];
            let dy = &cache.dcur[..n * outs.len()];
            let dx = &mut cache.dnext[..n * ins.len()];
            let p = &self.params[i];
            let g = &mut cache.grads[i];
            match self.spec.layers[i] {
                LayerSpec::Conv2d {
                    kernel: (kh, kw), ..
                } => {
                    let d = ConvDims {
                        input: ins,
                        output: outs,
                        kh,
                        kw,
                    };
                    let (gw, gb) = g.split_at_mut(1);
                    layers::conv2d_backward(
                        &d,
                        n,
                        x,
                        dy,
                        &p.trainable[0],
                        &mut gw[0],
                        &mut gb[0],
                        &mut cache.scratch,
                        need_dx.then_some(dx),
                    );
                }
                LayerSpec::BatchNorm { .. } => {
                    let c = ins.c;
                    let aux = &cache.aux[i];
                    let (xhat, stats) = aux.split_at(n * ins.len());
                    let (gg, gb) = g.split_at_mut(1);
                    layers::batchnorm_backward(
                        c,
                        &p.trainable[0],
                        xhat,
                        &stats[..c],
                        dy,
                        &mut gg[0],
                        &mut gb[0],
                        dx,
                    );
                }
                LayerSpec::LeakyRelu { slope } => layers::leaky_backward(T::of(slope), x, dy, dx),
                LayerSpec::Dropout { .. } => {
                    for ((d, &gy), &m) in dx.iter_mut().zip(dy).zip(&cache.aux[i]) {
                        *d = gy * m;
                    }
                }
                LayerSpec::Flatten | LayerSpec::Sequence { .. } => dx.copy_from_slice(dy),
                LayerSpec::Dense { units } => {
                    let (gw, gb) = g.split_at_mut(1);
                    layers::dense_backward(
                        n,
                        ins.len(),
                        units,
                        x,
                        dy,
                        &p.trainable[0],
                        &mut gw[0],
                        &mut gb[0],
                        need_dx.then_some(dx),
                    );
                }
                LayerSpec::Conv1dUpsample {
                    kernel,
                    filters,
                    stride,
                } => {
                    let d = conv1d_dims(ins, outs, kernel, filters, stride);
                    let (gw, gb) = g.split_at_mut(1);
                    layers::conv1d_up_backward(
                        &d,
                        n,
                        x,
                        dy,
                        &p.trainable[0],
                        &mut gw[0],
                        &mut gb[0],
                        &mut cache.scratch,
                        need_dx.then_some(dx),
                    );
                }
            }
            std::mem::swap(&mut cache.dcur, &mut cache.dnext);
        }
        Ok(())
    }
}

fn conv1d_dims(
    ins: Shape,
    outs: Shape,
    kernel: usize,
    filters: usize,
    stride: usize,
) -> Conv1dDims {
    Conv1dDims {
        length: ins.w,
        in_c: ins.c,
        kernel,
        filters,
        stride,
        out_length: outs.w,
    }
}

fn glorot<T: Scalar>(rng: &mut SpeckleRng, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| T::of(rng.uniform_range(-limit, limit)))
        .collect()
}

fn grow<T: Scalar>(v: &mut Vec<T>, len: usize) {
    if v.len() < len {
        v.resize(len, T::zero());
    }
}

/// Activations, layer-private state and gradients of one training batch.
#[derive(Debug, Clone, Default)]
pub struct TrainCache<T> {
    acts: Vec<Vec<T>>,
    aux: Vec<Vec<T>>,
    scratch: Vec<T>,
    dcur: Vec<T>,
    dnext: Vec<T>,
    /// Gradients, laid out like [`LayerParams::trainable`].
    pub grads: Vec<Vec<Vec<T>>>,
    batch: usize,
}

impl<T: Scalar> TrainCache<T> {
    fn prepare(&mut self, net: &Network<T>, n: usize) {
        let layers_n = net.spec.layers.len();
        if self.acts.len() != layers_n + 1 {
            self.acts = vec![Vec::new(); layers_n + 1];
            self.aux = vec![Vec::new(); layers_n];
            self.grads = net
                .params
                .iter()
                .map(|p| {
                    p.trainable
                        .iter()
                        .map(|t| vec![T::zero(); t.len()])
                        .collect()
                })
                .collect();
        }
        for (a, s) in self.acts.iter_mut().zip(&net.shapes) {
            grow(a, n * s.len());
        }
        for (i, layer) in net.spec.layers.iter().enumerate() {
            let ins = net.shapes[i];
            let need = match layer {
                LayerSpec::BatchNorm { .. } => n * ins.len() + 3 * ins.c,
                LayerSpec::Dropout { .. } => n * ins.len(),
                _ => 0,
            };
            grow(&mut self.aux[i], need);
        }
        let max_act = net.shapes.iter().map(|s| s.len()).max().unwrap_or(0) * n;
        grow(&mut self.dcur, max_act);
        grow(&mut self.dnext, max_act);
        grow(&mut self.scratch, net.scratch_len(n));
    }
}

/// Mean squared error per sample (mean over outputs, then over samples) and
/// its gradient with respect to the outputs.
pub fn mse_loss<T: Scalar>(output: &[T], target: &[T], grad: &mut [T]) -> Result<f64> {
    crate::domain::check_len("loss target", output.len(), target.len())?;
    if output.is_empty() {
        return Err(Error::invalid("empty loss batch"));
    }
    let scale = T::of(2.0 / output.len() as f64);
    let mut acc = 0.0;
    for ((g, &o), &t) in grad.iter_mut().zip(output).zip(target) {
        let d = o - t;
        acc += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok(acc / output.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_cnn_large, build_cnn_small, build_multifiber};

    fn zeroed<T: Scalar>(spec: NetworkSpec) -> Network<T> {
        let mut net = Network::<T>::new(spec, &mut SpeckleRng::new(0)).unwrap();
        for p in net.params_mut() {
            for t in &mut p.trainable {
                t.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        net
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut net = zeroed::<f64>(build_cnn_small());
        let last = net.params_mut().last_mut().unwrap();
        for (j, b) in last.trainable[1].iter_mut().enumerate() {
            *b = j as f64 * 0.5;
        }
        let mut ws = Workspace::default();
        let input = vec![1.3; 25];
        let out = net.forward_infer(&input, 1, &mut ws).unwrap();
        for (j, v) in out.iter().enumerate() {
            assert_eq!(*v, j as f64 * 0.5);
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let net = Network::<f32>::new(build_cnn_large(), &mut SpeckleRng::new(3)).unwrap();
        let raw: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 / 50.0).collect();
        let mut ws = Workspace::default();
        let mut input = Vec::new();
        let mut a = vec![0.0; 43];
        let mut b = vec![0.0; 43];
        net.predict_into(&raw, &mut ws, &mut input, &mut a).unwrap();
        net.predict_into(&raw, &mut Workspace::default(), &mut Vec::new(), &mut b)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn batched_inference_matches_single() {
        let net =
            Network::<f64>::new(build_multifiber(3).unwrap(), &mut SpeckleRng::new(5)).unwrap();
        let mut rng = SpeckleRng::new(6);
        let n = 4;
        let input: Vec<f64> = (0..n * net.input_len()).map(|_| rng.uniform()).collect();
        let mut ws = Workspace::default();
        let batch = net.forward_infer(&input, n, &mut ws).unwrap().to_vec();
        for i in 0..n {
            let one = net
                .forward_infer(
                    &input[i * net.input_len()..(i + 1) * net.input_len()],
                    1,
                    &mut ws,
                )
                .unwrap();
            for (a, b) in one.iter().zip(&batch[i * 129..(i + 1) * 129]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let net = Network::<f32>::new(build_cnn_small(), &mut SpeckleRng::new(1)).unwrap();
        let mut out = vec![0.0; 43];
        assert!(matches!(
            net.predict_into(
                &[1.0; 24],
                &mut Workspace::default(),
                &mut Vec::new(),
                &mut out
            ),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let spec = build_multifiber(2).unwrap();
        let net = Network::<f64>::new(spec, &mut SpeckleRng::new(1)).unwrap();
        let raw: Vec<f64> = (0..800)
            .map(|i| {
                if i % 2 == 0 {
                    4.0 + (i as f64).sin()
                } else {
                    0.5 * (i % 7) as f64
                }
            })
            .collect();
        let mut out = vec![0.0; 800];
        net.prepare_input(&raw, &mut out).unwrap();
        for ch in 0..2 {
            let v: Vec<f64> = out.iter().skip(ch).step_by(2).copied().collect();
            let mean = v.iter().sum::<f64>() / 400.0;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 400.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        // A flat channel maps to zeros rather than NaN.
        let flat = vec![3.0; 800];
        net.prepare_input(&flat, &mut out).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dropout_is_unbiased() {
        // Infer-mode output equals the mean train-mode output over many masks.
        let spec = NetworkSpec {
            input_shape: Shape::flat(8),
            layers: vec![
                LayerSpec::Dropout { keep_prob: 0.7 },
                LayerSpec::Dense { units: 1 },
            ],
            output_dim: 1,
            input_norm: InputNorm::None,
        };
        let mut net = Network::<f64>::new(spec, &mut SpeckleRng::new(2)).unwrap();
        for w in net.params_mut()[1].trainable[0].iter_mut() {
            *w = 1.0;
        }
        let input: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        let infer = net
            .forward_infer(&input, 1, &mut Workspace::default())
            .unwrap()[0];
        let mut cache = TrainCache::default();
        let mut rng = SpeckleRng::new(3);
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            net.forward_train(&input, 1, &mut cache, &mut rng, true)
                .unwrap();
            acc += net.train_output(&cache)[0];
        }
        let mean = acc / draws as f64;
        assert!((mean - infer).abs() < 0.02 * infer, "{mean} vs {infer}");
    }

    #[test]
    fn running_statistics_track_batches() {
        let spec = NetworkSpec {
            input_shape: Shape::flat(2),
            layers: vec![LayerSpec::BatchNorm {
                momentum: 0.5,
                eps: 1e-3,
            }],
            output_dim: 2,
            input_norm: InputNorm::None,
        };
        let mut net = Network::<f64>::new(spec, &mut SpeckleRng::new(2)).unwrap();
        let mut cache = TrainCache::default();
        let input = [1.0, 10.0, 3.0, 30.0];
        net.forward_train(&input, 2, &mut cache, &mut SpeckleRng::new(1), true)
            .unwrap();
        let run = &net.params()[0].running;
        assert_eq!(run[0], vec![1.0, 10.0]);
        assert_eq!(run[1], vec![0.5 + 0.5 * 1.0, 0.5 + 0.5 * 100.0]);
    }

    #[test]
    fn mse_gradient_scaling() {
        let mut g = [0.0; 4];
        let loss = mse_loss(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0, 1.0], &mut g).unwrap();
        assert_eq!(loss, (0.0 + 1.0 + 4.0 + 9.0) / 4.0);
        assert_eq!(g, [0.0, 0.5, 1.0, 1.5]);
    }
}
