//! Network architecture descriptions and the stock builders.

use std::fmt;

use crate::error::{Error, Result};

/// Activation tensor shape per sample, channels last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub const fn flat(n: usize) -> Self {
        Self { h: 1, w: 1, c: n }
    }

    pub const fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Valid-padding 2-D correlation, stride 1.
    Conv2d {
        kernel: (usize, usize),
        filters: usize,
    },
    /// Normalizes over every axis except the last.
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    LeakyRelu {
        slope: f64,
    },
    /// Inverted dropout: kept units are scaled by `1 / keep_prob`.
    Dropout {
        keep_prob: f64,
    },
    Dense {
        units: usize,
    },
    Flatten,
    /// Reinterprets a flat vector as `length` positions of `c / length`
    /// channels.
    Sequence {
        length: usize,
    },
    /// Transposed 1-D convolution along the width axis; output length is
    /// `(L - 1) * stride + kernel`.
    Conv1dUpsample {
        kernel: usize,
        filters: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub const fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: 0.99,
            eps: 1e-3,
        }
    }

    pub const fn leaky_relu() -> Self {
        LayerSpec::LeakyRelu { slope: 0.2 }
    }

    pub const fn dropout() -> Self {
        LayerSpec::Dropout { keep_prob: 0.7 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::LeakyRelu { .. } => "leakyrelu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Sequence { .. } => "sequence",
            LayerSpec::Conv1dUpsample { .. } => "conv1d_up",
        }
    }

    /// Output shape, or an error if the layer cannot consume `input`.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |msg: String| Err(Error::invalid(format!("{} on {input}: {msg}", self.name())));
        match *self {
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                filters,
            } => {
                if kh == 0 || kw == 0 || filters == 0 {
                    return bad("kernel and filters must be >= 1".into());
                }
                if kh > input.h || kw > input.w {
                    return bad(format!("valid {kh}x{kw} kernel leaves no output"));
                }
                Ok(Shape::new(input.h - kh + 1, input.w - kw + 1, filters))
            }
            LayerSpec::BatchNorm { momentum, eps } => {
                if !(0.0..=1.0).contains(&momentum) || !(eps > 0.0) {
                    return bad("momentum must lie in [0, 1] and eps be > 0".into());
                }
                Ok(input)
            }
            LayerSpec::LeakyRelu { slope } => {
                if !slope.is_finite() {
                    return bad("slope must be finite".into());
                }
                Ok(input)
            }
            LayerSpec::Dropout { keep_prob } => {
                if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                    return bad(format!("keep_prob {keep_prob} outside (0, 1]"));
                }
                Ok(input)
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return bad("units must be >= 1".into());
                }
                if input.h != 1 || input.w != 1 {
                    return bad("dense needs a flat input; insert flatten".into());
                }
                Ok(Shape::flat(units))
            }
            LayerSpec::Flatten => Ok(Shape::flat(input.len())),
            LayerSpec::Sequence { length } => {
                if length == 0 || input.len() % length != 0 {
                    return bad(format!(
                        "{} values do not split into {length} positions",
                        input.len()
                    ));
                }
                Ok(Shape::new(1, length, input.len() / length))
            }
            LayerSpec::Conv1dUpsample {
                kernel,
                filters,
                stride,
            } => {
                if kernel == 0 || filters == 0 || stride == 0 {
                    return bad("kernel, filters and stride must be >= 1".into());
                }
                if input.h != 1 {
                    return bad("1-D convolution needs a sequence input".into());
                }
                Ok(Shape::new(1, (input.w - 1) * stride + kernel, filters))
            }
        }
    }

    /// Shapes of the trainable tensors.
    pub fn param_shapes(&self, input: Shape) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                filters,
            } => {
                vec![vec![kh, kw, input.c, filters], vec![filters]]
            }
            LayerSpec::BatchNorm { .. } => vec![vec![input.c], vec![input.c]],
            LayerSpec::Dense { units } => vec![vec![input.len(), units], vec![units]],
            LayerSpec::Conv1dUpsample {
                kernel, filters, ..
            } => {
                vec![vec![input.c, kernel, filters], vec![filters]]
            }
            _ => Vec::new(),
        }
    }

    /// Shapes of the non-trainable state (batch-norm running mean and variance).
    pub fn running_shapes(&self, input: Shape) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::BatchNorm { .. } => vec![vec![input.c], vec![input.c]],
            _ => Vec::new(),
        }
    }

    fn to_line(self) -> String {
        match self {
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                filters,
            } => format!("conv2d {kh} {kw} {filters}"),
            LayerSpec::BatchNorm { momentum, eps } => format!("batchnorm {momentum:?} {eps:?}"),
            LayerSpec::LeakyRelu { slope } => format!("leakyrelu {slope:?}"),
            LayerSpec::Dropout { keep_prob } => format!("dropout {keep_prob:?}"),
            LayerSpec::Dense { units } => format!("dense {units}"),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Sequence { length } => format!("sequence {length}"),
            LayerSpec::Conv1dUpsample {
                kernel,
                filters,
                stride,
            } => {
                format!("conv1d_up {kernel} {filters} {stride}")
            }
        }
    }

    fn from_words(words: &[&str]) -> Result<Self> {
        let bad = || Error::invalid(format!("bad layer line '{}'", words.join(" ")));
        let u = |i: usize| {
            words
                .get(i)
                .and_then(|w| w.parse::<usize>().ok())
                .ok_or_else(bad)
        };
        let f = |i: usize| {
            words
                .get(i)
                .and_then(|w| w.parse::<f64>().ok())
                .ok_or_else(bad)
        };
        let (layer, arity) = match words.first().copied() {
            Some("conv2d") => (
                LayerSpec::Conv2d {
                    kernel: (u(1)?, u(2)?),
                    filters: u(3)?,
                },
                4,
            ),
            Some("batchnorm") => (
                LayerSpec::BatchNorm {
                    momentum: f(1)?,
                    eps: f(2)?,
                },
                3,
            ),
            Some("leakyrelu") => (LayerSpec::LeakyRelu { slope: f(1)? }, 2),
            Some("dropout") => (LayerSpec::Dropout { keep_prob: f(1)? }, 2),
            Some("dense") => (LayerSpec::Dense { units: u(1)? }, 2),
            Some("flatten") => (LayerSpec::Flatten, 1),
            Some("sequence") => (LayerSpec::Sequence { length: u(1)? }, 2),
            Some("conv1d_up") => (
                LayerSpec::Conv1dUpsample {
                    kernel: u(1)?,
                    filters: u(2)?,
                    stride: u(3)?,
                },
                4,
            ),
            _ => return Err(bad()),
        };
        if words.len() != arity {
            return Err(bad());
        }
        Ok(layer)
    }
}

/// Per-sample preprocessing applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputNorm {
    None,
    /// Each input channel is shifted and scaled to zero mean and unit variance
    /// over the image. Removes the overall intensity, which carries no spectral
    /// shape and leaves the optimizer badly conditioned.
    Standardize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
    pub input_norm: InputNorm,
}

impl NetworkSpec {
    /// Checks the shape algebra and returns the activation shape entering
    /// each layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input_shape.is_empty() {
            return Err(Error::invalid("input shape has a zero dimension"));
        }
        let mut shapes = vec![self.input_shape];
        for layer in &self.layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap().len();
        if out != self.output_dim {
            return Err(Error::invalid(format!(
                "network produces {out} outputs, expected {}",
                self.output_dim
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().unwrap())
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .flat_map(|(l, s)| l.param_shapes(*s))
            .map(|dims| dims.iter().product::<usize>())
            .sum())
    }

    /// Line-oriented text form stored in checkpoints.
    pub fn canonical_text(&self) -> String {
        let s = self.input_shape;
        let mut out = format!("input {} {} {}\n", s.h, s.w, s.c);
        out.push_str(match self.input_norm {
            InputNorm::None => "norm none\n",
            InputNorm::Standardize => "norm standardize\n",
        });
        for l in &self.layers {
            out.push_str(&l.to_line());
            out.push('\n');
        }
        out.push_str(&format!("output {}\n", self.output_dim));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input_shape = None;
        let mut input_norm = InputNorm::None;
        let mut output_dim = None;
        let mut layers = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| {
                words
                    .get(i)
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| Error::invalid(format!("bad line '{line}'")))
            };
            match words[0] {
                "input" if words.len() == 4 => {
                    input_shape = Some(Shape::new(num(1)?, num(2)?, num(3)?))
                }
                "norm" => {
                    input_norm = match words.get(1).copied() {
                        Some("none") => InputNorm::None,
                        Some("standardize") => InputNorm::Standardize,
                        _ => return Err(Error::invalid(format!("bad line '{line}'"))),
                    }
                }
                "output" if words.len() == 2 => output_dim = Some(num(1)?),
                _ => layers.push(LayerSpec::from_words(&words)?),
            }
        }
        let spec = NetworkSpec {
            input_shape: input_shape.ok_or_else(|| Error::invalid("network text lacks 'input'"))?,
            layers,
            output_dim: output_dim.ok_or_else(|| Error::invalid("network text lacks 'output'"))?,
            input_norm,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Tunable sizes of the stock architectures.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub input: (usize, usize),
    pub channels: usize,
    pub kernel: usize,
    pub filters: Vec<usize>,
    pub dense: Vec<usize>,
    pub leaky_slope: f64,
    pub keep_prob: f64,
}

impl ArchConfig {
    /// Two 2x2 convolutions on a 5x5 ROI.
    pub fn small() -> Self {
        Self {
            input: (5, 5),
            channels: crate::domain::DEFAULT_CHANNELS,
            kernel: 2,
            filters: vec![16, 16],
            dense: vec![512, 256],
            leaky_slope: 0.2,
            keep_prob: 0.7,
        }
    }

    /// Three 3x3 convolutions on a 20x20 ROI.
    pub fn large() -> Self {
        Self {
            input: (20, 20),
            kernel: 3,
            filters: vec![16, 32, 32],
            ..Self::small()
        }
    }

    pub fn with_input(mut self, input: (usize, usize)) -> Self {
        self.input = input;
        self
    }

    pub fn with_filters(mut self, filters: Vec<usize>) -> Self {
        self.filters = filters;
        self
    }

    fn conv_stack(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        for &f in &self.filters {
            layers.push(LayerSpec::Conv2d {
                kernel: (self.kernel, self.kernel),
                filters: f,
            });
            layers.push(LayerSpec::batch_norm());
            layers.push(LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            });
        }
        layers.push(LayerSpec::Flatten);
        layers
    }

    /// Conv stack, two dropout-regularized dense layers, linear output.
    pub fn single_fiber(&self) -> Result<NetworkSpec> {
        let mut layers = self.conv_stack();
        for &units in &self.dense {
            layers.push(LayerSpec::Dense { units });
            layers.push(LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            });
            layers.push(LayerSpec::Dropout {
                keep_prob: self.keep_prob,
            });
        }
        layers.push(LayerSpec::Dense {
            units: self.channels,
        });
        let spec = NetworkSpec {
            input_shape: Shape::new(self.input.0, self.input.1, 1),
            layers,
            output_dim: self.channels,
            input_norm: InputNorm::Standardize,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n` fibers enter as channels of one image; the conv features are
    /// compressed to a short sequence and upsampled along the spectral axis by
    /// two stride-2 transposed convolutions, then projected to `n` output
    /// channels. Output layout is `(channel, fiber)` interleaved.
    pub fn multi_fiber(&self, n: usize, head: &UpsampleHead) -> Result<NetworkSpec> {
        if n == 0 {
            return Err(Error::invalid("multi-fiber network needs n >= 1"));
        }
        let l0 = head.seed_length(self.channels)?;
        let mut layers = self.conv_stack();
        layers.push(LayerSpec::Dense { units: head.dense });
        layers.push(LayerSpec::LeakyRelu {
            slope: self.leaky_slope,
        });
        layers.push(LayerSpec::Dropout {
            keep_prob: self.keep_prob,
        });
        layers.push(LayerSpec::Dense {
            units: l0 * head.seed_channels,
        });
        layers.push(LayerSpec::LeakyRelu {
            slope: self.leaky_slope,
        });
        layers.push(LayerSpec::Sequence { length: l0 });
        for _ in 0..head.stages {
            layers.push(LayerSpec::Conv1dUpsample {
                kernel: head.kernel,
                filters: head.filters,
                stride: head.stride,
            });
            layers.push(LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            });
        }
        layers.push(LayerSpec::Conv1dUpsample {
            kernel: 1,
            filters: n,
            stride: 1,
        });
        let spec = NetworkSpec {
            input_shape: Shape::new(self.input.0, self.input.1, n),
            layers,
            output_dim: n * self.channels,
            input_norm: InputNorm::Standardize,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sizes of the spectral upsampling head of the multi-fiber network.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleHead {
    pub dense: usize,
    pub seed_channels: usize,
    pub stages: usize,
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
}

impl Default for UpsampleHead {
    fn default() -> Self {
        Self {
            dense: 512,
            seed_channels: 32,
            stages: 2,
            kernel: 3,
            stride: 2,
            filters: 32,
        }
    }
}

impl UpsampleHead {
    /// Sequence length before upsampling such that the stages land exactly on
    /// `y`.
    pub fn seed_length(&self, y: usize) -> Result<usize> {
        let mut len = y;
        for _ in 0..self.stages {
            if len < self.kernel || (len - self.kernel) % self.stride != 0 {
                return Err(Error::invalid(format!(
                    "{y} channels are not reachable by {} stride-{} kernel-{} upsampling stages",
                    self.stages, self.stride, self.kernel
                )));
            }
            len = (len - self.kernel) / self.stride + 1;
        }
        Ok(len)
    }
}

/// CNN(i): 5x5 input.
pub fn build_cnn_small() -> NetworkSpec {
    ArchConfig::small()
        .single_fiber()
        .expect("stock architecture is valid")
}

/// CNN(ii): 20x20 input.
pub fn build_cnn_large() -> NetworkSpec {
    ArchConfig::large()
        .single_fiber()
        .expect("stock architecture is valid")
}

/// Multi-fiber network on 20x20 ROIs.
pub fn build_multifiber(n: usize) -> Result<NetworkSpec> {
    ArchConfig::large().multi_fiber(n, &UpsampleHead::default())
}
