//! Network building blocks: equalized-learning-rate convolutions, pixelwise
//! feature normalization, and the minibatch standard-deviation channel.
//!
//! Weights are stored as drawn from a standard normal and multiplied by their
//! He constant at every forward pass ("weight scaling"), so the effective
//! learning rate is equalized across layers of different fan-in.

use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

/// Negative slope used after every hidden convolution.
pub const LRELU_SLOPE: f64 = 0.2;

/// Epsilon inside the pixelwise-normalization root.
pub const PIXELNORM_EPS: f64 = 1e-8;

/// Per-layer He constant: sqrt(2 / (k * k * in_channels)).
pub fn equalized_scale(kernel: usize, in_channels: usize) -> f64 {
    assert!(kernel >= 1 && in_channels >= 1);
    (2.0 / (kernel * kernel * in_channels) as f64).sqrt()
}

/// Named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<E> {
    pub name: String,
    pub value: Tensor<E>,
    /// k * k * in_channels for convolution weights; 1 for biases.
    pub fan_in: usize,
}

/// How an [`EqualizedConv`] applies its kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Stride-1 cross-correlation with symmetric zero padding.
    Standard { padding: usize },
    /// Full-overlap transposed convolution mapping 1x1 inputs to k x k maps.
    TransposedFull,
}

/// Convolution layer with runtime weight scaling.
///
/// Storage keeps the raw standard-normal weights; the He constant is applied
/// on the tape at every forward pass, never baked into the stored values.
#[derive(Debug, Clone)]
pub struct EqualizedConv<E> {
    pub weight: Parameter<E>,
    pub bias: Parameter<E>,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kind: ConvKind,
}

impl<E: Real> EqualizedConv<E> {
    /// Fresh layer: weights from a standard normal, bias zero.
    pub fn new(
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        kind: ConvKind,
        rng: &mut Rng,
    ) -> Self {
        // transposed storage swaps the channel axes so the kernel can be fed
        // straight to the transposed-convolution op
        let weight_shape = match kind {
            ConvKind::Standard { .. } => vec![kernel, kernel, in_channels, out_channels],
            ConvKind::TransposedFull => vec![kernel, kernel, out_channels, in_channels],
        };
        EqualizedConv {
            weight: Parameter {
                name: format!("{name}.weight"),
                value: Tensor::randn(weight_shape, rng),
                fan_in: kernel * kernel * in_channels,
            },
            bias: Parameter {
                name: format!("{name}.bias"),
                value: Tensor::zeros(vec![out_channels]),
                fan_in: 1,
            },
            kernel,
            in_channels,
            out_channels,
            kind,
        }
    }

    /// He constant applied to the raw weights each forward pass.
    pub fn runtime_scale(&self) -> f64 {
        equalized_scale(self.kernel, self.in_channels)
    }

    /// Registers the layer's parameters on a tape.
    pub fn bind(&self, tape: &Tape<E>, trainable: bool) -> Result<BoundConv<E>, TensorError> {
        let raw = tape.leaf(&self.weight.value, trainable)?;
        let bias = tape.leaf(&self.bias.value, trainable)?;
        let effective = raw.scale(self.runtime_scale())?;
        Ok(BoundConv {
            raw,
            bias,
            effective,
            kind: self.kind,
        })
    }

    pub fn parameters(&self) -> [&Parameter<E>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter<E>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Tape-bound view of an [`EqualizedConv`].
pub struct BoundConv<E: Real> {
    raw: Var<E>,
    bias: Var<E>,
    effective: Var<E>,
    kind: ConvKind,
}

impl<E: Real> BoundConv<E> {
    pub fn apply(&self, x: &Var<E>) -> Result<Var<E>, TensorError> {
        let y = match self.kind {
            ConvKind::Standard { padding } => x.conv2d(&self.effective, padding)?,
            ConvKind::TransposedFull => x.conv2d_transposed(&self.effective, 0)?,
        };
        y.add_bias(&self.bias)
    }

    /// Leaf nodes holding the raw weight and bias (for gradient collection).
    pub fn leaves(&self) -> [&Var<E>; 2] {
        [&self.raw, &self.bias]
    }
}

/// Convolution followed by the generator/critic unit's nonlinearity choices.
///
/// RGB extraction/reading layers and the critic's score layer run linear
/// (no activation, no normalization); generator trunk units enable both.
#[derive(Debug, Clone)]
pub struct ConvUnit<E> {
    pub conv: EqualizedConv<E>,
    pub activation: bool,
    pub pixelnorm: bool,
}

impl<E: Real> ConvUnit<E> {
    pub fn bind(&self, tape: &Tape<E>, trainable: bool) -> Result<BoundConvUnit<E>, TensorError> {
        Ok(BoundConvUnit {
            conv: self.conv.bind(tape, trainable)?,
            activation: self.activation,
            pixelnorm: self.pixelnorm,
        })
    }
}

/// Tape-bound view of a [`ConvUnit`].
pub struct BoundConvUnit<E: Real> {
    pub conv: BoundConv<E>,
    activation: bool,
    pixelnorm: bool,
}

impl<E: Real> BoundConvUnit<E> {
    pub fn apply(&self, x: &Var<E>) -> Result<Var<E>, TensorError> {
        let mut y = self.conv.apply(x)?;
        if self.activation {
            y = y.leaky_relu(LRELU_SLOPE)?;
        }
        if self.pixelnorm {
            y = pixelnorm(&y, PIXELNORM_EPS)?;
        }
        Ok(y)
    }
}

/// Pixelwise feature normalization:
/// `y[b,h,w,c] = x[b,h,w,c] / sqrt(mean_c(x[b,h,w,:]^2) + eps)`.
pub fn pixelnorm<E: Real>(x: &Var<E>, eps: f64) -> Result<Var<E>, TensorError> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "pixelnorm",
            detail: format!("expected rank 4, got {shape:?}"),
        });
    }
    let rms = x
        .mul(x)?
        .reduce_mean(&[3])?
        .add_scalar(eps)?
        .sqrt()?
        .broadcast_to(&shape)?;
    x.div(&rms)
}

/// Appends one constant channel holding the batch-diversity statistic.
///
/// The statistic is the biased (divide by N) standard deviation of every
/// `(h, w, c)` feature over the batch, averaged to a single scalar. The root
/// uses a zero subgradient at exactly zero variance, so a batch of identical
/// images contributes an exact zero channel and still backpropagates cleanly.
pub fn minibatch_stddev<E: Real>(x: &Var<E>) -> Result<Var<E>, TensorError> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "minibatch_stddev",
            detail: format!("expected rank 4, got {shape:?}"),
        });
    }
    let n = shape[0];
    if n < 2 {
        return Err(TensorError::InvalidArg {
            op: "minibatch_stddev",
            detail: format!("batch size {n} < 2"),
        });
    }
    let mean = x.reduce_mean(&[0])?.broadcast_to(&shape)?;
    let centered = x.sub(&mean)?;
    let variance = centered.mul(&centered)?.reduce_mean(&[0])?;
    let stddev = variance.sqrt_safe()?;
    let scalar = stddev.mean_all()?;
    let channel = scalar.broadcast_to(&[n, shape[1], shape[2], 1])?;
    x.concat_channels(&channel)
}
