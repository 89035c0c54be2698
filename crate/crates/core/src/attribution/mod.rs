//! Backward attribution: per-pixel contribution maps obtained by walking a
//! forward tape from a unit of interest down to the input.
//!
//! The methods differ only in how a contribution passes a ReLU
//! ([`ReluRule`]) and a linear layer ([`ConvRule`]); any combination is
//! allowed. Max-pool layers replay their recorded switches, average-pool
//! layers follow the linear-layer rule, flatten reshapes, and a final softmax is skipped
//! because targets are always read before it.

mod cam;

pub use cam::cam;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward, Conv, Dense, ForwardTape, Layer, Network};
use crate::tensor::{avgpool_backward, conv2d, conv2d_input_grad, maxunpool, Shape, Tensor};

/// Epsilon used for relevance propagation when none is given.
pub const DEFAULT_EPSILON: f32 = 0.001;

/// How contributions pass a ReLU (or LeakyReLU) layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluRule {
    /// Mask by the sign of the forward input: the true gradient.
    #[default]
    Backprop,
    /// Mask by the sign of the backward signal.
    Deconvnet,
    /// Mask by both.
    Guided,
}

/// How contributions pass a convolution or dense layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ConvRule {
    /// Transpose of the linear map.
    #[default]
    Gradient,
    /// Epsilon-stabilised relevance redistribution.
    LrpEpsilon { epsilon: f32 },
}

impl ConvRule {
    pub fn lrp() -> Self {
        ConvRule::LrpEpsilon {
            epsilon: DEFAULT_EPSILON,
        }
    }

    fn validate(&self) -> Result<()> {
        if let ConvRule::LrpEpsilon { epsilon } = self {
            if !(epsilon.is_finite() && *epsilon > 0.0) {
                return Err(Error::Config(format!(
                    "epsilon must be positive and finite, got {epsilon}"
                )));
            }
        }
        Ok(())
    }
}

/// The unit whose activation is explained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "unit", rename_all = "snake_case")]
pub enum TargetSpec {
    /// A pre-softmax class score.
    ClassUnit { class_index: usize },
    /// One element of a layer's output.
    InternalUnit {
        layer_index: usize,
        channel: usize,
        y: usize,
        x: usize,
    },
}

/// A target resolved against a network: which activation, which element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolvedTarget {
    /// Activation index (0 = input, `i + 1` = output of layer `i`).
    pub activation: usize,
    /// Flat offset of the unit within one batch row of that activation.
    pub offset: usize,
}

impl TargetSpec {
    pub fn class(class_index: usize) -> Self {
        TargetSpec::ClassUnit { class_index }
    }

    pub fn resolve(&self, network: &Network) -> Result<ResolvedTarget> {
        match *self {
            TargetSpec::ClassUnit { class_index } => {
                let outputs = network.num_outputs();
                if class_index >= outputs {
                    return Err(Error::Target(format!(
                        "class {class_index} out of range for {outputs} outputs"
                    )));
                }
                Ok(ResolvedTarget {
                    activation: network.logit_activation(),
                    offset: class_index,
                })
            }
            TargetSpec::InternalUnit {
                layer_index,
                channel,
                y,
                x,
            } => {
                let layers = network.layers();
                if layer_index >= layers.len() {
                    return Err(Error::Target(format!(
                        "layer {layer_index} out of range for {} layers",
                        layers.len()
                    )));
                }
                if matches!(layers[layer_index], Layer::Softmax) {
                    return Err(Error::Target(
                        "softmax outputs are not attributable; target the class unit".into(),
                    ));
                }
                let s = network.layer_output_shape(layer_index);
                if channel >= s.c || y >= s.h || x >= s.w {
                    return Err(Error::Target(format!(
                        "unit ({channel}, {y}, {x}) outside layer {layer_index} output {s}"
                    )));
                }
                Ok(ResolvedTarget {
                    activation: layer_index + 1,
                    offset: s.index(0, channel, y, x),
                })
            }
        }
    }

    /// Forward value of the target unit for the first sample on `tape`.
    pub fn value(&self, network: &Network, tape: &ForwardTape) -> Result<f32> {
        let r = self.resolve(network)?;
        Ok(tape.activation(r.activation).data()[r.offset])
    }
}

/// One backward method plus the unit it explains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub relu_rule: ReluRule,
    pub conv_rule: ConvRule,
    pub target: TargetSpec,
}

impl AttributionConfig {
    pub fn new(relu_rule: ReluRule, conv_rule: ConvRule, target: TargetSpec) -> Self {
        AttributionConfig {
            relu_rule,
            conv_rule,
            target,
        }
    }
}

/// Input-shaped contribution map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub values: Tensor,
    pub config: AttributionConfig,
    /// Forward activation of the target unit.
    pub target_activation: f32,
}

impl AttributionMap {
    /// JSON metadata describing how the map was produced.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "relu_rule": self.config.relu_rule,
            "conv_rule": self.config.conv_rule,
            "target": self.config.target,
            "target_activation": self.target_activation,
            "shape": self.values.shape(),
        })
    }
}

fn leaky_relu_backward(
    rule: ReluRule,
    slope: f32,
    forward_input: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    forward_input
        .zip_map(upstream, |x, g| {
            let pass = match rule {
                ReluRule::Backprop => x > 0.0,
                ReluRule::Deconvnet => g > 0.0,
                ReluRule::Guided => x > 0.0 && g > 0.0,
            };
            if pass {
                g
            } else if slope == 0.0 {
                0.0
            } else {
                slope * g
            }
        })
        .map_err(|_| Error::shape("relu_backward", forward_input.shape(), upstream.shape()))
}

/// Passes `upstream` back through a ReLU whose forward input was `forward_input`.
pub fn relu_backward(rule: ReluRule, forward_input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    leaky_relu_backward(rule, 0.0, forward_input, upstream)
}

/// `upstream / (z + eps * sign(z))`, with `sign(0) = 1`.
fn epsilon_ratio(z: &Tensor, upstream: &Tensor, epsilon: f32) -> Result<Tensor> {
    let eps = epsilon as f64;
    z.zip_map(upstream, |z, r| {
        let z = z as f64;
        let stab = if z >= 0.0 { z + eps } else { z - eps };
        (r as f64 / stab) as f32
    })
}

fn linear_backward(
    rule: ConvRule,
    kernel: &Tensor,
    bias: &[f32],
    stride: (usize, usize),
    pad: (usize, usize),
    forward_input: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    match rule {
        ConvRule::Gradient => {
            conv2d_input_grad(kernel, upstream, forward_input.shape(), stride, pad)
        }
        ConvRule::LrpEpsilon { epsilon } => {
            rule.validate()?;
            let z = conv2d(forward_input, kernel, bias, stride, pad)?;
            upstream.expect_shape(z.shape(), "lrp upstream")?;
            let ratio = epsilon_ratio(&z, upstream, epsilon)?;
            let back = conv2d_input_grad(kernel, &ratio, forward_input.shape(), stride, pad)?;
            forward_input.zip_map(&back, |x, c| x * c)
        }
    }
}

/// Passes `upstream` back through a convolution layer.
pub fn conv_backward(
    rule: ConvRule,
    layer: &Conv,
    forward_input: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    linear_backward(
        rule,
        layer.kernel(),
        layer.bias(),
        layer.stride,
        layer.pad,
        forward_input,
        upstream,
    )
}

/// Passes `upstream` back through a dense layer, viewed as a 1x1 convolution
/// over the flattened input.
pub fn dense_backward(
    rule: ConvRule,
    layer: &Dense,
    forward_input: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    let shape = forward_input.shape();
    let flat = forward_input.clone().reshape(layer.flat_shape(shape))?;
    let back = linear_backward(
        rule,
        layer.kernel(),
        layer.bias(),
        (1, 1),
        (0, 0),
        &flat,
        upstream,
    )?;
    back.reshape(shape)
}

/// Passes `upstream` back through average pooling. Under the epsilon rule each
/// input receives relevance in proportion to its contribution to the window mean.
fn pool_backward(
    rule: ConvRule,
    window: (usize, usize),
    stride: (usize, usize),
    forward_input: &Tensor,
    forward_output: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    match rule {
        ConvRule::Gradient => avgpool_backward(upstream, window, stride, forward_input.shape()),
        ConvRule::LrpEpsilon { epsilon } => {
            let ratio = epsilon_ratio(forward_output, upstream, epsilon)?;
            let back = avgpool_backward(&ratio, window, stride, forward_input.shape())?;
            forward_input.zip_map(&back, |x, c| x * c)
        }
    }
}

/// Walks `tape` backwards from activation `start` (0 = network input,
/// `i + 1` = output of layer `i`), starting from `seed`.
///
/// `seed` must have the shape of that activation. Returns the map at the
/// network input.
pub fn propagate(
    network: &Network,
    tape: &ForwardTape,
    start: usize,
    seed: Tensor,
    relu_rule: ReluRule,
    conv_rule: ConvRule,
) -> Result<Tensor> {
    conv_rule.validate()?;
    if start > network.layers().len() || tape.len() != network.layers().len() {
        return Err(Error::Target(format!(
            "activation {start} not on a tape of {} layers",
            tape.len()
        )));
    }
    seed.expect_shape(tape.activation(start).shape(), "propagate seed")?;
    let last = network.layers().len() - 1;
    let mut signal = seed;
    for index in (0..start).rev() {
        let layer = &network.layers()[index];
        let input = tape.input(index);
        signal = match layer {
            Layer::Relu => relu_backward(relu_rule, input, &signal)?,
            Layer::LeakyRelu { alpha } => leaky_relu_backward(relu_rule, *alpha, input, &signal)?,
            Layer::Conv(c) => conv_backward(conv_rule, c, input, &signal)?,
            Layer::Dense(d) => dense_backward(conv_rule, d, input, &signal)?,
            Layer::MaxPool { .. } => {
                let switches = tape.switches(index).ok_or_else(|| {
                    Error::Invariant(format!("max-pool layer {index} has no switches"))
                })?;
                maxunpool(&signal, switches, input.shape())?
            }
            Layer::AvgPool { window, stride } => pool_backward(
                conv_rule,
                *window,
                *stride,
                input,
                tape.activation(index + 1),
                &signal,
            )?,
            Layer::GlobalAvgPool => {
                let s = input.shape();
                pool_backward(
                    conv_rule,
                    (s.h, s.w),
                    (1, 1),
                    input,
                    tape.activation(index + 1),
                    &signal,
                )?
            }
            Layer::Flatten => signal.reshape(input.shape())?,
            Layer::Softmax if index == last => signal,
            Layer::Softmax => {
                return Err(Error::Topology(format!(
                    "softmax encountered mid-network at layer {index}"
                )))
            }
        };
    }
    Ok(signal)
}

/// Seed tensor for `target`: zero everywhere except the target unit.
fn seed_for(tape: &ForwardTape, target: ResolvedTarget, value: f32) -> Tensor {
    let mut seed = Tensor::zeros(tape.activation(target.activation).shape());
    seed.data_mut()[target.offset] = value;
    seed
}

/// Attribution over an existing tape (single-sample).
pub fn attribute_tape(
    network: &Network,
    tape: &ForwardTape,
    config: AttributionConfig,
) -> Result<AttributionMap> {
    let input_shape = tape.network_input().shape();
    if input_shape.n != 1 {
        return Err(Error::shape(
            "attribution input",
            Shape::new(1, input_shape.c, input_shape.h, input_shape.w),
            input_shape,
        ));
    }
    let target = config.target.resolve(network)?;
    let activation = tape.activation(target.activation).data()[target.offset];
    // Gradients start from d(unit)/d(unit) = 1; relevance starts from the
    // unit's own activation so that it is conserved on the way down.
    let seed_value = match config.conv_rule {
        ConvRule::Gradient => 1.0,
        ConvRule::LrpEpsilon { .. } => activation,
    };
    let seed = seed_for(tape, target, seed_value);
    let values = propagate(
        network,
        tape,
        target.activation,
        seed,
        config.relu_rule,
        config.conv_rule,
    )?;
    Ok(AttributionMap {
        values,
        config,
        target_activation: activation,
    })
}

/// Runs `input` forward and attributes the configured target back to it.
pub fn attribute(
    network: &Network,
    input: &Tensor,
    config: AttributionConfig,
) -> Result<AttributionMap> {
    if input.shape().n != 1 {
        return Err(Error::shape(
            "attribution input",
            network.input_shape(),
            input.shape(),
        ));
    }
    let tape = forward(network, input)?;
    attribute_tape(network, &tape, config)
}
