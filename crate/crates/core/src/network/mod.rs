//! Sequential network definition, forward execution and the FVNET model format.

mod format;
mod tape;

pub use format::{load_network, save_network, FVNET_MAGIC};
pub use tape::{class_score, forward, ForwardTape, LayerRecord};

use crate::error::{Error, Result};
use crate::tensor::{
    self, conv2d, conv_output_shape, global_avgpool, maxpool, pool_output_shape, Shape, Switches,
    Tensor,
};

/// Convolution parameters. The kernel is `(k_out, c_in, kh, kw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    kernel: Tensor,
    bias: Vec<f32>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv {
    pub fn new(
        kernel: Tensor,
        bias: Vec<f32>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Self> {
        if bias.len() != kernel.shape().n {
            return Err(Error::shape("Conv bias", kernel.shape().n, bias.len()));
        }
        Ok(Conv {
            kernel,
            bias,
            stride,
            pad,
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Fully connected layer. Weights are `(out, in)` row-major, stored as a
/// `(out, in, 1, 1)` kernel so the layer is a 1x1 convolution over the
/// flattened `(c, h, w)` features.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    weights: Tensor,
    bias: Vec<f32>,
}

impl Dense {
    pub fn new(outputs: usize, inputs: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if bias.len() != outputs {
            return Err(Error::shape("Dense bias", outputs, bias.len()));
        }
        let weights = Tensor::new(Shape::new(outputs, inputs, 1, 1), weights)?;
        Ok(Dense { weights, bias })
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape().n
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape().c
    }

    /// Weights as a `(out, in, 1, 1)` kernel.
    pub fn kernel(&self) -> &Tensor {
        &self.weights
    }

    /// Row `o` of the weight matrix.
    pub fn row(&self, o: usize) -> &[f32] {
        let n = self.inputs();
        &self.weights.data()[o * n..(o + 1) * n]
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// View of `input` as flattened `(n, in, 1, 1)` features.
    pub(crate) fn flat_shape(&self, input: Shape) -> Shape {
        Shape::new(input.n, input.row_len(), 1, 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Relu,
    LeakyRelu {
        alpha: f32,
    },
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    AvgPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    GlobalAvgPool,
    Dense(Dense),
    Flatten,
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::MaxPool { .. } => "max_pool",
            Layer::AvgPool { .. } => "avg_pool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Dense(_) => "dense",
            Layer::Flatten => "flatten",
            Layer::Softmax => "softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernel.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            _ => 0,
        }
    }

    /// Shape produced by this layer for an input of shape `input`.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(c) => conv_output_shape(input, c.kernel.shape(), c.stride, c.pad),
            Layer::Relu | Layer::LeakyRelu { .. } | Layer::Softmax => Ok(input),
            Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => {
                pool_output_shape(input, *window, *stride)
            }
            Layer::GlobalAvgPool => Ok(Shape::new(input.n, input.c, 1, 1)),
            Layer::Dense(d) => {
                if input.row_len() != d.inputs() {
                    return Err(Error::shape(
                        "dense input size",
                        d.inputs(),
                        input.row_len(),
                    ));
                }
                Ok(Shape::new(input.n, d.outputs(), 1, 1))
            }
            Layer::Flatten => Ok(Shape::new(input.n, input.row_len(), 1, 1)),
        }
    }

    /// Applies the layer. Max-pool layers also return their switches.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Option<Switches>)> {
        let out = match self {
            Layer::Conv(c) => conv2d(input, &c.kernel, &c.bias, c.stride, c.pad)?,
            Layer::Relu => input.map(|v| if v > 0.0 { v } else { 0.0 }),
            Layer::LeakyRelu { alpha } => input.map(|v| if v > 0.0 { v } else { alpha * v }),
            Layer::MaxPool { window, stride } => {
                let (out, switches) = maxpool(input, *window, *stride)?;
                return Ok((out, Some(switches)));
            }
            Layer::AvgPool { window, stride } => tensor::avgpool(input, *window, *stride)?,
            Layer::GlobalAvgPool => global_avgpool(input)?,
            Layer::Dense(d) => {
                let flat = input.clone().reshape(d.flat_shape(input.shape()))?;
                if flat.shape().c != d.inputs() {
                    return Err(Error::shape("dense input size", d.inputs(), flat.shape().c));
                }
                conv2d(&flat, &d.weights, &d.bias, (1, 1), (0, 0))?
            }
            Layer::Flatten => {
                let s = input.shape();
                input.clone().reshape(Shape::new(s.n, s.row_len(), 1, 1))?
            }
            Layer::Softmax => softmax(input),
        };
        Ok((out, None))
    }
}

/// Softmax over each batch row's `c * h * w` elements.
pub fn softmax(input: &Tensor) -> Tensor {
    let s = input.shape();
    let row = s.row_len();
    let mut out = Vec::with_capacity(input.len());
    for chunk in input.data().chunks(row.max(1)) {
        let max = chunk.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = chunk.iter().map(|&v| (v as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / total) as f32));
    }
    Tensor::new(s, out).expect("softmax preserves shape")
}

/// A validated sequential network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input: (usize, usize, usize),
    layers: Vec<Layer>,
    labels: Option<Vec<String>>,
    // Per-sample shapes: shapes[0] is the input, shapes[i + 1] the output of layer i.
    shapes: Vec<Shape>,
}

impl Network {
    /// Builds a network over inputs of shape `(c, h, w)`, checking the shape chain.
    pub fn new(
        input: (usize, usize, usize),
        layers: Vec<Layer>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut shapes = vec![Shape::new(1, input.0, input.1, input.2)];
        if shapes[0].is_empty() {
            return Err(Error::Config(format!("empty input shape {:?}", input)));
        }
        for (index, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && index + 1 != layers.len() {
                return Err(Error::ShapeChain {
                    index,
                    message: "softmax may only appear as the final layer".into(),
                });
            }
            if let Layer::LeakyRelu { alpha } = layer {
                if !alpha.is_finite() {
                    return Err(Error::ShapeChain {
                        index,
                        message: format!("leaky relu slope {alpha} is not finite"),
                    });
                }
            }
            let prev = *shapes.last().unwrap();
            let next = layer.output_shape(prev).map_err(|e| Error::ShapeChain {
                index,
                message: format!("{} layer on input {prev}: {e}", layer.kind()),
            })?;
            shapes.push(next);
        }
        let net = Network {
            input,
            layers,
            labels,
            shapes,
        };
        if let Some(labels) = &net.labels {
            if labels.len() != net.num_outputs() {
                return Err(Error::Config(format!(
                    "{} class labels for {} outputs",
                    labels.len(),
                    net.num_outputs()
                )));
            }
        }
        Ok(net)
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input
    }

    /// Declared input shape with batch size 1.
    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, class: usize) -> Option<&str> {
        self.labels.as_ref()?.get(class).map(String::as_str)
    }

    /// Output shape of layer `index` for a single sample.
    pub fn layer_output_shape(&self, index: usize) -> Shape {
        self.shapes[index + 1]
    }

    /// Input shape of layer `index` for a single sample.
    pub fn layer_input_shape(&self, index: usize) -> Shape {
        self.shapes[index]
    }

    pub fn ends_with_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax))
    }

    /// Index into the activation list (0 = network input, `i + 1` = output of
    /// layer `i`) of the tensor holding the pre-softmax class scores.
    pub fn logit_activation(&self) -> usize {
        if self.ends_with_softmax() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.shapes[self.logit_activation()].row_len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardTape> {
        forward(self, input)
    }
}
