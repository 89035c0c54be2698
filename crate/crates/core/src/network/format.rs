//! FVNET model files.
//!
//! Layout:
//!
//! ```text
//! "FVNETv1\n"                8 bytes
//! header length              u32, little endian
//! header                     UTF-8 JSON, `header length` bytes
//! weight blobs               little-endian f32, in declaration order
//! ```
//!
//! Each parameterised layer lists its blob lengths (in floats) under
//! `"blobs"`: conv layers carry `[kernel, bias]`, dense layers `[weights, bias]`.
//! Dense weights are `(out, in)` row-major over the flattened `(c, h, w)`
//! features of the previous layer.

use serde::{Deserialize, Serialize};

use super::{Conv, Dense, Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const FVNET_MAGIC: &[u8; 8] = b"FVNETv1\n";

const KNOWN_LAYERS: &[&str] = &[
    "conv",
    "relu",
    "leaky_relu",
    "max_pool",
    "avg_pool",
    "global_avg_pool",
    "dense",
    "flatten",
    "softmax",
];

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: [usize; 3],
    layers: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerHeader {
    Conv {
        kernel_shape: [usize; 4],
        stride: [usize; 2],
        pad: [usize; 2],
        blobs: [usize; 2],
    },
    Relu,
    LeakyRelu {
        alpha: f32,
    },
    MaxPool {
        window: [usize; 2],
        stride: [usize; 2],
    },
    AvgPool {
        window: [usize; 2],
        stride: [usize; 2],
    },
    GlobalAvgPool,
    Dense {
        inputs: usize,
        outputs: usize,
        blobs: [usize; 2],
    },
    Flatten,
    Softmax,
}

fn layer_header(layer: &Layer) -> LayerHeader {
    match layer {
        Layer::Conv(c) => LayerHeader::Conv {
            kernel_shape: c.kernel().shape().as_array(),
            stride: [c.stride.0, c.stride.1],
            pad: [c.pad.0, c.pad.1],
            blobs: [c.kernel().len(), c.bias().len()],
        },
        Layer::Relu => LayerHeader::Relu,
        Layer::LeakyRelu { alpha } => LayerHeader::LeakyRelu { alpha: *alpha },
        Layer::MaxPool { window, stride } => LayerHeader::MaxPool {
            window: [window.0, window.1],
            stride: [stride.0, stride.1],
        },
        Layer::AvgPool { window, stride } => LayerHeader::AvgPool {
            window: [window.0, window.1],
            stride: [stride.0, stride.1],
        },
        Layer::GlobalAvgPool => LayerHeader::GlobalAvgPool,
        Layer::Dense(d) => LayerHeader::Dense {
            inputs: d.inputs(),
            outputs: d.outputs(),
            blobs: [d.kernel().len(), d.bias().len()],
        },
        Layer::Flatten => LayerHeader::Flatten,
        Layer::Softmax => LayerHeader::Softmax,
    }
}

/// Serializes a network to FVNET bytes.
pub fn save_network(network: &Network) -> Result<Vec<u8>> {
    let header = Header {
        input_shape: [network.input.0, network.input.1, network.input.2],
        layers: network
            .layers()
            .iter()
            .map(|l| serde_json::to_value(layer_header(l)).expect("layer headers serialize"))
            .collect(),
        labels: network.labels.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| Error::Format("header longer than u32::MAX".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(FVNET_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for layer in network.layers() {
        let blobs: [&[f32]; 2] = match layer {
            Layer::Conv(c) => [c.kernel().data(), c.bias()],
            Layer::Dense(d) => [d.kernel().data(), d.bias()],
            _ => continue,
        };
        for blob in blobs {
            for v in blob {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BlobReader<'_> {
    fn take(&mut self, count: usize, index: usize, what: &str) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("layer {index}: {what} blob too large")))?;
        if self.bytes.len() - self.pos < len {
            return Err(Error::Truncated {
                what: format!("layer {index} {what} blob"),
            });
        }
        let out = self.bytes[self.pos..self.pos + len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        self.pos += len;
        Ok(out)
    }
}

fn check_blobs(index: usize, declared: [usize; 2], expected: [usize; 2]) -> Result<()> {
    if declared != expected {
        return Err(Error::Format(format!(
            "layer {index}: blob lengths {declared:?} do not match declared shape (expected {expected:?})"
        )));
    }
    Ok(())
}

fn parse_layer(index: usize, value: serde_json::Value, blobs: &mut BlobReader) -> Result<Layer> {
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| Error::Format(format!("layer {index}: missing \"type\"")))?
        .to_string();
    if !KNOWN_LAYERS.contains(&kind.as_str()) {
        return Err(Error::UnknownLayer { index, kind });
    }
    let header: LayerHeader = serde_json::from_value(value)
        .map_err(|e| Error::Format(format!("layer {index} ({kind}): {e}")))?;
    let layer = match header {
        LayerHeader::Conv {
            kernel_shape: [ko, ci, kh, kw],
            stride,
            pad,
            blobs: declared,
        } => {
            check_blobs(index, declared, [ko * ci * kh * kw, ko])?;
            let kernel = blobs.take(declared[0], index, "kernel")?;
            let bias = blobs.take(declared[1], index, "bias")?;
            Layer::Conv(Conv::new(
                Tensor::new(Shape::new(ko, ci, kh, kw), kernel)?,
                bias,
                (stride[0], stride[1]),
                (pad[0], pad[1]),
            )?)
        }
        LayerHeader::Relu => Layer::Relu,
        LayerHeader::LeakyRelu { alpha } => Layer::LeakyRelu { alpha },
        LayerHeader::MaxPool { window, stride } => Layer::MaxPool {
            window: (window[0], window[1]),
            stride: (stride[0], stride[1]),
        },
        LayerHeader::AvgPool { window, stride } => Layer::AvgPool {
            window: (window[0], window[1]),
            stride: (stride[0], stride[1]),
        },
        LayerHeader::GlobalAvgPool => Layer::GlobalAvgPool,
        LayerHeader::Dense {
            inputs,
            outputs,
            blobs: declared,
        } => {
            check_blobs(index, declared, [inputs * outputs, outputs])?;
            let weights = blobs.take(declared[0], index, "weights")?;
            let bias = blobs.take(declared[1], index, "bias")?;
            Layer::Dense(Dense::new(outputs, inputs, weights, bias)?)
        }
        LayerHeader::Flatten => Layer::Flatten,
        LayerHeader::Softmax => Layer::Softmax,
    };
    Ok(layer)
}

/// Parses and validates FVNET bytes.
pub fn load_network(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < FVNET_MAGIC.len() || &bytes[..FVNET_MAGIC.len()] != FVNET_MAGIC {
        return Err(Error::BadMagic {
            expected: "FVNETv1\\n",
        });
    }
    let rest = &bytes[FVNET_MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::Truncated {
            what: "header length".into(),
        });
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(Error::Truncated {
            what: "JSON header".into(),
        });
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut blobs = BlobReader {
        bytes: &rest[header_len..],
        pos: 0,
    };
    let layers = header
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_layer(i, v, &mut blobs))
        .collect::<Result<Vec<_>>>()?;
    if blobs.pos != blobs.bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after weight blobs",
            blobs.bytes.len() - blobs.pos
        )));
    }
    let [c, h, w] = header.input_shape;
    Network::new((c, h, w), layers, header.labels)
}
