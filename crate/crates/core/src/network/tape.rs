use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Switches, Tensor};

/// Everything one forward pass produced.
///
/// Activations are stored once: the output of layer `i` is the input of
/// layer `i + 1`, so adjacency holds by construction.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    activations: Vec<Tensor>,
    switches: Vec<Option<Switches>>,
    logit_activation: usize,
}

/// Borrowed view of one layer's entry on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerRecord<'a> {
    pub input: &'a Tensor,
    pub output: &'a Tensor,
    pub switches: Option<&'a Switches>,
}

impl ForwardTape {
    /// Number of layers recorded.
    pub fn len(&self) -> usize {
        self.switches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.switches.is_empty()
    }

    pub fn input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn output(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    pub fn switches(&self, layer: usize) -> Option<&Switches> {
        self.switches[layer].as_ref()
    }

    pub fn record(&self, layer: usize) -> LayerRecord<'_> {
        LayerRecord {
            input: self.input(layer),
            output: self.output(layer),
            switches: self.switches(layer),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = LayerRecord<'_>> {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Activation `index`: 0 is the network input, `i + 1` the output of layer `i`.
    pub fn activation(&self, index: usize) -> &Tensor {
        &self.activations[index]
    }

    pub fn network_input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn final_output(&self) -> &Tensor {
        self.activations.last().expect("tape holds the input")
    }

    /// Pre-softmax class scores.
    pub fn logits(&self) -> &Tensor {
        &self.activations[self.logit_activation]
    }

    pub fn logit_activation(&self) -> usize {
        self.logit_activation
    }
}

/// Runs `input` through `network`, recording every activation.
pub fn forward(network: &Network, input: &Tensor) -> Result<ForwardTape> {
    let s = input.shape();
    let expected = network.input_shape();
    if (s.c, s.h, s.w) != (expected.c, expected.h, expected.w) || s.n == 0 {
        return Err(Error::shape("network input", expected, s));
    }
    let mut activations = Vec::with_capacity(network.layers().len() + 1);
    let mut switches = Vec::with_capacity(network.layers().len());
    activations.push(input.clone());
    for layer in network.layers() {
        let (out, sw) = layer.forward(activations.last().unwrap())?;
        activations.push(out);
        switches.push(sw);
    }
    Ok(ForwardTape {
        activations,
        switches,
        logit_activation: network.logit_activation(),
    })
}

/// Pre-softmax score of `class_index` for the first sample on the tape.
pub fn class_score(tape: &ForwardTape, class_index: usize) -> Result<f32> {
    let logits = tape.logits();
    let width = logits.shape().row_len();
    if class_index >= width {
        return Err(Error::Target(format!(
            "class {class_index} out of range for {width} outputs"
        )));
    }
    Ok(logits.data()[class_index])
}
