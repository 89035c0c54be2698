use crate::error::{Error, Result};
use crate::heatmap::{Heatmap, Provenance, SignConvention};
use crate::network::{forward, Dense, Layer, Network};
use crate::tensor::Tensor;

/// Finds `GlobalAvgPool -> [Flatten] -> Dense -> [Softmax]` at the end of the
/// network. Returns the pooling layer index and the dense layer.
fn gap_tail(network: &Network) -> Result<(usize, &Dense)> {
    let layers = network.layers();
    let mut i = layers.len();
    let mut step_back = |what: &str| -> Result<usize> {
        i = i.checked_sub(1).ok_or_else(|| {
            Error::Topology(format!("network too short: expected {what} in the tail"))
        })?;
        Ok(i)
    };
    let mut at = step_back("dense")?;
    if matches!(layers[at], Layer::Softmax) {
        at = step_back("dense")?;
    }
    let Layer::Dense(dense) = &layers[at] else {
        return Err(Error::Topology(format!(
            "class activation maps need a dense output layer, found {} at layer {at}",
            layers[at].kind()
        )));
    };
    at = step_back("global_avg_pool")?;
    if matches!(layers[at], Layer::Flatten) {
        at = step_back("global_avg_pool")?;
    }
    if !matches!(layers[at], Layer::GlobalAvgPool) {
        return Err(Error::Topology(format!(
            "class activation maps need global average pooling before the output layer, found {} at layer {at}",
            layers[at].kind()
        )));
    }
    Ok((at, dense))
}

/// Class activation map: the feature maps entering global average pooling,
/// weighted by the output-layer weights of `class_index`.
///
/// Returned at feature-map resolution; the provenance records how many input
/// pixels each cell spans.
pub fn cam(network: &Network, input: &Tensor, class_index: usize) -> Result<Heatmap> {
    let (gap, dense) = gap_tail(network)?;
    if class_index >= dense.outputs() {
        return Err(Error::Target(format!(
            "class {class_index} out of range for {} outputs",
            dense.outputs()
        )));
    }
    if input.shape().n != 1 {
        return Err(Error::shape(
            "cam input",
            network.input_shape(),
            input.shape(),
        ));
    }
    let tape = forward(network, input)?;
    let features = tape.input(gap);
    let fs = features.shape();
    let weights = dense.row(class_index);
    let mut values = vec![0.0f64; fs.plane()];
    for (k, &w) in weights.iter().enumerate() {
        let plane = &features.data()[fs.index(0, k, 0, 0)..fs.index(0, k, 0, 0) + fs.plane()];
        for (acc, &f) in values.iter_mut().zip(plane) {
            *acc += w as f64 * f as f64;
        }
    }
    let input_shape = network.input_shape();
    Heatmap::new(
        fs.h,
        fs.w,
        values.into_iter().map(|v| v as f32).collect(),
        SignConvention::WeightedActivation,
        Provenance::Cam {
            class_index,
            input_size: (input_shape.h, input_shape.w),
            scale: (
                input_shape.h as f64 / fs.h as f64,
                input_shape.w as f64 / fs.w as f64,
            ),
        },
    )
}
