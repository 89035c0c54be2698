//! 2-D importance maps with a record of how they were made.

use serde::{Deserialize, Serialize};

use crate::attribution::TargetSpec;
use crate::error::{Error, Result};
use crate::occlusion::Fill;
use crate::tensor::{Shape, Tensor};

/// How heatmap values relate to the measured scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `score(original) - score(occluded)`: positive where the region matters.
    ScoreDrop,
    /// Raw weighted feature-map sum.
    WeightedActivation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Occlusion {
        /// `(bh, bw)` in pixels.
        box_size: (usize, usize),
        stride: (usize, usize),
        /// `(H, W)` of the occluded image.
        input_size: (usize, usize),
        fill: Fill,
        target: TargetSpec,
        /// Unoccluded target score.
        baseline: f32,
    },
    Cam {
        class_index: usize,
        input_size: (usize, usize),
        /// Input pixels per heatmap cell along `(y, x)`.
        scale: (f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub sign: SignConvention,
    pub provenance: Provenance,
}

impl Heatmap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        sign: SignConvention,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "heatmap",
                format!("{height}x{width}"),
                format!("{} values", values.len()),
            ));
        }
        Ok(Heatmap {
            height,
            width,
            values,
            sign,
            provenance,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Position of the largest value; ties go to the first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Values as a `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            Shape::new(1, 1, self.height, self.width),
            self.values.clone(),
        )
        .expect("heatmap dimensions are consistent")
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": [self.height, self.width],
            "sign": self.sign,
            "provenance": self.provenance,
        })
    }
}
