//! Image I/O and rendering of attribution maps and heatmaps.

mod pnm;
mod render;

pub use pnm::{read_image, write_image, write_tensor_image};
pub use render::{
    percentile_abs, reduce_channels, render, render_heatmap, Colormap, Normalization, RenderSpec,
    Upsample,
};

use crate::error::{Error, Result};

/// 8-bit RGB pixels, interleaved, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "rgb image",
                format!("{width}x{height}x3 bytes"),
                format!("{} bytes", data.len()),
            ));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}
