//! Feature visualization for sequential convolutional networks.
//!
//! The crate runs small CNNs on the CPU and explains their decisions three
//! ways:
//!
//! * [`occlusion`] slides a box over the input and records how much a target
//!   score drops;
//! * [`attribution`] walks a recorded forward pass backwards with a chosen
//!   rule per layer type (gradient, deconvnet, guided backprop, epsilon
//!   relevance propagation) and computes class activation maps;
//! * [`reconstruction`] optimises an input by gradient ascent, either to excite
//!   a unit or to reproduce an internal representation, with L_p and total
//!   variation regularisers.
//!
//! [`viz`] reads and writes PPM/PGM images and renders maps to colour images.

pub mod attribution;
pub mod error;
pub mod fixtures;
pub mod heatmap;
pub mod network;
pub mod occlusion;
pub mod reconstruction;
pub mod tensor;
pub mod viz;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use network::{class_score, forward, load_network, save_network, ForwardTape, Layer, Network};
pub use tensor::{Shape, Tensor};
