//! A tiny hand-built network and image for demos and end-to-end tests.
//!
//! The network detects a plus-shaped cross on a 12x12 grayscale image. Its
//! first channel is a matched filter that fires only where a full cross is
//! centred; the second is a local mean. Class 0 ("cross") leans almost
//! entirely on the detector, class 1 ("other") on brightness.
//!
//! The same builders produce `fixtures/cross_detector.fvnet` and
//! `fixtures/planted_cross.pgm`.

use crate::network::{Conv, Dense, Layer, Network};
use crate::tensor::{Shape, Tensor};

pub const CROSS_SIZE: usize = 12;
/// Centre `(y, x)` of the cross in [`planted_cross`].
pub const CROSS_CENTRE: (usize, usize) = (5, 6);

pub fn cross_detector() -> Network {
    #[rustfmt::skip]
    let template = [
        -1.0, 1.0, -1.0,
         1.0, 1.0,  1.0,
        -1.0, 1.0, -1.0,
    ];
    let mut kernel = template.to_vec();
    kernel.extend(std::iter::repeat_n(1.0 / 9.0, 9));
    let conv = Conv::new(
        Tensor::new(Shape::new(2, 1, 3, 3), kernel).expect("kernel size"),
        vec![-4.0, 0.0],
        (1, 1),
        (1, 1),
    )
    .expect("valid conv");
    let dense = Dense::new(2, 2, vec![100.0, 1.0, 0.0, 0.5], vec![0.0, 0.1]).expect("valid dense");
    Network::new(
        (1, CROSS_SIZE, CROSS_SIZE),
        vec![
            Layer::Conv(conv),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Flatten,
            Layer::Dense(dense),
            Layer::Softmax,
        ],
        Some(vec!["cross".into(), "other".into()]),
    )
    .expect("valid network")
}

/// White plus sign (value 1) centred at [`CROSS_CENTRE`] on black.
pub fn planted_cross() -> Tensor {
    let (cy, cx) = CROSS_CENTRE;
    Tensor::from_fn(Shape::new(1, 1, CROSS_SIZE, CROSS_SIZE), |_, _, y, x| {
        let on_cross = (y == cy && x.abs_diff(cx) <= 1) || (x == cx && y.abs_diff(cy) <= 1);
        if on_cross {
            1.0
        } else {
            0.0
        }
    })
}
