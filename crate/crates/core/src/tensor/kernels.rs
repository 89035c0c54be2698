//! Convolution and pooling kernels with their input adjoints.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding.
//! Output extents must come out as exact integers; there are no rounding
//! modes.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool`].
///
/// `indices[o]` is the flat index into the pooled input of the element that
/// won output position `o`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Switches {
    input_shape: Shape,
    output_shape: Shape,
    window: (usize, usize),
    stride: (usize, usize),
    indices: Vec<usize>,
}

impl Switches {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.output_shape
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Checks that the switch for output `o` lies inside o's pooling window.
    fn check(&self, o: usize) -> Result<usize> {
        let idx = self.indices[o];
        if idx >= self.input_shape.len() {
            return Err(Error::Invariant(format!(
                "switch {idx} outside input of {} elements",
                self.input_shape.len()
            )));
        }
        let (n, c, oy, ox) = self.output_shape.unravel(o);
        let (sn, sc, iy, ix) = self.input_shape.unravel(idx);
        let y0 = oy * self.stride.0;
        let x0 = ox * self.stride.1;
        let inside = sn == n
            && sc == c
            && (y0..y0 + self.window.0).contains(&iy)
            && (x0..x0 + self.window.1).contains(&ix);
        if !inside {
            return Err(Error::Invariant(format!(
                "switch for output {o} points outside its pooling window"
            )));
        }
        Ok(idx)
    }
}

fn output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    axis: &str,
) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "{axis}: window and stride must be positive (window {kernel}, stride {stride})"
        )));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Config(format!(
            "{axis}: window {kernel} exceeds padded extent {padded}"
        )));
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "{axis}: output extent ({padded} - {kernel}) / {stride} + 1 is not an integer"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub(crate) fn conv_output_shape(
    input: Shape,
    kernel: Shape,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Shape> {
    if input.c != kernel.c {
        return Err(Error::shape("conv2d input channels", kernel.c, input.c));
    }
    let oh = output_extent(input.h, kernel.h, stride.0, pad.0, "height")?;
    let ow = output_extent(input.w, kernel.w, stride.1, pad.1, "width")?;
    Ok(Shape::new(input.n, kernel.n, oh, ow))
}

/// 2-D cross-correlation.
///
/// `kernel` is laid out `(k_out, c_in, kh, kw)`; `bias` has `k_out` entries.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    let os = conv_output_shape(is, ks, stride, pad)?;
    if bias.len() != ks.n {
        return Err(Error::shape("conv2d bias", ks.n, bias.len()));
    }
    let x = input.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(os.len());
    for n in 0..os.n {
        for ko in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = bias[ko] as f64;
                    for ci in 0..ks.c {
                        for ky in 0..ks.h {
                            let Some(iy) = (oy * stride.0 + ky).checked_sub(pad.0) else {
                                continue;
                            };
                            if iy >= is.h {
                                continue;
                            }
                            for kx in 0..ks.w {
                                let Some(ix) = (ox * stride.1 + kx).checked_sub(pad.1) else {
                                    continue;
                                };
                                if ix >= is.w {
                                    continue;
                                }
                                acc += x[is.index(n, ci, iy, ix)] as f64
                                    * k[ks.index(ko, ci, ky, kx)] as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Adjoint of [`conv2d`] with respect to its input (bias ignored).
pub fn conv2d_input_grad(
    kernel: &Tensor,
    upstream: &Tensor,
    input_shape: Shape,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor> {
    let ks = kernel.shape();
    let os = conv_output_shape(input_shape, ks, stride, pad)?;
    upstream.expect_shape(os, "conv2d_input_grad upstream")?;
    let g = upstream.data();
    let k = kernel.data();
    let is = input_shape;
    let mut acc = vec![0.0f64; is.len()];
    for n in 0..os.n {
        for ko in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let gv = g[os.index(n, ko, oy, ox)] as f64;
                    if gv == 0.0 {
                        continue;
                    }
                    for ci in 0..ks.c {
                        for ky in 0..ks.h {
                            let Some(iy) = (oy * stride.0 + ky).checked_sub(pad.0) else {
                                continue;
                            };
                            if iy >= is.h {
                                continue;
                            }
                            for kx in 0..ks.w {
                                let Some(ix) = (ox * stride.1 + kx).checked_sub(pad.1) else {
                                    continue;
                                };
                                if ix >= is.w {
                                    continue;
                                }
                                acc[is.index(n, ci, iy, ix)] +=
                                    gv * k[ks.index(ko, ci, ky, kx)] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(is, acc.into_iter().map(|v| v as f32).collect())
}

pub(crate) fn pool_output_shape(
    input: Shape,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Shape> {
    let oh = output_extent(input.h, window.0, stride.0, 0, "height")?;
    let ow = output_extent(input.w, window.1, stride.1, 0, "width")?;
    Ok(Shape::new(input.n, input.c, oh, ow))
}

/// Max pooling. Ties go to the first element in row-major window order.
pub fn maxpool(
    input: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor, Switches)> {
    let is = input.shape();
    let os = pool_output_shape(is, window, stride)?;
    let x = input.data();
    let mut values = Vec::with_capacity(os.len());
    let mut indices = Vec::with_capacity(os.len());
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = is.index(n, c, oy * stride.0, ox * stride.1);
                    for ky in 0..window.0 {
                        for kx in 0..window.1 {
                            let i = is.index(n, c, oy * stride.0 + ky, ox * stride.1 + kx);
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    values.push(x[best]);
                    indices.push(best);
                }
            }
        }
    }
    let switches = Switches {
        input_shape: is,
        output_shape: os,
        window,
        stride,
        indices,
    };
    Ok((Tensor::new(os, values)?, switches))
}

/// Scatters `upstream` back to the recorded argmax positions.
///
/// Overlapping windows accumulate; every other position is zero.
pub fn maxunpool(upstream: &Tensor, switches: &Switches, input_shape: Shape) -> Result<Tensor> {
    upstream.expect_shape(switches.output_shape, "maxunpool upstream")?;
    if input_shape != switches.input_shape {
        return Err(Error::shape(
            "maxunpool input shape",
            switches.input_shape,
            input_shape,
        ));
    }
    let mut acc = vec![0.0f64; input_shape.len()];
    for (o, &g) in upstream.data().iter().enumerate() {
        let idx = switches.check(o)?;
        acc[idx] += g as f64;
    }
    Tensor::new(input_shape, acc.into_iter().map(|v| v as f32).collect())
}

/// Average pooling over `window` with `stride`.
pub fn avgpool(input: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let is = input.shape();
    let os = pool_output_shape(is, window, stride)?;
    let x = input.data();
    let count = (window.0 * window.1) as f64;
    let mut out = Vec::with_capacity(os.len());
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = 0.0f64;
                    for ky in 0..window.0 {
                        for kx in 0..window.1 {
                            acc += x[is.index(n, c, oy * stride.0 + ky, ox * stride.1 + kx)] as f64;
                        }
                    }
                    out.push((acc / count) as f32);
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Mean over each channel's whole spatial plane; output is `(n, c, 1, 1)`.
pub fn global_avgpool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    avgpool(input, (s.h, s.w), (1, 1))
}

/// Adjoint of [`avgpool`]: each upstream value is spread uniformly over its window.
pub fn avgpool_backward(
    upstream: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
    input_shape: Shape,
) -> Result<Tensor> {
    let os = pool_output_shape(input_shape, window, stride)?;
    upstream.expect_shape(os, "avgpool_backward upstream")?;
    let count = (window.0 * window.1) as f64;
    let g = upstream.data();
    let mut acc = vec![0.0f64; input_shape.len()];
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let share = g[os.index(n, c, oy, ox)] as f64 / count;
                    for ky in 0..window.0 {
                        for kx in 0..window.1 {
                            acc[input_shape.index(n, c, oy * stride.0 + ky, ox * stride.1 + kx)] +=
                                share;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, acc.into_iter().map(|v| v as f32).collect())
}
