//! Occlusion sweeps: cover part of the input, re-run the network, record how
//! much the target score drops.
//!
//! Boxes are anchored inside the image on the grid
//! `y = 0, sy, 2*sy, ...` while `y + bh <= H` (same for `x`), so the heatmap is
//! `floor((H - bh) / sy) + 1` by `floor((W - bw) / sx) + 1`. Fill values
//! replace raw input values; any preprocessing the model expects (mean
//! subtraction, scaling) is the caller's job.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::TargetSpec;
use crate::error::{Error, Result};
use crate::heatmap::{Heatmap, Provenance, SignConvention};
use crate::network::{forward, Network};
use crate::tensor::Tensor;

/// What goes inside the occluding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fill {
    /// One value per channel, or a single value for every channel.
    Solid { values: Vec<f32> },
    /// Uniform noise in `[low, high)`, drawn from a stream keyed by
    /// `(seed, grid index)`.
    Random { seed: u64, low: f32, high: f32 },
}

impl Fill {
    /// Mid-gray on `[0, 1]` inputs.
    pub fn gray() -> Self {
        Fill::Solid { values: vec![0.5] }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        match self {
            Fill::Solid { values } => {
                if values.len() != 1 && values.len() != channels {
                    return Err(Error::Config(format!(
                        "solid fill has {} values for {channels} channels",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("solid fill values must be finite".into()));
                }
            }
            Fill::Random { low, high, .. } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::Config(format!(
                        "random fill needs finite low < high, got [{low}, {high})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Random patch for grid position `grid_index`, laid out `(c, bh, bw)`.
///
/// The stream is ChaCha8 seeded with `seed`, stream id `grid_index`; values are
/// drawn channel-major, then row-major, so each position's patch is
/// independent of evaluation order.
pub fn random_patch(
    seed: u64,
    grid_index: usize,
    channels: usize,
    box_size: (usize, usize),
    low: f32,
    high: f32,
) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(grid_index as u64);
    (0..channels * box_size.0 * box_size.1)
        .map(|_| rng.gen_range(low..high))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    /// `(bh, bw)` in pixels.
    pub box_size: (usize, usize),
    /// `(sy, sx)` in pixels.
    pub stride: (usize, usize),
    pub fill: Fill,
    pub target: TargetSpec,
    /// Threads used to evaluate grid positions; 0 means one per available core.
    /// Results do not depend on this value.
    #[serde(skip)]
    pub workers: usize,
}

impl OcclusionConfig {
    pub fn new(
        box_size: (usize, usize),
        stride: (usize, usize),
        fill: Fill,
        target: TargetSpec,
    ) -> Self {
        OcclusionConfig {
            box_size,
            stride,
            fill,
            target,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Top-left corners of every box position, row-major.
///
/// Empty when the box does not fit or a stride is zero.
pub fn occlusion_positions(
    input_size: (usize, usize),
    box_size: (usize, usize),
    stride: (usize, usize),
) -> Vec<(usize, usize)> {
    let axis = |extent: usize, size: usize, step: usize| -> Vec<usize> {
        if size == 0 || step == 0 || size > extent {
            return Vec::new();
        }
        (0..=extent - size).step_by(step).collect()
    };
    let ys = axis(input_size.0, box_size.0, stride.0);
    let xs = axis(input_size.1, box_size.1, stride.1);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect()
}

/// Copy of `input` with the box at `(y0, x0)` filled.
fn occlude(
    input: &Tensor,
    (y0, x0): (usize, usize),
    box_size: (usize, usize),
    fill: &Fill,
    grid_index: usize,
) -> Tensor {
    let s = input.shape();
    let mut out = input.clone();
    let patch = match fill {
        Fill::Solid { .. } => None,
        Fill::Random { seed, low, high } => {
            Some(random_patch(*seed, grid_index, s.c, box_size, *low, *high))
        }
    };
    for c in 0..s.c {
        for dy in 0..box_size.0 {
            for dx in 0..box_size.1 {
                let v = match (&patch, fill) {
                    (Some(p), _) => p[(c * box_size.0 + dy) * box_size.1 + dx],
                    (None, Fill::Solid { values }) => values[if values.len() == 1 { 0 } else { c }],
                    (None, Fill::Random { .. }) => unreachable!(),
                };
                out.set(0, c, y0 + dy, x0 + dx, v);
            }
        }
    }
    out
}

/// Sweeps the occluding box over `input` and returns the score-drop heatmap.
pub fn occlusion_map(
    network: &Network,
    input: &Tensor,
    config: &OcclusionConfig,
) -> Result<Heatmap> {
    let s = input.shape();
    if s.n != 1 {
        return Err(Error::shape("occlusion input", network.input_shape(), s));
    }
    let (bh, bw) = config.box_size;
    let (sy, sx) = config.stride;
    if bh == 0 || bw == 0 || sy == 0 || sx == 0 {
        return Err(Error::Config(format!(
            "box {bh}x{bw} and stride {sy}x{sx} must be at least 1"
        )));
    }
    if bh > s.h || bw > s.w {
        return Err(Error::Config(format!(
            "box {bh}x{bw} larger than image {}x{}",
            s.h, s.w
        )));
    }
    config.fill.validate(s.c)?;
    let target = config.target.resolve(network)?;

    let baseline_tape = forward(network, input)?;
    let baseline = baseline_tape.activation(target.activation).data()[target.offset];

    let positions = occlusion_positions((s.h, s.w), config.box_size, config.stride);
    let grid = ((s.h - bh) / sy + 1, (s.w - bw) / sx + 1);
    debug_assert_eq!(positions.len(), grid.0 * grid.1);

    let score_drop = |(index, &corner): (usize, &(usize, usize))| -> Result<f32> {
        let occluded = occlude(input, corner, config.box_size, &config.fill, index);
        let tape = forward(network, &occluded)?;
        Ok(baseline - tape.activation(target.activation).data()[target.offset])
    };

    let values: Vec<f32> = if config.workers == 1 {
        positions
            .iter()
            .enumerate()
            .map(score_drop)
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            positions
                .par_iter()
                .enumerate()
                .map(score_drop)
                .collect::<Result<_>>()
        })?
    };

    Heatmap::new(
        grid.0,
        grid.1,
        values,
        SignConvention::ScoreDrop,
        Provenance::Occlusion {
            box_size: config.box_size,
            stride: config.stride,
            input_size: (s.h, s.w),
            fill: config.fill.clone(),
            target: config.target,
            baseline,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Conv, Layer};
    use crate::tensor::Shape;

    #[test]
    fn positions_examples() {
        assert_eq!(
            occlusion_positions((4, 4), (2, 2), (2, 2)),
            vec![(0, 0), (0, 2), (2, 0), (2, 2)]
        );
        assert_eq!(occlusion_positions((4, 4), (4, 4), (1, 1)), vec![(0, 0)]);
        let ys: Vec<usize> = occlusion_positions((4, 4), (2, 2), (3, 1))
            .into_iter()
            .map(|(y, _)| y)
            .collect();
        assert!(ys.iter().all(|&y| y == 0));
        assert!(occlusion_positions((3, 3), (4, 1), (1, 1)).is_empty());
    }

    fn constant_net() -> Network {
        let conv = Conv::new(
            Tensor::zeros(Shape::new(1, 1, 3, 3)),
            vec![0.75],
            (1, 1),
            (1, 1),
        )
        .unwrap();
        Network::new((1, 6, 6), vec![Layer::Conv(conv), Layer::Flatten], None).unwrap()
    }

    #[test]
    fn constant_network_gives_zero_heatmap() {
        let x = Tensor::from_fn(Shape::new(1, 1, 6, 6), |_, _, y, x| {
            (y * 6 + x) as f32 / 36.0
        });
        for fill in [
            Fill::gray(),
            Fill::Random {
                seed: 3,
                low: 0.0,
                high: 1.0,
            },
        ] {
            let cfg = OcclusionConfig::new((2, 3), (2, 1), fill, TargetSpec::class(7));
            let map = occlusion_map(&constant_net(), &x, &cfg).unwrap();
            assert_eq!((map.height(), map.width()), (3, 4));
            assert!(map.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pixel_selector_closed_form() {
        let conv = Conv::new(
            Tensor::new(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap(),
            vec![0.0],
            (1, 1),
            (0, 0),
        )
        .unwrap();
        let net = Network::new((1, 4, 4), vec![Layer::Conv(conv), Layer::Flatten], None).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| {
            0.3 + (y * 4 + x) as f32
        });
        let cfg = OcclusionConfig::new(
            (2, 2),
            (2, 2),
            Fill::Solid { values: vec![0.0] },
            TargetSpec::class(0),
        );
        let map = occlusion_map(&net, &x, &cfg).unwrap();
        assert_eq!(map.values(), &[0.3, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn config_errors() {
        let x = Tensor::zeros(Shape::new(1, 1, 6, 6));
        let net = constant_net();
        let bad = [
            OcclusionConfig::new((7, 1), (1, 1), Fill::gray(), TargetSpec::class(0)),
            OcclusionConfig::new((0, 1), (1, 1), Fill::gray(), TargetSpec::class(0)),
            OcclusionConfig::new((1, 1), (1, 0), Fill::gray(), TargetSpec::class(0)),
            OcclusionConfig::new(
                (1, 1),
                (1, 1),
                Fill::Solid {
                    values: vec![0.0, 1.0],
                },
                TargetSpec::class(0),
            ),
            OcclusionConfig::new(
                (1, 1),
                (1, 1),
                Fill::Random {
                    seed: 0,
                    low: 1.0,
                    high: 1.0,
                },
                TargetSpec::class(0),
            ),
        ];
        for cfg in bad {
            assert!(
                matches!(occlusion_map(&net, &x, &cfg), Err(Error::Config(_))),
                "{cfg:?}"
            );
        }
        let cfg = OcclusionConfig::new((1, 1), (1, 1), Fill::gray(), TargetSpec::class(36));
        assert!(matches!(
            occlusion_map(&net, &x, &cfg),
            Err(Error::Target(_))
        ));
    }

    #[test]
    fn random_patch_is_keyed_by_position() {
        let a = random_patch(9, 0, 2, (2, 2), -1.0, 1.0);
        let b = random_patch(9, 1, 2, (2, 2), -1.0, 1.0);
        assert_eq!(a, random_patch(9, 0, 2, (2, 2), -1.0, 1.0));
        assert_ne!(a, b);
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
