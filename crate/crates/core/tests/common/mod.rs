//! Shared test helpers: random sequential networks and an independent f64
//! reference forward pass used as a finite-difference oracle.

#![allow(dead_code)]

use featviz::attribution::TargetSpec;
use featviz::network::{Conv, Dense, Layer, Network};
use featviz::occlusion::{Fill, OcclusionConfig};
use featviz::{forward, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Conv,
    Relu,
    LeakyRelu,
    MaxPool,
    AvgPool,
    Dense,
}

pub const ALL_KINDS: &[Kind] = &[
    Kind::Conv,
    Kind::Relu,
    Kind::LeakyRelu,
    Kind::MaxPool,
    Kind::AvgPool,
    Kind::Dense,
];

#[derive(Clone, Copy, Debug)]
pub struct NetGen {
    pub kinds: &'static [Kind],
    pub layers: (usize, usize),
    pub max_channels: usize,
    pub max_size: usize,
    pub bias: bool,
}

impl Default for NetGen {
    fn default() -> Self {
        NetGen {
            kinds: ALL_KINDS,
            layers: (2, 5),
            max_channels: 3,
            max_size: 16,
            bias: true,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_conv(rng: &mut ChaCha8Rng, s: Shape, bias: bool) -> Option<Layer> {
    for _ in 0..20 {
        let k = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let pad = (rng.gen_range(0..=1), rng.gen_range(0..=1));
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let fits = |extent: usize, k: usize, p: usize, st: usize| {
            extent + 2 * p >= k && (extent + 2 * p - k).is_multiple_of(st) && p < k
        };
        if !(fits(s.h, k.0, pad.0, stride.0) && fits(s.w, k.1, pad.1, stride.1)) {
            continue;
        }
        let out = rng.gen_range(1..=4);
        let fan_in = s.c * k.0 * k.1;
        let scale = 1.5 / (fan_in as f32).sqrt();
        let kernel = Tensor::new(
            Shape::new(out, s.c, k.0, k.1),
            uniform(rng, out * fan_in, scale),
        )
        .unwrap();
        let b = if bias {
            uniform(rng, out, 0.1)
        } else {
            vec![0.0; out]
        };
        return Some(Layer::Conv(Conv::new(kernel, b, stride, pad).unwrap()));
    }
    None
}

fn random_pool(rng: &mut ChaCha8Rng, s: Shape, max: bool) -> Option<Layer> {
    let options = [
        ((2, 2), (2, 2)),
        ((2, 2), (1, 1)),
        ((3, 3), (1, 1)),
        ((1, 2), (1, 2)),
    ];
    let start = rng.gen_range(0..options.len());
    for i in 0..options.len() {
        let (window, stride) = options[(start + i) % options.len()];
        let ok =
            |extent: usize, k: usize, st: usize| extent >= k && (extent - k).is_multiple_of(st);
        if ok(s.h, window.0, stride.0) && ok(s.w, window.1, stride.1) {
            return Some(if max {
                Layer::MaxPool { window, stride }
            } else {
                Layer::AvgPool { window, stride }
            });
        }
    }
    None
}

/// Random sequential network. The first layer is always a convolution; the
/// last is always linear so the output is not identically clipped.
pub fn random_net(rng: &mut ChaCha8Rng, gen: NetGen) -> Network {
    loop {
        let c = rng.gen_range(1..=gen.max_channels);
        let h = rng.gen_range(4..=gen.max_size);
        let w = rng.gen_range(4..=gen.max_size);
        let depth = rng.gen_range(gen.layers.0..=gen.layers.1);
        let mut shape = Shape::new(1, c, h, w);
        let mut layers = Vec::new();
        let mut ok = true;
        for i in 0..depth {
            let kind = if i == 0 {
                Kind::Conv
            } else if i == depth - 1 {
                if gen.kinds.contains(&Kind::Dense) && rng.gen_bool(0.5) {
                    Kind::Dense
                } else {
                    Kind::Conv
                }
            } else {
                gen.kinds[rng.gen_range(0..gen.kinds.len())]
            };
            let layer = match kind {
                Kind::Conv => random_conv(rng, shape, gen.bias),
                Kind::Relu => Some(Layer::Relu),
                Kind::LeakyRelu => Some(Layer::LeakyRelu {
                    alpha: rng.gen_range(0.01..0.3),
                }),
                Kind::MaxPool => random_pool(rng, shape, true),
                Kind::AvgPool => random_pool(rng, shape, false),
                Kind::Dense => {
                    let inputs = shape.row_len();
                    let out = rng.gen_range(1..=5);
                    let scale = 1.5 / (inputs as f32).sqrt();
                    let b = if gen.bias {
                        uniform(rng, out, 0.1)
                    } else {
                        vec![0.0; out]
                    };
                    Some(Layer::Dense(
                        Dense::new(out, inputs, uniform(rng, out * inputs, scale), b).unwrap(),
                    ))
                }
            };
            let Some(layer) = layer else {
                ok = false;
                break;
            };
            shape = layer.output_shape(shape).unwrap();
            layers.push(layer);
        }
        if ok {
            return Network::new((c, h, w), layers, None).unwrap();
        }
    }
}

pub fn random_input(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Plain f64 activation: `(c, h, w)` plus values.
#[derive(Clone, Debug)]
pub struct Act {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Act {
    fn at(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            0.0
        } else {
            self.v[(c * self.h + y as usize) * self.w + x as usize]
        }
    }
}

fn pool(a: &Act, window: (usize, usize), stride: (usize, usize), max: bool) -> Act {
    let oh = (a.h - window.0) / stride.0 + 1;
    let ow = (a.w - window.1) / stride.1 + 1;
    let mut v = Vec::new();
    for c in 0..a.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut cells = Vec::new();
                for dy in 0..window.0 {
                    for dx in 0..window.1 {
                        cells.push(a.at(
                            c,
                            (oy * stride.0 + dy) as isize,
                            (ox * stride.1 + dx) as isize,
                        ));
                    }
                }
                v.push(if max {
                    cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    cells.iter().sum::<f64>() / cells.len() as f64
                });
            }
        }
    }
    Act {
        c: a.c,
        h: oh,
        w: ow,
        v,
    }
}

/// Applies one layer in f64 with direct loops.
pub fn reference_layer(layer: &Layer, a: &Act) -> Act {
    match layer {
        Layer::Conv(conv) => {
            let k = conv.kernel().shape();
            let (sy, sx) = conv.stride;
            let (py, px) = conv.pad;
            let oh = (a.h + 2 * py - k.h) / sy + 1;
            let ow = (a.w + 2 * px - k.w) / sx + 1;
            let mut v = Vec::new();
            for o in 0..k.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias()[o] as f64;
                        for i in 0..k.c {
                            for ky in 0..k.h {
                                for kx in 0..k.w {
                                    let y = (oy * sy + ky) as isize - py as isize;
                                    let x = (ox * sx + kx) as isize - px as isize;
                                    acc += conv.kernel().get(o, i, ky, kx) as f64 * a.at(i, y, x);
                                }
                            }
                        }
                        v.push(acc);
                    }
                }
            }
            Act {
                c: k.n,
                h: oh,
                w: ow,
                v,
            }
        }
        Layer::Dense(d) => {
            let v = (0..d.outputs())
                .map(|o| {
                    d.bias()[o] as f64
                        + d.row(o)
                            .iter()
                            .zip(&a.v)
                            .map(|(&w, &x)| w as f64 * x)
                            .sum::<f64>()
                })
                .collect();
            Act {
                c: d.outputs(),
                h: 1,
                w: 1,
                v,
            }
        }
        Layer::Relu => Act {
            v: a.v.iter().map(|&x| x.max(0.0)).collect(),
            ..a.clone()
        },
        Layer::LeakyRelu { alpha } => Act {
            v: a.v
                .iter()
                .map(|&x| if x > 0.0 { x } else { *alpha as f64 * x })
                .collect(),
            ..a.clone()
        },
        Layer::MaxPool { window, stride } => pool(a, *window, *stride, true),
        Layer::AvgPool { window, stride } => pool(a, *window, *stride, false),
        Layer::GlobalAvgPool => pool(a, (a.h, a.w), (1, 1), false),
        Layer::Flatten => Act {
            c: a.v.len(),
            h: 1,
            w: 1,
            v: a.v.clone(),
        },
        Layer::Softmax => {
            let m = a.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = a.v.iter().map(|x| (x - m).exp()).collect();
            let total: f64 = e.iter().sum();
            Act {
                v: e.iter().map(|x| x / total).collect(),
                ..a.clone()
            }
        }
    }
}

/// f64 forward up to activation `upto` (0 = input).
pub fn reference_forward(net: &Network, x: &[f64], upto: usize) -> Vec<f64> {
    let (c, h, w) = net.input_dims();
    let mut a = Act {
        c,
        h,
        w,
        v: x.to_vec(),
    };
    for layer in &net.layers()[..upto] {
        a = reference_layer(layer, &a);
    }
    a.v
}

/// Central finite differences of activation element `offset` at `upto`.
pub fn fd_gradient(net: &Network, x: &Tensor, upto: usize, offset: usize, h: f64) -> Vec<f64> {
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = reference_forward(net, &plus, upto)[offset];
            let fm = reference_forward(net, &minus, upto)[offset];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; zero when both are zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(floor)
}

/// Straight-line reimplementation of the sweep.
pub fn naive_occlusion(
    net: &Network,
    x: &Tensor,
    cfg: &OcclusionConfig,
) -> (usize, usize, Vec<f32>) {
    let r = cfg.target.resolve(net).unwrap();
    let score = |t: &Tensor| forward(net, t).unwrap().activation(r.activation).data()[r.offset];
    let base = score(x);
    let s = x.shape();
    let (bh, bw) = cfg.box_size;
    let (sy, sx) = cfg.stride;
    let (mut rows, mut cols, mut out) = (0, 0, Vec::new());
    let mut index = 0;
    let mut y = 0;
    while y + bh <= s.h {
        rows += 1;
        cols = 0;
        let mut x0 = 0;
        while x0 + bw <= s.w {
            cols += 1;
            let mut t = x.clone();
            let noise = match cfg.fill {
                Fill::Random { seed, low, high } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(index as u64);
                    (0..s.c * bh * bw)
                        .map(|_| rng.gen_range(low..high))
                        .collect()
                }
                _ => Vec::new(),
            };
            let mut k = 0;
            for c in 0..s.c {
                for dy in 0..bh {
                    for dx in 0..bw {
                        let v = match &cfg.fill {
                            Fill::Solid { values } if values.len() == 1 => values[0],
                            Fill::Solid { values } => values[c],
                            Fill::Random { .. } => noise[k],
                        };
                        t.set(0, c, y + dy, x0 + dx, v);
                        k += 1;
                    }
                }
            }
            out.push(base - score(&t));
            index += 1;
            x0 += sx;
        }
        y += sy;
    }
    (rows, cols, out)
}

/// Random box, stride, fill and class target for `net`.
pub fn random_occlusion_config(
    rng: &mut ChaCha8Rng,
    net: &Network,
    h: usize,
    w: usize,
) -> OcclusionConfig {
    let c = net.input_dims().0;
    let box_size = (rng.gen_range(1..=h.min(5)), rng.gen_range(1..=w.min(5)));
    let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let fill = match rng.gen_range(0..3) {
        0 => Fill::gray(),
        1 => Fill::Solid {
            values: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
        },
        _ => Fill::Random {
            seed: rng.gen(),
            low: 0.0,
            high: 1.0,
        },
    };
    let target = TargetSpec::class(rng.gen_range(0..net.num_outputs()));
    OcclusionConfig::new(box_size, stride, fill, target)
}

/// Random conv trunk followed by a GAP -> Flatten -> Dense -> Softmax tail.
pub fn gap_tail_net(rng: &mut ChaCha8Rng) -> Network {
    let trunk = random_net(
        rng,
        NetGen {
            kinds: &[Kind::Conv, Kind::Relu, Kind::MaxPool, Kind::AvgPool],
            layers: (1, 3),
            ..NetGen::default()
        },
    );
    let mut shape = trunk.input_shape();
    for layer in trunk.layers() {
        shape = layer.output_shape(shape).unwrap();
    }
    let classes = rng.gen_range(1..=4);
    let weights = (0..classes * shape.c)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let bias = (0..classes).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut layers = trunk.layers().to_vec();
    layers.extend([
        Layer::GlobalAvgPool,
        Layer::Flatten,
        Layer::Dense(Dense::new(classes, shape.c, weights, bias).unwrap()),
        Layer::Softmax,
    ]);
    Network::new(trunk.input_dims(), layers, None).unwrap()
}

/// Oracles for the reconstruction regularisers.
pub fn lp_value(x: &[f64], p: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(p)).sum()
}

pub fn tv_value(x: &[f64], s: Shape) -> f64 {
    let at = |c: usize, y: usize, xx: usize| x[(c * s.h + y) * s.w + xx];
    let mut total = 0.0;
    for c in 0..s.c {
        for y in 0..s.h {
            for xx in 0..s.w {
                let dx = if xx + 1 < s.w {
                    at(c, y, xx + 1) - at(c, y, xx)
                } else {
                    0.0
                };
                let dy = if y + 1 < s.h {
                    at(c, y + 1, xx) - at(c, y, xx)
                } else {
                    0.0
                };
                total += (dx * dx + dy * dy + 1e-16).sqrt();
            }
        }
    }
    total
}

pub fn fd(x: &Tensor, f: impl Fn(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            let mut m = base.clone();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}
