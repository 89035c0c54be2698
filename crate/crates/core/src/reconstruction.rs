//! Input reconstruction by gradient ascent in input space.
//!
//! Two objectives: drive one unit as high as possible, or reproduce a
//! reference representation at some layer (squared Euclidean loss). Both are
//! regularised with an L_p penalty and a smoothed total-variation penalty:
//!
//! ```text
//! J(x) = objective(x) - lambda_p * sum |x_i|^p - lambda_tv * TV(x)
//! x <- x + step_size * grad J(x)
//! ```
//!
//! Objective gradients come from the attribution engine in plain
//! backprop/gradient mode. There is no clamping, jitter or momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{propagate, ConvRule, ReluRule, TargetSpec};
use crate::error::{Error, Result};
use crate::network::{forward, Layer, Network};
use crate::tensor::Tensor;

/// Smoothing inside the total-variation square root.
pub const TV_DELTA: f64 = 1e-8;

/// `sum |x_i|^p` and its gradient `p |x_i|^(p-1) sign(x_i)` (0 at `x_i = 0`).
pub fn lp_penalty(x: &Tensor, p: f32) -> Result<(f64, Tensor)> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("L_p exponent must be >= 1, got {p}")));
    }
    let p = p as f64;
    let mut value = 0.0;
    let grad = x.map(|v| {
        let v = v as f64;
        if v == 0.0 {
            return 0.0;
        }
        (p * v.abs().powf(p - 1.0) * v.signum()) as f32
    });
    for &v in x.data() {
        value += (v as f64).abs().powf(p);
    }
    Ok((value, grad))
}

/// Smoothed total variation and its exact gradient.
///
/// Per channel plane, summed over every pixel:
/// `sqrt(dy^2 + dx^2 + delta^2)` with forward differences `dy`, `dx` that are
/// zero past the last row or column.
pub fn tv_penalty(x: &Tensor) -> (f64, Tensor) {
    let s = x.shape();
    let data = x.data();
    let delta2 = TV_DELTA * TV_DELTA;
    let mut value = 0.0;
    let mut grad = vec![0.0f64; x.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let i = s.index(n, c, y, xx);
                    let here = data[i] as f64;
                    let dy = if y + 1 < s.h {
                        data[s.index(n, c, y + 1, xx)] as f64 - here
                    } else {
                        0.0
                    };
                    let dx = if xx + 1 < s.w {
                        data[s.index(n, c, y, xx + 1)] as f64 - here
                    } else {
                        0.0
                    };
                    let mag = (dy * dy + dx * dx + delta2).sqrt();
                    value += mag;
                    grad[i] -= (dy + dx) / mag;
                    if y + 1 < s.h {
                        grad[s.index(n, c, y + 1, xx)] += dy / mag;
                    }
                    if xx + 1 < s.w {
                        grad[s.index(n, c, y, xx + 1)] += dx / mag;
                    }
                }
            }
        }
    }
    let grad = Tensor::new(s, grad.into_iter().map(|g| g as f32).collect())
        .expect("gradient has the input shape");
    (value, grad)
}

/// What the reconstruction optimises.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Maximise one unit's activation.
    MaximizeUnit { target: TargetSpec },
    /// Minimise `0.5 * |phi(x) - reference|^2` where `phi` is the output of
    /// `layer_index`.
    MatchRepresentation {
        layer_index: usize,
        reference: Tensor,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub lambda_p: f32,
    pub p: f32,
    pub lambda_tv: f32,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            lambda_p: 0.0,
            p: 6.0,
            lambda_tv: 0.0,
        }
    }
}

impl RegConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0 && self.lambda_tv >= 0.0) {
            return Err(Error::Config(format!(
                "regulariser weights must be >= 0 (lambda_p {}, lambda_tv {})",
                self.lambda_p, self.lambda_tv
            )));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!(
                "L_p exponent must be >= 1, got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Starting point of the optimisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Constant {
        value: f32,
    },
    /// Uniform in `[low, high)` from a ChaCha8 stream seeded with `seed`.
    RandomUniform {
        seed: u64,
        low: f32,
        high: f32,
    },
    #[serde(skip)]
    Given(Tensor),
}

impl Init {
    fn build(&self, network: &Network) -> Result<Tensor> {
        let shape = network.input_shape();
        Ok(match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Constant { value } => Tensor::full(shape, *value),
            Init::RandomUniform { seed, low, high } => {
                if low.partial_cmp(high) != Some(std::cmp::Ordering::Less) {
                    return Err(Error::Config(format!(
                        "random init needs low < high, got [{low}, {high})"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(*low..*high))
            }
            Init::Given(t) => {
                t.expect_shape(shape, "reconstruction init")?;
                t.clone()
            }
        })
    }
}

/// Step-size schedule. Constant unless configured otherwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `step_size * decay^step`.
    Exponential { decay: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub steps: usize,
    pub step_size: f32,
    pub init: Init,
    /// Snapshot period; 0 keeps only the final iterate.
    pub record_every: usize,
    #[serde(default)]
    pub schedule: StepSchedule,
}

impl OptConfig {
    pub fn new(steps: usize, step_size: f32, init: Init) -> Self {
        OptConfig {
            steps,
            step_size,
            init,
            record_every: 0,
            schedule: StepSchedule::Constant,
        }
    }

    fn step_size_at(&self, step: usize) -> f32 {
        match self.schedule {
            StepSchedule::Constant => self.step_size,
            StepSchedule::Exponential { decay } => self.step_size * decay.powi(step as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub input: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub final_input: Tensor,
    /// Snapshots at multiples of `record_every`, then the final iterate.
    pub trajectory: Vec<Snapshot>,
    /// Regularised objective `J` at every iterate, including the last.
    pub history: Vec<f64>,
}

fn check_objective(network: &Network, objective: &Objective) -> Result<()> {
    match objective {
        Objective::MaximizeUnit { target } => target.resolve(network).map(|_| ()),
        Objective::MatchRepresentation {
            layer_index,
            reference,
        } => {
            let layers = network.layers();
            if *layer_index >= layers.len() {
                return Err(Error::Target(format!(
                    "layer {layer_index} out of range for {} layers",
                    layers.len()
                )));
            }
            if matches!(layers[*layer_index], Layer::Softmax) {
                return Err(Error::Target(
                    "cannot match a softmax output; use the layer before it".into(),
                ));
            }
            reference.expect_shape(
                network.layer_output_shape(*layer_index),
                "representation reference",
            )
        }
    }
}

/// Objective value and its input gradient (no regularisers).
fn objective_only(network: &Network, objective: &Objective, x: &Tensor) -> Result<(f64, Tensor)> {
    let tape = forward(network, x)?;
    let (start, value, seed) = match objective {
        Objective::MaximizeUnit { target } => {
            let r = target.resolve(network)?;
            let act = tape.activation(r.activation);
            let mut seed = Tensor::zeros(act.shape());
            seed.data_mut()[r.offset] = 1.0;
            (r.activation, act.data()[r.offset] as f64, seed)
        }
        Objective::MatchRepresentation {
            layer_index,
            reference,
        } => {
            let phi = tape.output(*layer_index);
            let diff = reference.zip_map(phi, |r, p| r - p)?;
            let value = -0.5 * diff.dot(&diff)?;
            (layer_index + 1, value, diff)
        }
    };
    let grad = propagate(
        network,
        &tape,
        start,
        seed,
        ReluRule::Backprop,
        ConvRule::Gradient,
    )?;
    Ok((value, grad))
}

/// Regularised objective `J(x)` and its gradient.
pub fn objective_gradient(
    network: &Network,
    objective: &Objective,
    reg: &RegConfig,
    x: &Tensor,
) -> Result<(f64, Tensor)> {
    reg.validate()?;
    check_objective(network, objective)?;
    let (obj, obj_grad) = objective_only(network, objective, x)?;
    let (lp, lp_grad) = lp_penalty(x, reg.p)?;
    let (tv, tv_grad) = tv_penalty(x);
    let (lp_w, tv_w) = (reg.lambda_p as f64, reg.lambda_tv as f64);
    let value = obj - lp_w * lp - tv_w * tv;
    let grad: Vec<f32> = obj_grad
        .data()
        .iter()
        .zip(lp_grad.data())
        .zip(tv_grad.data())
        .map(|((&g, &l), &t)| (g as f64 - lp_w * l as f64 - tv_w * t as f64) as f32)
        .collect();
    Ok((value, Tensor::new(x.shape(), grad)?))
}

/// Runs fixed-step gradient ascent on the regularised objective.
pub fn reconstruct(
    network: &Network,
    objective: &Objective,
    reg: &RegConfig,
    opt: &OptConfig,
) -> Result<Reconstruction> {
    reg.validate()?;
    check_objective(network, objective)?;
    if !(opt.step_size > 0.0 && opt.step_size.is_finite()) {
        return Err(Error::Config(format!(
            "step size must be positive, got {}",
            opt.step_size
        )));
    }
    let mut x = opt.init.build(network)?;
    let mut trajectory = Vec::new();
    let mut history = Vec::with_capacity(opt.steps + 1);
    for step in 0..opt.steps {
        let (value, grad) = objective_gradient(network, objective, reg, &x)?;
        if !value.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite { step });
        }
        history.push(value);
        if opt.record_every > 0 && step % opt.record_every == 0 {
            trajectory.push(Snapshot {
                step,
                input: x.clone(),
            });
        }
        let lr = opt.step_size_at(step);
        for (xi, gi) in x.data_mut().iter_mut().zip(grad.data()) {
            *xi += lr * gi;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { step });
        }
    }
    let (value, _) = objective_gradient(network, objective, reg, &x)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { step: opt.steps });
    }
    history.push(value);
    trajectory.push(Snapshot {
        step: opt.steps,
        input: x.clone(),
    });
    Ok(Reconstruction {
        final_input: x,
        trajectory,
        history,
    })
}
