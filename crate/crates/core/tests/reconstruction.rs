mod common;

use common::{
    fd, lp_value, random_input, random_net, reference_forward, rel_err, tv_value, NetGen,
};
use featviz::attribution::TargetSpec;
use featviz::network::{Dense, Layer, Network};
use featviz::reconstruction::{
    lp_penalty, objective_gradient, reconstruct, tv_penalty, Init, Objective, OptConfig, RegConfig,
};
use featviz::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entries with magnitude in [0.1, 1.5] and random sign, so |x|^p is smooth
/// around every sample.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.1f32..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn assert_close(analytic: &Tensor, numeric: &[f64], tol: f64) {
    let floor = 1e-6 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (&a, &b)) in analytic.data().iter().zip(numeric).enumerate() {
        let e = rel_err(a as f64, b, floor);
        assert!(e <= tol, "entry {i}: analytic {a} vs fd {b} (rel {e})");
    }
}

#[test]
fn lp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for p in [2.0f32, 6.0] {
        for _ in 0..5 {
            let x = away_from_zero(&mut rng, Shape::new(1, 2, 4, 5));
            let (value, grad) = lp_penalty(&x, p).unwrap();
            let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            assert!((value - lp_value(&xs, p as f64)).abs() <= 1e-9 * value.abs().max(1.0));
            assert_close(&grad, &fd(&x, |v| lp_value(v, p as f64), 1e-6), 1e-4);
        }
    }
}

#[test]
fn tv_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let x = away_from_zero(&mut rng, Shape::new(1, 3, 5, 4));
        let (value, grad) = tv_penalty(&x);
        let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        assert!((value - tv_value(&xs, x.shape())).abs() <= 1e-9 * value.max(1.0));
        assert_close(&grad, &fd(&x, |v| tv_value(v, x.shape()), 1e-6), 1e-4);
    }
}

#[test]
fn regularised_objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let reg = RegConfig {
        lambda_p: 0.05,
        p: 2.0,
        lambda_tv: 0.02,
    };
    let (mut good, mut total) = (0usize, 0usize);
    for _ in 0..6 {
        let net = random_net(&mut rng, NetGen::default());
        let x = random_input(&mut rng, net.input_shape());
        let class = rng.gen_range(0..net.num_outputs());
        let objective = Objective::MaximizeUnit {
            target: TargetSpec::class(class),
        };
        let (_, grad) = objective_gradient(&net, &objective, &reg, &x).unwrap();
        let shape = x.shape();
        let upto = net.logit_activation();
        let j = |v: &[f64]| {
            reference_forward(&net, v, upto)[class]
                - reg.lambda_p as f64 * lp_value(v, 2.0)
                - reg.lambda_tv as f64 * tv_value(v, shape)
        };
        let numeric = fd(&x, j, 1e-3);
        let floor = 1e-6 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (&a, &b) in grad.data().iter().zip(&numeric) {
            total += 1;
            good += usize::from(rel_err(a as f64, b, floor) <= 1e-3);
        }
    }
    assert!(good as f64 >= 0.99 * total as f64, "{good}/{total}");
}

#[test]
fn l2_regularised_unit_converges_to_closed_form() {
    let w: Vec<f32> = vec![0.4, -0.3, 0.25, 0.1, -0.6, 0.05];
    let dense = Dense::new(1, 6, w.clone(), vec![0.2]).unwrap();
    let net = Network::new((1, 2, 3), vec![Layer::Dense(dense)], None).unwrap();
    let reg = RegConfig {
        lambda_p: 0.5,
        p: 2.0,
        lambda_tv: 0.0,
    };
    let objective = Objective::MaximizeUnit {
        target: TargetSpec::class(0),
    };
    let run = reconstruct(
        &net,
        &objective,
        &reg,
        &OptConfig::new(5000, 0.1, Init::Zeros),
    )
    .unwrap();
    for (&x, &wi) in run.final_input.data().iter().zip(&w) {
        assert!((x - wi / (2.0 * reg.lambda_p)).abs() <= 1e-3);
    }
    assert!(run.history.windows(2).all(|p| p[1] >= p[0] - 1e-7));
}
