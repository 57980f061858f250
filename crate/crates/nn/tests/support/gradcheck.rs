//! Analytic gradients against central finite differences on randomized
//! small networks, in f64.
//!
//! The numeric derivative is the central difference at step `H`, Richardson-
//! extrapolated with the one at `H / 2`. That removes the `O(H^2)` truncation
//! term, which otherwise dominates entries whose gradient is itself ~1e-7.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wallnet_nn::{bce_loss, LayerSpec, Network, Tensor};

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

enum Objective {
    /// `L = sum(c * y)` with fixed random weights `c`.
    Linear(Vec<f64>),
    Bce(Vec<f64>),
}

impl Objective {
    fn value(&self, y: &Tensor<f64>) -> f64 {
        match self {
            Objective::Linear(c) => y.data().iter().zip(c).map(|(a, b)| a * b).sum(),
            Objective::Bce(t) => bce_loss(y, &Tensor::from_vec(y.shape(), t.clone()).unwrap()).unwrap().0,
        }
    }

    fn grad(&self, y: &Tensor<f64>) -> Tensor<f64> {
        match self {
            Objective::Linear(c) => Tensor::from_vec(y.shape(), c.clone()).unwrap(),
            Objective::Bce(t) => bce_loss(y, &Tensor::from_vec(y.shape(), t.clone()).unwrap()).unwrap().1,
        }
    }
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(H / 2.0) - d(H)) / 3.0
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

struct Trial {
    name: &'static str,
    input: Vec<usize>,
    specs: Vec<LayerSpec>,
    bce: bool,
}

fn random_trial(k: usize, rng: &mut ChaCha8Rng) -> Trial {
    let f = rng.gen_range(1..7);
    let o = rng.gen_range(1..6);
    let c = rng.gen_range(1..4);
    let l = rng.gen_range(1..9);
    let co = rng.gen_range(1..4);
    let kernel = 2 * rng.gen_range(0..3) + 1;
    let dense = LayerSpec::Dense { input: f, output: o };
    let conv = LayerSpec::Conv1d { in_channels: c, out_channels: co, kernel };
    match k % 7 {
        0 => Trial { name: "dense", input: vec![f], specs: vec![dense], bce: false },
        1 => Trial { name: "conv1d", input: vec![c, l], specs: vec![conv], bce: false },
        2 => Trial { name: "relu", input: vec![f], specs: vec![dense, LayerSpec::Relu], bce: false },
        3 => Trial { name: "sigmoid", input: vec![f], specs: vec![dense, LayerSpec::Sigmoid], bce: false },
        4 => Trial { name: "tanh", input: vec![f], specs: vec![dense, LayerSpec::Tanh], bce: false },
        5 => Trial {
            name: "flatten",
            input: vec![c, l],
            specs: vec![conv, LayerSpec::Flatten, LayerSpec::Dense { input: co * l, output: o }],
            bce: false,
        },
        _ => Trial {
            name: "stack+bce",
            input: vec![c, l],
            specs: vec![
                conv,
                LayerSpec::Tanh,
                LayerSpec::Conv1d { in_channels: co, out_channels: 2, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 2 * l, output: o },
                LayerSpec::Sigmoid,
            ],
            bce: true,
        },
    }
}

/// Smallest |pre-activation| feeding a ReLU; kinks closer than the step size
/// make central differences meaningless.
fn relu_margin(net: &Network<f64>, x: &Tensor<f64>) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in net.layers() {
        if layer.spec() == LayerSpec::Relu {
            margin = margin.min(h.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
        h = layer.forward(&h).unwrap();
    }
    margin
}

/// Runs `trials` randomized checks; returns the number of gradient entries
/// compared and a description of every mismatch.
pub fn run_trials(trials: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for trial_index in 0..trials {
        let trial = random_trial(trial_index, &mut rng);
        let batch = rng.gen_range(1..4);
        let mut net: Network<f64> = Network::new(&trial.input, &trial.specs, rng.gen()).unwrap();
        // random biases too, so zero-initialized biases are not a special case
        for (p, _) in net.params_and_grads() {
            p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let n_in: usize = batch * trial.input.iter().product::<usize>();
        let mut shape = vec![batch];
        shape.extend_from_slice(&trial.input);
        let x = loop {
            let x = Tensor::from_vec(&shape, (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            if relu_margin(&net, &x) > 20.0 * H {
                break x;
            }
        };
        let y = net.forward(&x).unwrap();
        let objective = if trial.bce {
            Objective::Bce((0..y.len()).map(|_| rng.gen_range(0.0..1.0)).collect())
        } else {
            Objective::Linear((0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };

        net.zero_grad();
        let y = net.forward_train(&x).unwrap();
        let dx = net.backward(&objective.grad(&y)).unwrap();
        let analytic: Vec<Vec<f64>> = net.grads().iter().map(|g| g.data().to_vec()).collect();

        let loss_at = |net: &Network<f64>, x: &Tensor<f64>| objective.value(&net.forward(x).unwrap());
        for (pi, grads) in analytic.iter().enumerate() {
            for (e, &a) in grads.iter().enumerate() {
                let numeric = central(|h| {
                    let mut shifted = net.clone();
                    shifted.params_and_grads()[pi].0.data_mut()[e] += h;
                    loss_at(&shifted, &x)
                });
                checked += 1;
                if rel_err(a, numeric) > TOL {
                    failures.push(format!("{} param {pi}[{e}]: {a} vs {numeric}", trial.name));
                }
            }
        }
        for e in 0..x.len() {
            let numeric = central(|h| {
                let mut shifted = x.clone();
                shifted.data_mut()[e] += h;
                loss_at(&net, &shifted)
            });
            checked += 1;
            if rel_err(dx.data()[e], numeric) > TOL {
                failures.push(format!("{} input[{e}]: {} vs {numeric}", trial.name, dx.data()[e]));
            }
        }
    }
    (checked, failures)
}

