mod support {
    pub mod gradcheck;
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wallnet_nn::{LayerSpec, Network, Tensor};

#[test]
fn analytic_gradients_match_finite_differences() {
    let (checked, failures) = support::gradcheck::run_trials(100, 2024);
    println!("{checked} gradient entries checked, {} failures", failures.len());
    assert!(checked > 1000);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn f32_and_f64_forward_agree() {
    let specs = [
        LayerSpec::Conv1d { in_channels: 1, out_channels: 4, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { input: 40, output: 5 },
        LayerSpec::Sigmoid,
    ];
    let net32: Network<f32> = Network::new(&[1, 10], &specs, 3).unwrap();
    let net64: Network<f64> = net32.cast();
    let x: Vec<f64> = (0..20).map(|k| (k as f64 * 0.37).sin()).collect();
    let y64 = net64.forward(&Tensor::from_vec(&[2, 1, 10], x.clone()).unwrap()).unwrap();
    let y32 = net32.forward(&Tensor::from_vec(&[2, 1, 10], x.iter().map(|&v| v as f32).collect()).unwrap()).unwrap();
    for (a, b) in y32.data().iter().zip(y64.data()) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}

#[test]
fn batch_composition_does_not_change_outputs() {
    let specs = [
        LayerSpec::Conv1d { in_channels: 1, out_channels: 8, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { input: 8 * 33, output: 17 },
        LayerSpec::Sigmoid,
    ];
    let net: Network<f32> = Network::new(&[1, 33], &specs, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_vec(&[13, 1, 33], (0..13 * 33).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let all = net.forward(&x).unwrap();
    for k in 0..13 {
        let one = net.forward(&x.rows(k..k + 1)).unwrap();
        assert_eq!(one.data(), all.rows(k..k + 1).data());
    }
}
