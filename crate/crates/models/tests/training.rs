//! End-to-end training behaviour on small synthetic datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wallnet_core::scene::{enumerate_cases, rasterize_labels};
use wallnet_core::signal::FEATURE_LEN;
use wallnet_core::{FeatureVector, ProfileKind, ProfileRaster, Sample, WallSpec};
use wallnet_models::data::{self, Preprocess};
use wallnet_models::eval::raster_nmse;
use wallnet_models::train::{self, evaluate_bce, GanState};
use wallnet_models::{Architecture, ModelError, TrainConfig, TrainedModel, TrainingRecord};
use wallnet_nn::{Network, Tensor};

/// Features are a fixed pseudo-random function of the case; labels are real.
fn synthetic(spec: WallSpec) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed ^ spec.case_id.0 as u64);
    let values = (0..FEATURE_LEN).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let (dielectric, conductivity) = rasterize_labels(&spec);
    Sample { spec, features: FeatureVector::new(values).unwrap(), dielectric, conductivity }
}

fn samples(n: usize, stride: usize) -> Vec<Sample> {
    enumerate_cases().into_iter().step_by(stride).take(n).map(synthetic).collect()
}

fn refs(s: &[Sample]) -> Vec<&Sample> {
    s.iter().collect()
}

fn tensors(cfg: &TrainConfig, set: &[&Sample]) -> (Tensor<f32>, Tensor<f32>) {
    let pre = Preprocess::fit(cfg.scaling, set.iter().copied());
    (pre.inputs(cfg.arch, set.iter().map(|s| &s.features)), data::targets(cfg.arch, cfg.kind, set.iter().copied()))
}

fn flat(net: &Network<f32>) -> Vec<f32> {
    net.params().iter().flat_map(|t| t.data().to_vec()).collect()
}

/// Mean binary entropy of the labels: the lowest BCE any model can reach.
fn entropy(y: &[f32]) -> f64 {
    y.iter()
        .map(|&p| {
            let p = (p as f64).clamp(1e-7, 1.0 - 1e-7);
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / y.len() as f64
}

#[test]
fn fcnn_overfits_ten_samples() {
    let set = samples(10, 83);
    let train = refs(&set);
    let mut cfg = TrainConfig::new(Architecture::Fcnn, ProfileKind::Dielectric);
    cfg.epochs = 2000;
    let model = train::train(&cfg, &train, &[], None).unwrap();
    let (x, y) = tensors(&cfg, &train);
    let bce = evaluate_bce(&model.network, &x, &y).unwrap();
    let floor = entropy(y.data());
    let mut nmse = 0.0;
    for s in &set {
        nmse += raster_nmse(&s.dielectric, &model.predict(&s.features).unwrap(), false).unwrap();
    }
    nmse /= set.len() as f64;
    println!("bce {bce:.4} label entropy {floor:.4} excess {:.4} nmse {nmse:.5}", bce - floor);
    assert!(bce - floor < 0.05);
    assert!(nmse < 0.05);
}

#[test]
fn constant_zero_labels_drive_outputs_to_zero() {
    let mut set = samples(8, 97);
    for s in &mut set {
        s.conductivity = ProfileRaster::zeros(ProfileKind::Conductivity);
    }
    let mut cfg = TrainConfig::new(Architecture::Fcnn, ProfileKind::Conductivity);
    cfg.epochs = 300;
    let model = train::train(&cfg, &refs(&set), &[], None).unwrap();
    for s in &set {
        let out = model.predict(&s.features).unwrap();
        let worst = out.pixels.iter().cloned().fold(0f32, f32::max);
        assert!(worst < 0.05, "max output {worst}");
    }
}

#[test]
fn training_is_deterministic() {
    let set = samples(12, 71);
    for (arch, epochs) in [(Architecture::Fcnn, 3), (Architecture::Cnn, 1), (Architecture::Gan, 1)] {
        let mut cfg = TrainConfig::new(arch, ProfileKind::Conductivity);
        cfg.epochs = epochs;
        cfg.batch_size = 4;
        let a = train::train(&cfg, &refs(&set), &[], None).unwrap();
        let b = train::train(&cfg, &refs(&set), &[], None).unwrap();
        assert!(a.weight_bytes() == b.weight_bytes(), "{arch} differs between runs");
    }
}

#[test]
fn batched_inference_matches_single() {
    let set = samples(5, 151);
    for arch in [Architecture::Fcnn, Architecture::Cnn] {
        let mut cfg = TrainConfig::new(arch, ProfileKind::Dielectric);
        cfg.epochs = 1;
        let model = train::train(&cfg, &refs(&set), &[], None).unwrap();
        let xs: Vec<FeatureVector> = set.iter().map(|s| s.features.clone()).collect();
        let batch = model.predict_batch(&xs).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let single = model.predict(x).unwrap();
            let diff = single.pixels.iter().zip(&b.pixels).map(|(p, q)| (p - q).abs()).fold(0f32, f32::max);
            assert!(diff <= 1e-5, "{arch}: batch differs by {diff}");
        }
    }
}

#[test]
fn small_step_full_batch_loss_is_monotone() {
    let set = samples(40, 21);
    let train = refs(&set);
    let mut cfg = TrainConfig::new(Architecture::Fcnn, ProfileKind::Dielectric);
    cfg.epochs = 30;
    cfg.lr /= 10.0;
    cfg.shuffle = false;
    cfg.batch_size = set.len();
    let (x, y) = tensors(&cfg, &train);
    let mut losses = Vec::new();
    let mut hook = |_: usize, net: &Network<f32>| losses.push(evaluate_bce(net, &x, &y).unwrap());
    train::train(&cfg, &train, &[], Some(&mut hook)).unwrap();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "loss rose: {losses:?}");
    }
}

#[test]
fn gan_round_steps_each_network_once() {
    let set = samples(4, 200);
    let cfg = TrainConfig::new(Architecture::Gan, ProfileKind::Conductivity);
    let (x, y) = tensors(&cfg, &refs(&set));
    let mut state = GanState::new(&cfg).unwrap();
    let (gen_before, critic_before) = (flat(&state.generator), flat(&state.critic));
    let r = state.round(&x, &y).unwrap();
    assert_eq!(state.gen_opt.steps_taken(), 1);
    assert_eq!(state.critic_opt.steps_taken(), 1);
    assert!(flat(&state.generator) != gen_before);
    assert!(flat(&state.critic) != critic_before);
    assert!(r.generator.is_finite() && r.critic_real.is_finite() && r.critic_fake.is_finite());
    let out = state.generator.forward(&x).unwrap();
    assert!(out.data().iter().all(|v| *v > -1.0 && *v < 1.0));
}

#[test]
fn save_load_round_trip_and_tamper_detection() {
    let set = samples(6, 131);
    let mut cfg = TrainConfig::new(Architecture::Fcnn, ProfileKind::Conductivity);
    cfg.epochs = 2;
    let model = train::train(&cfg, &refs(&set), &refs(&set[..2]), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = TrainedModel::load(dir.path()).unwrap();
    assert!(back.weight_bytes() == model.weight_bytes());
    assert!(matches!(back.record, TrainingRecord::Supervised { ref epochs } if epochs.len() == 2));
    for s in &set {
        assert_eq!(back.predict(&s.features).unwrap().pixels, model.predict(&s.features).unwrap().pixels);
    }
    let wpath = dir.path().join("weights.bin");
    let mut bytes = std::fs::read(&wpath).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&wpath, bytes).unwrap();
    assert!(matches!(TrainedModel::load(dir.path()), Err(ModelError::Manifest(_))));
}

#[test]
fn wrong_input_length_is_rejected() {
    let set = samples(3, 250);
    let mut cfg = TrainConfig::new(Architecture::Fcnn, ProfileKind::Dielectric);
    cfg.epochs = 1;
    let model = train::train(&cfg, &refs(&set), &[], None).unwrap();
    let err = model.predict_values(&[0.0; 879]).unwrap_err();
    assert!(matches!(err, ModelError::Input { got: 879, expected: 880 }));
}

#[test]
fn non_finite_features_report_divergence() {
    let mut set = samples(4, 190);
    let mut values = set[1].features.as_slice().to_vec();
    values[17] = f32::NAN;
    set[1].features = FeatureVector::new(values).unwrap();
    let mut cfg = TrainConfig::new(Architecture::Fcnn, ProfileKind::Dielectric);
    cfg.epochs = 3;
    let err = train::train(&cfg, &refs(&set), &[], None).unwrap_err();
    assert!(matches!(err, ModelError::Diverged { epoch: 0, .. }), "{err:?}");
}
