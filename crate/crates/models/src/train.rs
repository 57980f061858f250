//! Supervised and adversarial training loops.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wallnet_core::{AmplitudeScaling, ProfileKind, Sample};
use wallnet_nn::{bce_loss, mse_loss, Adam, AdamConfig, Network, NnError, Tensor};

use crate::arch::{critic_input_dims, critic_layers};
use crate::data::{self, Preprocess};
use crate::model::TrainedModel;
use crate::{Architecture, ModelError};

/// Default weight of the paired reconstruction term in the generator loss.
pub const DEFAULT_LAMBDA_REC: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub kind: ProfileKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of both networks for the GAN.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Seeds initialization (generator / critic) and batch shuffling.
    pub seed: u64,
    /// Reshuffle the training set every epoch; off keeps the dataset order.
    pub shuffle: bool,
    /// Reconstruction weight for the generator; `0` is the purely
    /// adversarial objective. Ignored by the supervised models.
    pub lambda_rec: f64,
    pub scaling: AmplitudeScaling,
}

impl TrainConfig {
    /// Default hyper-parameters for an architecture.
    pub fn new(arch: Architecture, kind: ProfileKind) -> Self {
        let (epochs, lr) = match arch {
            Architecture::Fcnn => (100, 2e-4),
            Architecture::Cnn => (100, 1e-4),
            Architecture::Gan => (500, 2e-4),
        };
        Self {
            arch,
            kind,
            epochs,
            batch_size: 32,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            seed: 7,
            shuffle: true,
            lambda_rec: DEFAULT_LAMBDA_REC,
            scaling: AmplitudeScaling::None,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn generator_seed(&self) -> u64 {
        self.seed
    }

    pub fn critic_seed(&self) -> u64 {
        self.seed ^ 0x5bd1_e995_c0ff_ee00
    }

    fn shuffle_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedEpoch {
    /// Mean BCE over the epoch's mini-batches.
    pub train: f64,
    /// BCE over the validation split; `None` when it is empty.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    /// Non-saturating adversarial loss `-log C(G(E))`.
    pub generator: f64,
    /// Critic BCE on ground-truth rasters (target 1).
    pub critic_real: f64,
    /// Critic BCE on generated rasters (target 0).
    pub critic_fake: f64,
    /// Mean squared reconstruction error in `[-1, 1]` space.
    pub reconstruction: f64,
    pub validation_reconstruction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrainingRecord {
    Supervised { epochs: Vec<SupervisedEpoch> },
    Gan { epochs: Vec<GanEpoch> },
}

impl TrainingRecord {
    pub fn len(&self) -> usize {
        match self {
            TrainingRecord::Supervised { epochs } => epochs.len(),
            TrainingRecord::Gan { epochs } => epochs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-epoch callback: epoch index (0-based) and the network after it.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &Network<f32>);

fn diverged(epoch: usize, e: NnError) -> ModelError {
    match e {
        NnError::NonFinite { .. } => ModelError::Diverged { epoch, what: "activation" },
        other => ModelError::Nn(other),
    }
}

fn check_finite(epoch: usize, what: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Diverged { epoch, what })
    }
}

/// Mean BCE of `net` over `(x, y)`, evaluated in chunks.
pub fn evaluate_bce(net: &Network<f32>, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64, NnError> {
    let n = x.batch();
    let mut total = 0.0;
    for start in (0..n).step_by(64) {
        let end = (start + 64).min(n);
        let (l, _) = bce_loss(&net.forward(&x.rows(start..end))?, &y.rows(start..end))?;
        total += l * (end - start) as f64;
    }
    Ok(total / n.max(1) as f64)
}

fn mse_of(net: &Network<f32>, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64, NnError> {
    let n = x.batch();
    let mut total = 0.0;
    for start in (0..n).step_by(64) {
        let end = (start + 64).min(n);
        let (l, _) = mse_loss(&net.forward(&x.rows(start..end))?, &y.rows(start..end))?;
        total += l * (end - start) as f64;
    }
    Ok(total / n.max(1) as f64)
}

struct Prepared {
    pre: Preprocess,
    x: Tensor<f32>,
    y: Tensor<f32>,
    val: Option<(Tensor<f32>, Tensor<f32>)>,
}

fn prepare(cfg: &TrainConfig, train: &[&Sample], validation: &[&Sample]) -> Result<Prepared, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::EmptySplit("batch size must be positive".into()));
    }
    let pre = Preprocess::fit(cfg.scaling, train.iter().copied());
    let x = pre.inputs(cfg.arch, train.iter().map(|s| &s.features));
    let y = data::targets(cfg.arch, cfg.kind, train.iter().copied());
    let val = (!validation.is_empty()).then(|| {
        (
            pre.inputs(cfg.arch, validation.iter().map(|s| &s.features)),
            data::targets(cfg.arch, cfg.kind, validation.iter().copied()),
        )
    });
    Ok(Prepared { pre, x, y, val })
}

fn batches(n: usize, batch: usize, order: &[usize]) -> Vec<Vec<usize>> {
    debug_assert_eq!(order.len(), n);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains an FC-NN or CNN with BCE against the `[0, 1]` label rasters.
pub fn train_supervised(
    cfg: &TrainConfig,
    train: &[&Sample],
    validation: &[&Sample],
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainedModel, ModelError> {
    if cfg.arch == Architecture::Gan {
        return Err(ModelError::Manifest("train_supervised called for the GAN".into()));
    }
    let started = Instant::now();
    let p = prepare(cfg, train, validation)?;
    let mut net = Network::<f32>::new(&cfg.arch.input_dims(), &cfg.arch.layers(), cfg.generator_seed())?;
    let mut adam = Adam::new(cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let n = p.x.batch();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for idx in batches(n, cfg.batch_size, &order) {
            let xb = p.x.select(&idx);
            let yb = p.y.select(&idx);
            net.zero_grad();
            let out = net.forward_train(&xb).map_err(|e| diverged(epoch, e))?;
            let (loss, grad) = bce_loss(&out, &yb)?;
            check_finite(epoch, "training loss", loss)?;
            net.backward(&grad)?;
            adam.step(net.params_and_grads())?;
            sum += loss * idx.len() as f64;
        }
        let validation = match &p.val {
            Some((vx, vy)) => {
                let l = evaluate_bce(&net, vx, vy).map_err(|e| diverged(epoch, e))?;
                check_finite(epoch, "validation loss", l)?;
                Some(l)
            }
            None => None,
        };
        epochs.push(SupervisedEpoch { train: sum / n as f64, validation });
        if let Some(h) = hook.as_mut() {
            h(epoch, &net);
        }
    }
    net.zero_grad();
    Ok(TrainedModel {
        arch: cfg.arch,
        kind: cfg.kind,
        network: net,
        preprocess: p.pre,
        config: cfg.clone(),
        record: TrainingRecord::Supervised { epochs },
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Networks and optimizer state of an adversarial run.
pub struct GanState {
    pub generator: Network<f32>,
    pub critic: Network<f32>,
    pub gen_opt: Adam<f32>,
    pub critic_opt: Adam<f32>,
    pub lambda_rec: f64,
}

/// Losses of one alternating round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundLosses {
    pub generator: f64,
    pub critic_real: f64,
    pub critic_fake: f64,
    pub reconstruction: f64,
}

impl GanState {
    pub fn new(cfg: &TrainConfig) -> Result<Self, ModelError> {
        Ok(Self {
            generator: Network::new(&Architecture::Gan.input_dims(), &Architecture::Gan.layers(), cfg.generator_seed())?,
            critic: Network::new(&critic_input_dims(), &critic_layers(), cfg.critic_seed())?,
            gen_opt: Adam::new(cfg.adam()),
            critic_opt: Adam::new(cfg.adam()),
            lambda_rec: cfg.lambda_rec,
        })
    }

    /// One critic update followed by one generator update on a mini-batch of
    /// features `x` and `[-1, 1]` targets `y`.
    ///
    /// The generator's forward pass is shared: its cache survives the critic
    /// step, where the generated rasters are treated as constants.
    pub fn round(&mut self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<RoundLosses, NnError> {
        let b = x.batch();
        let ones = Tensor::from_vec(&[b, 1], vec![1f32; b])?;
        let zeros = Tensor::zeros(&[b, 1]);
        let as_seq = |t: &Tensor<f32>| t.clone().reshape(&[b, 1, t.row_len()]);

        let fake = self.generator.forward_train(x)?;
        let fake_seq = as_seq(&fake)?;

        // Critic: ascend log C(real) + log(1 - C(fake)).
        self.critic.zero_grad();
        let d_real = self.critic.forward_train(&as_seq(y)?)?;
        let (critic_real, g) = bce_loss(&d_real, &ones)?;
        self.critic.backward(&g)?;
        let d_fake = self.critic.forward_train(&fake_seq)?;
        let (critic_fake, g) = bce_loss(&d_fake, &zeros)?;
        self.critic.backward(&g)?;
        self.critic_opt.step(self.critic.params_and_grads())?;

        // Generator: non-saturating -log C(G(x)) plus paired reconstruction.
        self.critic.zero_grad();
        let d = self.critic.forward_train(&fake_seq)?;
        let (generator, g) = bce_loss(&d, &ones)?;
        let d_fake_in = self.critic.backward(&g)?;
        self.critic.zero_grad();
        let (reconstruction, g_rec) = mse_loss(&fake, y)?;
        let mut g_out = d_fake_in.reshape(&[b, fake.row_len()])?;
        let lambda = self.lambda_rec as f32;
        if lambda != 0.0 {
            for (a, r) in g_out.data_mut().iter_mut().zip(g_rec.data()) {
                *a += lambda * r;
            }
        }
        self.generator.zero_grad();
        self.generator.backward(&g_out)?;
        self.gen_opt.step(self.generator.params_and_grads())?;
        self.generator.zero_grad();
        Ok(RoundLosses { generator, critic_real, critic_fake, reconstruction })
    }
}

/// Trains the generator/critic pair with alternating updates.
pub fn train_gan(
    cfg: &TrainConfig,
    train: &[&Sample],
    validation: &[&Sample],
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainedModel, ModelError> {
    if cfg.arch != Architecture::Gan {
        return Err(ModelError::Manifest("train_gan called for a supervised architecture".into()));
    }
    let started = Instant::now();
    let p = prepare(cfg, train, validation)?;
    let mut state = GanState::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let n = p.x.batch();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut acc = [0f64; 4];
        for idx in batches(n, cfg.batch_size, &order) {
            let r = state.round(&p.x.select(&idx), &p.y.select(&idx)).map_err(|e| diverged(epoch, e))?;
            check_finite(epoch, "generator loss", r.generator)?;
            check_finite(epoch, "critic loss", r.critic_real + r.critic_fake)?;
            check_finite(epoch, "reconstruction loss", r.reconstruction)?;
            let w = idx.len() as f64;
            acc[0] += r.generator * w;
            acc[1] += r.critic_real * w;
            acc[2] += r.critic_fake * w;
            acc[3] += r.reconstruction * w;
        }
        let validation_reconstruction = match &p.val {
            Some((vx, vy)) => Some(mse_of(&state.generator, vx, vy).map_err(|e| diverged(epoch, e))?),
            None => None,
        };
        let nf = n as f64;
        epochs.push(GanEpoch {
            generator: acc[0] / nf,
            critic_real: acc[1] / nf,
            critic_fake: acc[2] / nf,
            reconstruction: acc[3] / nf,
            validation_reconstruction,
        });
        if let Some(h) = hook.as_mut() {
            h(epoch, &state.generator);
        }
    }
    state.generator.clear_caches();
    Ok(TrainedModel {
        arch: cfg.arch,
        kind: cfg.kind,
        network: state.generator,
        preprocess: p.pre,
        config: cfg.clone(),
        record: TrainingRecord::Gan { epochs },
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Dispatches on the configured architecture.
pub fn train(
    cfg: &TrainConfig,
    train: &[&Sample],
    validation: &[&Sample],
    hook: Option<EpochHook<'_>>,
) -> Result<TrainedModel, ModelError> {
    match cfg.arch {
        Architecture::Gan => train_gan(cfg, train, validation, hook),
        _ => train_supervised(cfg, train, validation, hook),
    }
}
