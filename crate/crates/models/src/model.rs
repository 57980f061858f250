//! Trained models: persistence, inference and label-space inversion.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wallnet_core::dataset::write_atomic;
use wallnet_core::scene::{denormalize_eps, denormalize_sigma, RASTER_LEN};
use wallnet_core::signal::FEATURE_LEN;
use wallnet_core::{FeatureVector, ProfileKind, ProfileRaster};
use wallnet_nn::{io as wio, Network};

use crate::data::{self, Preprocess};
use crate::train::{TrainConfig, TrainingRecord};
use crate::{Architecture, ModelError};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MODEL_MANIFEST: &str = "model.json";

/// One network trained for one profile kind.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: Architecture,
    pub kind: ProfileKind,
    /// The feature-to-raster network (the generator for the GAN).
    pub network: Network<f32>,
    pub preprocess: Preprocess,
    pub config: TrainConfig,
    pub record: TrainingRecord,
    /// Wall-clock training time; lives in the manifest only, so weight
    /// files stay byte-identical between runs.
    pub train_seconds: f64,
}

/// Stored inside the weight file header.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightMeta {
    arch: Architecture,
    kind: ProfileKind,
    preprocess: Preprocess,
    config: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub arch: Architecture,
    pub kind: ProfileKind,
    pub lambda_rec: f64,
    pub generator_seed: u64,
    pub critic_seed: Option<u64>,
    pub weights_file: String,
    pub weights_sha256: String,
    pub param_count: usize,
    pub train_seconds: f64,
    pub config: TrainConfig,
    pub record: TrainingRecord,
}

impl TrainedModel {
    fn meta(&self) -> WeightMeta {
        WeightMeta { arch: self.arch, kind: self.kind, preprocess: self.preprocess.clone(), config: self.config.clone() }
    }

    /// Weight file bytes; a pure function of parameters and configuration.
    pub fn weight_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_value(self.meta()).expect("metadata serializes");
        wio::encode(&self.network, self.config.generator_seed(), meta)
    }

    /// Writes `weights.bin` and `model.json` into `dir`, each atomically.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io_err = |path: PathBuf| move |source| ModelError::Io { path, source };
        fs::create_dir_all(dir).map_err(io_err(dir.to_path_buf()))?;
        let bytes = self.weight_bytes();
        let manifest = ModelManifest {
            arch: self.arch,
            kind: self.kind,
            lambda_rec: self.config.lambda_rec,
            generator_seed: self.config.generator_seed(),
            critic_seed: (self.arch == Architecture::Gan).then(|| self.config.critic_seed()),
            weights_file: WEIGHTS_FILE.into(),
            weights_sha256: hex(&Sha256::digest(&bytes)),
            param_count: self.network.param_count(),
            train_seconds: self.train_seconds,
            config: self.config.clone(),
            record: self.record.clone(),
        };
        let wpath = dir.join(WEIGHTS_FILE);
        write_atomic(&wpath, &bytes).map_err(io_err(wpath))?;
        let mpath = dir.join(MODEL_MANIFEST);
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&mpath, &json).map_err(io_err(mpath))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let mpath = dir.join(MODEL_MANIFEST);
        let text = fs::read(&mpath).map_err(|source| ModelError::Io { path: mpath.clone(), source })?;
        let manifest: ModelManifest =
            serde_json::from_slice(&text).map_err(|e| ModelError::Manifest(format!("{}: {e}", mpath.display())))?;
        let wpath = dir.join(&manifest.weights_file);
        let bytes = fs::read(&wpath).map_err(|source| ModelError::Io { path: wpath.clone(), source })?;
        let digest = hex(&Sha256::digest(&bytes));
        if digest != manifest.weights_sha256 {
            return Err(ModelError::Manifest(format!("{} does not match the digest in {}", wpath.display(), mpath.display())));
        }
        let (network, header) = wio::decode(&bytes)?;
        let meta: WeightMeta = serde_json::from_value(header.metadata)
            .map_err(|e| ModelError::Manifest(format!("{}: metadata: {e}", wpath.display())))?;
        if meta.arch != manifest.arch || meta.kind != manifest.kind {
            return Err(ModelError::Manifest(format!("{} disagrees with {}", wpath.display(), mpath.display())));
        }
        if network.input_dims() != meta.arch.input_dims().as_slice() || network.specs() != meta.arch.layers() {
            return Err(ModelError::Manifest(format!("{}: layers do not match architecture {}", wpath.display(), meta.arch)));
        }
        Ok(Self {
            arch: meta.arch,
            kind: meta.kind,
            network,
            preprocess: meta.preprocess,
            config: meta.config,
            record: manifest.record,
            train_seconds: manifest.train_seconds,
        })
    }

    /// Reconstructs one raster in label space `[0, 1]`.
    pub fn predict(&self, x: &FeatureVector) -> Result<ProfileRaster, ModelError> {
        Ok(self.predict_batch(std::slice::from_ref(x))?.remove(0))
    }

    /// Like [`TrainedModel::predict`] for a raw slice, which must hold 880 values.
    pub fn predict_values(&self, x: &[f32]) -> Result<ProfileRaster, ModelError> {
        let fv = FeatureVector::new(x.to_vec()).map_err(|_| ModelError::Input { got: x.len(), expected: FEATURE_LEN })?;
        self.predict(&fv)
    }

    /// Batched inference; each output equals the single-sample prediction.
    pub fn predict_batch(&self, xs: &[FeatureVector]) -> Result<Vec<ProfileRaster>, ModelError> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(64) {
            let y = self.network.forward(&self.preprocess.inputs(self.arch, chunk))?;
            for row in y.data().chunks_exact(RASTER_LEN) {
                let pixels = row.iter().map(|&v| data::to_unit(self.arch, v)).collect();
                out.push(ProfileRaster { kind: self.kind, pixels });
            }
        }
        Ok(out)
    }
}

/// Physical values per pixel: relative permittivity or conductivity (S/m).
pub fn denormalize(raster: &ProfileRaster) -> Vec<f64> {
    let f: fn(f64) -> f64 = match raster.kind {
        ProfileKind::Dielectric => denormalize_eps,
        ProfileKind::Conductivity => denormalize_sigma,
    };
    raster.pixels.iter().map(|&u| f(u as f64)).collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
