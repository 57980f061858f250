//! Conversion from dataset samples to network tensors.

use wallnet_core::scene::RASTER_LEN;
use wallnet_core::signal::FEATURE_LEN;
use wallnet_core::{AmplitudeScaling, FeatureStats, FeatureVector, ProfileKind, Sample};
use wallnet_nn::Tensor;

use crate::Architecture;

/// Feature preprocessing frozen at training time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Preprocess {
    pub scaling: AmplitudeScaling,
    pub stats: FeatureStats,
}

impl Preprocess {
    /// Fits standardization statistics on `samples` after amplitude scaling.
    pub fn fit<'a>(scaling: AmplitudeScaling, samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let scaled: Vec<FeatureVector> = samples.into_iter().map(|s| scaling.apply(&s.features)).collect();
        Self { scaling, stats: FeatureStats::fit(&scaled) }
    }

    /// One standardized input row.
    pub fn row(&self, x: &FeatureVector) -> Vec<f32> {
        self.stats.standardize(&self.scaling.apply(x)).into_iter().map(|v| v as f32).collect()
    }

    /// Batch tensor shaped for `arch`.
    pub fn inputs<'a>(&self, arch: Architecture, xs: impl IntoIterator<Item = &'a FeatureVector>) -> Tensor<f32> {
        let mut data = Vec::new();
        let mut n = 0;
        for x in xs {
            data.extend(self.row(x));
            n += 1;
        }
        input_tensor(arch, n, data)
    }
}

pub(crate) fn input_tensor(arch: Architecture, n: usize, data: Vec<f32>) -> Tensor<f32> {
    let mut shape = vec![n];
    shape.extend(arch.input_dims());
    debug_assert_eq!(data.len(), n * FEATURE_LEN);
    Tensor::from_vec(&shape, data).expect("input shape")
}

/// Targets in the network's output space: `[0, 1]` for sigmoid models,
/// `[-1, 1]` for the generator.
pub fn targets<'a>(arch: Architecture, kind: ProfileKind, samples: impl IntoIterator<Item = &'a Sample>) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut n = 0;
    for s in samples {
        let r = s.label(kind);
        match arch {
            Architecture::Gan => data.extend(r.to_symmetric()),
            _ => data.extend_from_slice(&r.pixels),
        }
        n += 1;
    }
    Tensor::from_vec(&[n, RASTER_LEN], data).expect("target shape")
}

/// Network output back to label space `[0, 1]`.
pub fn to_unit(arch: Architecture, y: f32) -> f32 {
    match arch {
        Architecture::Gan => ((y + 1.0) * 0.5).clamp(0.0, 1.0),
        _ => y,
    }
}
