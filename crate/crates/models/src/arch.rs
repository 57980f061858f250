use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wallnet_core::scene::RASTER_LEN;
use wallnet_core::signal::FEATURE_LEN;
use wallnet_nn::LayerSpec;

/// Filters in each convolution layer.
pub const CONV_FILTERS: usize = 64;
pub const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Fcnn,
    Cnn,
    Gan,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Fcnn, Architecture::Cnn, Architecture::Gan];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Fcnn => "fcnn",
            Architecture::Cnn => "cnn",
            Architecture::Gan => "gan",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Architecture::Fcnn => "FC-NN",
            Architecture::Cnn => "CNN",
            Architecture::Gan => "GAN",
        }
    }

    /// Input shape (without batch axis) of the feature-consuming network.
    pub fn input_dims(self) -> Vec<usize> {
        match self {
            Architecture::Fcnn => vec![FEATURE_LEN],
            Architecture::Cnn | Architecture::Gan => vec![1, FEATURE_LEN],
        }
    }

    /// Layers of the network that maps features to a raster (the generator
    /// for the GAN).
    pub fn layers(self) -> Vec<LayerSpec> {
        match self {
            Architecture::Fcnn => vec![
                LayerSpec::Dense { input: FEATURE_LEN, output: 256 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 256, output: 512 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 512, output: RASTER_LEN },
                LayerSpec::Sigmoid,
            ],
            Architecture::Cnn | Architecture::Gan => {
                let mut l = conv_trunk(FEATURE_LEN);
                l.extend([
                    LayerSpec::Dense { input: CONV_FILTERS * FEATURE_LEN, output: 512 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { input: 512, output: RASTER_LEN },
                    if self == Architecture::Gan { LayerSpec::Tanh } else { LayerSpec::Sigmoid },
                ]);
                l
            }
        }
    }
}

/// Two same-padded conv layers with ReLU, then flatten.
fn conv_trunk(len: usize) -> Vec<LayerSpec> {
    let _ = len;
    vec![
        LayerSpec::Conv1d { in_channels: 1, out_channels: CONV_FILTERS, kernel: CONV_KERNEL },
        LayerSpec::Relu,
        LayerSpec::Conv1d { in_channels: CONV_FILTERS, out_channels: CONV_FILTERS, kernel: CONV_KERNEL },
        LayerSpec::Relu,
        LayerSpec::Flatten,
    ]
}

/// Critic input shape: one raster as a single-channel sequence.
pub fn critic_input_dims() -> Vec<usize> {
    vec![1, RASTER_LEN]
}

/// The GAN critic: scores a raster in `[-1, 1]^1024` as real or generated.
pub fn critic_layers() -> Vec<LayerSpec> {
    let mut l = conv_trunk(RASTER_LEN);
    l.extend([LayerSpec::Dense { input: CONV_FILTERS * RASTER_LEN, output: 1 }, LayerSpec::Sigmoid]);
    l
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "fcnn" => Ok(Architecture::Fcnn),
            "cnn" => Ok(Architecture::Cnn),
            "gan" => Ok(Architecture::Gan),
            _ => Err(format!("unknown architecture '{s}' (expected fcnn, cnn or gan)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wallnet_nn::Network;

    fn count(dims: &[usize], layers: &[LayerSpec]) -> usize {
        Network::<f32>::new(dims, layers, 0).unwrap().param_count()
    }

    #[test]
    fn parameter_counts() {
        let fcnn = 880 * 256 + 256 + 256 * 512 + 512 + 512 * 1024 + 1024;
        // 225,536 + 131,584 + 525,312
        assert_eq!(fcnn, 882_432);
        assert_eq!(count(&Architecture::Fcnn.input_dims(), &Architecture::Fcnn.layers()), fcnn);

        let convs = (3 * 64 + 64) + (64 * 64 * 3 + 64);
        let cnn = convs + 64 * 880 * 512 + 512 + 512 * 1024 + 1024;
        assert_eq!(count(&Architecture::Cnn.input_dims(), &Architecture::Cnn.layers()), cnn);
        assert_eq!(count(&Architecture::Gan.input_dims(), &Architecture::Gan.layers()), cnn);
        assert_eq!(count(&critic_input_dims(), &critic_layers()), convs + 64 * 1024 + 1);
    }

    #[test]
    fn output_shapes() {
        for arch in Architecture::ALL {
            let net = Network::<f32>::new(&arch.input_dims(), &arch.layers(), 0).unwrap();
            assert_eq!(net.output_dims(), vec![1024]);
        }
        let critic = Network::<f32>::new(&critic_input_dims(), &critic_layers(), 0).unwrap();
        assert_eq!(critic.output_dims(), vec![1]);
    }

    #[test]
    fn parse_names() {
        assert_eq!("FC-NN".parse::<Architecture>().unwrap(), Architecture::Fcnn);
        assert_eq!("gan".parse::<Architecture>().unwrap(), Architecture::Gan);
        assert!("rnn".parse::<Architecture>().is_err());
    }
}
