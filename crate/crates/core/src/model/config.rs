use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolutional feature extractor: a stack of 3×3 conv + ReLU blocks whose
/// last block emits `features` channels, followed by global average pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Output channels of every block except the last.
    pub widths: Vec<usize>,
    /// Feature length F (channels of the final block).
    pub features: usize,
    pub kernel: usize,
    /// One stride per block (`widths.len() + 1` entries).
    pub strides: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: 64,
            in_channels: 3,
            widths: vec![8, 16],
            features: 64,
            kernel: 3,
            strides: vec![2, 2, 2],
        }
    }
}

impl EncoderConfig {
    pub fn block_channels(&self) -> Vec<(usize, usize)> {
        let mut outs = self.widths.clone();
        outs.push(self.features);
        let mut ins = vec![self.in_channels];
        ins.extend_from_slice(&self.widths);
        ins.into_iter().zip(outs).collect()
    }

    /// Spatial side of the final activation map.
    pub fn map_size(&self) -> usize {
        self.strides.iter().fold(self.input_size, |s, &st| s.div_ceil(st))
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.len() != self.widths.len() + 1 {
            return Err(Error::Config(format!(
                "encoder needs {} strides for {} blocks, got {}",
                self.widths.len() + 1,
                self.widths.len() + 1,
                self.strides.len()
            )));
        }
        if self.input_size < 4 || self.in_channels == 0 || self.features == 0 || self.kernel == 0 {
            return Err(Error::Config(format!("degenerate encoder configuration {self:?}")));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::Config("encoder widths and strides must be positive".into()));
        }
        Ok(())
    }
}

/// Where per-visit feature vectors come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSource {
    /// Trainable shared-weight encoder applied to each visit image.
    Encoder(EncoderConfig),
    /// Feature vectors computed elsewhere and supplied with the data.
    External { features: usize },
}

impl FeatureSource {
    pub fn feature_len(&self) -> usize {
        match self {
            FeatureSource::Encoder(e) => e.features,
            FeatureSource::External { features } => *features,
        }
    }

    pub fn encoder(&self) -> Option<&EncoderConfig> {
        match self {
            FeatureSource::Encoder(e) => Some(e),
            FeatureSource::External { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Encoder per visit, interval scaling, GRU aggregation.
    Longitudinal,
    /// Encoder on the most recent visit, dense layer, sigmoid.
    SingleImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Number of observed visits consumed (the most recent ones).
    pub timepoints: usize,
    pub interval_scaling: bool,
    pub source: FeatureSource,
    /// GRU hidden size H.
    pub hidden: usize,
    /// Class-activation-map variant: wider GRU plus a dense readout.
    pub cam_head: bool,
}

/// Hidden size used by the CAM variant unless overridden.
pub const CAM_HIDDEN: usize = 8;

impl ModelConfig {
    pub fn longitudinal(timepoints: usize, encoder: EncoderConfig) -> Self {
        ModelConfig {
            architecture: Architecture::Longitudinal,
            timepoints,
            interval_scaling: true,
            source: FeatureSource::Encoder(encoder),
            hidden: 1,
            cam_head: false,
        }
    }

    pub fn single_image(encoder: EncoderConfig) -> Self {
        ModelConfig {
            architecture: Architecture::SingleImage,
            timepoints: 1,
            interval_scaling: false,
            source: FeatureSource::Encoder(encoder),
            hidden: 1,
            cam_head: false,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.source.feature_len()
    }

    pub fn validate(&self) -> Result<()> {
        if let FeatureSource::Encoder(e) = &self.source {
            e.validate()?;
        }
        if self.feature_len() == 0 {
            return Err(Error::Config("feature length must be positive".into()));
        }
        match self.architecture {
            Architecture::Longitudinal => {
                if self.timepoints == 0 {
                    return Err(Error::Config("longitudinal model needs at least one timepoint".into()));
                }
                if self.hidden == 0 {
                    return Err(Error::Config("GRU hidden size must be positive".into()));
                }
            }
            Architecture::SingleImage => {
                if self.timepoints != 1 {
                    return Err(Error::Config(format!(
                        "single-image baseline uses exactly one timepoint, got {}",
                        self.timepoints
                    )));
                }
                if self.cam_head {
                    return Err(Error::Config(
                        "the CAM head is only defined for the longitudinal model".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
