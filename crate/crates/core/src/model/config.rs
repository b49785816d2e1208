use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::HierarchyConfig;
use crate::nn::{conv_extent, deconv_extent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            channels,
            kernel,
            stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub image_side: usize,
    pub convs: Vec<ConvSpec>,
    /// Widths of the two fully-connected layers after the conv stack.
    pub hidden: [usize; 2],
    /// Dropout applied before the second fully-connected layer.
    pub dropout: f64,
}

impl RegressorConfig {
    /// 100×100 RGB input, kernels {32,15,5,3}, strides {2,2,2,1},
    /// channels {16,32,64,128}, hidden {200,100}.
    pub fn standard() -> Self {
        RegressorConfig {
            image_side: 100,
            convs: vec![
                ConvSpec::new(16, 32, 2),
                ConvSpec::new(32, 15, 2),
                ConvSpec::new(64, 5, 2),
                ConvSpec::new(128, 3, 1),
            ],
            hidden: [200, 100],
            dropout: 0.2,
        }
    }

    /// Spatial side after each conv, starting with the input side.
    pub fn extents(&self) -> Result<Vec<usize>> {
        chain_extents(self.image_side, &self.convs, "regressor")
    }

    pub fn flat_features(&self) -> Result<usize> {
        let e = *self.extents()?.last().expect("non-empty");
        let c = self.convs.last().map_or(3, |s| s.channels);
        Ok(c * e * e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hierarchy: HierarchyConfig,
    pub grid_side: usize,
    /// Encoder conv stack; the decoder mirrors it in reverse.
    pub encoder: Vec<ConvSpec>,
    /// Width of the two hidden layers in every local inference/prior network.
    pub local_hidden: usize,
    #[serde(default)]
    pub regressor: Option<RegressorConfig>,
}

fn chain_extents(input: usize, convs: &[ConvSpec], what: &str) -> Result<Vec<usize>> {
    if convs.is_empty() {
        return Err(Error::Config(format!("{what} needs at least one conv layer")));
    }
    let mut ext = vec![input];
    for (i, c) in convs.iter().enumerate() {
        if c.channels == 0 {
            return Err(Error::Config(format!("{what} layer {i} has zero channels")));
        }
        let prev = *ext.last().expect("non-empty");
        let next = conv_extent(prev, c.kernel, c.stride).ok_or_else(|| {
            Error::Config(format!(
                "{what} layer {i}: kernel {} does not fit extent {prev}",
                c.kernel
            ))
        })?;
        ext.push(next);
    }
    Ok(ext)
}

impl ModelConfig {
    fn voxel(hierarchy: HierarchyConfig) -> Self {
        ModelConfig {
            hierarchy,
            grid_side: 30,
            encoder: vec![
                ConvSpec::new(32, 6, 2),
                ConvSpec::new(64, 5, 2),
                ConvSpec::new(128, 4, 1),
            ],
            local_hidden: 100,
            regressor: None,
        }
    }

    /// 5 local codes of 10 dims, 20-dim global code.
    pub fn modelnet40() -> Self {
        Self::voxel(HierarchyConfig::new(5, 10, 20))
    }

    /// 5 local codes of 5 dims, 10-dim global code.
    pub fn modelnet10() -> Self {
        Self::voxel(HierarchyConfig::new(5, 5, 10))
    }

    /// Image-to-voxel model trained jointly across categories.
    pub fn retrieval_joint() -> Self {
        ModelConfig {
            regressor: Some(RegressorConfig::standard()),
            ..Self::voxel(HierarchyConfig::new(5, 5, 20))
        }
    }

    /// Per-category image-to-voxel model.
    pub fn retrieval_separate() -> Self {
        ModelConfig {
            regressor: Some(RegressorConfig::standard()),
            ..Self::voxel(HierarchyConfig::new(3, 2, 5))
        }
    }

    /// Divides every conv channel count by `divisor` (at least one channel).
    pub fn with_channel_divisor(mut self, divisor: usize) -> Self {
        let div = divisor.max(1);
        for c in &mut self.encoder {
            c.channels = (c.channels / div).max(1);
        }
        if let Some(r) = &mut self.regressor {
            for c in &mut r.convs {
                c.channels = (c.channels / div).max(1);
            }
        }
        self
    }

    pub fn total_dim(&self) -> usize {
        self.hierarchy.total_dim()
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        [self.grid_side; 3]
    }

    /// Encoder spatial sides, e.g. `[30, 13, 5, 2]`.
    pub fn encoder_extents(&self) -> Result<Vec<usize>> {
        chain_extents(self.grid_side, &self.encoder, "encoder")
    }

    /// Decoder spatial sides, starting at the lifted code, e.g. `[2, 5, 13, 30]`.
    pub fn decoder_extents(&self) -> Result<Vec<usize>> {
        let enc = self.encoder_extents()?;
        let mut ext = vec![*enc.last().expect("non-empty")];
        for c in self.encoder.iter().rev() {
            let prev = *ext.last().expect("non-empty");
            ext.push(deconv_extent(prev, c.kernel, c.stride));
        }
        Ok(ext)
    }

    /// Length of the flattened encoder output (1024 for the standard stack).
    pub fn feature_len(&self) -> Result<usize> {
        let e = *self.encoder_extents()?.last().expect("non-empty");
        Ok(self.encoder.last().expect("validated").channels * e * e * e)
    }

    /// Channels entering each encoder layer (1 for the voxel input).
    pub fn encoder_in_channels(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.encoder.iter().map(|c| c.channels))
            .take(self.encoder.len())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.hierarchy.validate()?;
        if self.local_hidden == 0 {
            return Err(Error::Config("local_hidden must be positive".into()));
        }
        let dec = self.decoder_extents()?;
        if *dec.last().expect("non-empty") != self.grid_side {
            return Err(Error::Config(format!(
                "decoder output side {} does not reproduce grid side {} (decoder sides {dec:?})",
                dec.last().expect("non-empty"),
                self.grid_side
            )));
        }
        if let Some(r) = &self.regressor {
            r.extents()?;
            if r.hidden.contains(&0) {
                return Err(Error::Config("regressor hidden widths must be positive".into()));
            }
            if !(0.0..1.0).contains(&r.dropout) {
                return Err(Error::Config(format!("dropout {} outside [0, 1)", r.dropout)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_chains() {
        let c = ModelConfig::modelnet40();
        c.validate().unwrap();
        assert_eq!(c.encoder_extents().unwrap(), vec![30, 13, 5, 2]);
        assert_eq!(c.decoder_extents().unwrap(), vec![2, 5, 13, 30]);
        assert_eq!(c.feature_len().unwrap(), 1024);
        assert_eq!(c.total_dim(), 70);
        assert_eq!(ModelConfig::modelnet10().total_dim(), 35);
        let r = RegressorConfig::standard();
        assert_eq!(r.extents().unwrap(), vec![100, 35, 11, 4, 2]);
        assert_eq!(r.flat_features().unwrap(), 512);
        assert_eq!(ModelConfig::retrieval_joint().total_dim(), 45);
        assert_eq!(ModelConfig::retrieval_separate().total_dim(), 11);
    }

    #[test]
    fn lossy_stride_is_rejected() {
        let mut c = ModelConfig::modelnet10();
        c.grid_side = 31; // (31-6)/2 drops a remainder, the decoder cannot return to 31
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(ModelConfig::modelnet10()).unwrap();
        v["typo"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }
}
