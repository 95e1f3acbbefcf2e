use serde::{Deserialize, Serialize};

use super::grid::{resample_nearest, resample_trilinear, window_normalize_value};
use super::{CaseMeta, CaseVolume, VolumeError, MAX_LABEL};
use crate::autodiff::Tensor;

/// How contour labels enter the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskEncoding {
    /// One channel holding `label / 4`.
    Scaled,
    /// One channel per nonzero label.
    OneHot,
}

impl MaskEncoding {
    pub fn channels(self) -> usize {
        match self {
            MaskEncoding::Scaled => 1,
            MaskEncoding::OneHot => MAX_LABEL as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub dims: [usize; 3],
    pub window_width: f32,
    pub window_level: f32,
    pub mask_encoding: MaskEncoding,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            window_width: 400.0,
            window_level: 0.0,
            mask_encoding: MaskEncoding::Scaled,
        }
    }
}

impl PrepConfig {
    /// Network input channel count.
    pub fn channels(&self) -> usize {
        1 + self.mask_encoding.channels()
    }
}

/// Which image fills channel 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelVariant {
    /// Windowed CT: the query-time input.
    Anatomy,
    /// Dose scaled by prescription: the transformed view used in training.
    Dose,
}

/// Resamples all channels to `dims` (trilinear for CT and dose, nearest for
/// labels) and rescales the voxel spacing to cover the same extent.
pub fn preprocess(case: &CaseVolume, dims: [usize; 3]) -> Result<CaseVolume, VolumeError> {
    let src = case.dims();
    let ct = resample_trilinear(&case.ct, dims)?;
    let dose = resample_trilinear(&case.dose, dims)?;
    let mask = resample_nearest(&case.mask, dims)?;
    let mut spacing = case.spacing;
    for a in 0..3 {
        spacing[a] *= (src[a] - 1) as f64 / (dims[a] - 1) as f64;
    }
    let dose = dose.map(|v| v.max(0.0));
    CaseVolume::new(ct, mask, dose, spacing)
}

/// Channel-first network input of shape `(channels, depth, height, width)`.
///
/// Channel 0 is the windowed CT or the prescription-scaled dose; the remaining
/// channel(s) carry the contours and are identical for both variants.
pub fn assemble_channels(
    case: &CaseVolume,
    variant: ChannelVariant,
    prescription: f64,
    config: &PrepConfig,
) -> Result<Tensor<f32>, VolumeError> {
    if !(config.window_width > 0.0) {
        return Err(VolumeError::Window {
            width: config.window_width,
        });
    }
    let dims = case.dims();
    let n: usize = dims.iter().product();
    let channels = config.channels();
    let mut data = Vec::with_capacity(channels * n);
    match variant {
        ChannelVariant::Anatomy => data.extend(
            case.ct
                .data()
                .iter()
                .map(|&hu| window_normalize_value(hu, config.window_width, config.window_level)),
        ),
        ChannelVariant::Dose => {
            let rx = prescription as f32;
            data.extend(case.dose.data().iter().map(|&d| (d / rx).clamp(0.0, 1.0)));
        }
    }
    match config.mask_encoding {
        MaskEncoding::Scaled => {
            data.extend(case.mask.data().iter().map(|&l| l as f32 / MAX_LABEL as f32));
        }
        MaskEncoding::OneHot => {
            for label in 1..=MAX_LABEL {
                data.extend(case.mask.data().iter().map(|&l| if l == label { 1.0 } else { 0.0 }));
            }
        }
    }
    Tensor::new(vec![channels, dims[0], dims[1], dims[2]], data)
        .map_err(|e| VolumeError::Inconsistent(e.to_string()))
}

/// Network-ready case: metadata plus both channel variants.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCase {
    pub meta: CaseMeta,
    pub anatomy: Tensor<f32>,
    pub dose: Tensor<f32>,
}

pub fn prepare_case(case: &CaseVolume, meta: &CaseMeta, config: &PrepConfig) -> Result<PreparedCase, VolumeError> {
    let resampled = if case.dims() == config.dims {
        case.clone()
    } else {
        preprocess(case, config.dims)?
    };
    Ok(PreparedCase {
        meta: meta.clone(),
        anatomy: assemble_channels(&resampled, ChannelVariant::Anatomy, meta.prescription, config)?,
        dose: assemble_channels(&resampled, ChannelVariant::Dose, meta.prescription, config)?,
    })
}
