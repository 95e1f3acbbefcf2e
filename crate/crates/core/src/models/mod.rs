//! The five encoder families, their losses and the checkpoint format.

mod checkpoint;
mod losses;
mod net;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::autodiff::AutodiffError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use losses::{
    infovae_combine, infovae_loss, kl_gauss, median_bandwidth, mmd_rbf, multitask_loss, recon_loss, reparameterize,
    simsiam_loss, simsiam_loss_symmetric, triplet_loss,
};
pub use net::{stack_batch, Model, Net, ParamStore, VaeOutput};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Kv(#[from] crate::kv::KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VanillaAutoencoder,
    InfoVae,
    SiameseTriplet,
    Simsiam,
    Multitask,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::VanillaAutoencoder,
        ModelKind::InfoVae,
        ModelKind::SiameseTriplet,
        ModelKind::Simsiam,
        ModelKind::Multitask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::VanillaAutoencoder => "vanilla_autoencoder",
            ModelKind::InfoVae => "info_vae",
            ModelKind::SiameseTriplet => "siamese_triplet",
            ModelKind::Simsiam => "simsiam",
            ModelKind::Multitask => "multitask",
        }
    }

    pub fn has_decoder(self) -> bool {
        matches!(
            self,
            ModelKind::VanillaAutoencoder | ModelKind::InfoVae | ModelKind::Multitask
        )
    }

    /// μ and logvar heads replace the plain embedding layer.
    pub fn has_vae_heads(self) -> bool {
        self == ModelKind::InfoVae
    }

    pub fn has_projector(self) -> bool {
        matches!(self, ModelKind::Simsiam | ModelKind::Multitask)
    }

    pub fn uses_triplets(self) -> bool {
        matches!(self, ModelKind::SiameseTriplet | ModelKind::Multitask)
    }

    /// Kinds trained on (anatomy, dose) view pairs.
    pub fn uses_dose_view(self) -> bool {
        self.has_projector()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown model `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    pub groups: usize,
    pub slope: f64,
    pub embed_dim: usize,
    pub in_channels: usize,
    pub input_dims: [usize; 3],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            widths: vec![8, 16, 32, 64],
            groups: 4,
            slope: crate::autodiff::LEAKY_SLOPE,
            embed_dim: 32,
            in_channels: 2,
            input_dims: [16, 16, 16],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be at least 2, got {}", self.embed_dim));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("stage widths must be positive, got {:?}", self.widths));
        }
        if self.groups == 0 || self.widths.iter().any(|w| w % self.groups != 0) {
            return bad(format!("groups {} must divide every width {:?}", self.groups, self.widths));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        let stride = self.total_stride();
        if self.input_dims.iter().any(|&d| d == 0 || d % stride != 0) {
            return bad(format!(
                "input dims {:?} must be divisible by the total stride {stride}",
                self.input_dims
            ));
        }
        if !(self.slope >= 0.0 && self.slope < 1.0) {
            return bad(format!("negative slope must be in [0, 1), got {}", self.slope));
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        1 << self.widths.len()
    }

    /// Spatial extent after the last encoder stage.
    pub fn bottleneck_dims(&self) -> [usize; 3] {
        self.input_dims.map(|d| d / self.total_stride())
    }

    /// Flattened feature count entering the embedding layer.
    pub fn feature_len(&self) -> usize {
        self.widths.last().unwrap() * self.bottleneck_dims().iter().product::<usize>()
    }

    pub fn predictor_hidden(&self) -> usize {
        (self.embed_dim / 4).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub margin: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Average both SimSiam directions instead of the one-sided form.
    pub symmetric_simsiam: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            lambda: 10.0,
            margin: 1.0,
            beta: 1e-2,
            gamma: 1e-1,
            symmetric_simsiam: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.margin > 0.0) {
            return Err(ModelError::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(ModelError::Config(format!(
                "beta and gamma must be non-negative, got {} and {}",
                self.beta, self.gamma
            )));
        }
        if ![self.alpha, self.lambda].iter().all(|v| v.is_finite()) {
            return Err(ModelError::Config("alpha and lambda must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("resnet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let c = EncoderConfig {
            embed_dim: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = EncoderConfig {
            groups: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = EncoderConfig {
            input_dims: [24, 16, 16],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(EncoderConfig::default().feature_len(), 64);
        assert!(LossWeights {
            margin: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
