//! Synthetic phantoms in the 32-class taxonomy and the preprocessing pipeline
//! (resample, window, normalize, channel assembly).

mod dataset;
mod grid;
pub mod io;
mod phantom;
mod prep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::{make_dataset, split_counts, DatasetConfig, GeneratedCase};
pub use grid::{
    distance_transform, resample, resample_nearest, resample_trilinear, window_normalize,
    window_normalize_value, ResampleMode, VoxelGrid,
};
pub use phantom::{generate_phantom, recover_criteria, synthesize_dose, PhantomGeometry, PhantomSpec};
pub use prep::{assemble_channels, prepare_case, preprocess, ChannelVariant, MaskEncoding, PrepConfig, PreparedCase};

#[derive(Debug, thiserror::Error)]
pub enum VolumeError {
    #[error("grid dims {dims:?} do not match {len} voxels")]
    GridSize { dims: [usize; 3], len: usize },
    #[error("case volume channels disagree: {0}")]
    Inconsistent(String),
    #[error("resample needs at least 2 voxels per axis (source {from:?}, target {target:?})")]
    ResampleDims { from: [usize; 3], target: [usize; 3] },
    #[error("window width must be positive, got {width}")]
    Window { width: f32 },
    #[error("degenerate phantom spec: {0}")]
    DegenerateSpec(String),
    #[error("mask has no primary target (label 1)")]
    EmptyTarget,
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("case file {path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Kv(#[from] crate::kv::KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Position in `ALL`.
            pub fn ordinal(self) -> u8 {
                Self::ALL.iter().position(|&v| v == self).unwrap() as u8
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} `{s}`", stringify!($name))),
                }
            }
        }
    };
}

named_enum!(BodySite { Prostate => "prostate", HeadAndNeck => "head_and_neck" });
named_enum!(TargetLevels { Single => "single", Multiple => "multiple" });
named_enum!(PtvSize { Small => "small", Large => "large" });
named_enum!(PtvLocation {
    Left => "left",
    Right => "right",
    Center => "center",
    Bilateral => "bilateral",
});
named_enum!(Split { Train => "train", Validation => "validation", Test => "test" });

/// Number of distinct classes: 2 sites × 2 target levels × 2 sizes × 4 locations.
pub const NUM_CLASSES: usize = 32;

/// The four classification criteria of a case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassCriteria {
    pub site: BodySite,
    pub levels: TargetLevels,
    pub size: PtvSize,
    pub location: PtvLocation,
}

/// Mixed-radix class id: `site·16 + levels·8 + size·4 + location`.
pub fn classify_case(c: &ClassCriteria) -> u8 {
    c.site.ordinal() * 16 + c.levels.ordinal() * 8 + c.size.ordinal() * 4 + c.location.ordinal()
}

impl ClassCriteria {
    pub fn class_id(&self) -> u8 {
        classify_case(self)
    }

    pub fn from_class_id(id: u8) -> Option<Self> {
        if id as usize >= NUM_CLASSES {
            return None;
        }
        Some(Self {
            site: BodySite::ALL[(id / 16) as usize],
            levels: TargetLevels::ALL[((id / 8) % 2) as usize],
            size: PtvSize::ALL[((id / 4) % 2) as usize],
            location: PtvLocation::ALL[(id % 4) as usize],
        })
    }

    /// All 32 criteria tuples in class-id order.
    pub fn all() -> impl Iterator<Item = ClassCriteria> {
        (0..NUM_CLASSES as u8).map(|id| Self::from_class_id(id).unwrap())
    }
}

/// Per-case metadata carried alongside volumes and into the plan database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub criteria: ClassCriteria,
    pub class_id: u8,
    /// Delivery technique tag (e.g. VMAT or IMRT), usable as a database filter.
    pub protocol: String,
    pub split: Split,
    pub prescription: f64,
}

/// Multichannel voxel data of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseVolume {
    pub ct: VoxelGrid<f32>,
    pub mask: VoxelGrid<u8>,
    pub dose: VoxelGrid<f32>,
    /// Voxel size in mm, ordered like `dims` (z, y, x).
    pub spacing: [f64; 3],
}

pub const MAX_LABEL: u8 = 4;

impl CaseVolume {
    pub fn new(
        ct: VoxelGrid<f32>,
        mask: VoxelGrid<u8>,
        dose: VoxelGrid<f32>,
        spacing: [f64; 3],
    ) -> Result<Self, VolumeError> {
        let case = Self {
            ct,
            mask,
            dose,
            spacing,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.ct.dims()
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        let d = self.ct.dims();
        if self.mask.dims() != d || self.dose.dims() != d {
            return Err(VolumeError::Inconsistent(format!(
                "ct {:?}, mask {:?}, dose {:?}",
                d,
                self.mask.dims(),
                self.dose.dims()
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::Inconsistent(format!("spacing {:?}", self.spacing)));
        }
        if self.mask.data().iter().any(|&l| l > MAX_LABEL) {
            return Err(VolumeError::Inconsistent("mask label outside 0..=4".into()));
        }
        if self.dose.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(VolumeError::Inconsistent("negative or NaN dose".into()));
        }
        Ok(())
    }
}
