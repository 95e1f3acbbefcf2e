//! Class-consistent synthetic anatomy.
//!
//! Coordinates are in mm with the origin at the grid centre: x is lateral
//! (negative = left), y is anterior-posterior (negative = anterior), z is
//! cranio-caudal. The body is centred on x = 0, so the sagittal midplane is
//! the x = 0 plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::distance_transform;
use super::{
    BodySite, CaseMeta, CaseVolume, ClassCriteria, PtvLocation, PtvSize, Split, TargetLevels, VolumeError,
    VoxelGrid,
};

pub const AIR_HU: f32 = -1000.0;
/// Secondary target level as a fraction of the prescription.
pub const SECONDARY_LEVEL: f64 = 0.8;
/// Size boundary between small and large primary targets, as a radius
/// fraction of body width. Sits between the two generator ranges.
pub const SIZE_BOUNDARY: f64 = 0.15;

/// Randomization ranges of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomGeometry {
    pub dims: [usize; 3],
    /// Body width as a fraction of the lateral field of view.
    pub fill_fraction: f64,
    pub prostate_half_width_mm: (f64, f64),
    /// Lateral / anterior-posterior semi-axis ratio.
    pub prostate_aspect: (f64, f64),
    pub head_neck_half_width_mm: (f64, f64),
    pub head_neck_aspect: (f64, f64),
    /// Primary-target radius as a fraction of body width.
    pub small_ptv: (f64, f64),
    pub large_ptv: (f64, f64),
    /// Lateral centroid offset of left/right targets, fraction of half width.
    pub lateral_offset: (f64, f64),
    /// Maximum lateral jitter of central targets, fraction of half width.
    pub center_jitter: f64,
    /// Extra clearance between the midplane and each bilateral lobe, fraction
    /// of half width.
    pub bilateral_gap: f64,
    /// Lower bound on the secondary-target radius, in generator voxels.
    pub min_secondary_voxels: f64,
    pub noise_hu: f64,
}

impl Default for PhantomGeometry {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            fill_fraction: 0.85,
            prostate_half_width_mm: (165.0, 185.0),
            prostate_aspect: (1.5, 1.7),
            head_neck_half_width_mm: (80.0, 92.0),
            head_neck_aspect: (0.9, 1.0),
            small_ptv: (0.08, 0.12),
            large_ptv: (0.18, 0.25),
            lateral_offset: (0.3, 0.45),
            center_jitter: 0.03,
            bilateral_gap: 0.15,
            min_secondary_voxels: 2.5,
            noise_hu: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub case_id: String,
    pub criteria: ClassCriteria,
    pub seed: u64,
    pub geometry: PhantomGeometry,
    pub prescription: f64,
    pub dose_falloff_mm: f64,
}

impl PhantomSpec {
    pub fn new(case_id: impl Into<String>, criteria: ClassCriteria, seed: u64) -> Self {
        Self {
            case_id: case_id.into(),
            criteria,
            seed,
            geometry: PhantomGeometry::default(),
            prescription: 70.0,
            dose_falloff_mm: 15.0,
        }
    }

    fn validate(&self) -> Result<(), VolumeError> {
        let g = &self.geometry;
        let bad = |m: String| Err(VolumeError::DegenerateSpec(m));
        if g.dims.iter().any(|&n| n < 4) {
            return bad(format!("grid {:?} too small", g.dims));
        }
        for (name, (lo, hi)) in [
            ("small_ptv", g.small_ptv),
            ("large_ptv", g.large_ptv),
            ("lateral_offset", g.lateral_offset),
            ("prostate_aspect", g.prostate_aspect),
            ("head_neck_aspect", g.head_neck_aspect),
            ("prostate_half_width_mm", g.prostate_half_width_mm),
            ("head_neck_half_width_mm", g.head_neck_half_width_mm),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        if g.small_ptv.1 >= g.large_ptv.0 {
            return bad("small target radii must lie strictly below large ones".into());
        }
        if !(g.fill_fraction > 0.0 && g.fill_fraction <= 1.0) {
            return bad(format!("fill_fraction {} outside (0, 1]", g.fill_fraction));
        }
        // The largest primary radius must fit inside the narrowest body axis.
        let aspect = match self.criteria.site {
            BodySite::Prostate => g.prostate_aspect.1,
            BodySite::HeadAndNeck => g.head_neck_aspect.1,
        };
        let r_max = 2.0 * g.large_ptv.1.max(g.small_ptv.1);
        if r_max >= 1.0f64.min(1.0 / aspect) {
            return bad(format!(
                "target radius up to {r_max:.2}× half width exceeds the body (aspect {aspect})"
            ));
        }
        if !(self.prescription > 0.0 && self.dose_falloff_mm > 0.0) {
            return bad("prescription and dose falloff must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn sphere(center: [f64; 3], r: f64) -> Self {
        Self {
            center,
            radii: [r; 3],
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Builds the phantom of `spec`: a soft-tissue body on air, two site-specific
/// organs at risk (labels 3, 4), the primary target (label 1), an optional
/// secondary target level (label 2), and a synthetic dose.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(CaseVolume, CaseMeta), VolumeError> {
    spec.validate()?;
    let g = &spec.geometry;
    let c = spec.criteria;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (half_w, aspect) = match c.site {
        BodySite::Prostate => (uniform(&mut rng, g.prostate_half_width_mm), uniform(&mut rng, g.prostate_aspect)),
        BodySite::HeadAndNeck => (uniform(&mut rng, g.head_neck_half_width_mm), uniform(&mut rng, g.head_neck_aspect)),
    };
    let rx = half_w;
    let ry = half_w / aspect;
    let voxel = 2.0 * rx / (g.fill_fraction * g.dims[2] as f64);
    let spacing = [voxel; 3];
    let half_z = g.dims[0] as f64 * voxel / 2.0;
    let rz = 3.0 * half_z;
    let body_y = uniform(&mut rng, (-0.03, 0.03)) * ry;
    let body = Ellipsoid {
        center: [0.0, body_y, 0.0],
        radii: [rx, ry, rz],
    };

    // Organs at risk and bone, as (shape, label, HU).
    let mut structures: Vec<(Ellipsoid, u8, f32)> = Vec::new();
    match c.site {
        BodySite::Prostate => {
            let fz = uniform(&mut rng, (-0.15, 0.0)) * half_z;
            for side in [-1.0, 1.0] {
                let head = Ellipsoid::sphere([side * 0.62 * rx, body_y + 0.05 * ry, fz], 0.14 * rx);
                structures.push((head, 0, 750.0));
            }
            let bladder = Ellipsoid {
                center: [0.0, body_y - 0.45 * ry, uniform(&mut rng, (0.2, 0.35)) * half_z],
                radii: [0.22 * rx, 0.3 * ry, 0.25 * half_z],
            };
            structures.push((bladder, 3, 10.0));
            let rectum = Ellipsoid {
                center: [0.0, body_y + 0.6 * ry, 0.0],
                radii: [0.1 * rx, 0.17 * ry, 0.6 * half_z],
            };
            structures.push((rectum, 4, -80.0));
        }
        BodySite::HeadAndNeck => {
            let spine_y = body_y + 0.45 * ry;
            let vertebra = Ellipsoid {
                center: [0.0, spine_y, 0.0],
                radii: [0.22 * rx, 0.22 * rx, rz],
            };
            structures.push((vertebra, 0, 600.0));
            let cord = Ellipsoid {
                center: [0.0, spine_y, 0.0],
                radii: [0.09 * rx, 0.09 * rx, rz],
            };
            structures.push((cord, 3, 40.0));
            let oral = Ellipsoid {
                center: [0.0, body_y - 0.35 * ry, uniform(&mut rng, (0.25, 0.4)) * half_z],
                radii: [0.28 * rx, 0.22 * ry, 0.3 * half_z],
            };
            structures.push((oral, 4, -150.0));
        }
    }

    let size_range = match c.size {
        PtvSize::Small => g.small_ptv,
        PtvSize::Large => g.large_ptv,
    };
    let r = uniform(&mut rng, size_range) * 2.0 * rx;
    let cy = body_y + uniform(&mut rng, (-0.1, 0.1)) * ry;
    let cz = uniform(&mut rng, (-0.15, 0.15)) * half_z;
    let lateral = uniform(&mut rng, g.lateral_offset) * rx;
    let primary: Vec<Ellipsoid> = match c.location {
        PtvLocation::Left => vec![Ellipsoid::sphere([-lateral, cy, cz], r)],
        PtvLocation::Right => vec![Ellipsoid::sphere([lateral, cy, cz], r)],
        PtvLocation::Center => {
            let jitter = uniform(&mut rng, (-g.center_jitter, g.center_jitter)) * rx;
            vec![Ellipsoid::sphere([jitter, cy, cz], r)]
        }
        PtvLocation::Bilateral => {
            let cx = lateral.max(r + g.bilateral_gap * rx);
            vec![Ellipsoid::sphere([-cx, cy, cz], r), Ellipsoid::sphere([cx, cy, cz], r)]
        }
    };
    let secondary: Option<Ellipsoid> = (c.levels == TargetLevels::Multiple).then(|| {
        let x = match c.location {
            PtvLocation::Bilateral => 0.0,
            _ => primary[0].center[0],
        };
        let r2 = (0.7 * r).max(g.min_secondary_voxels * voxel);
        Ellipsoid::sphere([x, cy, cz + (1.3 * r).max(r + 0.8 * r2)], r2)
    });

    let noise = Normal::new(0.0, g.noise_hu.max(0.0)).expect("finite noise");
    let dims = g.dims;
    let n: usize = dims.iter().product();
    let mut ct = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let center = |i: usize, a: usize| (i as f64 - (dims[a] as f64 - 1.0) / 2.0) * voxel;
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [center(x, 2), center(y, 1), center(z, 0)];
                if !body.contains(p) {
                    ct.push(AIR_HU);
                    mask.push(0u8);
                    continue;
                }
                let mut hu = noise.sample(&mut rng);
                let mut label = 0u8;
                for (shape, l, value) in &structures {
                    if shape.contains(p) {
                        hu = *value as f64 + 0.5 * noise.sample(&mut rng);
                        if *l != 0 {
                            label = *l;
                        }
                    }
                }
                if secondary.is_some_and(|s| s.contains(p)) {
                    label = 2;
                }
                if primary.iter().any(|s| s.contains(p)) {
                    label = 1;
                }
                ct.push(hu as f32);
                mask.push(label);
            }
        }
    }
    let ct = VoxelGrid::new(dims, ct)?;
    let mask = VoxelGrid::new(dims, mask)?;
    let protocol = if rng.random_bool(0.5) { "VMAT" } else { "IMRT" };

    let mut case = CaseVolume {
        ct,
        mask,
        dose: VoxelGrid::filled(dims, 0.0),
        spacing,
    };
    case.dose = synthesize_dose(&case, spec.prescription, spec.dose_falloff_mm)?;
    case.validate()?;
    let meta = CaseMeta {
        case_id: spec.case_id.clone(),
        criteria: c,
        class_id: c.class_id(),
        protocol: protocol.to_string(),
        split: Split::Train,
        prescription: spec.prescription,
    };
    Ok((case, meta))
}

/// Prescription dose inside the primary target with a Gaussian falloff in the
/// distance (mm) from it; a secondary target, when present, is dosed at
/// [`SECONDARY_LEVEL`] of the prescription with the same falloff.
pub fn synthesize_dose(case: &CaseVolume, prescription: f64, falloff_mm: f64) -> Result<VoxelGrid<f32>, VolumeError> {
    let primary = case.mask.map(|l| l == 1);
    if !primary.data().iter().any(|&b| b) {
        return Err(VolumeError::EmptyTarget);
    }
    let two_s2 = 2.0 * falloff_mm * falloff_mm;
    let d1 = distance_transform(&primary, case.spacing);
    let mut dose: Vec<f64> = d1
        .data()
        .iter()
        .map(|&d| prescription * (-d * d / two_s2).exp())
        .collect();
    let secondary = case.mask.map(|l| l == 2);
    if secondary.data().iter().any(|&b| b) {
        let d2 = distance_transform(&secondary, case.spacing);
        for (v, &d) in dose.iter_mut().zip(d2.data()) {
            *v = v.max(SECONDARY_LEVEL * prescription * (-d * d / two_s2).exp());
        }
    }
    VoxelGrid::new(case.dims(), dose.into_iter().map(|v| v as f32).collect())
}

/// Reads the four criteria back out of a phantom's geometry: site from the
/// body's lateral/AP aspect ratio, target levels from the presence of label 2,
/// location from the primary target's mass about the midplane, and size from
/// the voxel count of one primary lobe against [`SIZE_BOUNDARY`].
pub fn recover_criteria(case: &CaseVolume) -> Option<ClassCriteria> {
    let sp = case.spacing;
    let mut xr = (usize::MAX, 0usize);
    let mut yr = (usize::MAX, 0usize);
    let mut body_x_sum = 0.0;
    let mut body_n = 0usize;
    for (i, &hu) in case.ct.data().iter().enumerate() {
        if hu > -500.0 {
            let [_, y, x] = case.ct.coords(i);
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(y), yr.1.max(y));
            body_x_sum += x as f64;
            body_n += 1;
        }
    }
    if body_n == 0 {
        return None;
    }
    let width_mm = (xr.1 - xr.0 + 1) as f64 * sp[2];
    let depth_mm = (yr.1 - yr.0 + 1) as f64 * sp[1];
    let site = if width_mm / depth_mm > 1.25 {
        BodySite::Prostate
    } else {
        BodySite::HeadAndNeck
    };
    let mid = body_x_sum / body_n as f64;

    let mut left = 0usize;
    let mut right = 0usize;
    let mut crosses = false;
    let mut x_sum = 0.0;
    let mut has_secondary = false;
    for (i, &l) in case.mask.data().iter().enumerate() {
        if l == 2 {
            has_secondary = true;
        }
        if l != 1 {
            continue;
        }
        let x = case.mask.coords(i)[2] as f64;
        x_sum += x;
        if (x - mid).abs() <= 1.0 {
            crosses = true;
        }
        if x < mid {
            left += 1;
        } else {
            right += 1;
        }
    }
    let total = left + right;
    if total == 0 {
        return None;
    }
    let half_width_vox = width_mm / 2.0 / sp[2];
    let offset = x_sum / total as f64 - mid;
    let bilateral = !crosses && left * 4 >= total && right * 4 >= total;
    let location = if bilateral {
        PtvLocation::Bilateral
    } else if offset < -0.12 * half_width_vox {
        PtvLocation::Left
    } else if offset > 0.12 * half_width_vox {
        PtvLocation::Right
    } else {
        PtvLocation::Center
    };
    let lobe = if bilateral { left.max(right) } else { total };
    let boundary_r = SIZE_BOUNDARY * width_mm;
    let boundary_voxels = 4.0 / 3.0 * std::f64::consts::PI * boundary_r.powi(3) / (sp[0] * sp[1] * sp[2]);
    let size = if (lobe as f64) > boundary_voxels {
        PtvSize::Large
    } else {
        PtvSize::Small
    };
    Some(ClassCriteria {
        site,
        levels: if has_secondary {
            TargetLevels::Multiple
        } else {
            TargetLevels::Single
        },
        size,
        location,
    })
}
