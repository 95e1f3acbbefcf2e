use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::{generate_phantom, PhantomGeometry, PhantomSpec};
use super::{CaseMeta, CaseVolume, ClassCriteria, Split, VolumeError, NUM_CLASSES};

/// Every class keeps at least this many training cases, overriding the
/// fractions when `per_class` is small.
pub const MIN_TRAIN_PER_CLASS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub fractions: [f64; 3],
    pub geometry: PhantomGeometry,
    pub prescription: f64,
    pub dose_falloff_mm: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_class: 10,
            seed: 1,
            fractions: [0.58, 0.11, 0.31],
            geometry: PhantomGeometry::default(),
            prescription: 70.0,
            dose_falloff_mm: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCase {
    pub volume: CaseVolume,
    pub meta: CaseMeta,
}

fn check_fractions(fractions: [f64; 3]) -> Result<(), VolumeError> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(VolumeError::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items over the three splits; ties in
/// the remainder go to the larger fraction.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], VolumeError> {
    check_fractions(fractions)?;
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(fractions[b].total_cmp(&fractions[a]))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[s] += 1;
        left -= 1;
    }
    Ok(counts)
}

/// Generates `per_class` phantoms for each of the 32 classes and assigns a
/// stratified train/validation/test split.
///
/// Global split sizes follow [`split_counts`]; each class receives the floor
/// of its own quota per split and the leftover cases are dealt to classes in
/// a seeded order. Case `i` is generated from its own ChaCha stream of the
/// master seed, so results do not depend on thread count.
pub fn make_dataset(config: &DatasetConfig) -> Result<Vec<GeneratedCase>, VolumeError> {
    if config.per_class < 3 {
        return Err(VolumeError::Config(format!(
            "per_class = {} but at least 3 cases per class are required",
            config.per_class
        )));
    }
    check_fractions(config.fractions)?;
    let n = config.per_class;
    let total = n * NUM_CLASSES;

    let specs: Vec<PhantomSpec> = ClassCriteria::all()
        .flat_map(|c| (0..n).map(move |k| (c, k)))
        .enumerate()
        .map(|(i, (criteria, k))| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let seed = rand::Rng::random::<u64>(&mut rng);
            PhantomSpec {
                case_id: format!("c{:02}-{:03}", criteria.class_id(), k),
                criteria,
                seed,
                geometry: config.geometry.clone(),
                prescription: config.prescription,
                dose_falloff_mm: config.dose_falloff_mm,
            }
        })
        .collect();

    let mut cases: Vec<GeneratedCase> = specs
        .par_iter()
        .map(|spec| generate_phantom(spec).map(|(volume, meta)| GeneratedCase { volume, meta }))
        .collect::<Result<_, _>>()?;

    let global = split_counts(total, config.fractions)?;
    let per_class_floor = config.fractions.map(|f| (f * n as f64).floor() as usize);
    let mut deficit: [usize; 3] = std::array::from_fn(|s| global[s] - per_class_floor[s] * NUM_CLASSES);
    let remainders = config.fractions.map(|f| f * n as f64 - (f * n as f64).floor());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let mut class_order: Vec<usize> = (0..NUM_CLASSES).collect();
    class_order.shuffle(&mut rng);

    let mut class_counts = vec![per_class_floor; NUM_CLASSES];
    for &c in &class_order {
        let mut leftover = n - per_class_floor.iter().sum::<usize>();
        let mut given = [false; 3];
        while leftover > 0 {
            let pick = (0..3)
                .filter(|&s| deficit[s] > 0)
                .max_by(|&a, &b| {
                    (!given[a])
                        .cmp(&!given[b])
                        .then(remainders[a].total_cmp(&remainders[b]))
                        .then(config.fractions[a].total_cmp(&config.fractions[b]))
                        .then(b.cmp(&a))
                })
                .expect("leftovers match global deficit");
            class_counts[c][pick] += 1;
            deficit[pick] -= 1;
            given[pick] = true;
            leftover -= 1;
        }
    }

    for counts in class_counts.iter_mut() {
        while counts[0] < MIN_TRAIN_PER_CLASS {
            let from = if counts[2] >= counts[1] { 2 } else { 1 };
            counts[from] -= 1;
            counts[0] += 1;
        }
    }

    for (c, &[tr, va, _]) in class_counts.iter().enumerate() {
        let mut members: Vec<usize> = (c * n..(c + 1) * n).collect();
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            cases[i].meta.split = if rank < tr {
                Split::Train
            } else if rank < tr + va {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    Ok(cases)
}
