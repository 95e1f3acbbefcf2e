//! Plan database: embedding records with metadata, filtered exact k-NN and
//! a binary file format.

mod filter;
mod store;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::volumes::CaseMeta;

pub use filter::Filter;
pub use store::{load_index, read_index, save_index, write_index, INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate case id `{0}`")]
    Duplicate(String),
    #[error("vector has dim {got}, index expects {expected}")]
    Dim { expected: usize, got: usize },
    #[error("vector for `{0}` is not finite")]
    NonFinite(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no records match filter `{0}`")]
    EmptyDatabase(String),
    #[error("bad filter: {0}")]
    Filter(String),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Kv(#[from] crate::kv::KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub case_id: String,
    pub vector: Vec<f32>,
    pub meta: CaseMeta,
    /// Path of the case's dose volume.
    pub dose_ref: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanIndex {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    ids: HashSet<String>,
}

impl PlanIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, case_id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.case_id == case_id)
    }

    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), IndexError> {
        if record.vector.len() != self.dim {
            return Err(IndexError::Dim {
                expected: self.dim,
                got: record.vector.len(),
            });
        }
        if record.vector.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite(record.case_id));
        }
        if self.ids.contains(&record.case_id) {
            return Err(IndexError::Duplicate(record.case_id));
        }
        self.ids.insert(record.case_id.clone());
        self.records.push(record);
        Ok(())
    }

    /// Records satisfying `filter`.
    pub fn filter(&self, filter: &Filter) -> IndexView<'_> {
        IndexView {
            dim: self.dim,
            records: self.records.iter().filter(|r| filter.matches(&r.meta)).collect(),
            description: filter.to_string(),
        }
    }

    pub fn view(&self) -> IndexView<'_> {
        self.filter(&Filter::default())
    }
}

/// Borrowed subset of an index.
#[derive(Clone, Debug)]
pub struct IndexView<'a> {
    dim: usize,
    records: Vec<&'a EmbeddingRecord>,
    description: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub case_id: String,
    pub distance: f64,
    pub class_id: u8,
    pub dose_ref: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    /// Nearest first; ties ordered by case id.
    pub hits: Vec<Hit>,
    /// Set when fewer than `k` records were available.
    pub truncated: bool,
    pub filter: String,
}

impl QueryResult {
    pub fn case_ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.case_id.as_str()).collect()
    }
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

struct Candidate<'a> {
    distance: f64,
    record: &'a EmbeddingRecord,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.record.case_id.cmp(&other.record.case_id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl<'a> IndexView<'a> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[&'a EmbeddingRecord] {
        &self.records
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Exact Euclidean top-`k` by brute force with a bounded max-heap.
    pub fn query(&self, q: &[f32], k: usize) -> Result<QueryResult, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if q.len() != self.dim {
            return Err(IndexError::Dim {
                expected: self.dim,
                got: q.len(),
            });
        }
        if self.records.is_empty() {
            return Err(IndexError::EmptyDatabase(self.description.clone()));
        }
        let mut heap: BinaryHeap<Candidate<'a>> = BinaryHeap::with_capacity(k + 1);
        for &record in &self.records {
            let c = Candidate {
                distance: euclidean(q, &record.vector),
                record,
            };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().unwrap() {
                heap.pop();
                heap.push(c);
            }
        }
        let hits = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Hit {
                case_id: c.record.case_id.clone(),
                distance: c.distance,
                class_id: c.record.meta.class_id,
                dose_ref: c.record.dose_ref.clone(),
            })
            .collect();
        Ok(QueryResult {
            hits,
            truncated: k > self.records.len(),
            filter: self.description.clone(),
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::volumes::{ClassCriteria, Split};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn meta(id: &str, class_id: u8) -> CaseMeta {
        CaseMeta {
            case_id: id.to_string(),
            criteria: ClassCriteria::from_class_id(class_id).unwrap(),
            class_id,
            protocol: if class_id.is_multiple_of(2) { "VMAT" } else { "IMRT" }.into(),
            split: Split::Train,
            prescription: 70.0,
        }
    }

    pub(crate) fn record(id: &str, class_id: u8, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord {
            case_id: id.into(),
            vector: v.to_vec(),
            meta: meta(id, class_id),
            dose_ref: format!("{id}.dose.vol"),
        }
    }

    #[test]
    fn small_example() {
        let mut idx = PlanIndex::new(2);
        idx.insert(record("a", 0, &[0.0, 0.0])).unwrap();
        idx.insert(record("b", 1, &[3.0, 4.0])).unwrap();
        idx.insert(record("c", 2, &[1.0, 0.0])).unwrap();
        let r = idx.view().query(&[0.0, 0.0], 2).unwrap();
        assert_eq!(r.case_ids(), ["a", "c"]);
        assert_eq!(r.hits[0].distance, 0.0);
        assert_eq!(r.hits[1].distance, 1.0);
        assert!(!r.truncated);
        let all = idx.view().query(&[0.0, 0.0], 5).unwrap();
        assert_eq!(all.hits.len(), 3);
        assert!(all.truncated);
        assert!(all.hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn insert_contract() {
        let mut idx = PlanIndex::new(2);
        for i in 0..10 {
            idx.insert(record(&format!("r{i}"), 0, &[i as f32, 1.0])).unwrap();
        }
        assert_eq!(idx.len(), 10);
        assert!(matches!(idx.insert(record("r3", 0, &[0.0, 0.0])), Err(IndexError::Duplicate(_))));
        assert!(matches!(idx.insert(record("x", 0, &[0.0])), Err(IndexError::Dim { .. })));
        assert!(matches!(idx.insert(record("y", 0, &[f32::NAN, 0.0])), Err(IndexError::NonFinite(_))));
        let r = idx.view().query(&[4.0, 1.0], 1).unwrap();
        assert_eq!((r.hits[0].case_id.as_str(), r.hits[0].distance), ("r4", 0.0));
    }

    #[test]
    fn ties_break_by_case_id() {
        let mut idx = PlanIndex::new(1);
        for id in ["d", "b", "c", "a"] {
            idx.insert(record(id, 0, &[1.0])).unwrap();
        }
        let r = idx.view().query(&[0.0], 3).unwrap();
        assert_eq!(r.case_ids(), ["a", "b", "c"]);
    }

    #[test]
    fn empty_view_and_zero_k() {
        let mut idx = PlanIndex::new(1);
        assert!(matches!(idx.view().query(&[0.0], 1), Err(IndexError::EmptyDatabase(_))));
        idx.insert(record("a", 0, &[1.0])).unwrap();
        assert!(matches!(idx.view().query(&[0.0], 0), Err(IndexError::ZeroK)));
    }

    #[test]
    fn matches_full_sort_and_is_prefix_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut idx = PlanIndex::new(4);
        for i in 0..200 {
            let v: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0f32)).collect();
            idx.insert(record(&format!("id{i:03}"), (i % 32) as u8, &v)).unwrap();
        }
        for _ in 0..50 {
            let q: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0f32)).collect();
            let mut all: Vec<(f64, &str)> =
                idx.records().iter().map(|r| (euclidean(&q, &r.vector), r.case_id.as_str())).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
            let mut prev: Option<QueryResult> = None;
            for k in 1..=8 {
                let r = idx.view().query(&q, k).unwrap();
                let want: Vec<&str> = all[..k].iter().map(|p| p.1).collect();
                assert_eq!(r.case_ids(), want);
                if let Some(p) = prev {
                    assert_eq!(p.hits[..], r.hits[..k - 1]);
                }
                prev = Some(r);
            }
        }
    }
}
