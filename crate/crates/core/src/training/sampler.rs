use std::collections::BTreeMap;

use rand::Rng;

use super::TrainError;

/// Indices into the sampled case list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Draws (anchor, positive, negative) index triples from class labels.
#[derive(Clone, Debug)]
pub struct TripletSampler {
    labels: Vec<u8>,
    members: BTreeMap<u8, Vec<usize>>,
}

impl TripletSampler {
    /// Every class needs at least two members and there must be two classes.
    pub fn new(labels: &[u8]) -> Result<Self, TrainError> {
        let mut members: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            members.entry(c).or_default().push(i);
        }
        if let Some((&c, _)) = members.iter().find(|(_, m)| m.len() < 2) {
            return Err(TrainError::Triplet(format!(
                "class {c} has a single training case, so no positive exists"
            )));
        }
        if members.len() < 2 {
            return Err(TrainError::Triplet("triplets need at least two classes".into()));
        }
        Ok(Self {
            labels: labels.to_vec(),
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Positive uniform over the anchor's classmates, negative uniform over
    /// all cases of other classes.
    pub fn complete<R: Rng + ?Sized>(&self, anchors: &[usize], rng: &mut R) -> TripletBatch {
        let n = self.labels.len();
        let mut batch = TripletBatch::default();
        for &a in anchors {
            let class = self.labels[a];
            let mates = &self.members[&class];
            let mut p = mates[rng.random_range(0..mates.len() - 1)];
            if p == a {
                p = *mates.last().unwrap();
            }
            let others = n - mates.len();
            let mut k = rng.random_range(0..others);
            let mut neg = 0;
            for (i, &l) in self.labels.iter().enumerate() {
                if l != class {
                    if k == 0 {
                        neg = i;
                        break;
                    }
                    k -= 1;
                }
            }
            batch.anchors.push(a);
            batch.positives.push(p);
            batch.negatives.push(neg);
        }
        batch
    }

    /// `batch` anchors drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> TripletBatch {
        let anchors: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.labels.len())).collect();
        self.complete(&anchors, rng)
    }
}
