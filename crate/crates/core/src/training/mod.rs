//! Triplet sampling, per-kind training loops, reports and batch embedding.

mod sampler;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Optimizer, OptimizerConfig, Tensor, Var};
use crate::kv::KvDoc;
use crate::models::{
    infovae_loss, multitask_loss, recon_loss, reparameterize, simsiam_loss, simsiam_loss_symmetric, stack_batch,
    triplet_loss, EncoderConfig, LossWeights, Model, ModelError, ModelKind, Net,
};
use crate::volumes::{PreparedCase, Split};

pub use sampler::{TripletBatch, TripletSampler};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("triplet sampling: {0}")]
    Triplet(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("embedding: {0}")]
    Embed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Multitask,
            epochs: 150,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            seed: 1,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(format!(
                "epochs ({}) and batch_size ({}) must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        self.encoder.validate()?;
        self.weights.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub epoch_losses: Vec<f64>,
    pub batch_losses: Vec<f64>,
    pub steps: u64,
    pub wall_clock_secs: f64,
    pub checksum: String,
    /// Every case id a training step read.
    pub touched_case_ids: BTreeSet<String>,
    pub used_dose_branch: bool,
}

impl TrainReport {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("kind", self.kind)
            .push("epochs", self.epoch_losses.len())
            .push("steps", self.steps)
            .push_list("epoch_losses", &self.epoch_losses)
            .push("final_loss", self.epoch_losses.last().copied().unwrap_or(f64::NAN))
            .push("wall_clock_secs", format!("{:.3}", self.wall_clock_secs))
            .push("checksum", &self.checksum)
            .push("train_cases", self.touched_case_ids.len())
            .push("used_dose_branch", self.used_dose_branch);
        doc
    }
}

fn batch_of(cases: &[&PreparedCase], idx: &[usize], dose: bool) -> Result<Tensor<f32>, ModelError> {
    let items: Vec<&Tensor<f32>> = idx
        .iter()
        .map(|&i| if dose { &cases[i].dose } else { &cases[i].anatomy })
        .collect();
    stack_batch(&items)
}

struct Step<'a> {
    cases: &'a [&'a PreparedCase],
    weights: &'a LossWeights,
    rng: &'a mut ChaCha8Rng,
    touched: &'a mut BTreeSet<String>,
    used_dose: &'a mut bool,
}

impl Step<'_> {
    fn input(&mut self, g: &mut Graph<f32>, idx: &[usize], dose: bool) -> Result<Var, TrainError> {
        for &i in idx {
            if !self.touched.contains(&self.cases[i].meta.case_id) {
                self.touched.insert(self.cases[i].meta.case_id.clone());
            }
        }
        if dose {
            *self.used_dose = true;
        }
        Ok(g.constant(batch_of(self.cases, idx, dose)?))
    }

    fn simsiam(&mut self, g: &mut Graph<f32>, net: &Net, z1: Var, anchors: &[usize]) -> Result<Var, TrainError> {
        let x2 = self.input(g, anchors, true)?;
        let z2 = net.embed(g, x2)?;
        let q1 = net.project(g, z1)?;
        let q2 = net.project(g, z2)?;
        let p1 = net.predict(g, q1)?;
        if self.weights.symmetric_simsiam {
            let p2 = net.predict(g, q2)?;
            Ok(simsiam_loss_symmetric(g, p1, q2, p2, q1)?)
        } else {
            Ok(simsiam_loss(g, p1, q2)?)
        }
    }

    fn loss(&mut self, g: &mut Graph<f32>, net: &Net, kind: ModelKind, batch: &TripletBatch) -> Result<Var, TrainError> {
        let w = self.weights.clone();
        let x = self.input(g, &batch.anchors, false)?;
        match kind {
            ModelKind::VanillaAutoencoder => {
                let z = net.embed(g, x)?;
                let y = net.decode(g, z)?;
                Ok(recon_loss(g, y, x)?)
            }
            ModelKind::InfoVae => {
                let f = net.features(g, x)?;
                let heads = net.vae_heads(g, f)?;
                let shape = g.shape(heads.mu).to_vec();
                let eps = Tensor::randn(&shape, 1.0, self.rng);
                let prior = Tensor::randn(&shape, 1.0, self.rng);
                let z = reparameterize(g, heads.mu, heads.logvar, eps)?;
                let y = net.decode(g, z)?;
                let prior = g.constant(prior);
                Ok(infovae_loss(g, x, y, heads.mu, heads.logvar, z, prior, w.alpha, w.lambda)?)
            }
            ModelKind::SiameseTriplet => {
                let za = net.embed(g, x)?;
                let xp = self.input(g, &batch.positives, false)?;
                let xn = self.input(g, &batch.negatives, false)?;
                let zp = net.embed(g, xp)?;
                let zn = net.embed(g, xn)?;
                Ok(triplet_loss(g, za, zp, zn, w.margin)?)
            }
            ModelKind::Simsiam => {
                let z1 = net.embed(g, x)?;
                self.simsiam(g, net, z1, &batch.anchors)
            }
            ModelKind::Multitask => {
                let z1 = net.embed(g, x)?;
                let y = net.decode(g, z1)?;
                let recon = recon_loss(g, y, x)?;
                let ss = self.simsiam(g, net, z1, &batch.anchors)?;
                let xp = self.input(g, &batch.positives, false)?;
                let xn = self.input(g, &batch.negatives, false)?;
                let zp = net.embed(g, xp)?;
                let zn = net.embed(g, xn)?;
                let tl = triplet_loss(g, z1, zp, zn, w.margin)?;
                Ok(multitask_loss(g, recon, ss, tl, w.beta, w.gamma)?)
            }
        }
    }
}

/// Trains a fresh model of `config.kind` on the train split of `cases`.
pub fn train(cases: &[PreparedCase], config: &TrainConfig) -> Result<(Model, TrainReport), TrainError> {
    train_with(cases, config, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_with(
    cases: &[PreparedCase],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Model, TrainReport), TrainError> {
    config.validate()?;
    let start = Instant::now();
    let train: Vec<&PreparedCase> = cases.iter().filter(|c| c.meta.split == Split::Train).collect();
    if train.is_empty() {
        return Err(TrainError::Config("the train split is empty".into()));
    }
    let kind = config.kind;
    let sampler = if kind.uses_triplets() {
        Some(TripletSampler::new(&train.iter().map(|c| c.meta.class_id).collect::<Vec<_>>())?)
    } else {
        None
    };
    let mut model = Model::new(kind, config.encoder.clone(), config.seed)?;
    let mut opt = Optimizer::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut touched = BTreeSet::new();
    let mut used_dose = false;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_losses = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = match &sampler {
                Some(s) => s.complete(chunk, &mut rng),
                None => TripletBatch {
                    anchors: chunk.to_vec(),
                    ..Default::default()
                },
            };
            let mut g = Graph::<f32>::new();
            let net = model.bind(&mut g, true);
            let mut step = Step {
                cases: &train,
                weights: &config.weights,
                rng: &mut rng,
                touched: &mut touched,
                used_dose: &mut used_dose,
            };
            let loss = step.loss(&mut g, &net, kind, &batch)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: bi });
            }
            let mut grads = g.backward(loss)?;
            let vars = net.vars().to_vec();
            let grads: Vec<Tensor<f32>> = vars
                .iter()
                .map(|&v| grads.take(v).expect("every parameter receives a gradient"))
                .collect();
            if grads.iter().any(|t| !t.is_finite()) {
                return Err(TrainError::NonFinite { epoch, batch: bi });
            }
            opt.step(model.params_mut().tensors_mut(), &grads)?;
            batch_losses.push(value);
            sum += value * chunk.len() as f64;
            count += chunk.len();
        }
        let mean = sum / count as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }

    let report = TrainReport {
        kind,
        epoch_losses,
        batch_losses,
        steps: opt.steps_taken(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        checksum: model.checksum(),
        touched_case_ids: touched,
        used_dose_branch: used_dose,
    };
    Ok((model, report))
}

/// Row-major `(N, M)` embedding matrix aligned with `case_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub case_ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.case_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.case_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Embeds the anatomy channels of every case, one case per task, on a pool
/// of `threads` workers (0 = rayon default). Rows follow input order.
pub fn embed_dataset(model: &Model, cases: &[PreparedCase], threads: usize) -> Result<Embeddings, TrainError> {
    let expected = {
        let c = model.config();
        let mut s = vec![c.in_channels];
        s.extend_from_slice(&c.input_dims);
        s
    };
    for c in cases {
        if c.anatomy.shape() != expected.as_slice() {
            return Err(TrainError::Embed(format!(
                "case {} has shape {:?} but the model expects {expected:?}",
                c.meta.case_id,
                c.anatomy.shape()
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TrainError::Embed(e.to_string()))?;
    let rows: Vec<Vec<f32>> = pool.install(|| {
        cases
            .par_iter()
            .map(|c| {
                let x = stack_batch(&[&c.anatomy])?;
                Ok(model.embed(&x)?.into_data())
            })
            .collect::<Result<_, ModelError>>()
    })?;
    Ok(Embeddings {
        case_ids: cases.iter().map(|c| c.meta.case_id.clone()).collect(),
        dim: model.config().embed_dim,
        data: rows.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{prepare_case, ClassCriteria, PhantomGeometry, PhantomSpec, PrepConfig};

    pub(crate) fn tiny_cases(per_class: usize, classes: &[u8]) -> Vec<PreparedCase> {
        let prep = PrepConfig {
            dims: [8, 8, 8],
            ..Default::default()
        };
        let geometry = PhantomGeometry {
            dims: [16, 16, 16],
            ..Default::default()
        };
        let mut out = Vec::new();
        for &c in classes {
            for k in 0..per_class {
                let spec = PhantomSpec {
                    geometry: geometry.clone(),
                    ..PhantomSpec::new(format!("t{c}-{k}"), ClassCriteria::from_class_id(c).unwrap(), 100 + k as u64)
                };
                let (vol, meta) = crate::volumes::generate_phantom(&spec).unwrap();
                out.push(prepare_case(&vol, &meta, &prep).unwrap());
            }
        }
        out
    }

    fn tiny_config(kind: ModelKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            kind,
            epochs,
            batch_size: 4,
            encoder: EncoderConfig {
                widths: vec![4, 8, 8],
                groups: 2,
                embed_dim: 8,
                input_dims: [8, 8, 8],
                ..Default::default()
            },
            optimizer: OptimizerConfig {
                lr: 3e-3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn vanilla_loss_decreases() {
        let cases = tiny_cases(4, &[0, 21]);
        let (_, r) = train(&cases, &tiny_config(ModelKind::VanillaAutoencoder, 30)).unwrap();
        assert!(r.epoch_losses.last() < r.epoch_losses.first(), "{:?}", r.epoch_losses);
        assert!(!r.used_dose_branch);
    }

    #[test]
    fn triplet_separates_two_classes() {
        let cases = tiny_cases(4, &[0, 31]);
        let (_, r) = train(&cases, &tiny_config(ModelKind::SiameseTriplet, 30)).unwrap();
        assert!(*r.epoch_losses.last().unwrap() < 0.1, "{:?}", r.epoch_losses);
    }

    #[test]
    fn simsiam_stays_in_cosine_bounds_and_uses_dose() {
        let cases = tiny_cases(3, &[2, 18]);
        let (_, r) = train(&cases, &tiny_config(ModelKind::Simsiam, 5)).unwrap();
        assert!(r.batch_losses.iter().all(|&l| (-1.0..=1.0).contains(&l)));
        assert!(r.used_dose_branch);
    }

    #[test]
    fn only_train_split_is_read() {
        let mut cases = tiny_cases(3, &[1, 9]);
        cases[0].meta.split = Split::Test;
        cases[4].meta.split = Split::Validation;
        let (_, r) = train(&cases, &tiny_config(ModelKind::Multitask, 2)).unwrap();
        assert!(!r.touched_case_ids.contains(&cases[0].meta.case_id));
        assert!(!r.touched_case_ids.contains(&cases[4].meta.case_id));
        assert_eq!(r.touched_case_ids.len(), 4);
    }

    #[test]
    fn training_is_deterministic() {
        let cases = tiny_cases(2, &[3, 12]);
        let cfg = tiny_config(ModelKind::InfoVae, 2);
        let (a, ra) = train(&cases, &cfg).unwrap();
        let (b, _) = train(&cases, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.checksum, b.checksum());
    }

    #[test]
    fn singleton_class_fails_for_triplet_kinds() {
        let mut cases = tiny_cases(2, &[3, 12]);
        cases[1].meta.split = Split::Test;
        assert!(matches!(
            train(&cases, &tiny_config(ModelKind::SiameseTriplet, 1)),
            Err(TrainError::Triplet(_))
        ));
        assert!(train(&cases, &tiny_config(ModelKind::VanillaAutoencoder, 1)).is_ok());
    }

    #[test]
    fn embedding_is_thread_count_invariant_and_order_aligned() {
        let cases = tiny_cases(3, &[0, 5, 30]);
        let model = Model::new(ModelKind::Multitask, tiny_config(ModelKind::Multitask, 1).encoder, 3).unwrap();
        let one = embed_dataset(&model, &cases, 1).unwrap();
        let four = embed_dataset(&model, &cases, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!((one.len(), one.dim), (9, 8));
        let rev: Vec<PreparedCase> = cases.iter().rev().cloned().collect();
        let back = embed_dataset(&model, &rev, 2).unwrap();
        for i in 0..9 {
            assert_eq!(back.row(i), one.row(8 - i));
        }
        let wrong = Model::new(ModelKind::Multitask, EncoderConfig::default(), 3).unwrap();
        assert!(embed_dataset(&wrong, &cases, 1).is_err());
    }
}
