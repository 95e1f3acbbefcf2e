//! Retrieval metrics at k, the weighted retrieval score, clustering metrics
//! on top-1 predictions, and 2-D PCA export.

mod clustering;
mod pca;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use clustering::{
    adjusted_mutual_info, adjusted_rand, expected_mutual_info, homogeneity_completeness_v, mutual_info,
    ContingencyTable,
};
pub use pca::pca_project_2d;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("k = {k} outside 1..={depth}")]
    K { k: usize, depth: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// True class of one query and the classes of its retrieved records, nearest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRanking {
    pub true_class: u8,
    pub retrieved: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn depth(rankings: &[LabeledRanking]) -> usize {
    rankings.iter().map(|r| r.retrieved.len()).min().unwrap_or(0)
}

/// Confusion matrix over every (query class, retrieved class) pair at ranks
/// `1..=k`, one-vs-rest counts per class, macro-averaged over the classes
/// present among the queries. F₁ combines macro precision and macro recall.
pub fn metrics_at_k(rankings: &[LabeledRanking], k: usize) -> Result<MetricsAtK, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::Input("no rankings".into()));
    }
    let d = depth(rankings);
    if k == 0 || k > d {
        return Err(EvalError::K { k, depth: d });
    }
    let mut m = [[0u64; 256]; 256];
    let mut row = [0u64; 256];
    let mut col = [0u64; 256];
    for r in rankings {
        for &c in &r.retrieved[..k] {
            m[r.true_class as usize][c as usize] += 1;
            row[r.true_class as usize] += 1;
            col[c as usize] += 1;
        }
    }
    let total = (rankings.len() * k) as f64;
    let present: BTreeSet<u8> = rankings.iter().map(|r| r.true_class).collect();
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for &c in &present {
        let c = c as usize;
        let tp = m[c][c] as f64;
        let fp = col[c] as f64 - tp;
        let fneg = row[c] as f64 - tp;
        let tn = total - tp - fp - fneg;
        acc += (tp + tn) / total;
        prec += if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        rec += if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
    }
    let n = present.len() as f64;
    let (precision, recall) = (prec / n, rec / n);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsAtK {
        k,
        accuracy: acc / n,
        precision,
        recall,
        f1,
    })
}

/// Fraction of queries whose nearest record shares their class.
pub fn top1_match_rate(rankings: &[LabeledRanking]) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings.iter().filter(|r| r.retrieved.first() == Some(&r.true_class)).count();
    hits as f64 / rankings.len() as f64
}

/// Weight `base^(k + offset)` applied to the metric at cutoff `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeighting {
    pub base: f64,
    pub offset: i32,
}

impl Default for ScoreWeighting {
    fn default() -> Self {
        Self { base: 0.5, offset: 0 }
    }
}

/// `Σ_{k=1..n} f(k) · base^(k + offset)` where `f[k-1]` is the metric at `k`.
pub fn retrieval_score(f: &[f64], weighting: ScoreWeighting) -> f64 {
    f.iter()
        .enumerate()
        .map(|(i, &v)| v * weighting.base.powi(i as i32 + 1 + weighting.offset))
        .sum()
}

pub fn predicted_labels_top1(rankings: &[LabeledRanking]) -> Result<Vec<u8>, EvalError> {
    rankings
        .iter()
        .map(|r| {
            r.retrieved
                .first()
                .copied()
                .ok_or_else(|| EvalError::Input("ranking with no retrieved records".into()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub queries: usize,
    pub weighting: ScoreWeighting,
    pub at_k: Vec<MetricsAtK>,
    pub retrieval_scores: RetrievalScores,
    pub top1_match_rate: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
    pub adjusted_rand: f64,
    pub adjusted_mutual_info: f64,
}

/// One `(model, metric, k, value)` row; `k` is empty for aggregate metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub metric: String,
    pub k: Option<usize>,
    pub value: f64,
}

/// Full battery for cutoffs `1..=max_k`.
pub fn evaluate(
    model: &str,
    rankings: &[LabeledRanking],
    max_k: usize,
    weighting: ScoreWeighting,
) -> Result<MetricsReport, EvalError> {
    let at_k = (1..=max_k).map(|k| metrics_at_k(rankings, k)).collect::<Result<Vec<_>, _>>()?;
    let score = |f: fn(&MetricsAtK) -> f64| retrieval_score(&at_k.iter().map(f).collect::<Vec<_>>(), weighting);
    let truth: Vec<u8> = rankings.iter().map(|r| r.true_class).collect();
    let pred = predicted_labels_top1(rankings)?;
    let table = ContingencyTable::from_labels(&truth, &pred)?;
    let (h, c, v) = homogeneity_completeness_v(&table);
    Ok(MetricsReport {
        model: model.to_string(),
        queries: rankings.len(),
        weighting,
        retrieval_scores: RetrievalScores {
            accuracy: score(|m| m.accuracy),
            precision: score(|m| m.precision),
            recall: score(|m| m.recall),
            f1: score(|m| m.f1),
        },
        at_k,
        top1_match_rate: top1_match_rate(rankings),
        homogeneity: h,
        completeness: c,
        v_measure: v,
        adjusted_rand: adjusted_rand(&table)?,
        adjusted_mutual_info: adjusted_mutual_info(&table)?,
    })
}

impl MetricsReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        let mut push = |metric: &str, k: Option<usize>, value: f64| {
            out.push(MetricRow {
                model: self.model.clone(),
                metric: metric.to_string(),
                k,
                value,
            })
        };
        for m in &self.at_k {
            push("accuracy", Some(m.k), m.accuracy);
            push("precision", Some(m.k), m.precision);
            push("recall", Some(m.k), m.recall);
            push("f1", Some(m.k), m.f1);
        }
        let s = &self.retrieval_scores;
        push("accuracy_score", None, s.accuracy);
        push("precision_score", None, s.precision);
        push("recall_score", None, s.recall);
        push("f1_score", None, s.f1);
        push("top1_match_rate", None, self.top1_match_rate);
        push("homogeneity", None, self.homogeneity);
        push("completeness", None, self.completeness);
        push("v_measure", None, self.v_measure);
        push("adjusted_rand", None, self.adjusted_rand);
        push("adjusted_mutual_info", None, self.adjusted_mutual_info);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.rows().iter().all(|r| r.value.is_finite())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn write_rows_csv(rows: &[MetricRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Table-shaped comparison: one row per model.
pub fn write_comparison_csv(reports: &[MetricsReport], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "accuracy_score",
        "precision_score",
        "recall_score",
        "f1_score",
        "homogeneity",
        "completeness",
        "v_measure",
        "adjusted_rand",
        "adjusted_mutual_info",
        "top1_match_rate",
    ])?;
    for r in reports {
        let s = &r.retrieval_scores;
        let vals = [
            s.accuracy,
            s.precision,
            s.recall,
            s.f1,
            r.homogeneity,
            r.completeness,
            r.v_measure,
            r.adjusted_rand,
            r.adjusted_mutual_info,
            r.top1_match_rate,
        ];
        let mut rec = vec![r.model.clone()];
        rec.extend(vals.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub case_id: String,
    pub x: f64,
    pub y: f64,
    pub class_id: u8,
}

pub fn write_pca_csv(rows: &[PcaRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(t: u8, got: &[u8]) -> LabeledRanking {
        LabeledRanking {
            true_class: t,
            retrieved: got.to_vec(),
        }
    }

    #[test]
    fn perfect_retrieval_scores_one() {
        let rs: Vec<_> = (0..6).map(|i| r(i % 3, &[i % 3; 5])).collect();
        for k in 1..=5 {
            let m = metrics_at_k(&rs, k).unwrap();
            assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        }
        let rep = evaluate("p", &rs, 5, ScoreWeighting::default()).unwrap();
        assert_eq!(rep.retrieval_scores.accuracy, 0.96875);
        assert_eq!(predicted_labels_top1(&rs).unwrap(), vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn swapped_pair_gives_half() {
        let rs = [r(0, &[0]), r(0, &[1]), r(1, &[1]), r(1, &[0])];
        let m = metrics_at_k(&rs, 1).unwrap();
        assert_eq!((m.precision, m.recall), (0.5, 0.5));
    }

    #[test]
    fn k_out_of_range() {
        let rs = [r(0, &[0, 1])];
        assert!(metrics_at_k(&rs, 3).is_err());
        assert!(metrics_at_k(&rs, 0).is_err());
    }

    fn oracle(rs: &[LabeledRanking], k: usize) -> MetricsAtK {
        let classes: BTreeSet<u8> = rs.iter().map(|r| r.true_class).collect();
        let pairs: Vec<(u8, u8)> = rs.iter().flat_map(|r| r.retrieved[..k].iter().map(move |&c| (r.true_class, c))).collect();
        let (mut a, mut p, mut rc) = (0.0, 0.0, 0.0);
        for &c in &classes {
            let (mut tp, mut fp, mut fneg, mut tn) = (0.0, 0.0, 0.0, 0.0);
            for &(t, g) in &pairs {
                match (t == c, g == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fneg += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
            a += (tp + tn) / (tp + tn + fp + fneg);
            p += if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            rc += if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        }
        let n = classes.len() as f64;
        let (p, rc) = (p / n, rc / n);
        MetricsAtK {
            k,
            accuracy: a / n,
            precision: p,
            recall: rc,
            f1: if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 },
        }
    }

    #[test]
    fn matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let nc = rng.random_range(1..=10u8);
            let nq = rng.random_range(1..=50);
            let rs: Vec<_> = (0..nq)
                .map(|_| {
                    let got: Vec<u8> = (0..5).map(|_| rng.random_range(0..nc)).collect();
                    r(rng.random_range(0..nc), &got)
                })
                .collect();
            for k in 1..=5 {
                let (a, b) = (metrics_at_k(&rs, k).unwrap(), oracle(&rs, k));
                for (x, y) in [(a.accuracy, b.accuracy), (a.precision, b.precision), (a.recall, b.recall), (a.f1, b.f1)] {
                    assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn relabeling_invariance() {
        let rs = [r(0, &[0, 2]), r(1, &[0, 1]), r(2, &[2, 2]), r(1, &[1, 0])];
        let perm = |c: u8| [7u8, 3, 5][c as usize];
        let rs2: Vec<_> = rs.iter().map(|x| r(perm(x.true_class), &x.retrieved.iter().map(|&c| perm(c)).collect::<Vec<_>>())).collect();
        for k in 1..=2 {
            assert_eq!(metrics_at_k(&rs, k).unwrap(), metrics_at_k(&rs2, k).unwrap());
        }
    }

    #[test]
    fn retrieval_score_examples() {
        let w = ScoreWeighting::default();
        assert_eq!(retrieval_score(&[1.0; 5], w), 0.96875);
        assert_eq!(retrieval_score(&[1.0, 0.0, 0.0, 0.0, 0.0], w), 0.5);
        assert_eq!(retrieval_score(&[0.0; 5], w), 0.0);
        let shifted = ScoreWeighting { base: 0.5, offset: -1 };
        assert_eq!(retrieval_score(&[1.0; 5], shifted), 1.9375);
        assert!(retrieval_score(&[0.9, 0.5, 0.4, 0.2, 0.2], w) <= retrieval_score(&[0.9, 0.6, 0.4, 0.3, 0.2], w));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let rs = [r(0, &[0, 1]), r(1, &[1, 1]), r(1, &[0, 1]), r(0, &[0, 0])];
        let rep = evaluate("m", &rs, 2, ScoreWeighting::default()).unwrap();
        assert!(rep.is_finite());
        let p = dir.path().join("r.json");
        rep.write_json(&p).unwrap();
        assert_eq!(MetricsReport::read_json(&p).unwrap(), rep);
        write_rows_csv(&rep.rows(), &dir.path().join("rows.csv")).unwrap();
        write_comparison_csv(&[rep.clone(), rep], &dir.path().join("cmp.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
