//! Retrieval and clustering metrics on hand-made rankings, plus a 2-D PCA.
//!
//! `cargo run --release --example retrieval_metrics`

use planret::evalmetrics::{
    adjusted_mutual_info, adjusted_rand, evaluate, homogeneity_completeness_v, metrics_at_k, pca_project_2d,
    retrieval_score, ContingencyTable, LabeledRanking, ScoreWeighting,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rankings = vec![
        LabeledRanking { true_class: 0, retrieved: vec![0, 0, 1] },
        LabeledRanking { true_class: 0, retrieved: vec![1, 0, 0] },
        LabeledRanking { true_class: 1, retrieved: vec![1, 1, 2] },
        LabeledRanking { true_class: 2, retrieved: vec![2, 1, 2] },
        LabeledRanking { true_class: 2, retrieved: vec![0, 2, 2] },
    ];
    for k in 1..=3 {
        let m = metrics_at_k(&rankings, k)?;
        println!("k={k} accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}", m.accuracy, m.precision, m.recall, m.f1);
    }
    println!("perfect retrieval score over 5 ranks: {}", retrieval_score(&[1.0; 5], ScoreWeighting::default()));

    let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    let pred = [0, 0, 1, 1, 1, 1, 2, 2, 0];
    let t = ContingencyTable::from_labels(&truth, &pred)?;
    let (h, c, v) = homogeneity_completeness_v(&t);
    println!(
        "homogeneity {h:.4} completeness {c:.4} V {v:.4} ARI {:.4} AMI {:.4}",
        adjusted_rand(&t)?,
        adjusted_mutual_info(&t)?
    );

    let report = evaluate("toy", &rankings, 3, ScoreWeighting::default())?;
    for row in report.rows() {
        println!("{:<22} {:>4} {:.4}", row.metric, row.k.map(|k| k.to_string()).unwrap_or_default(), row.value);
    }

    let points: Vec<f64> = (0..12).flat_map(|i| {
        let t = i as f64;
        [t, 2.0 * t + (t * 1.3).sin(), (t * 0.7).cos()]
    }).collect();
    for (i, [x, y]) in pca_project_2d(&points, 3)?.iter().enumerate().take(4) {
        println!("point {i}: ({x:+.3}, {y:+.3})");
    }
    Ok(())
}
