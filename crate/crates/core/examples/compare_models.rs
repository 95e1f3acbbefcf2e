//! Desk-scale comparison: 320 phantoms, train several model kinds, index the
//! train split, query with the test split and print the metric battery.
//!
//! `cargo run --release --example compare_models -- [epochs] [kinds...]`

use planret::cli::{build_index, of_split, prepare_all, rank_queries};
use planret::evalmetrics::{evaluate, ScoreWeighting};
use planret::models::ModelKind;
use planret::training::{train_with, TrainConfig};
use planret::volumes::{make_dataset, ClassCriteria, DatasetConfig, PrepConfig, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(TrainConfig::default().epochs);
    let mut kinds: Vec<ModelKind> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    if kinds.is_empty() {
        kinds = vec![ModelKind::VanillaAutoencoder, ModelKind::SiameseTriplet, ModelKind::Multitask];
    }

    let generated = make_dataset(&DatasetConfig::default())?;
    let cases = prepare_all(&generated, &PrepConfig::default())?;
    let train = of_split(&cases, Split::Train);
    let test = of_split(&cases, Split::Test);
    println!("{} cases: {} train, {} test", cases.len(), train.len(), test.len());

    for kind in kinds {
        let cfg = TrainConfig {
            kind,
            epochs,
            ..Default::default()
        };
        let (model, report) = train_with(&cases, &cfg, |e, l| {
            if (e + 1) % 25 == 0 {
                println!("  {kind} epoch {:>3} loss {l:.5}", e + 1);
            }
        })?;
        let index = build_index(&model, &train, 0, |id| format!("{id}.dose.vol"))?;
        let rankings = rank_queries(&model, &index, &test, 5, 0)?;

        let mut wrong = [0usize; 4];
        for rk in &rankings {
            let a = ClassCriteria::from_class_id(rk.true_class).unwrap();
            let b = ClassCriteria::from_class_id(rk.retrieved[0]).unwrap();
            wrong[0] += (a.site != b.site) as usize;
            wrong[1] += (a.levels != b.levels) as usize;
            wrong[2] += (a.size != b.size) as usize;
            wrong[3] += (a.location != b.location) as usize;
        }

        let r = evaluate(kind.as_str(), &rankings, 5, ScoreWeighting::default())?;
        println!(
            "{kind:<20} {:6.1}s top1 {:.3} acc_score {:.4} f1_score {:.4} V {:.3} ARI {:.3} AMI {:.3}",
            report.wall_clock_secs,
            r.top1_match_rate,
            r.retrieval_scores.accuracy,
            r.retrieval_scores.f1,
            r.v_measure,
            r.adjusted_rand,
            r.adjusted_mutual_info
        );
        println!("  top-1 misses by criterion site/levels/size/location: {wrong:?}");
    }
    Ok(())
}
