//! The whole command pipeline (gen, train, index, query, eval) driven from
//! code on a tiny cohort in a temporary directory.
//!
//! `cargo run --release --example cli_pipeline`

use planret::cli::{cmd_eval, cmd_gen, cmd_index, cmd_query, cmd_train, QuerySource, RunConfig};
use planret::volumes::io::read_manifest;
use planret::volumes::Split;
use planret::index::Filter;
use planret::models::ModelKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = tempfile::tempdir()?;
    let data = root.path().join("data");

    let mut cfg = RunConfig::default();
    cfg.set_seed(5);
    cfg.dataset.per_class = 3;
    cfg.train.kind = ModelKind::SiameseTriplet;
    cfg.train.epochs = 5;
    let cfg = cfg.resolve()?;
    let with_out = |dir: &str| RunConfig {
        out_dir: Some(root.path().join(dir)),
        ..cfg.clone()
    };

    let manifest = cmd_gen(&RunConfig {
        out_dir: Some(data.clone()),
        ..cfg.clone()
    })?;
    let test_id = read_manifest(&data)?
        .into_iter()
        .find(|e| e.split == Split::Test)
        .map(|e| e.case_id)
        .ok_or("no test case")?;
    let ckpt = cmd_train(&with_out("train"), &data)?;
    let index = cmd_index(&with_out("index"), &data, &ckpt)?;
    let res = cmd_query(
        &with_out("query"),
        &index,
        &ckpt,
        QuerySource::Case { dir: &data, id: &test_id },
        &Filter::default(),
        false,
    )?;
    print!("{}", res.render());
    let reports = cmd_eval(&with_out("eval"), &data, &[ckpt])?;
    for r in &reports {
        println!("{}: top-1 {:.3}, accuracy score {:.4}", r.model, r.top1_match_rate, r.retrieval_scores.accuracy);
    }
    println!("manifest {}", manifest.display());
    Ok(())
}
