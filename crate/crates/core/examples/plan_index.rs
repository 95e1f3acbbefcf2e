//! Build a plan database, run filtered k-NN queries and round-trip it to disk.
//!
//! `cargo run --release --example plan_index`

use planret::cli::{build_index, of_split, prepare_all};
use planret::index::{load_index, save_index, Filter};
use planret::models::{Model, ModelKind};
use planret::training::{embed_dataset, TrainConfig};
use planret::volumes::{make_dataset, DatasetConfig, PrepConfig, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let generated = make_dataset(&DatasetConfig {
        per_class: 3,
        ..Default::default()
    })?;
    let cases = prepare_all(&generated, &PrepConfig::default())?;
    let model = Model::new(ModelKind::SiameseTriplet, TrainConfig::default().encoder, 3)?;

    let db = of_split(&cases, Split::Train);
    let index = build_index(&model, &db, 0, |id| format!("cohort/{id}.dose.vol"))?;
    println!("{} records of dim {}", index.len(), index.dim());

    let query = &of_split(&cases, Split::Test)[0];
    let q = embed_dataset(&model, std::slice::from_ref(query), 1)?;
    for filter in ["all", "site=prostate", "site=prostate,size=large,levels=multiple", "class_id=31"] {
        let filter: Filter = filter.parse()?;
        let res = index.filter(&filter).query(q.row(0), 5)?;
        println!("filter {} -> {} hits{}", res.filter, res.hits.len(), if res.truncated { " (truncated)" } else { "" });
        for h in &res.hits {
            println!("  {:<10} class {:>2} d={:.4} {}", h.case_id, h.class_id, h.distance, h.dose_ref);
        }
    }

    let path = std::env::temp_dir().join("planret-example.plix");
    save_index(&index, &path)?;
    let back = load_index(&path)?;
    assert_eq!(back, index);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
