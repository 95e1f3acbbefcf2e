//! Train one model kind on a small cohort, save a checkpoint and reload it.
//!
//! `cargo run --release --example train_model -- [kind] [epochs]`

use planret::cli::{of_split, prepare_all};
use planret::models::{load_checkpoint, save_checkpoint, stack_batch, ModelKind};
use planret::training::{embed_dataset, train_with, TrainConfig};
use planret::volumes::{make_dataset, DatasetConfig, PrepConfig, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: ModelKind = args.next().map(|s| s.parse()).transpose()?.unwrap_or(ModelKind::SiameseTriplet);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);

    let generated = make_dataset(&DatasetConfig {
        per_class: 3,
        ..Default::default()
    })?;
    let cases = prepare_all(&generated, &PrepConfig::default())?;
    let cfg = TrainConfig {
        kind,
        epochs,
        ..Default::default()
    };
    let (model, report) = train_with(&cases, &cfg, |e, loss| {
        if (e + 1) % 5 == 0 {
            println!("epoch {:>3} loss {loss:.5}", e + 1);
        }
    })?;
    println!(
        "{kind}: {} steps over {} train cases in {:.1}s, dose branch used: {}",
        report.steps,
        report.touched_case_ids.len(),
        report.wall_clock_secs,
        report.used_dose_branch
    );

    let path = std::env::temp_dir().join(format!("planret-{kind}.plck"));
    save_checkpoint(&model, &path)?;
    let reloaded = load_checkpoint(&path)?;
    println!("checkpoint {} checksum {}", path.display(), reloaded.checksum());

    let test = of_split(&cases, Split::Test);
    let emb = embed_dataset(&reloaded, &test, 0)?;
    let direct = model.embed(&stack_batch(&[&test[0].anatomy])?)?;
    assert_eq!(direct.data(), emb.row(0));
    println!("{} test embeddings of dim {}", emb.len(), emb.dim);
    Ok(())
}
