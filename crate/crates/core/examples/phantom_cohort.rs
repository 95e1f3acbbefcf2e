//! Generate the 32-class phantom cohort, write it to disk and read a case back.
//!
//! `cargo run --release --example phantom_cohort -- [per_class] [out_dir]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use planret::volumes::io::{read_case, read_manifest, write_case, write_manifest, ManifestEntry};
use planret::volumes::{make_dataset, recover_criteria, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("planret-cohort"));

    let cfg = DatasetConfig {
        per_class,
        ..Default::default()
    };
    let cases = make_dataset(&cfg)?;
    let mut splits = BTreeMap::new();
    for c in &cases {
        *splits.entry(c.meta.split.as_str()).or_insert(0) += 1;
    }
    println!("{} cases, splits {splits:?}", cases.len());

    std::fs::create_dir_all(&out)?;
    for c in &cases {
        write_case(&out, &c.volume, &c.meta)?;
    }
    let entries: Vec<ManifestEntry> = cases.iter().map(|c| ManifestEntry::from(&c.meta)).collect();
    write_manifest(&out, &entries)?;
    println!("wrote {} (manifest lists {} cases)", out.display(), read_manifest(&out)?.len());

    let first = &cases[0];
    let (volume, meta) = read_case(&out, &first.meta.case_id)?;
    assert_eq!(volume, first.volume);
    let labels: Vec<u8> = {
        let mut l: Vec<u8> = volume.mask.data().to_vec();
        l.sort_unstable();
        l.dedup();
        l
    };
    println!(
        "{}: class {} ({} / {} / {} / {}), protocol {}, labels {labels:?}, recovered {:?}",
        meta.case_id,
        meta.class_id,
        meta.criteria.site,
        meta.criteria.levels,
        meta.criteria.size,
        meta.criteria.location,
        meta.protocol,
        recover_criteria(&volume).map(|c| c.class_id())
    );
    Ok(())
}
