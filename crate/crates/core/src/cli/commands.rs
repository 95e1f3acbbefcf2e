use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::pipeline::{build_index, prepare_all, rank_embeddings};
use super::CliError;
use crate::evalmetrics::{
    evaluate, pca_project_2d, write_comparison_csv, write_pca_csv, write_rows_csv, MetricsReport, PcaRow,
};
use crate::index::{load_index, save_index, Filter, Hit, QueryResult};
use crate::models::{load_checkpoint, save_checkpoint, Model, ModelKind};
use crate::training::{embed_dataset, train_with};
use crate::volumes::io::{read_case, read_manifest, write_case, write_manifest, ManifestEntry};
use crate::volumes::{
    make_dataset, prepare_case, window_normalize_value, CaseMeta, CaseVolume, GeneratedCase, PreparedCase, Split,
    VoxelGrid,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.plck";
pub const TRAIN_REPORT_FILE: &str = "train_report.txt";
pub const INDEX_FILE: &str = "index.plix";
pub const QUERY_FILE: &str = "query.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Parser)]
#[command(name = "planret", version, about = "Content-based retrieval of radiotherapy plans")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "PLANRET_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom cohort.
    Gen(GenArgs),
    /// Train one model kind on the train split.
    Train(TrainArgs),
    /// Embed a split and write the plan database.
    Index(IndexArgs),
    /// Retrieve the nearest plans for one case.
    Query(QueryArgs),
    /// Evaluate one or more checkpoints on the query split.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory holding the query case.
    #[arg(long, requires = "case")]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "volume")]
    pub case: Option<String>,
    /// Case file set given by its `.meta` path or path prefix.
    #[arg(long, required_unless_present = "case")]
    pub volume: Option<PathBuf>,
    #[arg(short)]
    pub k: Option<usize>,
    /// Metadata constraints, e.g. `site=prostate,protocol=VMAT`.
    #[arg(long)]
    pub filter: Option<String>,
    /// Write mid-plane CT and dose slices (PGM) of the query and its hits.
    #[arg(long)]
    pub slices: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub max_k: Option<usize>,
    #[arg(long)]
    pub query_split: Option<Split>,
    #[arg(long)]
    pub database_split: Option<Split>,
}

/// Loads the config, applies global and per-command overrides and resolves it.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    match &cli.command {
        Command::Gen(a) => {
            if let Some(n) = a.per_class {
                cfg.dataset.per_class = n;
            }
        }
        Command::Train(a) => {
            if let Some(m) = a.model {
                cfg.train.kind = m;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = a.lr {
                cfg.train.optimizer.lr = lr;
            }
        }
        Command::Index(a) => {
            if let Some(s) = a.split {
                cfg.index.split = s;
            }
        }
        Command::Query(a) => {
            if let Some(k) = a.k {
                cfg.query.k = k;
            }
        }
        Command::Eval(a) => {
            if let Some(k) = a.max_k {
                cfg.eval.max_k = k;
            }
            if let Some(s) = a.query_split {
                cfg.eval.query_split = s;
            }
            if let Some(s) = a.database_split {
                cfg.eval.database_split = s;
            }
        }
    }
    cfg.resolve()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if cfg.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match &cli.command {
        Command::Gen(_) => cmd_gen(&cfg).map(|_| ()),
        Command::Train(a) => cmd_train(&cfg, &a.data).map(|_| ()),
        Command::Index(a) => cmd_index(&cfg, &a.data, &a.checkpoint).map(|_| ()),
        Command::Query(a) => {
            let source = match (&a.case, &a.volume) {
                (Some(id), _) => {
                    let dir = a
                        .data
                        .as_deref()
                        .ok_or_else(|| CliError::Config("--case needs --data".into()))?;
                    QuerySource::Case { dir, id }
                }
                (None, Some(p)) => QuerySource::Volume(p),
                (None, None) => return Err(CliError::Config("pass --case or --volume".into())),
            };
            let filter: Filter = a.filter.as_deref().unwrap_or("all").parse()?;
            let out = cmd_query(&cfg, &a.index, &a.checkpoint, source, &filter, a.slices)?;
            print!("{}", out.render());
            Ok(())
        }
        Command::Eval(a) => {
            let reports = cmd_eval(&cfg, &a.data, &a.checkpoints)?;
            for r in reports {
                println!(
                    "{:<20} top1 {:.3}  accuracy score {:.4}  f1 score {:.4}  V {:.3}  ARI {:.3}  AMI {:.3}",
                    r.model,
                    r.top1_match_rate,
                    r.retrieval_scores.accuracy,
                    r.retrieval_scores.f1,
                    r.v_measure,
                    r.adjusted_rand,
                    r.adjusted_mutual_info
                );
            }
            Ok(())
        }
    }
}

/// Prefixes io and data errors with the file they concern.
fn at<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| match e.into() {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generates the cohort into the output directory and returns the manifest path.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir()?.to_path_buf();
    let cases = make_dataset(&cfg.dataset)?;
    cfg.echo()?;
    cases
        .par_iter()
        .try_for_each(|c| write_case(&dir, &c.volume, &c.meta))?;
    let entries: Vec<ManifestEntry> = cases.iter().map(|c| ManifestEntry::from(&c.meta)).collect();
    let manifest = write_manifest(&dir, &entries)?;
    let mut per_split = BTreeMap::new();
    for c in &cases {
        *per_split.entry(c.meta.split.as_str()).or_insert(0usize) += 1;
    }
    let classes: std::collections::BTreeSet<u8> = cases.iter().map(|c| c.meta.class_id).collect();
    println!(
        "wrote {} cases over {} classes to {} ({per_split:?})",
        cases.len(),
        classes.len(),
        dir.display()
    );
    println!("manifest sha256 {}", sha256_hex(&fs::read(&manifest)?));
    Ok(manifest)
}

/// Reads the manifest and every case of the given splits, in manifest order.
pub fn load_cases(dir: &Path, splits: &[Split]) -> Result<Vec<GeneratedCase>, CliError> {
    let entries = at(dir, read_manifest(dir))?;
    entries
        .par_iter()
        .filter(|e| splits.contains(&e.split))
        .map(|e| {
            let (volume, meta) = at(dir, read_case(dir, &e.case_id))?;
            if meta.class_id != e.class_id || meta.split != e.split {
                return Err(CliError::Data(format!(
                    "case {} disagrees with the manifest (class {} vs {}, split {} vs {})",
                    e.case_id, meta.class_id, e.class_id, meta.split, e.split
                )));
            }
            Ok(GeneratedCase { volume, meta })
        })
        .collect()
}

fn check_model_input(cfg: &RunConfig, model: &Model) -> Result<(), CliError> {
    let (want, got) = (&cfg.train.encoder, model.config());
    if want.input_dims != got.input_dims || want.in_channels != got.in_channels {
        return Err(CliError::Data(format!(
            "checkpoint expects {} channels at {:?} but preprocessing yields {} at {:?}",
            got.in_channels, got.input_dims, want.in_channels, want.input_dims
        )));
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, data: &Path) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let cases = prepare_all(&load_cases(data, &[Split::Train])?, &cfg.prep)?;
    cfg.echo()?;
    let kind = cfg.train.kind;
    let (model, report) = train_with(&cases, &cfg.train, |e, loss| {
        println!("{kind} epoch {:>4} loss {loss:.6}", e + 1);
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;
    fs::write(out.join(TRAIN_REPORT_FILE), report.to_kv().to_text())?;
    println!(
        "trained {kind} on {} cases in {:.1}s; checkpoint {} (sha256 {})",
        report.touched_case_ids.len(),
        report.wall_clock_secs,
        ckpt.display(),
        report.checksum
    );
    Ok(ckpt)
}

fn dose_path(dir: &Path, id: &str) -> String {
    dir.join(format!("{id}.dose.vol")).display().to_string()
}

pub fn cmd_index(cfg: &RunConfig, data: &Path, checkpoint: &Path) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let model = at(checkpoint, load_checkpoint(checkpoint))?;
    check_model_input(cfg, &model)?;
    let cases = prepare_all(&load_cases(data, &[cfg.index.split])?, &cfg.prep)?;
    if cases.is_empty() {
        return Err(CliError::Data(format!("split {} is empty", cfg.index.split)));
    }
    cfg.echo()?;
    let index = build_index(&model, &cases, cfg.threads, |id| dose_path(data, id))?;
    let path = out.join(INDEX_FILE);
    save_index(&index, &path)?;
    println!(
        "indexed {} {} cases, dim {} -> {}",
        index.len(),
        cfg.index.split,
        index.dim(),
        path.display()
    );
    Ok(path)
}

#[derive(Clone, Copy, Debug)]
pub enum QuerySource<'a> {
    Case { dir: &'a Path, id: &'a str },
    /// A `.meta` file or the shared path prefix of a case's files.
    Volume(&'a Path),
}

impl QuerySource<'_> {
    fn load(self) -> Result<(CaseVolume, CaseMeta), CliError> {
        match self {
            QuerySource::Case { dir, id } => at(dir, read_case(dir, id)),
            QuerySource::Volume(p) => {
                let name = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| CliError::Config(format!("bad volume path {}", p.display())))?;
                let id = name.strip_suffix(".meta").unwrap_or(name);
                let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                at(p, read_case(dir, id))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutput {
    pub query_id: String,
    pub query_class: u8,
    pub k: usize,
    pub database_size: usize,
    pub result: QueryResult,
    pub slice_files: Vec<PathBuf>,
}

impl QueryOutput {
    pub fn hits(&self) -> &[Hit] {
        &self.result.hits
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "query {} (class {}) against {} records, filter {}\n",
            self.query_id, self.query_class, self.database_size, self.result.filter
        );
        s.push_str("rank  case_id      distance  class  dose\n");
        for (i, h) in self.result.hits.iter().enumerate() {
            s.push_str(&format!(
                "{:>4}  {:<10} {:>10.4}  {:>5}  {}\n",
                i + 1,
                h.case_id,
                h.distance,
                h.class_id,
                h.dose_ref
            ));
        }
        if self.result.truncated {
            s.push_str(&format!(
                "note: only {} records match the filter; returned {} of {} requested\n",
                self.result.hits.len(),
                self.result.hits.len(),
                self.k
            ));
        }
        for f in &self.slice_files {
            s.push_str(&format!("slice {}\n", f.display()));
        }
        s
    }
}

pub fn cmd_query(
    cfg: &RunConfig,
    index_path: &Path,
    checkpoint: &Path,
    source: QuerySource<'_>,
    filter: &Filter,
    slices: bool,
) -> Result<QueryOutput, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let model = at(checkpoint, load_checkpoint(checkpoint))?;
    check_model_input(cfg, &model)?;
    let index = at(index_path, load_index(index_path))?;
    if index.dim() != model.config().embed_dim {
        return Err(CliError::Data(format!(
            "index dim {} does not match checkpoint embedding dim {}",
            index.dim(),
            model.config().embed_dim
        )));
    }
    let (volume, meta) = source.load()?;
    let prepared = prepare_case(&volume, &meta, &cfg.prep)?;
    let emb = embed_dataset(&model, std::slice::from_ref(&prepared), 1)?;
    let view = index.filter(filter);
    let result = view.query(emb.row(0), cfg.query.k)?;
    cfg.echo()?;

    let mut w = csv::Writer::from_path(out.join(QUERY_FILE)).map_err(|e| CliError::Io(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["rank", "case_id", "distance", "class_id", "dose_ref"]).map_err(csv_err)?;
    for (i, h) in result.hits.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            h.case_id.clone(),
            format!("{:.9}", h.distance),
            h.class_id.to_string(),
            h.dose_ref.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut slice_files = Vec::new();
    if slices {
        let dir = out.join("slices");
        fs::create_dir_all(&dir)?;
        slice_files.extend(write_case_slices(cfg, &dir, "query", &volume, meta.prescription)?);
        for (i, h) in result.hits.iter().enumerate() {
            let dose = Path::new(&h.dose_ref);
            let case_dir = dose.parent().unwrap_or(Path::new("."));
            let (v, m) = at(case_dir, read_case(case_dir, &h.case_id))?;
            let tag = format!("rank{}_{}", i + 1, h.case_id);
            slice_files.extend(write_case_slices(cfg, &dir, &tag, &v, m.prescription)?);
        }
    }
    Ok(QueryOutput {
        query_id: meta.case_id,
        query_class: meta.class_id,
        k: cfg.query.k,
        database_size: view.len(),
        result,
        slice_files,
    })
}

fn mid_slice_pgm(grid: &VoxelGrid<f32>, to_unit: impl Fn(f32) -> f32) -> Vec<u8> {
    let [d, h, w] = grid.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for row in grid.axial_slice(d / 2) {
        out.extend(row.iter().map(|&v| (to_unit(v).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

fn write_case_slices(
    cfg: &RunConfig,
    dir: &Path,
    tag: &str,
    case: &CaseVolume,
    prescription: f64,
) -> Result<Vec<PathBuf>, CliError> {
    let (width, level) = (cfg.prep.window_width, cfg.prep.window_level);
    let ct = dir.join(format!("{tag}_ct.pgm"));
    fs::write(&ct, mid_slice_pgm(&case.ct, |hu| window_normalize_value(hu, width, level)))?;
    let dose = dir.join(format!("{tag}_dose.pgm"));
    let rx = prescription as f32;
    fs::write(&dose, mid_slice_pgm(&case.dose, |d| d / rx))?;
    Ok(vec![ct, dose])
}

fn model_names(kinds: &[ModelKind]) -> Vec<String> {
    let mut seen: BTreeMap<ModelKind, usize> = BTreeMap::new();
    kinds
        .iter()
        .map(|k| {
            let n = seen.entry(*k).or_insert(0);
            *n += 1;
            if *n == 1 {
                k.as_str().to_string()
            } else {
                format!("{}-{n}", k.as_str())
            }
        })
        .collect()
}

/// Evaluates each checkpoint against its own database of the database split
/// and writes one report directory per model plus a comparison table.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, checkpoints: &[PathBuf]) -> Result<Vec<MetricsReport>, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let models: Vec<Model> = checkpoints
        .iter()
        .map(|p| {
            let m = at(p, load_checkpoint(p))?;
            check_model_input(cfg, &m)?;
            Ok(m)
        })
        .collect::<Result<_, CliError>>()?;
    let e = &cfg.eval;
    let cases = prepare_all(&load_cases(data, &[e.database_split, e.query_split])?, &cfg.prep)?;
    let database: Vec<PreparedCase> = cases.iter().filter(|c| c.meta.split == e.database_split).cloned().collect();
    let queries: Vec<PreparedCase> = cases.iter().filter(|c| c.meta.split == e.query_split).cloned().collect();
    if database.is_empty() || queries.is_empty() {
        return Err(CliError::Data(format!(
            "need a non-empty database ({} split, {} cases) and query set ({} split, {} cases)",
            e.database_split,
            database.len(),
            e.query_split,
            queries.len()
        )));
    }
    cfg.echo()?;
    let names = model_names(&models.iter().map(|m| m.kind()).collect::<Vec<_>>());
    let reports: Vec<MetricsReport> = models
        .par_iter()
        .zip(&names)
        .map(|(model, name)| {
            let index = build_index(model, &database, cfg.threads, |id| dose_path(data, id))?;
            let emb = embed_dataset(model, &queries, cfg.threads)?;
            let rankings = rank_embeddings(&index, &emb, &queries, e.max_k)?;
            let report = evaluate(name, &rankings, e.max_k, e.weighting)?;
            if !report.is_finite() {
                return Err(CliError::Numeric(format!("model {name} produced non-finite metrics")));
            }
            let points: Vec<f64> = emb.data.iter().map(|&v| v as f64).collect();
            let pca = pca_project_2d(&points, emb.dim)?;
            let dir = out.join(name);
            fs::create_dir_all(&dir)?;
            report.write_json(&dir.join("metrics.json"))?;
            write_rows_csv(&report.rows(), &dir.join("metrics_at_k.csv"))?;
            let rows: Vec<PcaRow> = queries
                .iter()
                .zip(&pca)
                .map(|(q, p)| PcaRow {
                    case_id: q.meta.case_id.clone(),
                    x: p[0],
                    y: p[1],
                    class_id: q.meta.class_id,
                })
                .collect();
            write_pca_csv(&rows, &dir.join("pca.csv"))?;
            Ok(report)
        })
        .collect::<Result<_, CliError>>()?;
    write_comparison_csv(&reports, &out.join(COMPARISON_FILE))?;
    Ok(reports)
}
