//! Pipeline driver. One verb per stage, file handoffs between stages, one
//! JSON result object on standard output per invocation.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 file or data
//! error, 4 numeric failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use combem::cluster_eval::eval_open_set;
use combem::config::{Config, EvalRepr, EvalScope};
use combem::dataset::{generate_synthetic, make_open_set_split, FeatureTable, OpenSetSplit};
use combem::metascheme::{bit_width, build_scheme, class_embeddings, MetaScheme};
use combem::model::Model;
use combem::retrieval::{
    asymmetric_distance, load_codes, mean_average_precision, save_codes, CodeIndex, Query,
};
use combem::trainer::{build_train_items, train, write_trace_csv};
use combem::{Error, Real};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "combem",
    version,
    about = "Open-set representation learning with combinatorial meta-class embeddings"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic Gaussian-class feature table.
    GenData(GenDataArgs),
    /// Split classes into seen/novel and reveal labels for part of the seen items.
    Split(SplitArgs),
    /// Derive the meta-label scheme from the labeled items.
    BuildScheme(BuildSchemeArgs),
    /// Train a model and write it to disk.
    Train(TrainArgs),
    /// Encode items into compact meta-class codes.
    Encode(EncodeArgs),
    /// Rank coded items against one query item.
    Search(SearchArgs),
    /// Mean average precision of novel-class retrieval.
    EvalRetrieval(EvalRetrievalArgs),
    /// Open-set clustering metrics (accuracy, NMI, ARI).
    EvalCluster(EvalClusterArgs),
}

#[derive(Args)]
struct Common {
    /// Configuration file of key = value lines; every key has a default.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set steps=500; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override the configuration seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> combem::Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        for s in &self.sets {
            cfg.apply_set(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Output feature table.
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    out: PathBuf,
    /// Write the binary form instead of text.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    /// Input feature table.
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    /// Output split file.
    #[arg(long, value_name = "PATH", default_value = "split.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct BuildSchemeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "split.txt")]
    split: PathBuf,
    /// Output scheme file.
    #[arg(long, value_name = "PATH", default_value = "scheme.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "split.txt")]
    split: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "scheme.txt")]
    scheme: PathBuf,
    /// Output model file.
    #[arg(long, value_name = "PATH", default_value = "model.cemb")]
    out: PathBuf,
    /// Also write the per-step loss trace (step,meta,sim,cons,total lines).
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodeScope {
    /// Every item in the table.
    All,
    /// Only items the split leaves unlabeled.
    Unlabeled,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH", default_value = "model.cemb")]
    model: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    /// Output code file.
    #[arg(long, value_name = "PATH", default_value = "codes.cecd")]
    out: PathBuf,
    /// Split file; required for --scope unlabeled.
    #[arg(long, value_name = "PATH")]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    scope: EncodeScope,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH", default_value = "model.cemb")]
    model: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "codes.cecd")]
    codes: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    /// Item id of the query; its features are encoded on the fly.
    #[arg(long, value_name = "ID")]
    query_id: i64,
    #[arg(long, value_name = "K", default_value_t = 10)]
    topk: usize,
}

#[derive(Args)]
struct EvalRetrievalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH", default_value = "model.cemb")]
    model: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "codes.cecd")]
    codes: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "split.txt")]
    split: PathBuf,
    /// Also write the result JSON to a file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalClusterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH", default_value = "model.cemb")]
    model: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "data.ceft")]
    data: PathBuf,
    #[arg(long, value_name = "PATH", default_value = "split.txt")]
    split: PathBuf,
    /// Also write the result JSON to a file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

fn exit_class(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::Config(_) => 2,
        Error::Data(_)
        | Error::Format(_)
        | Error::Shape(_)
        | Error::Label(_)
        | Error::Lookup(_)
        | Error::Code(_)
        | Error::Io(_) => 3,
        Error::Normalization(_) | Error::EmptyCluster | Error::Construction(_) | Error::Numeric(_) => 4,
    }
}

/// Adds the file path to bare io errors so diagnostics name the file.
fn with_path<T>(r: combem::Result<T>, path: &Path) -> combem::Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn load_table(path: &Path) -> combem::Result<FeatureTable> {
    with_path(FeatureTable::load(path), path)
}

fn load_split(path: &Path) -> combem::Result<OpenSetSplit> {
    with_path(OpenSetSplit::load(path), path)
}

fn load_scheme(path: &Path) -> combem::Result<MetaScheme> {
    with_path(MetaScheme::load(path), path)
}

fn load_model(path: &Path) -> combem::Result<Model<Real>> {
    with_path(Model::load(path), path)
}

/// The freshly initialized model every stage derives from the configuration;
/// scheme building and training must agree on it.
fn init_model(cfg: &Config, data_dim: usize) -> combem::Result<Model<Real>> {
    Model::init(
        data_dim,
        cfg.hidden,
        cfg.d2,
        &vec![cfg.k_per_set; cfg.m_sets],
        cfg.hyperparams(),
        cfg.seed,
    )
}

fn emit(value: serde_json::Value, out: Option<&Path>) -> combem::Result<()> {
    let line = value.to_string();
    if let Some(path) = out {
        std::fs::write(path, format!("{line}\n"))?;
    }
    println!("{line}");
    Ok(())
}

fn code_bits(sizes: &[usize]) -> u32 {
    sizes.iter().map(|&k| bit_width(k)).sum()
}

fn run(cmd: Cmd) -> combem::Result<()> {
    match cmd {
        Cmd::GenData(a) => {
            let cfg = a.common.config()?;
            let table = generate_synthetic(
                cfg.n_classes,
                cfg.dim,
                cfg.n_per_class,
                cfg.separation,
                cfg.noise_sigma,
                cfg.seed,
            )?;
            if a.binary {
                table.save_binary(&a.out)?;
            } else {
                table.save_text(&a.out)?;
            }
            emit(
                json!({
                    "path": a.out.display().to_string(),
                    "items": table.len(),
                    "classes": cfg.n_classes,
                    "dim": cfg.dim,
                }),
                None,
            )
        }
        Cmd::Split(a) => {
            let cfg = a.common.config()?;
            let table = load_table(&a.data)?;
            let split = make_open_set_split(&table, cfg.seen_fraction, cfg.labeled_fraction, cfg.seed)?;
            split.save(&a.out)?;
            emit(
                json!({
                    "path": a.out.display().to_string(),
                    "seen_classes": split.seen_classes.iter().copied().collect::<Vec<u32>>(),
                    "novel_classes": split.novel_classes.iter().copied().collect::<Vec<u32>>(),
                    "labeled": split.labeled_ids.len(),
                    "unlabeled": split.unlabeled_ids.len(),
                }),
                None,
            )
        }
        Cmd::BuildScheme(a) => {
            let cfg = a.common.config()?;
            let table = load_table(&a.data)?;
            let split = load_split(&a.split)?;
            let model = init_model(&cfg, table.dim)?;
            let embs = class_embeddings::<Real>(&table, &split, &model.encoder, cfg.embedding_mode, cfg.seed)?;
            let scheme = build_scheme(&embs, cfg.m_sets, cfg.k_per_set, cfg.q_effective(), cfg.seed)?;
            scheme.save(&a.out)?;
            emit(
                json!({
                    "path": a.out.display().to_string(),
                    "sets": scheme.num_sets(),
                    "classes": scheme.n_classes(),
                    "code_bits": scheme.code_bits(),
                }),
                None,
            )
        }
        Cmd::Train(a) => {
            let cfg = a.common.config()?;
            let table = load_table(&a.data)?;
            let split = load_split(&a.split)?;
            let scheme = load_scheme(&a.scheme)?;
            let mut model = init_model(&cfg, table.dim)?;
            scheme.validate_against_sizes(&model.sizes())?;
            let items = build_train_items::<Real>(&table, &split, &scheme)?;
            let report = train(&mut model, &items, &cfg.train_config())?;
            model.save(&a.out)?;
            if let Some(trace_path) = &a.trace {
                write_trace_csv(trace_path, &report.trace)?;
            }
            let last = report.trace.last();
            emit(
                json!({
                    "path": a.out.display().to_string(),
                    "steps": report.trace.len(),
                    "final_meta": last.map(|r| r.meta),
                    "final_sim": last.map(|r| r.sim),
                    "final_cons": last.map(|r| r.cons),
                    "final_total": last.map(|r| r.total),
                }),
                None,
            )
        }
        Cmd::Encode(a) => {
            let _ = a.common.config()?;
            if matches!(a.scope, EncodeScope::Unlabeled) && a.split.is_none() {
                return Err(Error::Parameter("--scope unlabeled requires --split".into()));
            }
            let model = load_model(&a.model)?;
            let table = load_table(&a.data)?;
            let filter = match a.scope {
                EncodeScope::All => None,
                EncodeScope::Unlabeled => {
                    let path = a.split.as_ref().expect("checked above");
                    let split = load_split(path)?;
                    split.validate_against(&table)?;
                    Some(split.unlabeled_ids)
                }
            };
            let index = CodeIndex::build(&model, &table, filter.as_ref())?;
            let sizes = model.sizes();
            save_codes(&a.out, &sizes, &index.records)?;
            emit(
                json!({
                    "path": a.out.display().to_string(),
                    "items": index.len(),
                    "bits": code_bits(&sizes),
                }),
                None,
            )
        }
        Cmd::Search(a) => {
            let _ = a.common.config()?;
            let model = load_model(&a.model)?;
            let (sizes, records) = with_path(load_codes(&a.codes), &a.codes)?;
            if sizes != model.sizes() {
                return Err(Error::Code(format!(
                    "code file sizes {:?} do not match model meta-head sizes {:?}",
                    sizes,
                    model.sizes()
                )));
            }
            let table = load_table(&a.data)?;
            let idx = table
                .records
                .iter()
                .position(|r| r.id == a.query_id)
                .ok_or_else(|| Error::Lookup(format!("query id {} not in {}", a.query_id, a.data.display())))?;
            let z = model.encode(&table.features_as::<Real>(idx))?;
            let index = CodeIndex::from_parts(model.heads.clone(), records)?;
            let ranked = index.ranked_records(&z)?;
            let results: Vec<serde_json::Value> = ranked
                .into_iter()
                .take(a.topk)
                .map(|i| {
                    let rec = &index.records[i];
                    let dist = asymmetric_distance(&index.heads, &z, &rec.code)?;
                    Ok(json!({ "id": rec.id, "distance": dist }))
                })
                .collect::<combem::Result<_>>()?;
            emit(json!({ "query_id": a.query_id, "results": results }), None)
        }
        Cmd::EvalRetrieval(a) => {
            let _ = a.common.config()?;
            let model = load_model(&a.model)?;
            let (sizes, records) = with_path(load_codes(&a.codes), &a.codes)?;
            if sizes != model.sizes() {
                return Err(Error::Code(format!(
                    "code file sizes {:?} do not match model meta-head sizes {:?}",
                    sizes,
                    model.sizes()
                )));
            }
            let table = load_table(&a.data)?;
            let split = load_split(&a.split)?;
            split.validate_against(&table)?;
            let index = CodeIndex::from_parts(model.heads.clone(), records)?;
            let queries: Vec<Query<Real>> = table
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.label.is_some_and(|l| split.novel_classes.contains(&l)))
                .map(|(i, r)| {
                    Ok(Query {
                        id: r.id,
                        class: r.label.unwrap(),
                        z: model.encode(&table.features_as::<Real>(i))?,
                    })
                })
                .collect::<combem::Result<_>>()?;
            let report = mean_average_precision(&index, &queries, true)?;
            emit(
                json!({
                    "map": report.map,
                    "num_queries": report.num_queries,
                    "bits": code_bits(&sizes),
                }),
                a.out.as_deref(),
            )
        }
        Cmd::EvalCluster(a) => {
            let cfg = a.common.config()?;
            let model = load_model(&a.model)?;
            let table = load_table(&a.data)?;
            let split = load_split(&a.split)?;
            split.validate_against(&table)?;
            let mut reps: Vec<Vec<Real>> = Vec::new();
            let mut truth: Vec<u32> = Vec::new();
            for (i, rec) in table.records.iter().enumerate() {
                if cfg.eval_scope == EvalScope::Unlabeled && !split.unlabeled_ids.contains(&rec.id) {
                    continue;
                }
                let label = rec.label.ok_or_else(|| {
                    Error::Label(format!("item {} has no ground-truth label to score against", rec.id))
                })?;
                let z = model.encode(&table.features_as::<Real>(i))?;
                let rep = match cfg.eval_repr {
                    EvalRepr::Z => z,
                    EvalRepr::Pi => combem::vecmath::l2_normalize(
                        &model.heads.comb_embed(&z, model.hyper.lambda)?,
                    )?,
                };
                reps.push(rep);
                truth.push(label);
            }
            let k = truth.iter().collect::<std::collections::BTreeSet<_>>().len();
            let metrics = eval_open_set(
                &reps,
                &truth,
                &split.seen_classes,
                k,
                cfg.seed,
                cfg.kmeans_restarts,
            )?;
            emit(serde_json::to_value(&metrics).expect("metrics serialize"), a.out.as_deref())
        }
    }
}
