//! Command-line front end: `train`, `eval`, `sweep` and `stats`.
//!
//! Exit codes: 0 success, 1 data or runtime error, 2 usage error, 3 check
//! mismatch.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_knowledge_graph, KnowledgeGraph, Split};
use crate::error::Error;
use crate::evaluation::{evaluate, MetricsReport};
use crate::losses::{LossConfig, Objective};
use crate::models::{init_model, load_checkpoint_for, save_checkpoint, ModelKind, Norm, PairForm};
use crate::training::{stream_rng, streams, train_with, Method, NegFilter, TrainConfig, TrainRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "best.kgnsf";
pub const SUMMARY_FILE: &str = "sweep_summary.csv";
pub const SUMMARY_COLUMNS: [&str; 11] = [
    "run_dir",
    "model",
    "dim",
    "lr",
    "batch",
    "alpha",
    "loss",
    "sdbn",
    "val_mrr_filt",
    "test_mrr_filt",
    "epochs_to_best",
];

#[derive(Debug, Parser)]
#[command(
    name = "kgnsf",
    version,
    about = "Knowledge graph embeddings without negative sampling",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Debug, Subcommand)]
enum Commands {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train every combination of a flag grid as child processes.
    Sweep(SweepArgs),
    /// Print dataset counts.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    NsfTranse,
    NsfDistmult,
    Transe,
    Distmult,
}

impl ModelArg {
    fn is_nsf(self) -> bool {
        matches!(self, ModelArg::NsfTranse | ModelArg::NsfDistmult)
    }

    fn is_transe(self) -> bool {
        matches!(self, ModelArg::NsfTranse | ModelArg::Transe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Bt,
    Hsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormArg {
    Transe,
    Distmult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegFilterArg {
    Train,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub lr: f64,
    #[arg(long)]
    pub batch_size: usize,
    /// Whiten the loss inputs with ShuffledDBN in groups of this size.
    #[arg(long, num_args = 0..=1, default_missing_value = "5")]
    pub sdbn: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Redundancy weight; defaults to 1/dim.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub extended_terms: bool,
    /// Build the training loss with another model's pair form.
    #[arg(long, value_enum)]
    pub loss_from: Option<FormArg>,
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long, value_enum)]
    pub neg_filter: Option<NegFilterArg>,
    /// L2-normalize entity rows at the start of every epoch.
    #[arg(long)]
    pub normalize_entities: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Replace an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Write `wall_seconds` as 0 so metrics files are reproducible byte for byte.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset paths; default to the ones in the run manifest next to the checkpoint.
    #[arg(long, requires_all = ["valid", "test"])]
    train: Option<PathBuf>,
    #[arg(long, requires_all = ["train", "test"])]
    valid: Option<PathBuf>,
    #[arg(long, requires_all = ["train", "valid"])]
    test: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, conflicts_with = "filtered")]
    raw: bool,
    #[arg(long)]
    filtered: bool,
    /// Report path; defaults to `eval_<split>_<raw|filt>.json` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Plain-text grid: one `flag=v1,v2,...` line per swept flag.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory receiving one run directory per combination.
    #[arg(long)]
    out: PathBuf,
    /// Flags passed to every `train` child; grid values override them.
    #[arg(last = true)]
    base: Vec<String>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Expected `entities,relations,train,valid,test`.
    #[arg(long)]
    check: Option<String>,
}

/// Self-description written before training starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub flags: TrainArgs,
    pub model_kind: ModelKind,
    pub config: TrainConfig,
    pub seed: u64,
    pub code_version: String,
    pub started_unix_seconds: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Mismatch(_) => EXIT_MISMATCH,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Mismatch(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Commands::Train(a) => cmd_train(&a),
        Commands::Eval(a) => cmd_eval(&a),
        Commands::Sweep(a) => cmd_sweep(&a),
        Commands::Stats(a) => cmd_stats(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Resolves the flags into a model kind and training configuration,
/// rejecting flags that do not apply to the chosen model.
pub fn resolve_train_config(a: &TrainArgs) -> Result<(ModelKind, TrainConfig), String> {
    let nsf_only = [
        ("--sdbn", a.sdbn.is_some()),
        ("--loss", a.loss.is_some()),
        ("--alpha", a.alpha.is_some()),
        ("--lambda", a.lambda.is_some()),
        ("--extended-terms", a.extended_terms),
        ("--loss-from", a.loss_from.is_some()),
    ];
    let baseline_only = [
        ("--margin", a.margin.is_some()),
        ("--n-neg", a.n_neg.is_some()),
        ("--neg-filter", a.neg_filter.is_some()),
        ("--normalize-entities", a.normalize_entities),
    ];
    let (wrong, kind_name) = if a.model.is_nsf() {
        (&baseline_only[..], "negative-sampling models")
    } else {
        (&nsf_only[..], "nsf-* models")
    };
    if let Some((flag, _)) = wrong.iter().find(|(_, set)| *set) {
        return Err(format!("{flag} only applies to {kind_name}"));
    }
    if a.norm.is_some() && !a.model.is_transe() {
        return Err("--norm only applies to TransE models".into());
    }
    if a.margin.is_some() && a.model == ModelArg::Distmult {
        return Err("--margin only applies to the TransE baseline".into());
    }
    if a.dim == 0 {
        return Err("--dim must be positive".into());
    }

    let kind = if a.model.is_transe() {
        ModelKind::TransE(match a.norm.unwrap_or(NormArg::L2) {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        })
    } else {
        ModelKind::DistMult
    };
    let method = if a.model.is_nsf() {
        let form = match a.loss_from {
            Some(FormArg::Transe) => PairForm::Translational,
            Some(FormArg::Distmult) => PairForm::Bilinear,
            None => kind.pair_form(),
        };
        Method::NegativeSamplingFree {
            loss: LossConfig {
                objective: match a.loss.unwrap_or(LossArg::Bt) {
                    LossArg::Bt => Objective::Bt,
                    LossArg::Hsic => Objective::Hsic,
                },
                lambda: a.lambda,
                alpha: a.alpha.unwrap_or(0.5),
                extended_terms: a.extended_terms,
            },
            form,
            sdbn_group: a.sdbn,
        }
    } else {
        Method::NegativeSampling {
            margin: a.margin.unwrap_or(1.0),
            n_negatives: a.n_neg.unwrap_or(1),
            filter: match a.neg_filter.unwrap_or(NegFilterArg::Train) {
                NegFilterArg::Train => NegFilter::Train,
                NegFilterArg::All => NegFilter::All,
            },
            normalize_entities: a.normalize_entities,
        }
    };
    let config = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        eval_every: a.eval_every,
        method,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok((kind, config))
}

fn default_run_dir(a: &TrainArgs) -> PathBuf {
    let model = ModelArg::to_possible_value(&a.model).map(|v| v.get_name().to_owned()).unwrap_or_default();
    PathBuf::from("runs").join(format!("{model}-d{}-s{}", a.dim, a.seed))
}

fn prepare_run_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(|e| io_failure(dir, e))?.next().is_some();
        if occupied && !force {
            return Err(Failure::Data(format!(
                "run directory {} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    fs::write(path, body + "\n").map_err(|e| io_failure(path, e))
}

fn report_name(split: Split, filtered: bool) -> String {
    format!("eval_{split}_{}.json", if filtered { "filt" } else { "raw" })
}

fn load_graph(data: &DataArgs) -> Result<KnowledgeGraph, Failure> {
    let kg = load_knowledge_graph(&data.train, &data.valid, &data.test)?;
    for w in kg.warnings() {
        log::warn!("{w}");
    }
    Ok(kg)
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let (kind, config) = resolve_train_config(a).map_err(Failure::Usage)?;
    let kg = load_graph(&a.data)?;
    let dir = a.run_dir.clone().unwrap_or_else(|| default_run_dir(a));
    prepare_run_dir(&dir, a.force)?;

    let manifest = RunManifest {
        flags: TrainArgs {
            run_dir: Some(dir.clone()),
            ..a.clone()
        },
        model_kind: kind,
        config,
        seed: a.seed,
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        started_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| io_failure(&metrics_path, e))?);
    let model = init_model(&kg, kind, a.dim, &mut stream_rng(a.seed, streams::INIT))?;
    let no_timing = a.no_timing;
    let outcome = train_with(&kg, model, &config, |record: &TrainRecord| {
        let record = TrainRecord {
            wall_seconds: if no_timing { 0.0 } else { record.wall_seconds },
            ..*record
        };
        log::info!(
            "epoch {} loss {:.6} val_mrr {:?}",
            record.epoch,
            record.train_loss,
            record.val_mrr_filtered
        );
        let line = serde_json::to_string(&record).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(metrics, "{line}")
            .and_then(|_| metrics.flush())
            .map_err(|source| Error::Io {
                path: metrics_path.clone(),
                source,
            })
    })?;
    drop(metrics);

    save_checkpoint(&outcome.model, dir.join(CHECKPOINT_FILE))?;
    for split in [Split::Valid, Split::Test] {
        if kg.split(split).is_empty() {
            continue;
        }
        for filtered in [false, true] {
            let report = evaluate(&outcome.model, &kg, split, filtered)?;
            write_json(&dir.join(report_name(split, filtered)), &report)?;
        }
    }
    println!(
        "run_dir={} best_epoch={} val_mrr_filt={}",
        dir.display(),
        outcome.best_epoch,
        outcome.best_val_mrr.map_or("NA".into(), |m| m.to_string())
    );
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<RunManifest, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let body = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    serde_json::from_str(&body).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let run_dir = a.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
    let data = match (&a.train, &a.valid, &a.test) {
        (Some(train), Some(valid), Some(test)) => DataArgs {
            train: train.clone(),
            valid: valid.clone(),
            test: test.clone(),
        },
        _ => read_manifest(&run_dir)
            .map_err(|f| usage(format!("no --train/--valid/--test given and {}", f.message())))?
            .flags
            .data,
    };
    let kg = load_graph(&data)?;
    let model = load_checkpoint_for(&a.checkpoint, &kg)?;
    let split = Split::from(a.split);
    let filtered = !a.raw;
    let report = evaluate(&model, &kg, split, filtered)?;
    let out = a.out.clone().unwrap_or_else(|| run_dir.join(report_name(split, filtered)));
    write_json(&out, &report)?;
    println!("{}", summary_line(&report));
    Ok(())
}

pub fn summary_line(r: &MetricsReport) -> String {
    format!("MRR={} H@1={} H@10={} MR={}", r.mrr, r.hits1, r.hits10, r.mr)
}

/// Parses `flag=v1,v2,...` lines; blank lines and `#` comments are skipped.
pub fn parse_grid(text: &str) -> Result<Vec<(String, Vec<String>)>, String> {
    let mut grid: Vec<(String, Vec<String>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (flag, values) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `flag=v1,v2,...`", n + 1))?;
        let flag = flag.trim().trim_start_matches("--").to_owned();
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_owned()).collect();
        if flag.is_empty() || values.iter().any(String::is_empty) {
            return Err(format!("line {}: empty flag or value", n + 1));
        }
        if grid.iter().any(|(f, _)| *f == flag) {
            return Err(format!("line {}: flag `{flag}` repeated", n + 1));
        }
        grid.push((flag, values));
    }
    Ok(grid)
}

/// Cartesian product in grid order, last flag varying fastest.
pub fn grid_combinations(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    grid.iter().fold(vec![Vec::new()], |acc, (flag, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((flag.clone(), v.clone()));
                    next
                })
            })
            .collect()
    })
}

/// Boolean flags appear in the grid as `flag=true,false`.
fn combination_args(combo: &[(String, String)]) -> Vec<String> {
    let mut args = Vec::new();
    for (flag, value) in combo {
        match value.as_str() {
            "true" => args.push(format!("--{flag}")),
            "false" => {}
            _ => {
                args.push(format!("--{flag}"));
                args.push(value.clone());
            }
        }
    }
    args
}

struct SweepRow {
    cells: Vec<String>,
    val_mrr: Option<f64>,
}

fn read_report(path: &Path) -> Option<MetricsReport> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

/// First epoch reaching the best validation MRR.
fn epochs_to_best(metrics: &Path) -> Option<usize> {
    let file = File::open(metrics).ok()?;
    let mut best: Option<(f64, usize)> = None;
    for line in BufReader::new(file).lines() {
        let record: TrainRecord = serde_json::from_str(&line.ok()?).ok()?;
        if let Some(m) = record.val_mrr_filtered {
            if best.map_or(true, |(b, _)| m > b) {
                best = Some((m, record.epoch));
            }
        }
    }
    best.map(|(_, e)| e)
}

fn summary_row(dir: &Path, combo: &[(String, String)], base: &[String], ok: bool) -> SweepRow {
    let manifest = if ok { read_manifest(dir).ok() } else { None };
    let val = manifest.as_ref().and_then(|_| read_report(&dir.join(report_name(Split::Valid, true))));
    let test = manifest.as_ref().and_then(|_| read_report(&dir.join(report_name(Split::Test, true))));
    let flag_value = |name: &str| -> String {
        let from_combo = combo.iter().find(|(f, _)| f == name).map(|(_, v)| v.clone());
        let from_base = base
            .iter()
            .position(|a| a == &format!("--{name}"))
            .and_then(|i| base.get(i + 1).cloned());
        from_combo.or(from_base).unwrap_or_default()
    };
    let cells = match &manifest {
        Some(m) => {
            let (alpha, loss, sdbn) = match m.config.method {
                Method::NegativeSamplingFree { loss, sdbn_group, .. } => (
                    loss.alpha.to_string(),
                    format!("{:?}", loss.objective).to_lowercase(),
                    sdbn_group.map_or("none".into(), |g| g.to_string()),
                ),
                Method::NegativeSampling { .. } => ("".into(), "".into(), "".into()),
            };
            let model = ModelArg::to_possible_value(&m.flags.model)
                .map(|v| v.get_name().to_owned())
                .unwrap_or_default();
            vec![
                dir.display().to_string(),
                model,
                m.flags.dim.to_string(),
                m.config.lr.to_string(),
                m.config.batch_size.to_string(),
                alpha,
                loss,
                sdbn,
                val.map_or(String::new(), |r| r.mrr.to_string()),
                test.map_or(String::new(), |r| r.mrr.to_string()),
                epochs_to_best(&dir.join(METRICS_FILE)).map_or(String::new(), |e| e.to_string()),
            ]
        }
        None => vec![
            dir.display().to_string(),
            flag_value("model"),
            flag_value("dim"),
            flag_value("lr"),
            flag_value("batch-size"),
            flag_value("alpha"),
            flag_value("loss"),
            flag_value("sdbn"),
            String::new(),
            String::new(),
            String::new(),
        ],
    };
    SweepRow {
        cells,
        val_mrr: val.map(|r| r.mrr),
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if a.base.iter().any(|f| f == "--run-dir") {
        return Err(usage("--run-dir is chosen by the sweep"));
    }
    let text = fs::read_to_string(&a.grid).map_err(|e| io_failure(&a.grid, e))?;
    let grid = parse_grid(&text).map_err(|m| Failure::Data(format!("{}: {m}", a.grid.display())))?;
    let combos = grid_combinations(&grid);
    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let exe = std::env::current_exe().map_err(|e| Failure::Data(format!("cannot locate executable: {e}")))?;

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..combos.len()).collect());
    let status: Mutex<Vec<Option<bool>>> = Mutex::new(vec![None; combos.len()]);
    let run_dir = |i: usize| a.out.join(format!("run_{i:03}"));
    std::thread::scope(|scope| {
        for _ in 0..a.jobs.min(combos.len().max(1)) {
            scope.spawn(|| loop {
                let Some(i) = queue.lock().unwrap().pop_front() else { break };
                let dir = run_dir(i);
                let log_path = a.out.join(format!("run_{i:03}.log"));
                let ok = File::create(&log_path)
                    .and_then(|log| {
                        let err = log.try_clone()?;
                        Command::new(&exe)
                            .arg("train")
                            .args(&a.base)
                            .args(combination_args(&combos[i]))
                            .arg("--run-dir")
                            .arg(&dir)
                            .arg("--force")
                            .stdin(Stdio::null())
                            .stdout(log)
                            .stderr(err)
                            .status()
                    })
                    .map(|s| s.success())
                    .unwrap_or(false);
                if !ok {
                    log::error!("sweep child {} failed; see {}", i, log_path.display());
                }
                status.lock().unwrap()[i] = Some(ok);
            });
        }
    });

    let status = status.into_inner().unwrap();
    let mut rows: Vec<SweepRow> = combos
        .iter()
        .enumerate()
        .map(|(i, combo)| summary_row(&run_dir(i), combo, &a.base, status[i] == Some(true)))
        .collect();
    rows.sort_by(|x, y| match (x.val_mrr, y.val_mrr) {
        (Some(a), Some(b)) => b.total_cmp(&a),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let summary_path = a.out.join(SUMMARY_FILE);
    let mut csv = SUMMARY_COLUMNS.join(",") + "\n";
    for row in &rows {
        let cells: Vec<String> = row.cells.iter().map(|c| csv_cell(c)).collect();
        csv += &(cells.join(",") + "\n");
    }
    fs::write(&summary_path, csv).map_err(|e| io_failure(&summary_path, e))?;

    let failed = status.iter().filter(|s| **s != Some(true)).count();
    println!("{} runs, {} failed, summary {}", combos.len(), failed, summary_path.display());
    if failed == combos.len() {
        return Err(Failure::Data("every sweep run failed".into()));
    }
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<(), Failure> {
    let expected = match &a.check {
        Some(counts) => {
            let parsed: Result<Vec<usize>, _> = counts.split(',').map(|v| v.trim().parse::<usize>()).collect();
            match parsed {
                Ok(v) if v.len() == 5 => Some(v),
                _ => return Err(usage(format!("--check expects five counts e,r,tr,va,te, got `{counts}`"))),
            }
        }
        None => None,
    };
    let kg = load_graph(&a.data)?;
    let counts = kg.stats().as_array();
    let names = ["entities", "relations", "train", "valid", "test"];
    let line: Vec<String> = names.iter().zip(counts).map(|(n, c)| format!("{n}={c}")).collect();
    println!("{}", line.join(" "));
    if let Some(expected) = expected {
        let diffs: Vec<String> = names
            .iter()
            .zip(counts.iter().zip(&expected))
            .filter(|(_, (got, want))| got != want)
            .map(|(n, (got, want))| format!("{n}: expected {want}, found {got}"))
            .collect();
        if !diffs.is_empty() {
            return Err(Failure::Mismatch(diffs.join("; ")));
        }
    }
    Ok(())
}
