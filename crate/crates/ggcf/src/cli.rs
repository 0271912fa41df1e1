//! Command-line interface: prepare, train, evaluate, grid, ablate, synth.
//!
//! Configuration comes from three layers, later ones winning: built-in
//! defaults, a TOML file passed with `--config`, and individual flags. The
//! default output directory is `$GGCF_OUT_DIR` or `./ggcf-out`. Every record
//! written by a command carries a SHA-256 hash of the effective configuration
//! so artifacts can be traced back to the run that produced them.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{hash_file, hex, Checkpoint};
use crate::datagen;
use crate::error::{GgcfError, Result};
use crate::eval::evaluate;
use crate::graph::{
    load_lastfm, load_movielens, load_split, save_split, split_interactions, InteractionGraph,
    InteractionSet,
};
use crate::model::{forward, AblationFlags};
use crate::train::{fit, EpochRecord, EvalSets, TrainConfig};

pub const OUT_DIR_ENV: &str = "GGCF_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Movielens,
    Lastfm,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Movielens => "movielens",
            DatasetKind::Lastfm => "lastfm",
        }
    }

    fn load(self, path: &Path) -> Result<InteractionSet> {
        match self {
            DatasetKind::Movielens => load_movielens(path),
            DatasetKind::Lastfm => load_lastfm(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    /// Full model, no ablation.
    #[value(alias = "full")]
    None,
    NoInteraction,
    EuclideanOnly,
    HyperbolicOnly,
}

impl AblationKind {
    pub fn flags(self) -> AblationFlags {
        match self {
            AblationKind::None => AblationFlags::none(),
            AblationKind::NoInteraction => AblationFlags {
                disable_interaction: true,
                ..AblationFlags::none()
            },
            AblationKind::EuclideanOnly => AblationFlags {
                euclidean_only: true,
                ..AblationFlags::none()
            },
            AblationKind::HyperbolicOnly => AblationFlags {
                hyperbolic_only: true,
                ..AblationFlags::none()
            },
        }
    }

    fn name(self) -> &'static str {
        match self {
            AblationKind::None => "full",
            AblationKind::NoInteraction => "no-interaction",
            AblationKind::EuclideanOnly => "euclidean-only",
            AblationKind::HyperbolicOnly => "hyperbolic-only",
        }
    }
}

/// Effective configuration of one run, after merging defaults, the config
/// file and command-line overrides. Serialized form feeds the config hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_path: Option<PathBuf>,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub dim: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub k: usize,
    pub ablation: AblationKind,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset: DatasetKind::Movielens,
            data_path: None,
            split_seed: 42,
            train_fraction: 0.8,
            dim: t.dim,
            layers: t.layers,
            learning_rate: t.learning_rate,
            l2_weight: t.l2_weight,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            eval_every: t.eval_every,
            k: 20,
            ablation: AblationKind::None,
            out: None,
            deterministic: false,
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            l2_weight: self.l2_weight,
            batch_size: self.batch_size,
            epochs: self.epochs,
            layers: self.layers,
            dim: self.dim,
            seed: self.seed,
            eval_every: self.eval_every,
            deterministic: self.deterministic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(GgcfError::Config(format!(
                "train fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        if self.k == 0 {
            return Err(GgcfError::Config("metrics cutoff k must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of this configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("RunConfig serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex(&hasher.finalize())
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ggcf-out"))
    }

    fn split_path(&self, out: &Path) -> PathBuf {
        out.join(format!("{}-split.tsv", self.dataset.name()))
    }
}

#[derive(Parser)]
#[command(
    name = "ggcf",
    version,
    about = "Dual-geometry graph collaborative filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw dataset, report its counts and freeze a train/test split.
    Prepare(PrepareArgs),
    /// Train a model on a frozen split, writing checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a frozen split.
    Evaluate(EvaluateArgs),
    /// Train once per layer count and tabulate the metrics.
    Grid(GridArgs),
    /// Train the full model and its three ablations on one shared split.
    Ablate(AblateArgs),
    /// Generate a deterministic synthetic corpus in a raw dataset format.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML config file; flags given here override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dataset kind.
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    /// Raw dataset file (ratings.csv or user_artists.dat).
    #[arg(long, value_name = "FILE")]
    data_path: Option<PathBuf>,
    /// Seed for the train/test split shuffle.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Fraction of each user's interactions kept for training.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Embedding dimension d.
    #[arg(long)]
    dim: Option<usize>,
    /// Propagation depth K.
    #[arg(long)]
    layers: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty weight on layer-0 embeddings.
    #[arg(long)]
    l2: Option<f64>,
    /// Positives per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Ranking cutoff for recall and ndcg.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for init and sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs between held-out evaluations.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Ablation variant to train.
    #[arg(long, value_enum)]
    ablation: Option<AblationKind>,
    /// Output directory (default $GGCF_OUT_DIR or ./ggcf-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Zero recorded wall-clock times and force sequential execution so
    /// reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    /// Defaults, then the config file, then explicit flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| GgcfError::io(path, e))?;
                toml::from_str::<RunConfig>(&text).map_err(|e| {
                    GgcfError::Config(format!("{}: {e}", path.display()))
                })?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.dataset {
            cfg.dataset = v;
        }
        if let Some(v) = &self.data_path {
            cfg.data_path = Some(v.clone());
        }
        if let Some(v) = self.split_seed {
            cfg.split_seed = v;
        }
        if let Some(v) = self.train_fraction {
            cfg.train_fraction = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.l2 {
            cfg.l2_weight = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.ablation {
            cfg.ablation = v;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    checkpoint: PathBuf,
    /// Frozen split file written by `prepare` or `train`.
    split: PathBuf,
    /// Ranking cutoff.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Output directory for the report file.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Layer counts to sweep, comma separated.
    #[arg(long = "grid-layers", value_delimiter = ',', default_value = "1,2,3,4")]
    grid_layers: Vec<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus to generate.
    #[arg(long, value_enum, default_value_t = DatasetKind::Movielens)]
    dataset: DatasetKind,
    /// Generation seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory (default $GGCF_OUT_DIR or ./ggcf-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Entry point used by the `ggcf` binary. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(&args.common.resolve()?),
        Command::Train(args) => cmd_train(&args.common.resolve()?),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Grid(args) => cmd_grid(&args.common.resolve()?, &args.grid_layers),
        Command::Ablate(args) => cmd_ablate(&args.common.resolve()?),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GgcfError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| GgcfError::io(path, e))
}

/// A frozen split on disk plus its in-memory form and file hash.
struct SplitData {
    train: InteractionSet,
    test: InteractionSet,
    path: PathBuf,
    sha256: String,
}

/// Load the frozen split from the output directory, creating it from the raw
/// dataset first if it does not exist yet.
fn obtain_split(cfg: &RunConfig, out: &Path) -> Result<SplitData> {
    let path = cfg.split_path(out);
    if !path.exists() {
        let data_path = cfg.data_path.as_ref().ok_or_else(|| {
            GgcfError::Config(format!(
                "no frozen split at {} and no --data-path to build one from",
                path.display()
            ))
        })?;
        let full = cfg.dataset.load(data_path)?;
        let (train, test) = split_interactions(&full, cfg.train_fraction, cfg.split_seed)?;
        save_split(&path, &train, &test)?;
    }
    let (train, test) = load_split(&path)?;
    let sha256 = hex(&hash_file(&path)?);
    Ok(SplitData {
        train,
        test,
        path,
        sha256,
    })
}

#[derive(Serialize)]
struct PrepareSummary {
    dataset: &'static str,
    users: usize,
    items: usize,
    interactions: usize,
    train_interactions: usize,
    test_interactions: usize,
    raw_sha256: String,
    split_path: PathBuf,
    split_sha256: String,
    config_hash: String,
}

fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let data_path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| GgcfError::Config("prepare requires --data-path".into()))?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let full = cfg.dataset.load(data_path)?;
    let (train, test) = split_interactions(&full, cfg.train_fraction, cfg.split_seed)?;
    let split_path = cfg.split_path(&out);
    save_split(&split_path, &train, &test)?;
    let summary = PrepareSummary {
        dataset: cfg.dataset.name(),
        users: full.user_count(),
        items: full.item_count(),
        interactions: full.len(),
        train_interactions: train.len(),
        test_interactions: test.len(),
        raw_sha256: hex(&hash_file(data_path)?),
        split_path: split_path.clone(),
        split_sha256: hex(&hash_file(&split_path)?),
        config_hash: cfg.hash(),
    };
    write_json(&out.join(format!("{}-prepare.json", cfg.dataset.name())), &summary)?;
    println!("dataset: {}", summary.dataset);
    println!("users: {}", summary.users);
    println!("items: {}", summary.items);
    println!("interactions: {}", summary.interactions);
    println!(
        "split: {} train / {} test -> {}",
        summary.train_interactions,
        summary.test_interactions,
        split_path.display()
    );
    println!("config: {}", summary.config_hash);
    Ok(())
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    epoch: usize,
    loss: f64,
    recall: Option<f64>,
    ndcg: Option<f64>,
    wall_clock_secs: f64,
    config_hash: &'a str,
}

struct TrainOutcome {
    final_record: EpochRecord,
    checkpoint_path: PathBuf,
    history_path: PathBuf,
    config_hash: String,
}

/// Shared training driver for train, grid and ablate. Streams history lines
/// to `<dir>/history.jsonl` and writes `<dir>/model.ckpt` when done.
fn run_training(cfg: &RunConfig, split: &SplitData, dir: &Path, verbose: bool) -> Result<TrainOutcome> {
    ensure_dir(dir)?;
    let config_hash = cfg.hash();
    let graph = InteractionGraph::from_train(&split.train)?;
    let history_path = dir.join("history.jsonl");
    let file = File::create(&history_path).map_err(|e| GgcfError::io(&history_path, e))?;
    let mut sink = BufWriter::new(file);
    let train_cfg = cfg.train_config();
    let flags = cfg.ablation.flags();
    let eval_sets = EvalSets {
        train: &split.train,
        test: &split.test,
        k: cfg.k,
    };
    let (params, history) = fit(&graph, Some(eval_sets), &train_cfg, flags, |record, _| {
        let line = HistoryLine {
            epoch: record.epoch,
            loss: record.loss,
            recall: record.recall,
            ndcg: record.ndcg,
            wall_clock_secs: record.wall_clock_secs,
            config_hash: &config_hash,
        };
        let text = serde_json::to_string(&line).expect("history line serializes");
        writeln!(sink, "{text}").map_err(|e| GgcfError::io(&history_path, e))?;
        sink.flush().map_err(|e| GgcfError::io(&history_path, e))?;
        if verbose {
            match (record.recall, record.ndcg) {
                (Some(r), Some(n)) => println!(
                    "epoch {:>4}  loss {:.6}  recall@{} {:.4}  ndcg@{} {:.4}",
                    record.epoch, record.loss, cfg.k, r, cfg.k, n
                ),
                _ => println!("epoch {:>4}  loss {:.6}", record.epoch, record.loss),
            }
        }
        Ok(())
    })?;
    let mut split_hash = [0u8; 32];
    let digest = hash_file(&split.path)?;
    split_hash.copy_from_slice(&digest);
    let checkpoint = Checkpoint {
        params,
        k_layers: cfg.layers,
        flags,
        split_hash,
        user_ids: split.train.user_ids().to_vec(),
        item_ids: split.train.item_ids().to_vec(),
    };
    let checkpoint_path = dir.join("model.ckpt");
    checkpoint.save(&checkpoint_path)?;
    let final_record = history.last().expect("fit yields at least one epoch").clone();
    Ok(TrainOutcome {
        final_record,
        checkpoint_path,
        history_path,
        config_hash,
    })
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let split = obtain_split(cfg, &out)?;
    let outcome = run_training(cfg, &split, &out, true)?;
    let r = &outcome.final_record;
    println!(
        "final: loss {:.6}  recall@{} {}  ndcg@{} {}",
        r.loss,
        cfg.k,
        r.recall.map_or("n/a".into(), |v| format!("{v:.4}")),
        cfg.k,
        r.ndcg.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("history: {}", outcome.history_path.display());
    println!("config: {}", outcome.config_hash);
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    k: usize,
    recall: f64,
    ndcg: f64,
    users_evaluated: usize,
    checkpoint_sha256: String,
    split_sha256: String,
    config_hash: String,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.k == 0 {
        return Err(GgcfError::Config("metrics cutoff k must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let split_digest = hash_file(&args.split)?;
    if split_digest != ckpt.split_hash {
        return Err(GgcfError::Incompatible(format!(
            "split file {} does not match the split this checkpoint was trained on",
            args.split.display()
        )));
    }
    let (train, test) = load_split(&args.split)?;
    if train.user_ids() != ckpt.user_ids.as_slice() || train.item_ids() != ckpt.item_ids.as_slice()
    {
        return Err(GgcfError::Incompatible(
            "split id universe does not match the checkpoint".into(),
        ));
    }
    let graph = InteractionGraph::from_train(&train)?;
    let fused = forward(&graph, &ckpt.params, ckpt.k_layers, ckpt.flags)?;
    let lambda = ckpt.flags.effective_lambda(ckpt.params.lambda);
    let report = evaluate(&fused, &train, &test, args.k, lambda)?;

    let invocation = serde_json::json!({
        "checkpoint_sha256": hex(&hash_file(&args.checkpoint)?),
        "split_sha256": hex(&split_digest),
        "k": args.k,
    });
    let mut hasher = Sha256::new();
    hasher.update(invocation.to_string().as_bytes());
    let output = EvalOutput {
        k: report.k,
        recall: report.recall,
        ndcg: report.ndcg,
        users_evaluated: report.users_evaluated,
        checkpoint_sha256: invocation["checkpoint_sha256"].as_str().unwrap().to_string(),
        split_sha256: invocation["split_sha256"].as_str().unwrap().to_string(),
        config_hash: hex(&hasher.finalize()),
    };
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ggcf-out"));
    ensure_dir(&out)?;
    write_json(&out.join("eval.json"), &output)?;
    println!("{}", serde_json::to_string(&output).expect("report serializes"));
    Ok(())
}

#[derive(Serialize)]
struct GridRow {
    k_layers: usize,
    status: String,
    error: Option<String>,
    loss: Option<f64>,
    recall: Option<f64>,
    ndcg: Option<f64>,
    config_hash: Option<String>,
}

#[derive(Serialize)]
struct GridOutput {
    config_hash: String,
    split_sha256: String,
    k: usize,
    rows: Vec<GridRow>,
}

fn cmd_grid(cfg: &RunConfig, layer_list: &[usize]) -> Result<()> {
    if layer_list.is_empty() {
        return Err(GgcfError::Config("grid needs at least one layer count".into()));
    }
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let split = obtain_split(cfg, &out)?;
    let mut rows = Vec::with_capacity(layer_list.len());
    for &k_layers in layer_list {
        let mut cell_cfg = cfg.clone();
        cell_cfg.layers = k_layers;
        let dir = out.join(format!("grid-k{k_layers}"));
        match run_training(&cell_cfg, &split, &dir, false) {
            Ok(outcome) => rows.push(GridRow {
                k_layers,
                status: "ok".into(),
                error: None,
                loss: Some(outcome.final_record.loss),
                recall: outcome.final_record.recall,
                ndcg: outcome.final_record.ndcg,
                config_hash: Some(outcome.config_hash),
            }),
            Err(e) => rows.push(GridRow {
                k_layers,
                status: "failed".into(),
                error: Some(e.to_string()),
                loss: None,
                recall: None,
                ndcg: None,
                config_hash: None,
            }),
        }
    }
    let output = GridOutput {
        config_hash: cfg.hash(),
        split_sha256: split.sha256.clone(),
        k: cfg.k,
        rows,
    };
    write_json(&out.join("grid.json"), &output)?;
    println!("{:<8} {:>12} {:>12} {:>12}  status", "layers", format!("recall@{}", cfg.k), format!("ndcg@{}", cfg.k), "loss");
    for row in &output.rows {
        println!(
            "{:<8} {:>12} {:>12} {:>12}  {}",
            row.k_layers,
            row.recall.map_or("-".into(), |v| format!("{v:.4}")),
            row.ndcg.map_or("-".into(), |v| format!("{v:.4}")),
            row.loss.map_or("-".into(), |v| format!("{v:.6}")),
            if let Some(e) = &row.error {
                format!("failed: {e}")
            } else {
                row.status.clone()
            }
        );
    }
    println!("split sha256: {}", output.split_sha256);
    println!("config: {}", output.config_hash);
    Ok(())
}

#[derive(Serialize)]
struct AblateRow {
    variant: &'static str,
    status: String,
    error: Option<String>,
    loss: Option<f64>,
    recall: Option<f64>,
    ndcg: Option<f64>,
    config_hash: Option<String>,
}

#[derive(Serialize)]
struct AblateOutput {
    config_hash: String,
    split_sha256: String,
    k: usize,
    rows: Vec<AblateRow>,
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let split = obtain_split(cfg, &out)?;
    let variants = [
        AblationKind::None,
        AblationKind::NoInteraction,
        AblationKind::EuclideanOnly,
        AblationKind::HyperbolicOnly,
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut cell_cfg = cfg.clone();
        cell_cfg.ablation = variant;
        let dir = out.join(format!("ablate-{}", variant.name()));
        match run_training(&cell_cfg, &split, &dir, false) {
            Ok(outcome) => rows.push(AblateRow {
                variant: variant.name(),
                status: "ok".into(),
                error: None,
                loss: Some(outcome.final_record.loss),
                recall: outcome.final_record.recall,
                ndcg: outcome.final_record.ndcg,
                config_hash: Some(outcome.config_hash),
            }),
            Err(e) => rows.push(AblateRow {
                variant: variant.name(),
                status: "failed".into(),
                error: Some(e.to_string()),
                loss: None,
                recall: None,
                ndcg: None,
                config_hash: None,
            }),
        }
    }
    let output = AblateOutput {
        config_hash: cfg.hash(),
        split_sha256: split.sha256.clone(),
        k: cfg.k,
        rows,
    };
    write_json(&out.join("ablate.json"), &output)?;
    println!(
        "{:<18} {:>12} {:>12} {:>12}  status",
        "variant",
        format!("recall@{}", cfg.k),
        format!("ndcg@{}", cfg.k),
        "loss"
    );
    for row in &output.rows {
        println!(
            "{:<18} {:>12} {:>12} {:>12}  {}",
            row.variant,
            row.recall.map_or("-".into(), |v| format!("{v:.4}")),
            row.ndcg.map_or("-".into(), |v| format!("{v:.4}")),
            row.loss.map_or("-".into(), |v| format!("{v:.6}")),
            if let Some(e) = &row.error {
                format!("failed: {e}")
            } else {
                row.status.clone()
            }
        );
    }
    println!("split sha256: {}", output.split_sha256);
    println!("config: {}", output.config_hash);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ggcf-out"));
    ensure_dir(&out)?;
    let path = match args.dataset {
        DatasetKind::Movielens => datagen::write_movielens(&out, args.seed)?,
        DatasetKind::Lastfm => datagen::write_lastfm(&out, args.seed)?,
    };
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_layering_prefers_flags_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "dim = 16\nlayers = 2\nlearning_rate = 0.01\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            dataset: None,
            data_path: None,
            split_seed: None,
            train_fraction: None,
            dim: Some(8),
            layers: None,
            lr: None,
            l2: None,
            batch: None,
            epochs: None,
            k: None,
            seed: None,
            eval_every: None,
            ablation: None,
            out: None,
            deterministic: false,
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.dim, 8);
        assert_eq!(cfg.layers, 2);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.epochs, RunConfig::default().epochs);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "dimension = 16\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            dataset: None,
            data_path: None,
            split_seed: None,
            train_fraction: None,
            dim: None,
            layers: None,
            lr: None,
            l2: None,
            batch: None,
            epochs: None,
            k: None,
            seed: None,
            eval_every: None,
            ablation: None,
            out: None,
            deterministic: false,
        };
        assert!(matches!(args.resolve(), Err(GgcfError::Config(_))));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.layers = 4;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn ablation_kinds_map_to_flags() {
        assert_eq!(AblationKind::None.flags(), AblationFlags::none());
        assert!(AblationKind::NoInteraction.flags().disable_interaction);
        assert!(AblationKind::EuclideanOnly.flags().euclidean_only);
        assert!(AblationKind::HyperbolicOnly.flags().hyperbolic_only);
    }

    #[test]
    fn cli_parses_the_contract_surface() {
        Cli::try_parse_from([
            "ggcf", "train", "--dataset", "movielens", "--data-path", "x.csv", "--split-seed",
            "7", "--train-fraction", "0.8", "--dim", "64", "--layers", "3", "--lr", "1e-3",
            "--l2", "1e-4", "--batch", "1024", "--epochs", "400", "--k", "20", "--seed", "42",
            "--ablation", "euclidean-only", "--out", "/tmp/o", "--deterministic",
        ])
        .unwrap();
        Cli::try_parse_from(["ggcf", "evaluate", "m.ckpt", "split.tsv", "--k", "10"]).unwrap();
        Cli::try_parse_from(["ggcf", "grid", "--grid-layers", "1,3"]).unwrap();
        Cli::try_parse_from(["ggcf", "ablate", "--epochs", "2"]).unwrap();
        Cli::try_parse_from(["ggcf", "synth", "--dataset", "lastfm"]).unwrap();
        assert!(Cli::try_parse_from(["ggcf", "bogus"]).is_err());
    }
}
