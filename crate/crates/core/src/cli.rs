//! `asm` command-line surface: `gen-data`, `train`, `audit`, `compare`.
//!
//! Configs and summaries are JSON, per-sample data is CSV. Flags override
//! config-file keys, which override defaults. Every command writes a manifest
//! holding the fully resolved config; passing that manifest back as
//! `--config` reproduces the run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cotrain::{self, Checkpoint, CompareAggregate, Mode, TrainConfig, TrainSummary};
use crate::data::{self, GenConfig, NoisyDataset, Split};
use crate::error::{AsmError, Result};
use crate::mining::{self, ScoreRule};
use crate::thresholds;

#[derive(Debug, Parser)]
#[command(
    name = "asm",
    version,
    about = "Adaptive sample mining on synthetic noisy-label data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV (plus manifest).
    GenData(GenDataArgs),
    /// Train two networks with adaptive sample mining.
    Train(TrainArgs),
    /// Partition a dataset's training rows with a trained checkpoint.
    Audit(AuditArgs),
    /// Paired baseline-vs-mining runs over several seeds.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON generation config (keys: k, d, n_per_class, n_test_per_class,
    /// separation, ambiguous_fraction, noise_ratio, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub n_test_per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub ambiguous_fraction: Option<f64>,
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flags mirroring `TrainConfig` fields.
#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long, visible_alias = "warmup")]
    pub warmup_epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_gamma: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub e_r: Option<u32>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub weak_sigma: Option<f64>,
    #[arg(long)]
    pub strong_sigma: Option<f64>,
    #[arg(long)]
    pub mask_prob: Option<f64>,
    #[arg(long)]
    pub seed_net1: Option<u64>,
    #[arg(long)]
    pub seed_net2: Option<u64>,
    #[arg(long)]
    pub seed_data: Option<u64>,
    #[arg(long)]
    pub stop_weak_gradient: Option<bool>,
    /// `given_label` or `max`.
    #[arg(long, value_parser = parse_score_rule)]
    pub mining_score: Option<ScoreRule>,
    #[arg(long)]
    pub checkpoint_every: Option<u32>,
}

fn parse_score_rule(s: &str) -> std::result::Result<ScoreRule, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown mining score {s:?} (expected given_label or max)"))
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.epochs => cfg.epochs);
        set!(self.warmup_epochs => cfg.warmup_epochs);
        set!(self.batch_size => cfg.batch_size);
        set!(self.lr => cfg.lr);
        set!(self.lr_gamma => cfg.lr_gamma);
        set!(self.weight_decay => cfg.weight_decay);
        set!(self.lambda_max => cfg.ramp.lambda_max);
        set!(self.beta => cfg.ramp.beta);
        set!(self.e_r => cfg.ramp.e_r);
        set!(self.omega => cfg.weights.omega);
        set!(self.gamma => cfg.weights.gamma);
        set!(self.hidden => cfg.hidden);
        set!(self.weak_sigma => cfg.augmentation.weak_sigma);
        set!(self.strong_sigma => cfg.augmentation.strong_sigma);
        set!(self.mask_prob => cfg.augmentation.mask_prob);
        set!(self.seed_net1 => cfg.seed_net1);
        set!(self.seed_net2 => cfg.seed_net2);
        set!(self.seed_data => cfg.seed_data);
        set!(self.stop_weak_gradient => cfg.stop_weak_gradient);
        set!(self.mining_score => cfg.mining_score);
        set!(self.checkpoint_every => cfg.checkpoint_every);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config, or a manifest written by a previous run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Class count; defaults to the dataset's generation manifest, else max label + 1.
    #[arg(long)]
    pub classes: Option<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_score_rule, default_value = "given_label")]
    pub mining_score: ScoreRule,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// JSON training config (may carry a `seeds` array), or a compare manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Base seeds, comma separated; each derives the three run seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

pub const DEFAULT_COMPARE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Fully resolved config of the command.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Path -> SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// Path -> SHA-256 of every output file.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| AsmError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AsmError::io(path, e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| AsmError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AsmError::config(format!("{}: {e}", path.display())))
}

/// Loads a config file; manifests contribute their resolved `config` object.
fn config_value(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let value = read_json(path)?;
    match (&value.get("command"), value.get("config")) {
        (Some(_), Some(inner)) => Ok(inner.clone()),
        _ => Ok(value),
    }
}

fn parse_config<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| AsmError::config(format!("{what}: {e}")))
}

/// Manifest path written next to a file: `data.csv` -> `data.manifest.json`.
pub fn manifest_path_for(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| AsmError::io(path, e))
}

/// Loads a dataset, resolving the class count from the flag, the generation
/// manifest next to the CSV, or the labels themselves.
pub fn load_dataset(path: &Path, classes: Option<usize>) -> Result<NoisyDataset> {
    let k = match classes {
        Some(k) => Some(k),
        None => {
            let manifest = manifest_path_for(path);
            if manifest.exists() {
                read_json(&manifest)?
                    .pointer("/config/k")
                    .and_then(Value::as_u64)
                    .map(|k| k as usize)
            } else {
                None
            }
        }
    };
    data::load_csv(path, k)
}

/// Runs one command and returns the report it prints on stdout (`Null` for none).
pub fn execute(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args).map(|()| Value::Null),
        Command::Train(args) => Ok(serde_json::to_value(cmd_train(&args)?)?),
        Command::Audit(args) => cmd_audit(&args),
        Command::Compare(args) => Ok(serde_json::to_value(cmd_compare(&args)?)?),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let report = execute(cli)?;
    if !report.is_null() {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg: GenConfig =
        parse_config(config_value(args.config.as_deref())?, "generation config")?;
    macro_rules! set {
        ($($flag:ident),*) => {
            $(if let Some(v) = args.$flag {
                cfg.$flag = v;
            })*
        };
    }
    set!(
        k,
        d,
        n_per_class,
        n_test_per_class,
        separation,
        ambiguous_fraction,
        noise_ratio,
        seed
    );
    cfg.validate()?;

    let ds = cfg.build()?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data::save_csv(&ds, &args.out)?;

    let mut manifest = RunManifest::new("gen-data", serde_json::to_value(&cfg)?);
    manifest.seeds.insert("data".into(), cfg.seed);
    if let Some(path) = &args.config {
        manifest.input(path)?;
    }
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    tracing::info!(
        rows = ds.len(),
        noisy = ds.noisy_count(),
        path = %args.out.display(),
        "dataset written"
    );
    Ok(())
}

fn resolve_train_config(path: Option<&Path>, flags: &TrainFlags) -> Result<(TrainConfig, Value)> {
    let mut value = config_value(path)?;
    let extra = match &mut value {
        Value::Object(map) => map.remove("seeds"),
        _ => None,
    };
    let explicit_e_r = value.pointer("/ramp/e_r").is_some() || flags.e_r.is_some();
    let mut cfg: TrainConfig = parse_config(value, "training config")?;
    flags.apply(&mut cfg);
    if !explicit_e_r {
        // Keep the default ramp ending at 90% of the run, whatever its length.
        cfg.ramp.e_r = ((cfg.epochs as f64 * 0.9).round() as u32).max(1);
    }
    cfg.validate()?;
    Ok((cfg, extra.unwrap_or(Value::Null)))
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let (cfg, _) = resolve_train_config(args.config.as_deref(), &args.flags)?;
    let ds = load_dataset(&args.data, args.classes)?;
    create_dir(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }

    let metrics_path = args.out.join("metrics.jsonl");
    let file = File::create(&metrics_path).map_err(|e| AsmError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut written = Vec::new();

    let outcome = cotrain::train_with(&ds, &cfg, |trainer, report| {
        serde_json::to_writer(&mut metrics, report)?;
        writeln!(metrics).map_err(|e| AsmError::io(&metrics_path, e))?;
        let done = report.epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("epoch_{:03}.json", report.epoch));
            write_json(&path, &trainer.checkpoint())?;
            written.push(path);
        }
        Ok(())
    });
    metrics
        .flush()
        .map_err(|e| AsmError::io(&metrics_path, e))?;
    let outcome = outcome?;

    let summary_path = args.out.join("summary.json");
    write_json(&summary_path, &outcome.summary)?;
    let checkpoint_path = args.out.join("checkpoint.json");
    write_json(&checkpoint_path, &outcome.checkpoint)?;

    let mut manifest = RunManifest::new("train", serde_json::to_value(&cfg)?);
    insert_seeds(&mut manifest, &cfg);
    manifest.input(&args.data)?;
    if let Some(path) = &args.config {
        manifest.input(path)?;
    }
    for path in [&metrics_path, &summary_path, &checkpoint_path]
        .into_iter()
        .chain(written.iter())
    {
        manifest.output(path)?;
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(outcome.summary)
}

fn insert_seeds(manifest: &mut RunManifest, cfg: &TrainConfig) {
    manifest.seeds.insert("net1".into(), cfg.seed_net1);
    manifest.seeds.insert("net2".into(), cfg.seed_net2);
    manifest.seeds.insert("data".into(), cfg.seed_data);
}

#[derive(Debug, Serialize)]
struct AuditRow {
    sample_id: usize,
    given_label: usize,
    confidence: f64,
    subset: &'static str,
    is_injected_noise: bool,
}

/// Writes the partition CSV; returns thresholds, subset sizes and mining quality.
pub fn cmd_audit(args: &AuditArgs) -> Result<Value> {
    let ckpt: Checkpoint = parse_config(read_json(&args.checkpoint)?, "checkpoint")?;
    let ckpt = ckpt.validated()?;
    let dims = ckpt.nets[0].layer_dims().to_vec();
    let k = *dims.last().unwrap();
    let ds = data::load_csv(&args.data, Some(k))?;
    if ds.dim() != dims[0] {
        return Err(AsmError::Shape {
            what: "checkpoint input width vs dataset features",
            expected: dims[0],
            got: ds.dim(),
        });
    }
    let ids: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.splits()[i] == Split::Train)
        .collect();
    let train = ds.select(Split::Train);
    if train.is_empty() {
        return Err(AsmError::config("dataset has no training rows to audit"));
    }

    let dual = ckpt.into_dual();
    let preds = cotrain::prediction_pass(&dual, &train)?;
    let table = thresholds::compute_thresholds(&preds, k, &thresholds::init_thresholds(k)?, 0)?;
    let part = mining::partition(&preds, &table, args.mining_score)?;
    let scores = args.mining_score.scores(&preds);

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(&args.out).map_err(|e| AsmError::io(&args.out, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for (row, &id) in ids.iter().enumerate() {
        w.serialize(AuditRow {
            sample_id: id,
            given_label: train.given_labels()[row],
            confidence: scores[row],
            subset: part.subset_of(row).as_str(),
            is_injected_noise: train.noise_mask()[row],
        })
        .map_err(|e| AsmError::io(&args.out, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| AsmError::io(&args.out, e))?;
    drop(w);

    let quality = mining::mining_quality(&part, train.noise_mask())?;
    let mut manifest = RunManifest::new(
        "audit",
        serde_json::json!({ "mining_score": args.mining_score }),
    );
    manifest.input(&args.data)?;
    manifest.input(&args.checkpoint)?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    Ok(serde_json::json!({
        "thresholds": table,
        "subsets": part.sizes(),
        "mining": quality,
    }))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareAggregate> {
    let (cfg, file_seeds) = resolve_train_config(args.config.as_deref(), &args.flags)?;
    let seeds: Vec<u64> = match (&args.seeds, file_seeds) {
        (Some(s), _) => s.clone(),
        (None, Value::Null) => DEFAULT_COMPARE_SEEDS.to_vec(),
        (None, v) => parse_config(v, "seeds")?,
    };
    let ds = load_dataset(&args.data, args.classes)?;
    let runs_dir = args.out.join("runs");
    create_dir(&runs_dir)?;

    let report = cotrain::compare_with(&ds, &cfg, &seeds, |seed, mode, outcome| {
        let name = match mode {
            Mode::Baseline => "baseline",
            Mode::Asm => "asm",
        };
        let path = runs_dir.join(format!("seed{seed}_{name}.jsonl"));
        let mut text = String::new();
        for r in &outcome.reports {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| AsmError::io(&path, e))
    })?;

    let out_path = args.out.join("compare.json");
    write_json(&out_path, &report)?;

    let mut resolved = serde_json::to_value(&cfg)?;
    if let Value::Object(map) = &mut resolved {
        map.insert("seeds".into(), serde_json::to_value(&seeds)?);
    }
    let mut manifest = RunManifest::new("compare", resolved);
    insert_seeds(&mut manifest, &cfg);
    manifest.input(&args.data)?;
    if let Some(path) = &args.config {
        manifest.input(path)?;
    }
    manifest.output(&out_path)?;
    for &seed in &seeds {
        for name in ["baseline", "asm"] {
            manifest.output(&runs_dir.join(format!("seed{seed}_{name}.jsonl")))?;
        }
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(report.aggregate)
}
