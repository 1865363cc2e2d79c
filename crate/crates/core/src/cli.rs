//! Command-line front end: `train`, `eval`, `pretrain`, `sweep` and `synth`.
//!
//! Settings resolve as command-line flag, then `--config` TOML file, then
//! built-in default. Each command is also exposed as a plain function so it
//! can be driven from tests or other binaries.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{holdout_validation, load_dataset, validation_instances, Dataset, InteractionStore, TestInstance};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, DEFAULT_K};
use crate::models::{fuse, tower, Model, ModelKind, ModelSpec};
use crate::nn::CombinerKind;
use crate::optim::OptimizerKind;
use crate::synth::{generate, SynthConfig};
use crate::train::{fit, TrainSettings};

pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_EPOCHS: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "dncf", version, about = "Dual-embedding neural collaborative filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model, keep the best validation checkpoint, report test metrics.
    Train(RunArgs),
    /// Evaluate a saved checkpoint on the test instances.
    Eval(RunArgs),
    /// Pre-train DGMF and DMLP with Adam, fuse into DNMF, fine-tune with SGD.
    Pretrain(PretrainArgs),
    /// Train once per value of one hyperparameter and write a CSV table.
    Sweep(SweepArgs),
    /// Write a clustered synthetic dataset in the rating-file layout.
    Synth(SynthArgs),
}

/// Flags shared by every training or evaluation command. All optional so a
/// config file can supply them.
#[derive(Debug, Clone, Default, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with any of these settings (flags win over file values).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// itempop, dgmf, dmlp, dnmf or dncf_mf [default: dgmf].
    #[arg(long)]
    pub model: Option<String>,
    /// Predictive factors: embedding width and last hidden width [default: 64].
    #[arg(long)]
    pub factors: Option<usize>,
    /// Comma-separated hidden widths; `none` for no hidden layers.
    #[arg(long)]
    pub layers: Option<String>,
    /// How ID and history embeddings merge: sum, mean, concat or attention [default: sum].
    #[arg(long)]
    pub combiner: Option<String>,
    /// Embedding width of the MLP part (defaults to --factors).
    #[arg(long)]
    pub dmlp_embed: Option<usize>,
    /// Hidden width of the attention scorer (defaults to --factors).
    #[arg(long)]
    pub attention_hidden: Option<usize>,
    /// Exclude the target pair from its own history aggregation.
    #[arg(long)]
    pub mask_self: Option<bool>,
    /// Negative samples per positive.
    #[arg(long)]
    pub neg: Option<usize>,
    /// Epoch cap [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 256].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 coefficient on weights and embeddings [default: 1e-6].
    #[arg(long)]
    pub l2: Option<f64>,
    /// Seed for initialization, sampling and the validation split [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// adam or sgd [default: adam].
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Validate every this many epochs [default: 1].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Evaluations without improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Training file: `user item [rating [timestamp]]` per line.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// One held-out `user item ...` line per user.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// `(user,item)` followed by 99 sampled negative items per line.
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    /// Where to write (train) or read (eval) model parameters.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Append one JSON line per evaluation here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Single-threaded, wall-clock-free logs: byte-identical reruns.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// SGD learning rate for fine-tuning the fused model.
    #[arg(long, default_value_t = 0.001)]
    pub fuse_lr: f64,
    /// Epoch cap for the fine-tuning phase (defaults to --epochs).
    #[arg(long)]
    pub fuse_epochs: Option<usize>,
    /// Use an existing DGMF checkpoint instead of training one.
    #[arg(long)]
    pub dgmf_checkpoint: Option<PathBuf>,
    /// Use an existing DMLP checkpoint instead of training one.
    #[arg(long)]
    pub dmlp_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Factors,
    #[value(name = "neg_ratio", alias = "neg")]
    NegRatio,
    Layers,
    Combiner,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated axis values, e.g. `8,16,32,64` or `sum,mean`.
    #[arg(long)]
    pub values: String,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "synth")]
    pub name: String,
    #[arg(long, default_value_t = 50)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub settings: TrainSettings,
    pub train: PathBuf,
    pub test: PathBuf,
    pub negatives: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub deterministic: bool,
}

pub fn parse_layers(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid layer width `{w}`")))
        })
        .collect()
}

impl RunArgs {
    fn overlay(self, base: RunArgs) -> RunArgs {
        macro_rules! pick {
            ($($f:ident),*) => { RunArgs { config: self.config.or(base.config), $($f: self.$f.or(base.$f)),* } };
        }
        pick!(
            model, factors, layers, combiner, dmlp_embed, attention_hidden, mask_self, neg, epochs, batch, lr, l2,
            seed, optimizer, eval_every, patience, train, test, negatives, checkpoint, metrics, deterministic
        )
    }

    /// Applies the config file (if any) underneath the flags.
    pub fn with_config_file(self) -> Result<RunArgs> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: RunArgs =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(self.overlay(file))
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let a = self.with_config_file()?;
        let kind: ModelKind = a.model.as_deref().unwrap_or("dgmf").parse()?;
        let factors = a.factors.unwrap_or(64);
        let mut spec = ModelSpec::new(kind, factors);
        if let Some(layers) = &a.layers {
            spec.mlp_layers = parse_layers(layers)?;
        }
        if let Some(c) = &a.combiner {
            spec.combiner = c.parse::<CombinerKind>()?;
        }
        if let Some(d) = a.dmlp_embed {
            spec.dmlp_embed = d;
        }
        spec.attention_hidden = a.attention_hidden;
        spec.mask_self = a.mask_self.unwrap_or(false);
        spec.validate()?;

        let defaults = TrainSettings::default();
        let patience = a.patience.unwrap_or(DEFAULT_PATIENCE);
        let settings = TrainSettings {
            epochs: a.epochs.unwrap_or(DEFAULT_EPOCHS),
            batch_size: a.batch.unwrap_or(defaults.batch_size),
            lr: a.lr.unwrap_or(defaults.lr),
            l2: a.l2.unwrap_or(defaults.l2),
            neg_ratio: a.neg.unwrap_or(defaults.neg_ratio),
            seed: a.seed.unwrap_or(defaults.seed),
            optimizer: a.optimizer.as_deref().unwrap_or("adam").parse()?,
            eval_every: a.eval_every.unwrap_or(defaults.eval_every),
            patience: (patience > 0).then_some(patience),
        };
        if settings.batch_size == 0 || settings.neg_ratio == 0 || settings.eval_every == 0 {
            return Err(Error::Config("--batch, --neg and --eval-every must be positive".into()));
        }
        if !(settings.lr >= 0.0 && settings.l2 >= 0.0) {
            return Err(Error::Config("--lr and --l2 must be nonnegative".into()));
        }
        let need = |p: Option<PathBuf>, flag: &str| p.ok_or_else(|| Error::Config(format!("missing --{flag}")));
        Ok(RunConfig {
            spec,
            settings,
            train: need(a.train, "train")?,
            test: need(a.test, "test")?,
            negatives: need(a.negatives, "negatives")?,
            checkpoint: a.checkpoint,
            metrics: a.metrics,
            deterministic: a.deterministic.unwrap_or(false),
        })
    }
}

/// Append-only JSON-lines metrics log.
pub struct MetricsLog {
    file: Option<File>,
    deterministic: bool,
}

impl MetricsLog {
    pub fn open(path: Option<&Path>, deterministic: bool) -> Result<Self> {
        let file = path
            .map(|p| {
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))
            })
            .transpose()?;
        Ok(Self { file, deterministic })
    }

    pub fn disabled() -> Self {
        Self {
            file: None,
            deterministic: false,
        }
    }

    pub fn append(&mut self, report: &EvalReport) -> Result<()> {
        let Some(f) = self.file.as_mut() else { return Ok(()) };
        let mut r = report.clone();
        if self.deterministic {
            r.seconds = 0.0;
        }
        writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::Internal(format!("metrics log: {e}")))?;
        f.flush().map_err(|e| Error::Internal(format!("metrics log: {e}")))
    }
}

/// Loaded data plus the validation split carved out of the training file.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub full: Dataset,
    pub train_store: InteractionStore,
    pub validation: Vec<TestInstance>,
}

impl Prepared {
    pub fn from_dataset(full: Dataset, seed: u64) -> Result<Self> {
        let (train_store, held) = holdout_validation(&full.store);
        let validation = validation_instances(&full.store, &held, seed)?;
        Ok(Self {
            full,
            train_store,
            validation,
        })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let full = load_dataset(&cfg.train, &cfg.test, &cfg.negatives)?;
        Self::from_dataset(full, cfg.settings.seed)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: Model,
    pub validation: Option<EvalReport>,
    pub test: EvalReport,
    pub epochs_run: usize,
    pub losses: Vec<f64>,
    pub seconds: f64,
}

fn test_report(model: &Model, prepared: &Prepared, epoch: usize, label: &str) -> Result<EvalReport> {
    let mut r = evaluate(model, &prepared.full.store, &prepared.full.test, DEFAULT_K)?;
    r.epoch = epoch;
    r.split = Some(label.to_string());
    r.check()?;
    Ok(r)
}

/// Trains `model` on the prepared split and evaluates the best validation
/// state on the test instances.
pub fn train_model(
    mut model: Model,
    settings: &TrainSettings,
    prepared: &Prepared,
    log: &mut MetricsLog,
    label: &str,
) -> Result<TrainSummary> {
    let start = Instant::now();
    if !model.kind().is_trainable() {
        let test = test_report(&model, prepared, 0, &format!("{label}test"))?;
        log.append(&test)?;
        return Ok(TrainSummary {
            model,
            validation: None,
            test,
            epochs_run: 0,
            losses: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let split = format!("{label}validation");
    let outcome = fit(&mut model, &prepared.train_store, Some(&prepared.validation), settings, |r| {
        r.check()?;
        let mut r = r.clone();
        r.split = Some(split.clone());
        log.append(&r)
    })?;
    let best_epoch = outcome.best_report.as_ref().map_or(outcome.epochs_run, |r| r.epoch);
    let test = test_report(&outcome.best, prepared, best_epoch, &format!("{label}test"))?;
    log.append(&test)?;
    Ok(TrainSummary {
        model: outcome.best,
        validation: outcome.best_report,
        test,
        epochs_run: outcome.epochs_run,
        losses: outcome.losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn build_model(cfg: &RunConfig, store: &InteractionStore) -> Result<Model> {
    Model::new(cfg.spec.clone(), store.num_users(), store.num_items(), cfg.settings.seed)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let prepared = Prepared::load(cfg)?;
    train_prepared(cfg, &prepared)
}

pub fn train_prepared(cfg: &RunConfig, prepared: &Prepared) -> Result<TrainSummary> {
    let mut log = MetricsLog::open(cfg.metrics.as_deref(), cfg.deterministic)?;
    let model = build_model(cfg, &prepared.full.store)?;
    let summary = train_model(model, &cfg.settings, prepared, &mut log, "")?;
    if let Some(path) = &cfg.checkpoint {
        summary.model.to_checkpoint().save(path)?;
    }
    Ok(summary)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let data = load_dataset(&cfg.train, &cfg.test, &cfg.negatives)?;
    let mut model = build_model(cfg, &data.store)?;
    match (&cfg.checkpoint, model.kind().is_trainable()) {
        (Some(path), _) => model.load_checkpoint(&Checkpoint::load(path)?)?,
        (None, true) => return Err(Error::Config("--checkpoint is required to evaluate a trained model".into())),
        (None, false) => {}
    }
    let mut r = evaluate(&model, &data.store, &data.test, DEFAULT_K)?;
    r.split = Some("test".into());
    r.check()?;
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub dgmf: Option<TrainSummary>,
    pub dmlp: Option<TrainSummary>,
    /// The fused model before any fine-tuning.
    pub fused_test: EvalReport,
    pub dnmf: TrainSummary,
}

fn part_path(base: Option<&Path>, ext: &str) -> Option<PathBuf> {
    base.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(format!(".{ext}"));
        PathBuf::from(s)
    })
}

/// Pre-trains (or loads) DGMF and DMLP with Adam, fuses them into DNMF and
/// fine-tunes the fused model with vanilla SGD.
pub fn cmd_pretrain_fuse(
    cfg: &RunConfig,
    fuse_lr: f64,
    fuse_epochs: Option<usize>,
    dgmf_ckpt: Option<&Path>,
    dmlp_ckpt: Option<&Path>,
) -> Result<PretrainSummary> {
    let prepared = Prepared::load(cfg)?;
    pretrain_prepared(cfg, &prepared, fuse_lr, fuse_epochs, dgmf_ckpt, dmlp_ckpt)
}

pub fn pretrain_prepared(
    cfg: &RunConfig,
    prepared: &Prepared,
    fuse_lr: f64,
    fuse_epochs: Option<usize>,
    dgmf_ckpt: Option<&Path>,
    dmlp_ckpt: Option<&Path>,
) -> Result<PretrainSummary> {
    let store = &prepared.full.store;
    let mut log = MetricsLog::open(cfg.metrics.as_deref(), cfg.deterministic)?;
    let mut dnmf_spec = cfg.spec.clone();
    dnmf_spec.kind = ModelKind::Dnmf;
    if dnmf_spec.mlp_layers.is_empty() && cfg.spec.kind != ModelKind::Dnmf {
        dnmf_spec.mlp_layers = tower(3, dnmf_spec.factors);
    }
    let adam = TrainSettings {
        optimizer: OptimizerKind::Adam,
        ..cfg.settings.clone()
    };

    let mut pretrain = |kind: ModelKind, given: Option<&Path>| -> Result<(Checkpoint, Option<TrainSummary>)> {
        if let Some(path) = given {
            return Ok((Checkpoint::load(path)?, None));
        }
        let mut spec = dnmf_spec.clone();
        spec.kind = kind;
        if kind == ModelKind::Dgmf {
            spec.mlp_layers.clear();
        }
        let model = Model::new(spec, store.num_users(), store.num_items(), cfg.settings.seed)?;
        let summary = train_model(model, &adam, prepared, &mut log, &format!("{kind}."))?;
        let ckpt = summary.model.to_checkpoint();
        if let Some(path) = part_path(cfg.checkpoint.as_deref(), &kind.to_string()) {
            ckpt.save(&path)?;
        }
        Ok((ckpt, Some(summary)))
    };
    let (g_ckpt, dgmf) = pretrain(ModelKind::Dgmf, dgmf_ckpt)?;
    let (m_ckpt, dmlp) = pretrain(ModelKind::Dmlp, dmlp_ckpt)?;

    let fused = fuse(&g_ckpt, &m_ckpt, &dnmf_spec, store.num_users(), store.num_items())?;
    let fused_test = test_report(&fused, prepared, 0, "dnmf.fused")?;
    log.append(&fused_test)?;

    let sgd = TrainSettings {
        optimizer: OptimizerKind::Sgd,
        lr: fuse_lr,
        epochs: fuse_epochs.unwrap_or(cfg.settings.epochs),
        ..cfg.settings.clone()
    };
    let dnmf = train_model(fused, &sgd, prepared, &mut log, "dnmf.")?;
    if let Some(path) = &cfg.checkpoint {
        dnmf.model.to_checkpoint().save(path)?;
    }
    Ok(PretrainSummary {
        dgmf,
        dmlp,
        fused_test,
        dnmf,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: String,
    pub outcome: std::result::Result<(f64, f64), String>,
    pub epochs: usize,
    pub seconds: f64,
}

/// The configuration a sweep uses for its `index`-th value.
pub fn sweep_config(base: &RunConfig, axis: SweepAxis, value: &str, index: usize) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.settings.seed = base.settings.seed.wrapping_add(index as u64);
    cfg.checkpoint = None;
    let int = || {
        value
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("invalid {axis:?} value `{value}`")))
    };
    match axis {
        SweepAxis::Factors => {
            let f = int()?;
            let layers = base.spec.mlp_layers.len();
            cfg.spec.factors = f;
            cfg.spec.dmlp_embed = f;
            cfg.spec.mlp_layers = tower(layers, f);
        }
        SweepAxis::NegRatio => cfg.settings.neg_ratio = int()?,
        SweepAxis::Layers => cfg.spec.mlp_layers = tower(int()?, base.spec.factors),
        SweepAxis::Combiner => cfg.spec.combiner = value.trim().parse()?,
    }
    cfg.spec.validate()?;
    Ok(cfg)
}

pub fn cmd_sweep(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    let prepared = Prepared::load(base)?;
    let mut rows = Vec::with_capacity(values.len());
    for (index, value) in values.iter().enumerate() {
        let run = sweep_config(base, axis, value, index).and_then(|cfg| {
            let prepared = if cfg.settings.seed == base.settings.seed {
                prepared.clone()
            } else {
                Prepared::from_dataset(prepared.full.clone(), cfg.settings.seed)?
            };
            train_prepared(&cfg, &prepared)
        });
        let row = match run {
            Ok(s) => SweepRow {
                axis_value: value.clone(),
                outcome: Ok((s.test.hr_at(DEFAULT_K), s.test.ndcg_at(DEFAULT_K))),
                epochs: s.epochs_run,
                seconds: if base.deterministic { 0.0 } else { s.seconds },
            },
            Err(e) => {
                log::error!("sweep value {value}: {e}");
                SweepRow {
                    axis_value: value.clone(),
                    outcome: Err(e.to_string()),
                    epochs: 0,
                    seconds: 0.0,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with header `axis_value,hr@10,ndcg@10,epochs,seconds`; failed runs
/// carry `error: <message>` in the metric columns.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Internal(format!("csv: {e}"));
    w.write_record(["axis_value", "hr@10", "ndcg@10", "epochs", "seconds"]).map_err(csv_err)?;
    for r in rows {
        let (hr, ndcg) = match &r.outcome {
            Ok((h, n)) => (format!("{h:.6}"), format!("{n:.6}")),
            Err(e) => (format!("error: {e}"), format!("error: {e}")),
        };
        w.write_record([r.axis_value.clone(), hr, ndcg, r.epochs.to_string(), format!("{:.3}", r.seconds)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Internal(format!("csv: {e}")))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        users: a.users,
        items: a.items,
        clusters: a.clusters,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let base = a.out.join(&a.name);
    let with = |ext: &str| PathBuf::from(format!("{}.{ext}", base.display()));
    ds.store.write_rating_file(&with("train.rating"))?;
    crate::data::write_test_files(&ds.test, &with("test.rating"), &with("test.negative"))?;
    println!("wrote {}.{{train.rating,test.rating,test.negative}}", base.display());
    Ok(())
}

fn set_threads(deterministic: bool) {
    if deterministic {
        // fails only if a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}

fn print_json(report: &EvalReport, deterministic: bool) {
    let mut r = report.clone();
    if deterministic {
        r.seconds = 0.0;
    }
    println!("{}", r.to_json_line());
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            set_threads(cfg.deterministic);
            let s = cmd_train(&cfg)?;
            print_json(&s.test, cfg.deterministic);
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            set_threads(cfg.deterministic);
            print_json(&cmd_eval(&cfg)?, cfg.deterministic);
        }
        Command::Pretrain(p) => {
            let mut args = p.run.clone();
            args.model.get_or_insert_with(|| "dnmf".into());
            let cfg = args.resolve()?;
            set_threads(cfg.deterministic);
            let s = cmd_pretrain_fuse(
                &cfg,
                p.fuse_lr,
                p.fuse_epochs,
                p.dgmf_checkpoint.as_deref(),
                p.dmlp_checkpoint.as_deref(),
            )?;
            print_json(&s.fused_test, cfg.deterministic);
            print_json(&s.dnmf.test, cfg.deterministic);
        }
        Command::Sweep(s) => {
            let cfg = s.run.clone().resolve()?;
            set_threads(cfg.deterministic);
            let values: Vec<String> = s.values.split(',').map(|v| v.trim().to_string()).collect();
            let rows = cmd_sweep(&cfg, s.axis, &values)?;
            match &s.out {
                Some(path) => write_sweep_csv(&rows, File::create(path).map_err(|e| Error::io(path, e))?)?,
                None => write_sweep_csv(&rows, std::io::stdout().lock())?,
            }
        }
        Command::Synth(a) => cmd_synth(&a)?,
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
