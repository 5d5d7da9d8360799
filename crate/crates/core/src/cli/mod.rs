//! Command-line front end: `gen`, `train`, `eval`, `ablate`, `sweep`.

mod manifest;
mod plot;

pub use manifest::{corpus_hash, write_atomic, RunManifest};
pub use plot::{bar_chart_svg, line_chart_svg, Series};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::art::GammaInit;
use crate::config::parse_kv;
use crate::error::{Error, Result};
use crate::evalmetrics::MetricsReport;
use crate::rfp::check_beta;
use crate::scenedata::{generate_corpus, read_corpus_dir, write_corpus_dir, GenConfig, Split};
use crate::trainer::{
    ablation_run_with, checkpoint_to_string, evaluate_model, load_checkpoint, sweep_with, train_with, AblationRow,
    RunScores, SweepParam, SweepRow, Task, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "hlnet", version, about = "Heterophily-aware scene graph generation on synthetic corpora")]
pub struct Cli {
    /// Seed for generation, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory all other paths are relative to.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// `key=value` file; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Train all eight module combinations.
    Ablate(AblateArgs),
    /// Sweep one hyperparameter.
    Sweep(SweepArgs),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn open_unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn teleport(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    check_beta(v).map_err(|e| e.to_string())?;
    Ok(v)
}

fn task_arg(s: &str) -> std::result::Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

fn gamma_arg(s: &str) -> std::result::Result<GammaInit, String> {
    GammaInit::parse(s).map_err(|e| e.to_string())
}

fn sweep_arg(s: &str) -> std::result::Result<SweepParam, String> {
    SweepParam::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output corpus directory.
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    /// Target corpus-average homophily.
    #[arg(long, value_parser = unit_interval)]
    pub homophily: Option<f64>,
    /// Number of training scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub val_scenes: Option<usize>,
    #[arg(long)]
    pub test_scenes: Option<usize>,
    #[arg(long)]
    pub num_obj_classes: Option<usize>,
    #[arg(long)]
    pub num_rel_classes: Option<usize>,
    /// Probability that a placed node occludes an earlier one.
    #[arg(long, value_parser = unit_interval)]
    pub occlusion_rate: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    #[arg(long, value_parser = task_arg)]
    pub task: Option<Task>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Layer-weight decay of the adaptive filter.
    #[arg(long, value_parser = open_unit_interval)]
    pub tau: Option<f64>,
    /// Transformer layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Relationship propagation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Teleport weight of relationship propagation, |beta| < 1.
    #[arg(long, value_parser = teleport, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Hidden width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Background pairs sampled per ground-truth pair.
    #[arg(long)]
    pub bg_ratio: Option<usize>,
    /// Joint gradient norm cap per step; 0 disables clipping.
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// alternating, nonnegative or last.
    #[arg(long, value_parser = gamma_arg)]
    pub gamma_init: Option<GammaInit>,
    #[arg(long)]
    pub no_art: bool,
    #[arg(long)]
    pub no_rfp: bool,
    #[arg(long)]
    pub no_hmp: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// Per-epoch log (CSV).
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// sgcls, predcls, or all.
    #[arg(long, default_value = "all")]
    pub task: String,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "metrics.csv")]
    pub metrics: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value = "ablation.csv")]
    pub output: PathBuf,
    #[arg(long, default_value = "ablation.svg")]
    pub plot: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    /// tau, layers or steps.
    #[arg(long, value_parser = sweep_arg)]
    pub param: SweepParam,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Defaults to `sweep_<param>.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Defaults to `sweep_<param>.svg`.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn config_map(cli: &Cli) -> Result<BTreeMap<String, String>> {
    match &cli.config {
        None => Ok(BTreeMap::new()),
        Some(p) => parse_kv(&std::fs::read_to_string(cli.out_dir.join(p))?),
    }
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_gen_config(cli: &Cli, args: &GenArgs) -> Result<GenConfig> {
    let mut cfg = GenConfig::default();
    cfg.apply_kv(&config_map(cli)?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    macro_rules! over {
        ($($field:ident <- $arg:expr),*) => { $( if let Some(v) = $arg { cfg.$field = v; } )* };
    }
    over!(
        homophily <- args.homophily,
        train_scenes <- args.scenes,
        val_scenes <- args.val_scenes,
        test_scenes <- args.test_scenes,
        num_obj_classes <- args.num_obj_classes,
        num_rel_classes <- args.num_rel_classes,
        occlusion_rate <- args.occlusion_rate
    );
    if !(0.0..=1.0).contains(&cfg.homophily) {
        return Err(Error::Config(format!("homophily {} is outside [0, 1]", cfg.homophily)));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_train_config(cli: &Cli, args: &ModelArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply_kv(&config_map(cli)?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    macro_rules! over {
        ($($field:ident <- $arg:expr),*) => { $( if let Some(v) = $arg { cfg.$field = v; } )* };
    }
    over!(
        task <- args.task,
        epochs <- args.epochs,
        learning_rate <- args.lr,
        momentum <- args.momentum,
        tau <- args.tau,
        layers <- args.layers,
        steps <- args.steps,
        beta <- args.beta,
        dim <- args.dim,
        bg_ratio <- args.bg_ratio,
        max_grad_norm <- args.max_grad_norm,
        gamma_init <- args.gamma_init
    );
    cfg.art &= !args.no_art;
    cfg.rfp &= !args.no_rfp;
    cfg.hmp &= !args.no_hmp;
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(cli: &Cli, m: &RunManifest) -> Result<()> {
    let path = cli.out_dir.join(format!("{}.manifest.json", m.command));
    write_atomic(&path, m.to_json().as_bytes())
}

fn cmd_gen(cli: &Cli, args: &GenArgs, start: Instant) -> Result<()> {
    let cfg = resolve_gen_config(cli, args)?;
    let corpus = generate_corpus(&cfg)?;
    let dir = cli.out_dir.join(&args.corpus);
    write_corpus_dir(&corpus, &dir)?;
    eprintln!(
        "wrote {} / {} / {} scenes to {}, mean homophily {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        dir.display(),
        corpus.mean_homophily().map_or("NA".into(), |h| format!("{h:.3}"))
    );
    write_manifest(
        cli,
        &RunManifest::new("gen", cfg.to_kv(), cfg.seed, corpus_hash(&dir)?, None, None, start),
    )
}

fn epoch_log_csv(log: &[crate::trainer::EpochLog]) -> String {
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let mut s = String::from("epoch,train_loss,val_node_acc,val_R@50\n");
    for e in log {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, na(e.val_node_accuracy), na(e.val_recall50));
    }
    s
}

fn cmd_train(cli: &Cli, args: &TrainArgs, start: Instant) -> Result<()> {
    let cfg = resolve_train_config(cli, &args.model)?;
    let dir = cli.out_dir.join(&args.corpus);
    let corpus = read_corpus_dir(&dir)?;
    let out = train_with(&corpus, &cfg, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val node acc {}  val R@50 {}",
            e.epoch,
            e.train_loss,
            e.val_node_accuracy.map_or("NA".into(), |v| format!("{:.1}", 100.0 * v)),
            e.val_recall50.map_or("NA".into(), |v| format!("{:.1}", 100.0 * v)),
        )
    })?;
    write_atomic(&cli.out_dir.join(&args.checkpoint), checkpoint_to_string(&out.model, &cfg).as_bytes())?;
    write_atomic(&cli.out_dir.join(&args.log), epoch_log_csv(&out.log).as_bytes())?;
    write_manifest(
        cli,
        &RunManifest::new(
            "train",
            cfg.to_kv(),
            cfg.seed,
            corpus_hash(&dir)?,
            Some(args.checkpoint.clone()),
            Some(args.log.clone()),
            start,
        ),
    )
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, start: Instant) -> Result<()> {
    let tasks: Vec<Task> = match args.task.as_str() {
        "all" => Task::ALL.to_vec(),
        t => vec![Task::parse(t)?],
    };
    let split = parse_split(&args.split)?;
    let (cfg, model) = load_checkpoint(&cli.out_dir.join(&args.checkpoint))?;
    let dir = cli.out_dir.join(&args.corpus);
    let corpus = read_corpus_dir(&dir)?;
    model.check_corpus(&corpus.config)?;
    let report = evaluate_model(&model, &cfg, corpus.split(split), &tasks)?;
    write_atomic(&cli.out_dir.join(&args.metrics), report.to_csv().as_bytes())?;
    print!("{}", report.table());
    write_manifest(
        cli,
        &RunManifest::new(
            "eval",
            cfg.to_kv(),
            cfg.seed,
            corpus_hash(&dir)?,
            Some(args.checkpoint.clone()),
            Some(args.metrics.clone()),
            start,
        ),
    )
}

const SCORE_HEADER: &str = "sgcls_R@20,sgcls_R@50,sgcls_R@100,predcls_R@20,predcls_R@50,predcls_R@100,node_acc,C-R@50,S-R@50";

fn score_cells(s: &RunScores) -> String {
    let v = [
        s.sgcls_recall[0],
        s.sgcls_recall[1],
        s.sgcls_recall[2],
        s.predcls_recall[0],
        s.predcls_recall[1],
        s.predcls_recall[2],
        s.node_accuracy,
        s.occluded_recall50,
        s.clear_recall50,
    ];
    v.iter()
        .map(|x| if x.is_nan() { "NA".to_string() } else { x.to_string() })
        .collect::<Vec<_>>()
        .join(",")
}

/// One row per experiment, seed-averaged fractions.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("exp,art,rfp,hmp,{SCORE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.exp,
            r.config.art as u8,
            r.config.rfp as u8,
            r.config.hmp as u8,
            score_cells(&r.mean)
        );
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let name = rows.first().map_or("value", |r| r.param.name());
    let mut s = format!("{name},{SCORE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{}", r.value, score_cells(&r.mean));
    }
    s
}

fn seeds(cli: &Cli, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let base = cli.seed.unwrap_or(0);
    Ok((0..n).map(|k| base + k).collect())
}

fn cmd_ablate(cli: &Cli, args: &AblateArgs, start: Instant) -> Result<()> {
    let cfg = resolve_train_config(cli, &args.model)?;
    let dir = cli.out_dir.join(&args.corpus);
    let corpus = read_corpus_dir(&dir)?;
    let rows = ablation_run_with(&corpus, &cfg, &seeds(cli, args.seeds)?, |exp, seed, s| {
        eprintln!("exp {exp} seed {seed}: SGCLS R@50 {:.1}", 100.0 * s.sgcls_recall[1])
    })?;
    write_atomic(&cli.out_dir.join(&args.output), ablation_csv(&rows).as_bytes())?;
    let labels: Vec<String> = rows.iter().map(|r| format!("{}", r.exp)).collect();
    let series = [
        Series { name: "SGCLS R@50".into(), values: rows.iter().map(|r| 100.0 * r.mean.sgcls_recall[1]).collect() },
        Series { name: "PREDCLS R@50".into(), values: rows.iter().map(|r| 100.0 * r.mean.predcls_recall[1]).collect() },
    ];
    let svg = bar_chart_svg("Module ablation (Exp 1-8)", &labels, &series, "R@50 (%)");
    write_atomic(&cli.out_dir.join(&args.plot), svg.as_bytes())?;
    write_manifest(
        cli,
        &RunManifest::new("ablate", cfg.to_kv(), cfg.seed, corpus_hash(&dir)?, None, Some(args.output.clone()), start),
    )
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs, start: Instant) -> Result<()> {
    let cfg = resolve_train_config(cli, &args.model)?;
    let dir = cli.out_dir.join(&args.corpus);
    let corpus = read_corpus_dir(&dir)?;
    let rows = sweep_with(&corpus, &cfg, args.param, &seeds(cli, args.seeds)?, |v, seed, s| {
        eprintln!("{} = {v} seed {seed}: SGCLS R@50 {:.1}", args.param.name(), 100.0 * s.sgcls_recall[1])
    })?;
    let name = args.param.name();
    let output = args.output.clone().unwrap_or_else(|| PathBuf::from(format!("sweep_{name}.csv")));
    let plot = args.plot.clone().unwrap_or_else(|| PathBuf::from(format!("sweep_{name}.svg")));
    write_atomic(&cli.out_dir.join(&output), sweep_csv(&rows).as_bytes())?;
    let xs: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let series = [
        Series { name: "SGCLS R@50".into(), values: rows.iter().map(|r| 100.0 * r.mean.sgcls_recall[1]).collect() },
        Series { name: "PREDCLS R@50".into(), values: rows.iter().map(|r| 100.0 * r.mean.predcls_recall[1]).collect() },
    ];
    let svg = line_chart_svg(&format!("Sweep over {name}"), name, &xs, &series, "R@50 (%)");
    write_atomic(&cli.out_dir.join(&plot), svg.as_bytes())?;
    write_manifest(
        cli,
        &RunManifest::new(&format!("sweep_{name}"), cfg.to_kv(), cfg.seed, corpus_hash(&dir)?, None, Some(output), start),
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    std::fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a, start),
        Command::Train(a) => cmd_train(cli, a, start),
        Command::Eval(a) => cmd_eval(cli, a, start),
        Command::Ablate(a) => cmd_ablate(cli, a, start),
        Command::Sweep(a) => cmd_sweep(cli, a, start),
    }
}

/// Reads a metrics CSV written by `eval`.
pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    MetricsReport::from_csv(&std::fs::read_to_string(path)?)
}
