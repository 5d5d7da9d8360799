use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalmetrics::{corpus_recall_at_k, evaluate, node_accuracy, MetricsReport};
use crate::numcore::{OptimizerState, Tape};
use crate::scenedata::{build_frequency_bias, derive_seed, homophily, sample_pairs, Corpus, SceneGraph};

use super::model::{forward, scene_labels, total_loss, ModelDims, ModelParams};
use super::predict::predict;
use super::{Task, TrainConfig};

const ORDER_TAG: u64 = 0x0dde;
const SAMPLE_TAG: u64 = 0x5a3b;
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the epoch's training scenes.
    pub train_loss: f64,
    /// Computed on the validation split; `None` when it is empty.
    pub val_node_accuracy: Option<f64>,
    pub val_recall50: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub log: Vec<EpochLog>,
}

/// One forward/backward/update on a single scene. Returns the loss before
/// the update, or `Diverged` (without updating) when it is non-finite or
/// above the divergence limit.
pub fn train_step(
    model: &mut ModelParams,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    g: &SceneGraph,
    sample_seed: u64,
    (epoch, scene): (usize, usize),
) -> Result<f64> {
    let pairs = sample_pairs(g, cfg.bg_ratio, sample_seed);
    let candidates: Vec<(usize, usize)> = pairs.iter().map(|p| (p.subject, p.object)).collect();
    let mut tape = Tape::new();
    let diverged = |loss: f64| Error::Diverged { epoch, scene, loss };
    let out = forward(&mut tape, model, cfg, g, &candidates, cfg.task).map_err(|e| match e {
        Error::Numeric(_) => diverged(f64::NAN),
        e => e,
    })?;
    let labels = scene_labels(g, &pairs, &out.terms);
    let loss = total_loss(&mut tape, &out, &labels).map_err(|e| match e {
        Error::Numeric(_) => diverged(f64::NAN),
        e => e,
    })?;
    let value = tape.scalar(loss.total);
    if !value.is_finite() || value > DIVERGENCE_LIMIT {
        return Err(diverged(value));
    }
    let grads = tape.backward(loss.total)?;
    model.store.zero_grad();
    grads.accumulate_into(&mut model.store);
    if cfg.max_grad_norm > 0.0 {
        model.store.clip_grad_norm(cfg.max_grad_norm);
    }
    opt.step(&mut model.store);
    Ok(value)
}

pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, cfg, |_| {})
}

/// Per-scene SGD with momentum over shuffled training scenes, calling
/// `on_epoch` after each epoch.
pub fn train_with(corpus: &Corpus, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = ModelDims::of(&corpus.config);
    let freq = build_frequency_bias(&corpus.train, dims.num_rel_classes);
    let mut model = ModelParams::new(cfg, dims, freq)?;
    let mut opt = OptimizerState::new(&model.store, cfg.learning_rate, cfg.momentum);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, ORDER_TAG, epoch as u64])));
        let mut total = 0.0;
        for &s in &order {
            let seed = derive_seed(&[cfg.seed, SAMPLE_TAG, epoch as u64, s as u64]);
            total += train_step(&mut model, &mut opt, cfg, &corpus.train[s], seed, (epoch, s))?;
        }
        let (val_node_accuracy, val_recall50) = if corpus.val.is_empty() {
            (None, None)
        } else {
            let preds = predict(&model, cfg, &corpus.val, cfg.task)?;
            (node_accuracy(&preds, &corpus.val)?, corpus_recall_at_k(&preds, &corpus.val, 50)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss: if order.is_empty() { 0.0 } else { total / order.len() as f64 },
            val_node_accuracy,
            val_recall50,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

/// Metrics for each requested task on `scenes`.
pub fn evaluate_model(model: &ModelParams, cfg: &TrainConfig, scenes: &[SceneGraph], tasks: &[Task]) -> Result<MetricsReport> {
    let hs: Vec<f64> = scenes.iter().filter_map(|g| homophily(g).ok()).collect();
    let mut report = MetricsReport {
        homophily: (!hs.is_empty()).then(|| hs.iter().sum::<f64>() / hs.len() as f64),
        tasks: Vec::with_capacity(tasks.len()),
    };
    for &task in tasks {
        let preds = predict(model, cfg, scenes, task)?;
        report.tasks.push(evaluate(&preds, scenes)?);
    }
    Ok(report)
}

/// Headline numbers of one trained model on the test split. Undefined
/// metrics are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScores {
    pub sgcls_recall: [f64; 3],
    pub predcls_recall: [f64; 3],
    pub node_accuracy: f64,
    pub occluded_recall50: f64,
    pub clear_recall50: f64,
}

impl RunScores {
    pub fn from_report(r: &MetricsReport) -> Self {
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        let recall = |t: Task| {
            r.task(t)
                .map(|m| [nan(m.recall[0]), nan(m.recall[1]), nan(m.recall[2])])
                .unwrap_or([f64::NAN; 3])
        };
        let sg = r.task(Task::Sgcls);
        Self {
            sgcls_recall: recall(Task::Sgcls),
            predcls_recall: recall(Task::Predcls),
            node_accuracy: nan(sg.and_then(|m| m.node_accuracy)),
            occluded_recall50: nan(sg.and_then(|m| m.occluded_recall[1])),
            clear_recall50: nan(sg.and_then(|m| m.clear_recall[1])),
        }
    }

    /// Element-wise mean.
    pub fn mean(runs: &[RunScores]) -> RunScores {
        let n = runs.len() as f64;
        let avg = |f: &dyn Fn(&RunScores) -> f64| runs.iter().map(f).sum::<f64>() / n;
        RunScores {
            sgcls_recall: [0, 1, 2].map(|k| avg(&|r| r.sgcls_recall[k])),
            predcls_recall: [0, 1, 2].map(|k| avg(&|r| r.predcls_recall[k])),
            node_accuracy: avg(&|r| r.node_accuracy),
            occluded_recall50: avg(&|r| r.occluded_recall50),
            clear_recall50: avg(&|r| r.clear_recall50),
        }
    }
}

/// Trains `cfg` on the corpus and scores the test split under both tasks.
pub fn train_and_score(corpus: &Corpus, cfg: &TrainConfig) -> Result<RunScores> {
    let out = train(corpus, cfg)?;
    let report = evaluate_model(&out.model, cfg, &corpus.test, &Task::ALL)?;
    Ok(RunScores::from_report(&report))
}

/// `(ART, RFP, HMP)` in experiment order 1..=8: none, ART, RFP, HMP,
/// ART+RFP, RFP+HMP, ART+HMP, all.
pub const ABLATION_GRID: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (true, true, false),
    (false, true, true),
    (true, false, true),
    (true, true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub exp: usize,
    pub config: TrainConfig,
    pub runs: Vec<RunScores>,
    pub mean: RunScores,
}

pub fn ablation_run(corpus: &Corpus, base: &TrainConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    ablation_run_with(corpus, base, seeds, |_, _, _| {})
}

/// Trains every toggle combination with each seed; `progress` receives
/// `(exp, seed, scores)` after each run.
pub fn ablation_run_with(
    corpus: &Corpus,
    base: &TrainConfig,
    seeds: &[u64],
    mut progress: impl FnMut(usize, u64, &RunScores),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for (k, &(art, rfp, hmp)) in ABLATION_GRID.iter().enumerate() {
        let config = TrainConfig { art, rfp, hmp, ..base.clone() };
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let s = train_and_score(corpus, &TrainConfig { seed, ..config.clone() })?;
            progress(k + 1, seed, &s);
            runs.push(s);
        }
        rows.push(AblationRow {
            exp: k + 1,
            mean: RunScores::mean(&runs),
            config,
            runs,
        });
    }
    Ok(rows)
}

/// A hyperparameter swept with everything else held at the base config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Layers,
    Steps,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Layers => "layers",
            SweepParam::Steps => "steps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "layers" => Ok(SweepParam::Layers),
            "steps" => Ok(SweepParam::Steps),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}`"))),
        }
    }

    pub fn values(self) -> Vec<f64> {
        match self {
            SweepParam::Tau => vec![0.2, 0.5, 0.7],
            SweepParam::Layers | SweepParam::Steps => vec![2.0, 3.0, 4.0, 5.0],
        }
    }

    pub fn apply(self, cfg: &TrainConfig, value: f64) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            SweepParam::Tau => c.tau = value,
            SweepParam::Layers => c.layers = value as usize,
            SweepParam::Steps => c.steps = value as usize,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub runs: Vec<RunScores>,
    pub mean: RunScores,
}

pub fn sweep(corpus: &Corpus, base: &TrainConfig, param: SweepParam, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    sweep_with(corpus, base, param, seeds, |_, _, _| {})
}

pub fn sweep_with(
    corpus: &Corpus,
    base: &TrainConfig,
    param: SweepParam,
    seeds: &[u64],
    mut progress: impl FnMut(f64, u64, &RunScores),
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    param
        .values()
        .into_iter()
        .map(|value| {
            let cfg = param.apply(base, value);
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let s = train_and_score(corpus, &TrainConfig { seed, ..cfg.clone() })?;
                    progress(value, seed, &s);
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                param,
                value,
                mean: RunScores::mean(&runs),
                runs,
            })
        })
        .collect()
}
