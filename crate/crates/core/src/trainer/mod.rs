//! Loss assembly, the per-scene optimization loop, prediction extraction,
//! checkpoints, and the ablation and sweep drivers.

mod checkpoint;
mod config;
mod model;
mod predict;
mod train;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{Task, TrainConfig};
pub use model::{
    argmax, forward, scene_labels, total_loss, LossBreakdown, ModelDims, ModelParams, SceneLabels, SceneOutput,
};
pub use predict::{extract_prediction, predict, predict_scene, sort_ranked, PredictionSet, ScenePrediction, ScoredTriplet};
pub use train::{
    ablation_run, ablation_run_with, evaluate_model, sweep, sweep_with, train, train_and_score, train_step,
    train_with, AblationRow, EpochLog, RunScores, SweepParam, SweepRow, TrainOutcome, ABLATION_GRID,
    DIVERGENCE_LIMIT,
};
