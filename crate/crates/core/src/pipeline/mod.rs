//! Splits, training, fine-tuning, evaluation, sweeps, hatch analysis and the
//! file-level commands behind the `mpf` binary.

mod config;
mod data;
mod evaluate;
mod export;
mod hatch;
mod run;
mod sweeps;
mod train;

pub use config::{ExperimentConfig, SweepConfig};
pub use data::{
    load_frames, seeded_rng, split_by_params, split_combos, Combo, Dataset, DatasetSplit, PreparedTrack, WindowRef,
};
pub use evaluate::{combo_means, evaluate_windows, predict_windows, score_predictions, EvaluationReport};
pub use export::{export_embeddings, predict_track, preprocess_dataset, PreprocessedTrack, TrackPrediction, WindowPrediction};
pub use hatch::{
    generate_hatch_dataset, hatch_analyze, mean_track_prediction, HatchGroup, HatchManifest, HatchPair, HatchReport,
    HatchSynthConfig,
};
pub use run::{finetune_experiment, init_model, model_from_checkpoint, run_training, train_experiment, Experiment};
pub use sweeps::{fraction_sweep, sequence_length_sweep, summarize_sweep, write_sweep, SweepRow, SweepSummary};
pub use train::{mean_loss, train_model, EpochLog, TrainOutcome};
