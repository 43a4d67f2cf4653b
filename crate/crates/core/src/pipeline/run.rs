use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::Serialize;

use super::data::{seeded_rng, split_combos, streams, Combo, Dataset, DatasetSplit};
use super::evaluate::{evaluate_windows, EvaluationReport};
use super::train::{train_model, EpochLog, TrainOutcome};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, SdfNet};

/// Randomly initialized network for `cfg`.
pub fn init_model(cfg: &ExperimentConfig) -> Result<SdfNet<f32>> {
    SdfNet::new(cfg.model_config(), seeded_rng(cfg.seed, streams::INIT).next_u64())
}

/// Trained model, the split it was trained on and its held-out evaluation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub split: DatasetSplit,
    /// Combinations actually used for training (a subset when fine-tuning).
    pub trained_on: Vec<Combo>,
    pub outcome: TrainOutcome,
    pub report: Option<EvaluationReport>,
}

/// Trains `model` on the windows of `train_combos` and evaluates on the test
/// side of `split`.
pub fn run_training(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: SdfNet<f32>,
    train_combos: &[Combo],
    split: DatasetSplit,
    epochs: usize,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<Experiment> {
    split.check_disjoint()?;
    let train = data.windows(&data.tracks_of(train_combos), cfg.window, cfg.stride);
    let test = data.windows(&data.tracks_of(&split.test), cfg.window, cfg.stride);
    if train.is_empty() {
        return Err(Error::validation(format!(
            "no training windows: tracks are shorter than the window length {}",
            cfg.window
        )));
    }
    let outcome = train_model(model, data, &train, &test, cfg, epochs, log)?;
    let report = if test.is_empty() {
        None
    } else {
        Some(evaluate_windows(&outcome.model, data, &test, cfg.window, cfg.batch_size)?)
    };
    Ok(Experiment {
        split,
        trained_on: train_combos.to_vec(),
        outcome,
        report,
    })
}

/// Splits the dataset, trains from scratch for `cfg.epochs` and evaluates.
pub fn train_experiment(cfg: &ExperimentConfig, data: &Dataset, log: &mut dyn FnMut(&EpochLog)) -> Result<Experiment> {
    cfg.validate()?;
    let split = split_combos(&data.combos(), cfg.split_fraction, cfg.seed)?;
    let train = split.train.clone();
    run_training(cfg, data, init_model(cfg)?, &train, split, cfg.epochs, log)
}

/// Layout-defining part of a model config; dropout is a training setting.
fn without_dropout(c: &ModelConfig) -> ModelConfig {
    let mut c = c.clone();
    match &mut c {
        ModelConfig::Temporal(t) => t.dropout = 0.0,
        ModelConfig::Vit(v) => v.dropout = 0.0,
        ModelConfig::Unet(_) => {}
    }
    c
}

/// Network initialized from `ckpt`, which must match the architecture of `cfg`.
pub fn model_from_checkpoint(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<SdfNet<f32>> {
    if without_dropout(&ckpt.config) != without_dropout(&cfg.model_config()) {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {} model whose layout differs from the configured {} model",
            ckpt.config.name(),
            cfg.model.name()
        )));
    }
    SdfNet::with_params(cfg.model_config(), ckpt.params.clone())
}

/// Continues training all weights of a pretrained model on a seeded fraction
/// `cfg.finetune_fraction` of the training combinations.
pub fn finetune_experiment(
    cfg: &ExperimentConfig,
    data: &Dataset,
    pretrained: &Checkpoint,
    epochs: usize,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<Experiment> {
    cfg.validate()?;
    let model = model_from_checkpoint(cfg, pretrained)?;
    let split = split_combos(&data.combos(), cfg.split_fraction, cfg.seed)?;
    let subset = split.train_subset(cfg.finetune_fraction, cfg.seed)?;
    run_training(cfg, data, model, &subset, split, epochs, log)
}

#[derive(Serialize)]
struct SplitRecord<'a> {
    split: &'a DatasetSplit,
    trained_on: &'a [Combo],
}

impl Experiment {
    /// Writes `checkpoint.mpck`, `history.csv`, `split.json` and, when there
    /// is a test side, the evaluation report under `eval/`.
    pub fn save(&self, dir: &Path, data: &Dataset, seed: u64, origin: Option<String>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.outcome.checkpoint(data, seed, origin).save(&dir.join("checkpoint.mpck"))?;
        let path = dir.join("history.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for h in &self.outcome.history {
            w.serialize(h)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        crate::ingest::write_json(
            &dir.join("split.json"),
            &SplitRecord {
                split: &self.split,
                trained_on: &self.trained_on,
            },
        )?;
        if let Some(r) = &self.report {
            r.write(&dir.join("eval"))?;
        }
        Ok(())
    }
}
