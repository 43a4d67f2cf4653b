use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{seeded_rng, streams, Dataset, WindowRef};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Dropout, SdfNet, TrainingMeta};
use crate::nn::{AdamW, AdamWConfig, Graph};

/// Mean-squared errors after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SdfNet<f32>,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, data: &Dataset, seed: u64, origin: Option<String>) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            TrainingMeta {
                epoch: self.history.len(),
                seed,
                loss_history: self.history.iter().map(|h| h.train_mse).collect(),
                origin,
                grid: Some(data.grid),
                truncation_um: Some(data.truncation_um),
            },
        )
    }
}

/// Windows for one epoch: at most `cap` random windows per track, then a
/// global shuffle.
fn epoch_order(windows: &[WindowRef], cap: Option<usize>, rng: &mut impl rand::Rng) -> Vec<WindowRef> {
    let mut order = match cap {
        None => windows.to_vec(),
        Some(cap) => {
            let mut by_track: BTreeMap<usize, Vec<WindowRef>> = BTreeMap::new();
            for w in windows {
                by_track.entry(w.track).or_default().push(*w);
            }
            by_track
                .into_values()
                .flat_map(|mut ws| {
                    ws.shuffle(rng);
                    ws.truncate(cap);
                    ws
                })
                .collect()
        }
    };
    order.shuffle(rng);
    order
}

/// Mean-squared error of `model` over `windows` in evaluation mode.
pub fn mean_loss(model: &SdfNet<f32>, data: &Dataset, windows: &[WindowRef], m: usize, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in windows.chunks(batch.max(1)) {
        let (x, y) = data.batch(chunk, m)?;
        let pred = model.predict(&x)?;
        let se: f64 = pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &t)| f64::from(p - t).powi(2))
            .sum();
        total += se;
    }
    let n = windows.len() * data.grid.len();
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Mini-batch AdamW on the mean-squared signed-distance error. `log` sees
/// every epoch as it finishes.
pub fn train_model(
    mut model: SdfNet<f32>,
    data: &Dataset,
    train: &[WindowRef],
    val: &[WindowRef],
    cfg: &ExperimentConfig,
    epochs: usize,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::validation("no training windows"));
    }
    let m = cfg.window;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.params(),
    );
    let mut order_rng = seeded_rng(cfg.seed, streams::ORDER);
    let mut drop_rng = seeded_rng(cfg.seed, streams::DROPOUT);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = epoch_order(train, cfg.max_windows_per_track, &mut order_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch(chunk, m)?;
            let grads = {
                let mut g = Graph::new(model.params());
                let xi = g.input(x);
                let yi = g.input(y);
                let mut drop = Dropout::train(cfg.dropout, &mut drop_rng);
                let f = model.forward(&mut g, xi, &mut drop)?;
                let loss = g.mse(f.output, yi)?;
                let l = f64::from(g.value(loss).data()[0]);
                if !l.is_finite() {
                    return Err(Error::Numerical(format!(
                        "training loss became {l} in epoch {} batch {b}; \
                         learning rate {} may be too large or the initialization diverged",
                        epoch + 1,
                        cfg.learning_rate
                    )));
                }
                sum += l * chunk.len() as f64;
                count += chunk.len();
                g.backward(loss)?
            };
            opt.step(model.params_mut(), &grads);
        }
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(mean_loss(&model, data, val, m, cfg.batch_size)?)
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            train_mse: sum / count as f64,
            val_mse,
        };
        log(&entry);
        history.push(entry);
    }
    Ok(TrainOutcome { model, history })
}
