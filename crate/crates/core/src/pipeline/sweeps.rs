use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::run::{finetune_experiment, init_model, run_training, train_experiment, Experiment};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{std_dev, Aggregates};
use crate::model::Checkpoint;

/// Held-out aggregates of one run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Swept setting: window length or data fraction.
    pub value: f64,
    /// How the weights were initialized: `random` or `pretrained`.
    pub init: String,
    pub seed: u64,
    pub n: usize,
    pub r2_area: Option<f64>,
    pub r2_depth: Option<f64>,
    pub r2_width: Option<f64>,
    pub mae_area_um2: f64,
    pub mae_depth_um: f64,
    pub mae_width_um: f64,
    pub mean_iou: f64,
    pub contour_mae_um: Option<f64>,
    pub hausdorff_um: Option<f64>,
}

impl SweepRow {
    pub fn new(value: f64, init: &str, seed: u64, a: &Aggregates) -> Self {
        Self {
            value,
            init: init.to_string(),
            seed,
            n: a.n,
            r2_area: a.pearson_r2_area,
            r2_depth: a.pearson_r2_depth,
            r2_width: a.pearson_r2_width,
            mae_area_um2: a.mae_area_um2,
            mae_depth_um: a.mae_depth_um,
            mae_width_um: a.mae_width_um,
            mean_iou: a.mean_iou,
            contour_mae_um: a.mean_contour_mae_um,
            hausdorff_um: a.mean_hausdorff_um,
        }
    }

    fn metrics(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("r2_area", self.r2_area),
            ("r2_depth", self.r2_depth),
            ("r2_width", self.r2_width),
            ("mae_area_um2", Some(self.mae_area_um2)),
            ("mae_depth_um", Some(self.mae_depth_um)),
            ("mae_width_um", Some(self.mae_width_um)),
            ("mean_iou", Some(self.mean_iou)),
            ("contour_mae_um", self.contour_mae_um),
            ("hausdorff_um", self.hausdorff_um),
        ]
    }
}

fn held_out(e: &Experiment) -> Result<&Aggregates> {
    e.report
        .as_ref()
        .map(|r| &r.windows.aggregates)
        .ok_or_else(|| Error::validation("sweeps need a non-empty test side; lower split_fraction"))
}

/// One model per window length and replicate; replicate `r` uses seed
/// `cfg.seed + r`.
pub fn sequence_length_sweep(
    cfg: &ExperimentConfig,
    data: &Dataset,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &m in &cfg.sweep.lengths {
        for r in 0..cfg.sweep.replicates as u64 {
            let mut c = cfg.clone();
            c.window = m;
            c.seed = cfg.seed + r;
            let e = train_experiment(&c, data, &mut |_| {})?;
            let row = SweepRow::new(m as f64, "random", c.seed, held_out(&e)?);
            progress(&format!("m={m} seed={} r2_area={:?} iou={:.4}", c.seed, row.r2_area, row.mean_iou));
            rows.push(row);
        }
    }
    Ok(rows)
}

/// For every fraction and replicate, fine-tunes `pretrained` and trains a
/// randomly initialized twin on the same combinations for the same number of
/// epochs, both scored on the same test side.
pub fn fraction_sweep(
    cfg: &ExperimentConfig,
    data: &Dataset,
    pretrained: &Checkpoint,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<SweepRow>> {
    let epochs = cfg.sweep.finetune_epochs;
    if epochs == 0 {
        return Err(Error::validation("finetune_epochs must be at least 1"));
    }
    let mut rows = Vec::new();
    for &f in &cfg.sweep.fractions {
        for r in 0..cfg.sweep.replicates as u64 {
            let mut c = cfg.clone();
            c.finetune_fraction = f;
            c.seed = cfg.seed + r;
            let tuned = finetune_experiment(&c, data, pretrained, epochs, &mut |_| {})?;
            let scratch = run_training(
                &c,
                data,
                init_model(&c)?,
                &tuned.trained_on,
                tuned.split.clone(),
                epochs,
                &mut |_| {},
            )?;
            for (init, e) in [("pretrained", &tuned), ("random", &scratch)] {
                let row = SweepRow::new(f, init, c.seed, held_out(e)?);
                progress(&format!(
                    "f={f} seed={} {init}: r2_area={:?} iou={:.4}",
                    c.seed, row.r2_area, row.mean_iou
                ));
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Mean and sample standard deviation of every metric over the replicates
/// of each `(value, init)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub value: f64,
    pub init: String,
    pub replicates: usize,
    /// `(metric, mean, std)`; metrics undefined in every replicate are omitted.
    pub metrics: Vec<(String, f64, f64)>,
}

pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut cells: BTreeMap<(u64, String), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.value.to_bits(), r.init.clone())).or_default().push(r);
    }
    let mut out: Vec<SweepSummary> = cells
        .into_values()
        .map(|cell| {
            let names = cell[0].metrics().map(|(n, _)| n);
            let metrics = names
                .iter()
                .enumerate()
                .filter_map(|(i, name)| {
                    let v: Vec<f64> = cell.iter().filter_map(|r| r.metrics()[i].1).collect();
                    (!v.is_empty()).then(|| (name.to_string(), v.iter().sum::<f64>() / v.len() as f64, std_dev(&v)))
                })
                .collect();
            SweepSummary {
                value: cell[0].value,
                init: cell[0].init.clone(),
                replicates: cell.len(),
                metrics,
            }
        })
        .collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.init.cmp(&b.init)));
    out
}

/// Writes `sweep.csv` (one row per run) and `sweep_summary.csv`
/// (`metric_mean`, `metric_std` columns per cell).
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let names = rows.first().map(|r| r.metrics().map(|(n, _)| n)).unwrap_or_default();
    let mut header = vec!["value".to_string(), "init".into(), "replicates".into()];
    for n in names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    w.write_record(&header)?;
    for s in summarize_sweep(rows) {
        let mut rec = vec![s.value.to_string(), s.init.clone(), s.replicates.to_string()];
        for n in names {
            match s.metrics.iter().find(|(m, _, _)| m == n) {
                Some((_, mean, sd)) => {
                    rec.push(mean.to_string());
                    rec.push(sd.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
