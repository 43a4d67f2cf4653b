use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{Dataset, WindowRef};
use crate::error::{Error, Result};
use crate::geometry::SdfGrid;
use crate::metrics::{evaluate_prediction, write_samples_csv, MeltPoolDimensions, MetricsReport, SampleMetrics};
use crate::model::SdfNet;

/// Evaluation-mode predictions for `windows`, as signed-distance grids on the
/// dataset raster.
pub fn predict_windows(
    model: &SdfNet<f32>,
    data: &Dataset,
    windows: &[WindowRef],
    m: usize,
    batch: usize,
) -> Result<Vec<SdfGrid>> {
    let px = data.grid.len();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch.max(1)) {
        let (x, _) = data.batch(chunk, m)?;
        let pred = model.predict(&x)?;
        for values in pred.data().chunks(px) {
            out.push(SdfGrid::from_prediction(data.grid, data.truncation_um, values)?);
        }
    }
    Ok(out)
}

/// Per-window metrics and their per-combination means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub windows: MetricsReport,
    pub combos: MetricsReport,
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| mean_of(&vals))
}

fn mean_dims(d: &[MeltPoolDimensions]) -> MeltPoolDimensions {
    let col = |f: fn(&MeltPoolDimensions) -> f64| mean_of(&d.iter().map(f).collect::<Vec<_>>());
    MeltPoolDimensions {
        depth_um: col(|x| x.depth_um),
        width_um: col(|x| x.width_um),
        area_um2: col(|x| x.area_um2),
    }
}

/// Averages samples sharing a power-velocity combination.
pub fn combo_means(samples: &[SampleMetrics]) -> Vec<SampleMetrics> {
    let mut groups: BTreeMap<(u64, u64), Vec<&SampleMetrics>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.power_w.to_bits(), s.velocity_m_s.to_bits()))
            .or_default()
            .push(s);
    }
    let mut out: Vec<SampleMetrics> = groups
        .into_values()
        .map(|g| {
            let dims = |f: fn(&SampleMetrics) -> MeltPoolDimensions| mean_dims(&g.iter().map(|s| f(s)).collect::<Vec<_>>());
            SampleMetrics {
                sample_id: format!("P{}_V{}", g[0].power_w, g[0].velocity_m_s),
                power_w: g[0].power_w,
                velocity_m_s: g[0].velocity_m_s,
                iou: mean_of(&g.iter().map(|s| s.iou).collect::<Vec<_>>()),
                pred: dims(|s| s.pred),
                gt: dims(|s| s.gt),
                contour_mae_um: mean_opt(g.iter().map(|s| s.contour_mae_um)),
                hausdorff_um: mean_opt(g.iter().map(|s| s.hausdorff_um)),
                intersection_distance_um: mean_opt(g.iter().map(|s| s.intersection_distance_um)),
            }
        })
        .collect();
    out.sort_by(|a, b| a.power_w.total_cmp(&b.power_w).then(a.velocity_m_s.total_cmp(&b.velocity_m_s)));
    out
}

/// Scores already-computed predictions for `windows`.
pub fn score_predictions(data: &Dataset, windows: &[WindowRef], preds: &[SdfGrid]) -> Result<EvaluationReport> {
    if windows.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![windows.len()],
            actual: vec![preds.len()],
        });
    }
    let samples = windows
        .iter()
        .zip(preds)
        .map(|(w, pred)| {
            let t = &data.tracks[w.track];
            evaluate_prediction(format!("{}#w{}", t.track_id, w.start), &t.params, pred, &t.target, &t.contour)
        })
        .collect::<Result<Vec<_>>>()?;
    let combos = combo_means(&samples);
    Ok(EvaluationReport {
        windows: MetricsReport::from_samples(samples)?,
        combos: MetricsReport::from_samples(combos)?,
    })
}

pub fn evaluate_windows(
    model: &SdfNet<f32>,
    data: &Dataset,
    windows: &[WindowRef],
    m: usize,
    batch: usize,
) -> Result<EvaluationReport> {
    if windows.is_empty() {
        return Err(Error::validation("no evaluation windows"));
    }
    let preds = predict_windows(model, data, windows, m, batch)?;
    score_predictions(data, windows, &preds)
}

impl EvaluationReport {
    /// Writes `report.json`, `samples.csv` (per window) and `combos.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::ingest::write_json(&dir.join("report.json"), self)?;
        write_samples_csv(&dir.join("samples.csv"), &self.windows.samples)?;
        write_samples_csv(&dir.join("combos.csv"), &self.combos.samples)
    }
}
