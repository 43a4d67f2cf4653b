use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{load_frames, Combo, Dataset, DatasetSplit};
use super::hatch::mean_track_prediction;
use crate::error::{Error, Result};
use crate::geometry::{extract_iso_contour, write_contour_csv, write_sdf_file, GridSpec, SdfGrid};
use crate::ingest::{
    crop_roi, moving_average, normalize, save_frame, track_center, write_json, DatasetManifest, ThermalSequence,
    TrackManifest, FULL_SCALE, ROI_SIZE,
};
use crate::metrics::{melt_pool_dimensions, MeltPoolDimensions};
use crate::model::SdfNet;
use crate::nn::Tensor;

/// Writes one row per `m`-frame window of every track: identifiers, the
/// process combination, its energy density `P / V`, the split side and the
/// decoder token `t0..`. Returns the number of rows.
pub fn export_embeddings(
    model: &SdfNet<f32>,
    data: &Dataset,
    split: Option<&DatasetSplit>,
    m: usize,
    stride: usize,
    batch: usize,
    path: &Path,
) -> Result<usize> {
    let all: Vec<usize> = (0..data.tracks.len()).collect();
    let windows = data.windows(&all, m, stride);
    let key = |c: &Combo| (c.power_w.to_bits(), c.velocity_m_s.to_bits());
    let sides: Option<(BTreeSet<_>, BTreeSet<_>)> =
        split.map(|s| (s.train.iter().map(key).collect(), s.test.iter().map(key).collect()));
    let side_of = |i: usize| -> &'static str {
        let Some((train, test)) = &sides else { return "" };
        let k = key(&data.tracks[i].combo());
        if train.contains(&k) {
            "train"
        } else if test.contains(&k) {
            "test"
        } else {
            "unused"
        }
    };
    let mut w = csv::Writer::from_path(path)?;
    let mut header_done = false;
    for chunk in windows.chunks(batch.max(1)) {
        let (x, _) = data.batch(chunk, m)?;
        let (_, token) = model.predict_with_token(&x)?;
        let token = token.ok_or_else(|| Error::validation("the U-Net has no readout token to export"))?;
        let dim = token.shape()[1];
        if !header_done {
            let mut h: Vec<String> = ["track_id", "window_start", "side", "power_w", "velocity_m_s", "energy_density_j_m"]
                .map(String::from)
                .to_vec();
            h.extend((0..dim).map(|i| format!("t{i}")));
            w.write_record(&h)?;
            header_done = true;
        }
        for (wr, row) in chunk.iter().zip(token.data().chunks(dim)) {
            let t = &data.tracks[wr.track];
            let mut rec = vec![
                t.track_id.clone(),
                wr.start.to_string(),
                side_of(wr.track).to_string(),
                t.params.power_w.to_string(),
                t.params.velocity_m_s.to_string(),
                t.params.energy_density().to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(windows.len())
}

/// Dimensions of one predicted window; `None` when no pool was predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub start: usize,
    pub dims: Option<MeltPoolDimensions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPrediction {
    pub track_id: String,
    pub windows: Vec<WindowPrediction>,
    /// From the mean signed-distance image over all windows.
    pub mean: Option<MeltPoolDimensions>,
}

fn write_prediction(sdf: &SdfGrid, out_dir: &Path, stem: &str) -> Result<Option<MeltPoolDimensions>> {
    write_sdf_file(&out_dir.join(format!("{stem}.sdf")), sdf)?;
    match extract_iso_contour(sdf, 0.0) {
        Ok(c) => {
            write_contour_csv(&out_dir.join(format!("{stem}.csv")), &c)?;
            Ok(Some(melt_pool_dimensions(&c)?))
        }
        Err(Error::NoContour { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Predicts every `m`-frame window of a track and their mean, writing
/// `window_XXXX.sdf`/`.csv`, `mean.sdf`/`.csv` and `prediction.json`.
#[allow(clippy::too_many_arguments)]
pub fn predict_track(
    model: &SdfNet<f32>,
    track: &TrackManifest,
    base: &Path,
    grid: GridSpec,
    truncation_um: f64,
    m: usize,
    half_window: usize,
    batch: usize,
    out_dir: &Path,
) -> Result<TrackPrediction> {
    let (_, frames) = load_frames(track, base, half_window)?;
    if frames.len() < m {
        return Err(Error::validation(format!(
            "track {} has {} frames, fewer than the window length {m}",
            track.track_id,
            frames.len()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let px = ROI_SIZE * ROI_SIZE;
    let starts: Vec<usize> = (0..=frames.len() - m).collect();
    let mut windows = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(batch.max(1)) {
        let mut x = Vec::with_capacity(chunk.len() * m * px);
        for &s in chunk {
            for f in &frames[s..s + m] {
                x.extend_from_slice(f);
            }
        }
        let pred = model.predict(&Tensor::new(vec![chunk.len(), m, ROI_SIZE, ROI_SIZE], x)?)?;
        for (&s, values) in chunk.iter().zip(pred.data().chunks(grid.len())) {
            let sdf = SdfGrid::from_prediction(grid, truncation_um, values)?;
            windows.push(WindowPrediction {
                start: s,
                dims: write_prediction(&sdf, out_dir, &format!("window_{s:04}"))?,
            });
        }
    }
    let mean = mean_track_prediction(model, &frames, m, batch, grid, truncation_um)?;
    let result = TrackPrediction {
        track_id: track.track_id.clone(),
        windows,
        mean: write_prediction(&mean, out_dir, "mean")?,
    };
    write_json(&out_dir.join("prediction.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedTrack {
    pub track_id: String,
    pub center_row: f64,
    pub center_col: f64,
    pub frames: usize,
}

/// Crops, averages and normalizes every track of a dataset, writing the
/// model-input frames as 16-bit PGM (`value * 65535`) under
/// `out_dir/tracks/<id>/` plus `preprocess.json`.
pub fn preprocess_dataset(manifest: &DatasetManifest, half_window: usize, out_dir: &Path) -> Result<Vec<PreprocessedTrack>> {
    let summary_path = out_dir.join("preprocess.json");
    if summary_path.exists() {
        return Err(Error::PathCollision(summary_path));
    }
    let mut out = Vec::with_capacity(manifest.tracks.len());
    for t in &manifest.tracks {
        let raw = t.load_sequence(manifest.base_dir())?;
        let center = track_center(&raw.frames)?;
        let cropped = ThermalSequence {
            frames: raw.frames.iter().map(|f| crop_roi(f, center)).collect(),
            ..raw.clone()
        };
        let averaged = moving_average(&cropped, half_window)?;
        let dir = out_dir.join("tracks").join(&t.track_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, f) in averaged.frames.iter().enumerate() {
            let n = normalize(f);
            let counts = n.values().iter().map(|v| v * FULL_SCALE).collect();
            let frame = crate::ingest::ThermalFrame::new(n.rows(), n.cols(), counts, n.pixel_pitch_um)?;
            save_frame(&dir.join(format!("roi_{i:04}.pgm")), &frame)?;
        }
        out.push(PreprocessedTrack {
            track_id: t.track_id.clone(),
            center_row: center.0,
            center_col: center.1,
            frames: averaged.len(),
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&summary_path, &out)?;
    Ok(out)
}
