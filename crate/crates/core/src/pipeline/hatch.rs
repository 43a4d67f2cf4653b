use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::load_frames;
use crate::error::{Error, Result};
use crate::geometry::{contour_to_sdf, extract_iso_contour, GridSpec, MeltPoolContour, SdfGrid};
use crate::ingest::{read_json, window_count, write_json, ProcessParams, TrackManifest, ROI_SIZE};
use crate::metrics::{intersection_distance, Intersection};
use crate::model::SdfNet;
use crate::nn::Tensor;
use crate::synthdata::dataset::{track_id, write_track};
use crate::synthdata::{rosenthal_cross_section, track_seed, SynthConfig};

/// Adjacent tracks scanned at one hatch spacing, in scan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchGroup {
    pub group_id: String,
    pub hatch_spacing_um: f64,
    pub tracks: Vec<TrackManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchManifest {
    pub sdf_grid: GridSpec,
    pub truncation_um: f64,
    pub groups: Vec<HatchGroup>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl HatchManifest {
    pub fn new(sdf_grid: GridSpec, truncation_um: f64, groups: Vec<HatchGroup>) -> Self {
        Self {
            sdf_grid,
            truncation_um,
            groups,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Self = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }
}

/// Overlap of one adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchPair {
    pub group_id: String,
    /// Index of the left track of the pair.
    pub pair: usize,
    pub hatch_spacing_um: f64,
    pub power_w: f64,
    pub velocity_m_s: f64,
    pub predicted: Intersection,
    pub ground_truth: Option<Intersection>,
    /// No predicted overlap: the pair risks lack of fusion.
    pub lack_of_fusion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchReport {
    pub pairs: Vec<HatchPair>,
    /// Mean absolute distance error over pairs that overlap in both the
    /// prediction and the ground truth.
    pub distance_mae_um: Option<f64>,
    pub compared_pairs: usize,
    /// Share of pairs with ground truth whose overlap flag is predicted
    /// correctly.
    pub classification_accuracy: Option<f64>,
    pub lack_of_fusion_pairs: usize,
}

/// Mean predicted signed-distance image over every `m`-frame window of a track.
pub fn mean_track_prediction(
    model: &SdfNet<f32>,
    frames: &[Vec<f32>],
    m: usize,
    batch: usize,
    grid: GridSpec,
    truncation_um: f64,
) -> Result<SdfGrid> {
    let n = window_count(frames.len(), m, 1);
    if n == 0 {
        return Err(Error::validation(format!(
            "track has {} frames, fewer than the window length {m}",
            frames.len()
        )));
    }
    let px = ROI_SIZE * ROI_SIZE;
    let mut sum = vec![0.0f64; grid.len()];
    let starts: Vec<usize> = (0..n).collect();
    for chunk in starts.chunks(batch.max(1)) {
        let mut x = Vec::with_capacity(chunk.len() * m * px);
        for &s in chunk {
            for f in &frames[s..s + m] {
                x.extend_from_slice(f);
            }
        }
        let pred = model.predict(&Tensor::new(vec![chunk.len(), m, ROI_SIZE, ROI_SIZE], x)?)?;
        for values in pred.data().chunks(grid.len()) {
            for (acc, &v) in sum.iter_mut().zip(values) {
                *acc += f64::from(v);
            }
        }
    }
    let mean: Vec<f32> = sum.iter().map(|v| (v / n as f64) as f32).collect();
    SdfGrid::from_prediction(grid, truncation_um, &mean)
}

/// Predicts every hatch, measures the overlap of adjacent pairs and, where
/// ground-truth contours exist, compares with the same measure on them.
pub fn hatch_analyze(
    model: &SdfNet<f32>,
    manifest: &HatchManifest,
    m: usize,
    half_window: usize,
    batch: usize,
) -> Result<HatchReport> {
    let base = manifest.base_dir();
    let mut pairs = Vec::new();
    for group in &manifest.groups {
        if group.tracks.len() < 2 {
            return Err(Error::validation(format!(
                "hatch group {} has {} track(s); at least two are needed",
                group.group_id,
                group.tracks.len()
            )));
        }
        if !(group.hatch_spacing_um > 0.0) {
            return Err(Error::validation(format!("hatch group {} has no positive spacing", group.group_id)));
        }
        let mut predicted: Vec<Option<MeltPoolContour>> = Vec::with_capacity(group.tracks.len());
        let mut truth: Vec<Option<MeltPoolContour>> = Vec::with_capacity(group.tracks.len());
        let mut params: Vec<ProcessParams> = Vec::with_capacity(group.tracks.len());
        for t in &group.tracks {
            let (p, frames) = load_frames(t, base, half_window)?;
            let sdf = mean_track_prediction(model, &frames, m, batch, manifest.sdf_grid, manifest.truncation_um)?;
            predicted.push(match extract_iso_contour(&sdf, 0.0) {
                Ok(c) => Some(c),
                Err(Error::NoContour { .. }) => None,
                Err(e) => return Err(e),
            });
            truth.push(t.load_contours(base)?.into_iter().next());
            params.push(p);
        }
        let h = group.hatch_spacing_um;
        for i in 0..group.tracks.len() - 1 {
            let pred = match (&predicted[i], &predicted[i + 1]) {
                (Some(a), Some(b)) => intersection_distance(a, b, h)?,
                _ => Intersection::NoOverlap,
            };
            let gt = match (&truth[i], &truth[i + 1]) {
                (Some(a), Some(b)) => Some(intersection_distance(a, b, h)?),
                _ => None,
            };
            pairs.push(HatchPair {
                group_id: group.group_id.clone(),
                pair: i,
                hatch_spacing_um: h,
                power_w: params[i].power_w,
                velocity_m_s: params[i].velocity_m_s,
                predicted: pred,
                ground_truth: gt,
                lack_of_fusion: !pred.overlaps(),
            });
        }
    }
    Ok(summarize(pairs))
}

fn summarize(pairs: Vec<HatchPair>) -> HatchReport {
    let errors: Vec<f64> = pairs
        .iter()
        .filter_map(|p| match (p.predicted.distance_um(), p.ground_truth.and_then(|g| g.distance_um())) {
            (Some(a), Some(b)) => Some((a - b).abs()),
            _ => None,
        })
        .collect();
    let judged: Vec<bool> = pairs
        .iter()
        .filter_map(|p| p.ground_truth.map(|g| g.overlaps() == p.predicted.overlaps()))
        .collect();
    HatchReport {
        distance_mae_um: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        compared_pairs: errors.len(),
        classification_accuracy: (!judged.is_empty())
            .then(|| judged.iter().filter(|&&ok| ok).count() as f64 / judged.len() as f64),
        lack_of_fusion_pairs: pairs.iter().filter(|p| p.lack_of_fusion).count(),
        pairs,
    }
}

impl HatchReport {
    /// Writes `hatch_report.json` and `hatch_pairs.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("hatch_report.json"), self)?;
        let path = dir.join("hatch_pairs.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "group_id",
            "pair",
            "hatch_spacing_um",
            "power_w",
            "velocity_m_s",
            "predicted_distance_um",
            "ground_truth_distance_um",
            "lack_of_fusion",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.pairs {
            w.write_record([
                p.group_id.clone(),
                p.pair.to_string(),
                p.hatch_spacing_um.to_string(),
                p.power_w.to_string(),
                p.velocity_m_s.to_string(),
                opt(p.predicted.distance_um()),
                opt(p.ground_truth.and_then(|g| g.distance_um())),
                p.lack_of_fusion.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Synthetic multi-hatch cases. Spacings are multiples of each combination's
/// melt-pool width, so that they straddle the overlap threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HatchSynthConfig {
    /// `[power_w, velocity_m_s]` pairs.
    pub combos: Vec<[f64; 2]>,
    pub spacing_factors: Vec<f64>,
    pub hatches: usize,
}

impl Default for HatchSynthConfig {
    fn default() -> Self {
        Self {
            combos: vec![[220.0, 0.6], [340.0, 0.8], [400.0, 1.2], [280.0, 1.0]],
            spacing_factors: vec![0.5, 0.7, 0.85, 1.15, 1.3, 1.5],
            hatches: 2,
        }
    }
}

/// Writes one group per combination and spacing factor under `out_dir`,
/// with targets on `grid`, and saves `hatch_manifest.json` there.
pub fn generate_hatch_dataset(
    synth: &SynthConfig,
    cfg: &HatchSynthConfig,
    grid: GridSpec,
    out_dir: &Path,
) -> Result<HatchManifest> {
    synth.validate()?;
    if cfg.hatches < 2 || cfg.combos.is_empty() || cfg.spacing_factors.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::validation(
            "hatch generation needs at least two hatches, one combination and positive spacing factors",
        ));
    }
    let manifest_path = out_dir.join("hatch_manifest.json");
    if manifest_path.exists() {
        return Err(Error::PathCollision(manifest_path));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut groups = Vec::new();
    for (ci, &[p, v]) in cfg.combos.iter().enumerate() {
        let base_params = ProcessParams::new(p, v, synth.exposure_us)?;
        let reference = rosenthal_cross_section(&base_params, &synth.material, synth.contour_pitch_um)?;
        let (x0, x1) = reference.x_range();
        for (si, factor) in cfg.spacing_factors.iter().enumerate() {
            let h = ((factor * (x1 - x0)) * 1e3).round() / 1e3;
            let group_id = format!("{}_h{si}", track_id(p, v));
            let mut params = base_params;
            params.hatch_spacing_um = Some(h);
            let mut tracks = Vec::with_capacity(cfg.hatches);
            for k in 0..cfg.hatches {
                let seed = track_seed(synth.seed ^ ((ci as u64) << 40 | (si as u64) << 20 | k as u64), p, v);
                let (mut track, contour) = write_track(
                    synth,
                    &params,
                    seed,
                    out_dir,
                    &format!("groups/{group_id}/hatch_{k}"),
                    format!("{group_id}_{k}"),
                )?;
                let rel = format!("groups/{group_id}/hatch_{k}/target.sdf");
                crate::geometry::write_sdf_file(
                    &out_dir.join(&rel),
                    &contour_to_sdf(&contour, &grid, synth.truncation_um)?,
                )?;
                track.sdf_path = Some(rel);
                tracks.push(track);
            }
            groups.push(HatchGroup {
                group_id,
                hatch_spacing_um: h,
                tracks,
            });
        }
    }
    let mut manifest = HatchManifest::new(grid, synth.truncation_um, groups);
    manifest.set_base_dir(out_dir);
    manifest.save(&manifest_path)?;
    Ok(manifest)
}
