use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{contour_to_sdf, read_sdf_file, GridSpec, MeltPoolContour, SdfGrid};
use crate::ingest::{preprocess_sequence, window_count, DatasetManifest, ProcessParams, TrackManifest, ROI_SIZE};
use crate::nn::Tensor;

/// Random stream `stream` of the generator seeded with `seed`. Every random
/// choice of a run draws from its own stream so that changing one consumer
/// does not shift the others.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const ORDER: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SUBSET: u64 = 5;
}

/// A power-velocity combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combo {
    pub power_w: f64,
    pub velocity_m_s: f64,
}

impl Combo {
    pub fn of(p: &ProcessParams) -> Self {
        Self {
            power_w: p.power_w,
            velocity_m_s: p.velocity_m_s,
        }
    }

    fn key(&self) -> (u64, u64) {
        (self.power_w.to_bits(), self.velocity_m_s.to_bits())
    }

    fn cmp_value(&self, other: &Self) -> std::cmp::Ordering {
        self.power_w
            .total_cmp(&other.power_w)
            .then(self.velocity_m_s.total_cmp(&other.velocity_m_s))
    }
}

/// One track after preprocessing, held in memory.
#[derive(Debug, Clone)]
pub struct PreparedTrack {
    pub track_id: String,
    pub params: ProcessParams,
    /// Normalized `ROI_SIZE x ROI_SIZE` frames.
    pub frames: Vec<Vec<f32>>,
    pub target: SdfGrid,
    pub contour: MeltPoolContour,
}

impl PreparedTrack {
    pub fn combo(&self) -> Combo {
        Combo::of(&self.params)
    }
}

/// Preprocessed tracks sharing one target grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tracks: Vec<PreparedTrack>,
    pub grid: GridSpec,
    pub truncation_um: f64,
}

/// Preprocessed model-input frames of one track.
pub fn load_frames(track: &TrackManifest, base: &Path, half_window: usize) -> Result<(ProcessParams, Vec<Vec<f32>>)> {
    let seq = preprocess_sequence(&track.load_sequence(base)?, half_window)?;
    let frames = seq
        .frames
        .iter()
        .map(|f| f.values().iter().map(|&v| v as f32).collect())
        .collect();
    Ok((seq.params, frames))
}

fn prepare_track(
    track: &TrackManifest,
    base: &Path,
    grid: &GridSpec,
    truncation_um: f64,
    half_window: usize,
) -> Result<PreparedTrack> {
    let contour = track
        .load_contours(base)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::validation(format!("track {} has no ground-truth contour", track.track_id)))?;
    let target = match &track.sdf_path {
        Some(p) => read_sdf_file(&base.join(p), grid, truncation_um)?,
        None => contour_to_sdf(&contour, grid, truncation_um)?,
    };
    let (params, frames) = load_frames(track, base, half_window)?;
    Ok(PreparedTrack {
        track_id: track.track_id.clone(),
        params,
        frames,
        target,
        contour,
    })
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest, half_window: usize) -> Result<Self> {
        let tracks = manifest
            .tracks
            .iter()
            .map(|t| prepare_track(t, manifest.base_dir(), &manifest.sdf_grid, manifest.truncation_um, half_window))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tracks,
            grid: manifest.sdf_grid,
            truncation_um: manifest.truncation_um,
        })
    }

    pub fn load_path(path: &Path, half_window: usize) -> Result<Self> {
        Self::load(&DatasetManifest::load(path)?, half_window)
    }

    /// Distinct combinations in ascending order.
    pub fn combos(&self) -> Vec<Combo> {
        let mut seen = BTreeSet::new();
        let mut out: Vec<Combo> = self
            .tracks
            .iter()
            .map(PreparedTrack::combo)
            .filter(|c| seen.insert(c.key()))
            .collect();
        out.sort_by(Combo::cmp_value);
        out
    }

    /// Indices of the tracks belonging to any of `combos`.
    pub fn tracks_of(&self, combos: &[Combo]) -> Vec<usize> {
        let keys: BTreeSet<_> = combos.iter().map(Combo::key).collect();
        (0..self.tracks.len())
            .filter(|&i| keys.contains(&self.tracks[i].combo().key()))
            .collect()
    }

    /// Every window of length `m` at `stride` in the given tracks.
    pub fn windows(&self, tracks: &[usize], m: usize, stride: usize) -> Vec<WindowRef> {
        tracks
            .iter()
            .flat_map(|&t| {
                (0..window_count(self.tracks[t].frames.len(), m, stride)).map(move |j| WindowRef {
                    track: t,
                    start: j * stride,
                })
            })
            .collect()
    }

    /// Stacks windows into `[B, m, S, S]` inputs and `[B, S, S]` targets.
    pub fn batch(&self, windows: &[WindowRef], m: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let px = ROI_SIZE * ROI_SIZE;
        if self.grid.rows != ROI_SIZE || self.grid.cols != ROI_SIZE {
            return Err(Error::ShapeMismatch {
                expected: vec![ROI_SIZE, ROI_SIZE],
                actual: vec![self.grid.rows, self.grid.cols],
            });
        }
        let mut x = Vec::with_capacity(windows.len() * m * px);
        let mut y = Vec::with_capacity(windows.len() * px);
        for w in windows {
            let t = &self.tracks[w.track];
            let frames = t.frames.get(w.start..w.start + m).ok_or_else(|| {
                Error::validation(format!("window at {} exceeds track {}", w.start, t.track_id))
            })?;
            for f in frames {
                x.extend_from_slice(f);
            }
            y.extend(t.target.to_f32());
        }
        Ok((
            Tensor::new(vec![windows.len(), m, ROI_SIZE, ROI_SIZE], x)?,
            Tensor::new(vec![windows.len(), ROI_SIZE, ROI_SIZE], y)?,
        ))
    }
}

/// Window `start..start + m` of track `track` of a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowRef {
    pub track: usize,
    pub start: usize,
}

/// Train/test partition in the space of process combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Combo>,
    pub test: Vec<Combo>,
}

/// `ceil(fraction * n)` with a guard against rounding noise in the product.
fn take_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Seeded shuffle of the sorted combinations; the first `ceil(fraction * N)`
/// train, the rest test.
pub fn split_combos(combos: &[Combo], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!("split fraction {fraction} outside (0, 1]")));
    }
    let mut all = combos.to_vec();
    all.sort_by(Combo::cmp_value);
    all.dedup_by_key(|c| c.key());
    if all.len() < 4 {
        return Err(Error::validation(format!(
            "need at least 4 power-velocity combinations to split, got {}",
            all.len()
        )));
    }
    all.shuffle(&mut seeded_rng(seed, streams::SPLIT));
    let test = all.split_off(take_count(fraction, all.len()));
    let split = DatasetSplit { train: all, test };
    split.check_disjoint()?;
    Ok(split)
}

pub fn split_by_params(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let combos: Vec<Combo> = manifest
        .tracks
        .iter()
        .map(|t| Combo {
            power_w: t.power_w,
            velocity_m_s: t.velocity_m_s,
        })
        .collect();
    split_combos(&combos, fraction, seed)
}

impl DatasetSplit {
    pub fn check_disjoint(&self) -> Result<()> {
        let train: BTreeSet<_> = self.train.iter().map(Combo::key).collect();
        if let Some(c) = self.test.iter().find(|c| train.contains(&c.key())) {
            return Err(Error::validation(format!(
                "combination P={} W, V={} m/s is on both sides of the split",
                c.power_w, c.velocity_m_s
            )));
        }
        Ok(())
    }

    /// Seeded random subset of `ceil(fraction * N)` training combinations
    /// (at least one).
    pub fn train_subset(&self, fraction: f64, seed: u64) -> Result<Vec<Combo>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::validation(format!("fraction {fraction} outside (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.train.clone());
        }
        let mut c = self.train.clone();
        c.shuffle(&mut seeded_rng(seed, streams::SUBSET));
        c.truncate(take_count(fraction, c.len()).max(1));
        c.sort_by(Combo::cmp_value);
        Ok(c)
    }
}
