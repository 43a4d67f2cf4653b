//! Thermal frame loading, melt-pool localization, cropping, temporal
//! averaging, windowing and intensity normalization.

mod manifest;
mod pgm;

pub use manifest::{DatasetManifest, Domain, FormatTag, GridAxes, TrackManifest};
pub use pgm::{load_frame, save_frame};
pub(crate) use manifest::{read_json, write_json};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full scale of a 16-bit sample.
pub const FULL_SCALE: f64 = 65535.0;
/// Side of the square model input in pixels.
pub const ROI_SIZE: usize = 64;
pub const DEFAULT_PIXEL_PITCH_UM: f64 = 5.6;

/// Laser and camera settings of one track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub power_w: f64,
    pub velocity_m_s: f64,
    pub exposure_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hatch_spacing_um: Option<f64>,
}

impl ProcessParams {
    pub fn new(power_w: f64, velocity_m_s: f64, exposure_us: f64) -> Result<Self> {
        let p = Self {
            power_w,
            velocity_m_s,
            exposure_us,
            hatch_spacing_um: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(50.0..=500.0).contains(&self.power_w) {
            return Err(Error::validation(format!("power {} W outside [50, 500]", self.power_w)));
        }
        if !(0.3..=2.4).contains(&self.velocity_m_s) {
            return Err(Error::validation(format!(
                "velocity {} m/s outside [0.3, 2.4]",
                self.velocity_m_s
            )));
        }
        if !(self.exposure_us > 0.0) {
            return Err(Error::validation("exposure must be positive"));
        }
        if let Some(h) = self.hatch_spacing_um {
            if !(h > 0.0) {
                return Err(Error::validation("hatch spacing must be positive"));
            }
        }
        Ok(())
    }

    /// Linear energy density `P / V` in J/m.
    pub fn energy_density(&self) -> f64 {
        self.power_w / self.velocity_m_s
    }
}

/// One camera frame. Values are raw counts on load and real-valued after
/// averaging or normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub pixel_pitch_um: f64,
    pub index: usize,
    pub format: FormatTag,
}

impl ThermalFrame {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, pixel_pitch_um: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation("frame must not be empty"));
        }
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                actual: vec![values.len()],
            });
        }
        if !(pixel_pitch_um > 0.0) {
            return Err(Error::validation("pixel pitch must be positive"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            pixel_pitch_um,
            index: 0,
            format: FormatTag::Temperature,
        })
    }

    pub fn from_counts(rows: usize, cols: usize, counts: &[u16], pixel_pitch_um: f64) -> Result<Self> {
        Self::new(rows, cols, counts.iter().map(|&c| f64::from(c)).collect(), pixel_pitch_um)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Ordered frames of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSequence {
    pub frames: Vec<ThermalFrame>,
    pub params: ProcessParams,
    pub frame_interval_us: f64,
}

impl ThermalSequence {
    pub fn new(frames: Vec<ThermalFrame>, params: ProcessParams, frame_interval_us: f64) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        if frames.iter().any(|f| {
            f.rows != first.rows || f.cols != first.cols || f.pixel_pitch_um != first.pixel_pitch_um
        }) {
            return Err(Error::validation("frames differ in shape or pitch"));
        }
        if !(frame_interval_us > 0.0) {
            return Err(Error::validation("frame interval must be positive"));
        }
        Ok(Self {
            frames,
            params,
            frame_interval_us,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Intensity-weighted centroid `(row, col)` of the pixels at or above half the
/// frame maximum, or the first brightest pixel if fewer than four qualify.
pub fn locate_center(frame: &ThermalFrame) -> Result<(f64, f64)> {
    let mut argmax = 0;
    for (i, &v) in frame.values.iter().enumerate() {
        if v > frame.values[argmax] {
            argmax = i;
        }
    }
    let max = frame.values[argmax];
    if !(max > 0.0) {
        return Err(Error::NoSignal);
    }
    let threshold = 0.5 * max;
    let (mut w, mut wr, mut wc, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (i, &v) in frame.values.iter().enumerate() {
        if v >= threshold {
            let (r, c) = (i / frame.cols, i % frame.cols);
            w += v;
            wr += v * r as f64;
            wc += v * c as f64;
            count += 1;
        }
    }
    if count < 4 {
        return Ok(((argmax / frame.cols) as f64, (argmax % frame.cols) as f64));
    }
    Ok((wr / w, wc / w))
}

/// Median of per-frame centers, used as one fixed crop center per track.
pub fn track_center(frames: &[ThermalFrame]) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let centers = frames.iter().map(locate_center).collect::<Result<Vec<_>>>()?;
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    Ok((
        median(centers.iter().map(|c| c.0).collect()),
        median(centers.iter().map(|c| c.1).collect()),
    ))
}

/// `ROI_SIZE` square window centered at `center`, zero-padded outside the frame.
pub fn crop_roi(frame: &ThermalFrame, center: (f64, f64)) -> ThermalFrame {
    crop_sized(frame, center, ROI_SIZE)
}

fn crop_sized(frame: &ThermalFrame, center: (f64, f64), size: usize) -> ThermalFrame {
    let half = (size as f64 - 1.0) / 2.0;
    let top = (center.0 - half + 0.5).floor() as i64;
    let left = (center.1 - half + 0.5).floor() as i64;
    let mut values = vec![0.0; size * size];
    for i in 0..size {
        let r = top + i as i64;
        if r < 0 || r >= frame.rows as i64 {
            continue;
        }
        for j in 0..size {
            let c = left + j as i64;
            if c >= 0 && c < frame.cols as i64 {
                values[i * size + j] = frame.get(r as usize, c as usize);
            }
        }
    }
    ThermalFrame {
        rows: size,
        cols: size,
        values,
        ..frame.clone()
    }
}

/// Pixelwise mean over frames `t-k ..= t+k`, shrinking at the sequence ends.
pub fn moving_average(seq: &ThermalSequence, k: usize) -> Result<ThermalSequence> {
    let n = seq.frames.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let px = seq.frames[0].values.len();
    let frames = (0..n)
        .map(|t| {
            let (lo, hi) = (t.saturating_sub(k), (t + k).min(n - 1));
            let count = (hi - lo + 1) as f64;
            let mut acc = vec![0.0; px];
            for f in &seq.frames[lo..=hi] {
                for (a, &v) in acc.iter_mut().zip(&f.values) {
                    *a += v;
                }
            }
            seq.frames[t].with_values(acc.into_iter().map(|a| a / count).collect())
        })
        .collect();
    Ok(ThermalSequence {
        frames,
        ..seq.clone_meta()
    })
}

impl ThermalSequence {
    fn clone_meta(&self) -> Self {
        Self {
            frames: Vec::new(),
            params: self.params,
            frame_interval_us: self.frame_interval_us,
        }
    }
}

/// Number of windows of length `m` at `stride` in a sequence of length `len`.
pub fn window_count(len: usize, m: usize, stride: usize) -> usize {
    if m == 0 || stride == 0 || len < m {
        0
    } else {
        (len - m) / stride + 1
    }
}

/// All contiguous windows of `m` frames, starting every `stride` frames.
pub fn make_windows(seq: &ThermalSequence, m: usize, stride: usize) -> Result<Vec<ThermalSequence>> {
    if m == 0 || stride == 0 {
        return Err(Error::validation("window length and stride must be at least 1"));
    }
    Ok((0..window_count(seq.frames.len(), m, stride))
        .map(|j| ThermalSequence {
            frames: seq.frames[j * stride..j * stride + m].to_vec(),
            ..seq.clone_meta()
        })
        .collect())
}

/// Scales counts to `[0, 1]` by the 16-bit full scale.
pub fn normalize(frame: &ThermalFrame) -> ThermalFrame {
    frame.with_values(frame.values.iter().map(|&v| v / FULL_SCALE).collect())
}

/// Locates, crops, averages and normalizes a raw track; returns model-ready
/// frames of `ROI_SIZE x ROI_SIZE` values.
pub fn preprocess_sequence(raw: &ThermalSequence, k: usize) -> Result<ThermalSequence> {
    let center = track_center(&raw.frames)?;
    let cropped = ThermalSequence {
        frames: raw.frames.iter().map(|f| crop_roi(f, center)).collect(),
        ..raw.clone_meta()
    };
    let averaged = moving_average(&cropped, k)?;
    Ok(ThermalSequence {
        frames: averaged.frames.iter().map(normalize).collect(),
        ..averaged
    })
}
