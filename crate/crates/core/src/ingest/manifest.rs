use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_frame, ProcessParams, ThermalSequence, DEFAULT_PIXEL_PITCH_UM};
use crate::error::{Error, Result};
use crate::geometry::{read_contour_csv, GridSpec, MeltPoolContour, DEFAULT_TRUNCATION_UM};
use crate::synthdata::MaterialParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatTag {
    Monochrome,
    #[default]
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Clean,
    Noisy,
}

/// One track: process settings plus frame and contour files, relative to the
/// directory of the manifest that lists them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackManifest {
    pub track_id: String,
    pub power_w: f64,
    pub velocity_m_s: f64,
    pub exposure_us: f64,
    pub frame_rate_fps: f64,
    pub frame_paths: Vec<String>,
    pub contour_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hatch_spacing_um: Option<f64>,
    #[serde(default = "default_pitch")]
    pub pixel_pitch_um: f64,
    #[serde(default)]
    pub format: FormatTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdf_path: Option<String>,
}

fn default_pitch() -> f64 {
    DEFAULT_PIXEL_PITCH_UM
}

impl TrackManifest {
    pub fn params(&self) -> Result<ProcessParams> {
        let p = ProcessParams {
            power_w: self.power_w,
            velocity_m_s: self.velocity_m_s,
            exposure_us: self.exposure_us,
            hatch_spacing_um: self.hatch_spacing_um,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn frame_interval_us(&self) -> f64 {
        1e6 / self.frame_rate_fps
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads the raw frames listed in the manifest.
    pub fn load_sequence(&self, base: &Path) -> Result<ThermalSequence> {
        if !(self.frame_rate_fps > 0.0) {
            return Err(Error::validation("frame rate must be positive"));
        }
        let frames = self
            .frame_paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut f = load_frame(&base.join(p))?;
                f.pixel_pitch_um = self.pixel_pitch_um;
                f.index = i;
                f.format = self.format;
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        ThermalSequence::new(frames, self.params()?, self.frame_interval_us())
    }

    pub fn load_contours(&self, base: &Path) -> Result<Vec<MeltPoolContour>> {
        self.contour_paths.iter().map(|p| read_contour_csv(&base.join(p))).collect()
    }
}

/// Power and velocity axes of a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub powers_w: Vec<f64>,
    pub velocities_m_s: Vec<f64>,
}

impl GridAxes {
    /// Inclusive arithmetic ranges; counts are rounded so that floating-point
    /// steps do not drop the end point.
    pub fn from_ranges(power: (f64, f64, f64), velocity: (f64, f64, f64)) -> Result<Self> {
        Ok(Self {
            powers_w: inclusive_range(power)?,
            velocities_m_s: inclusive_range(velocity)?,
        })
    }

    pub fn combinations(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.powers_w
            .iter()
            .flat_map(move |&p| self.velocities_m_s.iter().map(move |&v| (p, v)))
    }

    pub fn len(&self) -> usize {
        self.powers_w.len() * self.velocities_m_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn inclusive_range((start, stop, step): (f64, f64, f64)) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::validation(format!(
            "invalid range {start}..={stop} step {step}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // Round to 1e-9 so values print as the intended decimals.
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Collection of tracks with a shared target grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain: Domain,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialParams>,
    #[serde(default)]
    pub sdf_grid: GridSpec,
    #[serde(default = "default_truncation")]
    pub truncation_um: f64,
    pub tracks: Vec<TrackManifest>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION_UM
}

impl DatasetManifest {
    pub fn new(domain: Domain, sdf_grid: GridSpec, tracks: Vec<TrackManifest>) -> Self {
        Self {
            domain,
            seed: 0,
            grid: None,
            material: None,
            sdf_grid,
            truncation_um: DEFAULT_TRUNCATION_UM,
            tracks,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Self = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.sdf_grid.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Directory that track paths are relative to.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
