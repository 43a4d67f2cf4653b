use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{surface_projection, MaterialParams, TemperatureField};
use crate::error::{Error, Result};
use crate::ingest::{ProcessParams, ThermalFrame, ThermalSequence, FULL_SCALE};

/// Linear sensor response between a noise floor and saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub t_floor_k: f64,
    pub t_sat_k: f64,
}

impl CameraModel {
    /// Short exposures lose low temperatures, long ones saturate early.
    pub fn for_exposure(exposure_us: f64) -> Self {
        if exposure_us <= 10.0 {
            Self {
                t_floor_k: 1200.0,
                t_sat_k: 3500.0,
            }
        } else {
            Self {
                t_floor_k: 800.0,
                t_sat_k: 2500.0,
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_sat_k > self.t_floor_k) {
            return Err(Error::validation("camera saturation must exceed its floor"));
        }
        Ok(())
    }

    /// Counts per kelvin above the floor.
    pub fn gain(&self) -> f64 {
        FULL_SCALE / (self.t_sat_k - self.t_floor_k)
    }

    /// Noise-free response to temperature `t`.
    pub fn counts(&self, t: f64) -> f64 {
        (self.gain() * (t - self.t_floor_k).max(0.0)).round().clamp(0.0, FULL_SCALE)
    }
}

/// Per-frame perturbations of the pseudo-experimental domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Gaussian pixel noise as a fraction of full scale.
    pub pixel_sigma: f64,
    /// Uniform source-position jitter, in pixels, in each direction.
    pub jitter_px: f64,
    /// Standard deviation of the log of a per-frame power factor.
    pub power_flicker: f64,
}

impl NoiseModel {
    pub fn clean() -> Self {
        Self {
            pixel_sigma: 0.0,
            jitter_px: 0.0,
            power_flicker: 0.0,
        }
    }

    pub fn noisy() -> Self {
        Self {
            pixel_sigma: 0.02,
            jitter_px: 1.0,
            power_flicker: 0.35,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.pixel_sigma == 0.0 && self.jitter_px == 0.0 && self.power_flicker == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if [self.pixel_sigma, self.jitter_px, self.power_flicker]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::validation("noise parameters must be non-negative"));
        }
        Ok(())
    }
}

/// Raw frame geometry: the source sits at column `source_col` and on the
/// horizontal midline; columns run along the scan direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub rows: usize,
    pub cols: usize,
    pub pixel_pitch_um: f64,
    pub source_col: f64,
    /// Depth samples used for the surface projection.
    pub depth_levels: usize,
}

impl Default for FrameLayout {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            pixel_pitch_um: 5.6,
            source_col: 96.0,
            depth_levels: 3,
        }
    }
}

/// Renders `n_frames` camera frames of the steady surface temperature.
#[allow(clippy::too_many_arguments)]
pub fn render_surface_sequence<R: Rng + ?Sized>(
    params: &ProcessParams,
    mat: &MaterialParams,
    camera: &CameraModel,
    layout: &FrameLayout,
    noise: &NoiseModel,
    n_frames: usize,
    frame_interval_us: f64,
    rng: &mut R,
) -> Result<ThermalSequence> {
    if n_frames == 0 {
        return Err(Error::EmptySequence);
    }
    camera.validate()?;
    noise.validate()?;
    if layout.rows == 0 || layout.cols == 0 || layout.depth_levels == 0 {
        return Err(Error::validation("frame layout must be non-empty"));
    }
    let pitch = layout.pixel_pitch_um;
    let jitter = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let pixel_noise = Normal::new(0.0, noise.pixel_sigma * FULL_SCALE).expect("finite sigma");
    let zs: Vec<f64> = (0..layout.depth_levels).map(|i| -(i as f64) * pitch + 0.0).collect();
    let mut frames = Vec::with_capacity(n_frames);
    let mut clean_frame: Option<ThermalFrame> = None;
    for index in 0..n_frames {
        if let (true, Some(f)) = (noise.is_clean(), &clean_frame) {
            let mut f = f.clone();
            f.index = index;
            frames.push(f);
            continue;
        }
        let (dx, dy) = if noise.jitter_px > 0.0 {
            (
                jitter.sample(rng) * noise.jitter_px * pitch,
                jitter.sample(rng) * noise.jitter_px * pitch,
            )
        } else {
            (0.0, 0.0)
        };
        let mut p = *params;
        if noise.power_flicker > 0.0 {
            let s = noise.power_flicker;
            let z: f64 = StandardNormal.sample(rng);
            p.power_w *= (s * z - 0.5 * s * s).exp();
        }
        let xs: Vec<f64> = (0..layout.cols)
            .map(|j| (j as f64 + 0.5 - layout.source_col) * pitch - dx)
            .collect();
        let ys: Vec<f64> = (0..layout.rows)
            .map(|i| (i as f64 + 0.5 - 0.5 * layout.rows as f64) * pitch - dy)
            .collect();
        let field = TemperatureField::sample(&p, mat, xs, ys, zs.clone())?;
        let surface = surface_projection(&field);
        let values = surface
            .values
            .iter()
            .map(|&t| {
                let c = camera.gain() * (t - camera.t_floor_k).max(0.0);
                let c = if noise.pixel_sigma > 0.0 { c + pixel_noise.sample(rng) } else { c };
                c.round().clamp(0.0, FULL_SCALE)
            })
            .collect();
        let mut frame = ThermalFrame::new(layout.rows, layout.cols, values, pitch)?;
        frame.index = index;
        if noise.is_clean() {
            clean_frame = Some(frame.clone());
        }
        frames.push(frame);
    }
    ThermalSequence::new(frames, *params, frame_interval_us)
}
