use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_surface_sequence, rosenthal_cross_section, CameraModel, FrameLayout, MaterialParams, NoiseModel};
use crate::error::{Error, Result};
use crate::geometry::{contour_to_sdf, write_contour_csv, write_sdf_file, GridSpec, MeltPoolContour};
use crate::ingest::{save_frame, DatasetManifest, Domain, FormatTag, GridAxes, ProcessParams, TrackManifest};

/// Inclusive arithmetic range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl RangeSpec {
    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.start, self.stop, self.step)
    }
}

/// Settings of a synthetic power-velocity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub domain: Domain,
    pub seed: u64,
    pub power_w: RangeSpec,
    pub velocity_m_s: RangeSpec,
    pub frames_per_track: usize,
    pub exposure_us: f64,
    pub frame_rate_fps: f64,
    pub layout: FrameLayout,
    /// Defaults to the exposure-dependent camera.
    pub camera: Option<CameraModel>,
    /// Defaults to no noise for the clean domain and [`NoiseModel::noisy`] otherwise.
    pub noise: Option<NoiseModel>,
    pub material: MaterialParams,
    /// Sample spacing of the transverse slice the contour is traced on.
    pub contour_pitch_um: f64,
    pub truncation_um: f64,
    /// Target grid extent relative to the largest pool in the dataset.
    pub grid_margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Clean,
            seed: 0,
            power_w: RangeSpec {
                start: 130.0,
                stop: 490.0,
                step: 60.0,
            },
            velocity_m_s: RangeSpec {
                start: 0.3,
                stop: 1.5,
                step: 0.2,
            },
            frames_per_track: 20,
            exposure_us: 20.0,
            frame_rate_fps: 22_500.0,
            layout: FrameLayout::default(),
            camera: None,
            noise: None,
            material: MaterialParams::default(),
            contour_pitch_um: 1.0,
            truncation_um: crate::geometry::DEFAULT_TRUNCATION_UM,
            grid_margin: 1.1,
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.camera_model().validate()?;
        self.noise_model().validate()?;
        if self.frames_per_track == 0 {
            return Err(Error::validation("frames_per_track must be at least 1"));
        }
        if !(self.frame_rate_fps > 0.0) || !(self.exposure_us > 0.0) {
            return Err(Error::validation("frame rate and exposure must be positive"));
        }
        if !(self.contour_pitch_um > 0.0) || !(self.truncation_um > 0.0) || !(self.grid_margin >= 1.0) {
            return Err(Error::validation(
                "contour pitch and truncation must be positive, grid margin at least 1",
            ));
        }
        Ok(())
    }

    pub fn camera_model(&self) -> CameraModel {
        self.camera.unwrap_or_else(|| CameraModel::for_exposure(self.exposure_us))
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise.unwrap_or(match self.domain {
            Domain::Clean => NoiseModel::clean(),
            Domain::Noisy => NoiseModel::noisy(),
        })
    }

    pub fn axes(&self) -> Result<GridAxes> {
        GridAxes::from_ranges(self.power_w.as_tuple(), self.velocity_m_s.as_tuple())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-track random stream seed derived from the dataset seed and the process
/// parameters, so that tracks can be generated in any order.
pub fn track_seed(seed: u64, power_w: f64, velocity_m_s: f64) -> u64 {
    [power_w.to_bits(), velocity_m_s.to_bits()]
        .into_iter()
        .fold(splitmix64(seed), |h, w| splitmix64(h ^ w))
}

pub(crate) fn track_id(power_w: f64, velocity_m_s: f64) -> String {
    format!("P{power_w}_V{velocity_m_s}")
}

/// Renders one track into `dir`, returning its manifest (paths relative to
/// `base`) and ground-truth contour.
pub(crate) fn write_track(
    cfg: &SynthConfig,
    params: &ProcessParams,
    seed: u64,
    base: &Path,
    rel_dir: &str,
    track_id: String,
) -> Result<(TrackManifest, MeltPoolContour)> {
    let dir = base.join(rel_dir);
    if dir.exists() {
        return Err(Error::PathCollision(dir));
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let contour = rosenthal_cross_section(params, &cfg.material, cfg.contour_pitch_um)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = render_surface_sequence(
        params,
        &cfg.material,
        &cfg.camera_model(),
        &cfg.layout,
        &cfg.noise_model(),
        cfg.frames_per_track,
        1e6 / cfg.frame_rate_fps,
        &mut rng,
    )?;
    let mut frame_paths = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames.iter().enumerate() {
        let rel = format!("{rel_dir}/frame_{i:04}.pgm");
        save_frame(&base.join(&rel), frame)?;
        frame_paths.push(rel);
    }
    let contour_rel = format!("{rel_dir}/contour.csv");
    write_contour_csv(&base.join(&contour_rel), &contour)?;
    let manifest = TrackManifest {
        track_id,
        power_w: params.power_w,
        velocity_m_s: params.velocity_m_s,
        exposure_us: params.exposure_us,
        frame_rate_fps: cfg.frame_rate_fps,
        frame_paths,
        contour_paths: vec![contour_rel],
        hatch_spacing_um: params.hatch_spacing_um,
        pixel_pitch_um: cfg.layout.pixel_pitch_um,
        format: FormatTag::Temperature,
        sdf_path: None,
    };
    Ok((manifest, contour))
}

/// Target grid sized from the largest pool width and depth in a dataset.
pub(crate) fn grid_for(contours: &[MeltPoolContour], margin: f64) -> Result<GridSpec> {
    let width = contours
        .iter()
        .map(|c| {
            let (a, b) = c.x_range();
            2.0 * a.abs().max(b.abs())
        })
        .fold(0.0, f64::max);
    let depth = contours.iter().map(MeltPoolContour::max_depth).fold(0.0, f64::max);
    let spec = GridSpec {
        rows: 64,
        cols: 64,
        pitch_x_um: margin * width / 64.0,
        pitch_d_um: margin * depth / 64.0,
    };
    spec.validate()?;
    Ok(spec)
}

/// Writes the signed-distance target of every track and records its path.
pub(crate) fn write_targets(
    manifest: &mut DatasetManifest,
    contours: &[MeltPoolContour],
    base: &Path,
) -> Result<()> {
    for (track, contour) in manifest.tracks.iter_mut().zip(contours) {
        let sdf = contour_to_sdf(contour, &manifest.sdf_grid, manifest.truncation_um)?;
        let dir = track
            .contour_paths
            .first()
            .and_then(|p| Path::new(p).parent())
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        let rel = if dir.is_empty() {
            "target.sdf".to_string()
        } else {
            format!("{dir}/target.sdf")
        };
        write_sdf_file(&base.join(&rel), &sdf)?;
        track.sdf_path = Some(rel);
    }
    Ok(())
}

/// Generates one track per power-velocity combination under `out_dir` and
/// writes `manifest.json` there.
pub fn generate_grid_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let axes = cfg.axes()?;
    let manifest_path = out_dir.join("manifest.json");
    if manifest_path.exists() {
        return Err(Error::PathCollision(manifest_path));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut tracks = Vec::with_capacity(axes.len());
    let mut contours = Vec::with_capacity(axes.len());
    for (p, v) in axes.combinations() {
        let params = ProcessParams::new(p, v, cfg.exposure_us)?;
        let id = track_id(p, v);
        let (track, contour) = write_track(
            cfg,
            &params,
            track_seed(cfg.seed, p, v),
            out_dir,
            &format!("tracks/{id}"),
            id.clone(),
        )?;
        tracks.push(track);
        contours.push(contour);
    }
    let mut manifest = DatasetManifest::new(cfg.domain, grid_for(&contours, cfg.grid_margin)?, tracks);
    manifest.seed = cfg.seed;
    manifest.grid = Some(axes);
    manifest.material = Some(cfg.material);
    manifest.truncation_um = cfg.truncation_um;
    manifest.set_base_dir(out_dir);
    write_targets(&mut manifest, &contours, out_dir)?;
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_per_combination() {
        let a = track_seed(7, 130.0, 0.3);
        assert_ne!(a, track_seed(7, 130.0, 0.5));
        assert_ne!(a, track_seed(8, 130.0, 0.3));
        assert_eq!(a, track_seed(7, 130.0, 0.3));
    }

    #[test]
    fn config_toml_defaults() {
        let c = SynthConfig::from_toml_str("domain = \"noisy\"\nframes_per_track = 5\n").unwrap();
        assert_eq!(c.domain, Domain::Noisy);
        assert_eq!(c.noise_model(), NoiseModel::noisy());
        assert_eq!(c.axes().unwrap().len(), 49);
        assert!(SynthConfig::from_toml_str("bogus = 1").is_err());
    }
}
