//! Analytical stand-in for melt-pool simulations: a moving point heat source in
//! a semi-infinite conductor, rendered through a simple camera model.

mod camera;
pub(crate) mod dataset;

pub use camera::{render_surface_sequence, CameraModel, FrameLayout, NoiseModel};
pub use dataset::{generate_grid_dataset, track_seed, RangeSpec, SynthConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{largest_surface_contour, MeltPoolContour};
use crate::ingest::ProcessParams;

/// Thermophysical constants of the substrate (room-temperature values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    pub density_kg_m3: f64,
    pub specific_heat_j_kg_k: f64,
    pub thermal_conductivity_w_m_k: f64,
    pub solidus_temperature_k: f64,
    pub liquidus_temperature_k: f64,
    pub absorptivity: f64,
    pub ambient_temperature_k: f64,
}

impl Default for MaterialParams {
    /// SS316L.
    fn default() -> Self {
        Self {
            density_kg_m3: 7950.0,
            specific_heat_j_kg_k: 470.0,
            thermal_conductivity_w_m_k: 13.4,
            solidus_temperature_k: 1658.0,
            liquidus_temperature_k: 1723.0,
            absorptivity: 0.4,
            ambient_temperature_k: 298.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.density_kg_m3,
            self.specific_heat_j_kg_k,
            self.thermal_conductivity_w_m_k,
            self.solidus_temperature_k,
            self.liquidus_temperature_k,
            self.absorptivity,
            self.ambient_temperature_k,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::validation("material parameters must be positive"));
        }
        if !(self.solidus_temperature_k < self.liquidus_temperature_k) {
            return Err(Error::validation("solidus must lie below liquidus"));
        }
        Ok(())
    }

    /// Thermal diffusivity `k / (rho c)` in m²/s.
    pub fn diffusivity(&self) -> f64 {
        self.thermal_conductivity_w_m_k / (self.density_kg_m3 * self.specific_heat_j_kg_k)
    }

    /// Melt threshold halfway between solidus and liquidus.
    pub fn t_star(&self) -> f64 {
        0.5 * (self.solidus_temperature_k + self.liquidus_temperature_k)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Smallest source distance used in the point-source formula, in µm.
pub const MIN_RADIUS_UM: f64 = 1.0;

/// Steady temperature (K) at `(x, y, z)` µm in the frame moving with the
/// source; `x` points along the scan direction and `z <= 0` into the part.
pub fn rosenthal_temperature(x: f64, y: f64, z: f64, params: &ProcessParams, mat: &MaterialParams) -> f64 {
    let r = (x * x + y * y + z * z).sqrt().max(MIN_RADIUS_UM) * 1e-6;
    rosenthal_at(r, x * 1e-6, params.power_w, params.velocity_m_s, mat)
}

/// Same formula with SI radius and offset.
fn rosenthal_at(r_m: f64, x_m: f64, power_w: f64, velocity: f64, mat: &MaterialParams) -> f64 {
    let alpha = mat.diffusivity();
    let q = mat.absorptivity * power_w;
    mat.ambient_temperature_k
        + q / (2.0 * std::f64::consts::PI * mat.thermal_conductivity_w_m_k * r_m)
            * (-velocity * (r_m + x_m) / (2.0 * alpha)).exp()
}

/// Temperatures sampled on a rectilinear grid (µm coordinates).
///
/// `zs` must start at the surface (`0`) and decrease into the part.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
    values: Vec<f64>,
}

impl TemperatureField {
    /// Wraps values laid out as `[x][y][z]`.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, zs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() || zs.is_empty() {
            return Err(Error::validation("temperature field needs non-empty axes"));
        }
        if values.len() != xs.len() * ys.len() * zs.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![xs.len(), ys.len(), zs.len()],
                actual: vec![values.len()],
            });
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&xs) || !increasing(&ys) || !zs.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::validation(
                "field axes must be strictly monotone (x, y increasing, z decreasing)",
            ));
        }
        if zs[0] > 0.0 {
            return Err(Error::validation("field must not extend above the surface"));
        }
        Ok(Self { xs, ys, zs, values })
    }

    /// Samples the analytical solution.
    pub fn sample(
        params: &ProcessParams,
        mat: &MaterialParams,
        xs: Vec<f64>,
        ys: Vec<f64>,
        zs: Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    values.push(rosenthal_temperature(x, y, z, params, mat));
                }
            }
        }
        Self::new(xs, ys, zs, values)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn zs(&self) -> &[f64] {
        &self.zs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[(ix * self.ys.len() + iy) * self.zs.len() + iz]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Surface temperature image, rows along `y` and columns along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceImage {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurfaceImage {
    pub fn get(&self, iy: usize, ix: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }
}

/// Per-`(x, y)` maximum over depth.
pub fn surface_projection(field: &TemperatureField) -> SurfaceImage {
    let (nx, ny) = (field.xs.len(), field.ys.len());
    let mut values = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            values[iy * nx + ix] = (0..field.zs.len())
                .map(|iz| field.get(ix, iy, iz))
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    SurfaceImage {
        xs: field.xs.clone(),
        ys: field.ys.clone(),
        values,
    }
}

/// Lateral extent of `T >= t_star` along the surface row of slice `ix`.
fn surface_melt_width(field: &TemperatureField, ix: usize, t_star: f64) -> f64 {
    let ny = field.ys.len();
    let t = |iy: usize| field.get(ix, iy, 0);
    let Some(l) = (0..ny).find(|&iy| t(iy) >= t_star) else {
        return 0.0;
    };
    let r = (0..ny).rev().find(|&iy| t(iy) >= t_star).expect("l exists");
    let cross = |a: usize, b: usize| {
        let (ta, tb) = (t(a), t(b));
        field.ys[a] + (t_star - ta) / (tb - ta) * (field.ys[b] - field.ys[a])
    };
    let yl = if l == 0 { field.ys[0] } else { cross(l - 1, l) };
    let yr = if r + 1 == ny { field.ys[ny - 1] } else { cross(r, r + 1) };
    yr - yl
}

/// Melt boundary `T = t_star` in the transverse slice of greatest surface
/// melt width, as a contour with `d = -z`.
pub fn cross_section_contour(field: &TemperatureField, t_star: f64) -> Result<MeltPoolContour> {
    let peak = field.max();
    if !(peak > t_star) {
        return Err(Error::NoMeltPool {
            peak_k: peak,
            threshold_k: t_star,
        });
    }
    if field.zs[0] != 0.0 {
        return Err(Error::validation("field must include the surface plane z = 0"));
    }
    if field.ys.len() < 2 || field.zs.len() < 2 {
        return Err(Error::validation("transverse slice needs at least 2x2 samples"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for ix in 0..field.xs.len() {
        let w = surface_melt_width(field, ix, t_star);
        if w > best.1 {
            best = (ix, w);
        }
    }
    let ix = best.0;
    let (ny, nz) = (field.ys.len(), field.zs.len());
    let ds: Vec<f64> = field.zs.iter().map(|&z| -z + 0.0).collect();
    let mut slice = Vec::with_capacity(ny * nz);
    for iz in 0..nz {
        for iy in 0..ny {
            slice.push(t_star - field.get(ix, iy, iz));
        }
    }
    largest_surface_contour(&field.ys, &ds, &slice, 0.0, 1.0).map_err(|e| match e {
        // Melt only in slices without a surface crossing.
        Error::NoContour { .. } => Error::NoMeltPool {
            peak_k: peak,
            threshold_k: t_star,
        },
        other => other,
    })
}

/// Location `x*` (µm) and value (µm) of the largest melt half-width.
///
/// The isotherm is rotationally symmetric about the scan axis, so the
/// transverse cross-section at `x*` is a half-disc of this radius.
pub fn melt_half_width(params: &ProcessParams, mat: &MaterialParams) -> Result<(f64, f64)> {
    let t_star = mat.t_star();
    let dt = t_star - mat.ambient_temperature_k;
    let q = mat.absorptivity * params.power_w;
    let (v, k) = (params.velocity_m_s, mat.thermal_conductivity_w_m_k);
    let r_min = MIN_RADIUS_UM * 1e-6;
    // Behind the source the exponential is 1, so no isotherm reaches past
    // q / (2 pi k dT); ahead of it the decay is even faster.
    let reach = q / (2.0 * std::f64::consts::PI * k * dt);
    let half_width = |x: f64| -> f64 {
        let f = |r: f64| rosenthal_at(r, x, params.power_w, v, mat) - t_star;
        let lo = x.abs().max(r_min);
        if f(lo) <= 0.0 {
            return 0.0;
        }
        let (mut a, mut b) = (lo, reach.max(lo) * 2.0 + r_min);
        while f(b) > 0.0 {
            b *= 2.0;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 {
                break;
            }
        }
        let r = 0.5 * (a + b);
        (r * r - x * x).max(0.0).sqrt()
    };
    let n = 4000;
    let (mut bx, mut bw) = (0.0, -1.0);
    for i in 0..=n {
        let x = -reach + 2.0 * reach * i as f64 / n as f64;
        let w = half_width(x);
        if w > bw {
            bw = w;
            bx = x;
        }
    }
    if !(bw > 0.0) {
        return Err(Error::NoMeltPool {
            peak_k: rosenthal_at(r_min, 0.0, params.power_w, v, mat),
            threshold_k: t_star,
        });
    }
    // Golden-section refinement around the best scan point.
    let step = 2.0 * reach / n as f64;
    let (mut a, mut b) = (bx - step, bx + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if half_width(c) > half_width(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    let w = half_width(x).max(bw);
    Ok((x * 1e6, w * 1e6))
}

/// Cross-section contour of the analytical solution, traced on a transverse
/// slice through `x*` with sample spacing at most `pitch_um`.
pub fn rosenthal_cross_section(
    params: &ProcessParams,
    mat: &MaterialParams,
    pitch_um: f64,
) -> Result<MeltPoolContour> {
    if !(pitch_um > 0.0) {
        return Err(Error::validation("contour pitch must be positive"));
    }
    let (x_star, r) = melt_half_width(params, mat)?;
    let pitch = pitch_um.min(r / 40.0);
    let extent = 1.25 * r + 2.0 * pitch;
    let n = (extent / pitch).ceil() as usize;
    // Odd lateral count so that y = 0 is sampled.
    let ys: Vec<f64> = (0..=2 * n).map(|i| (i as f64 - n as f64) * pitch).collect();
    let zs: Vec<f64> = (0..=n).map(|i| -(i as f64) * pitch + 0.0).collect();
    let field = TemperatureField::sample(params, mat, vec![x_star], ys, zs)?;
    cross_section_contour(&field, mat.t_star())
}
