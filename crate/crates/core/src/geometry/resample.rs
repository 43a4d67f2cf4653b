use serde::{Deserialize, Serialize};

use super::{MeltPoolContour, Point};
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLE_POINTS: usize = 100;

/// Depth profile sampled at horizontally equidistant positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampledContour {
    pub x_min: f64,
    pub x_max: f64,
    pub depths: Vec<f64>,
}

impl ResampledContour {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn x_at(&self, i: usize) -> f64 {
        sample_x(self.x_min, self.x_max, self.depths.len(), i)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.depths.len()).map(|i| self.x_at(i)).collect()
    }

    /// The profile as a contour polyline (requires surface endpoints).
    pub fn to_contour(&self) -> Result<MeltPoolContour> {
        let pts = self
            .depths
            .iter()
            .enumerate()
            .map(|(i, &d)| Point::new(self.x_at(i), d))
            .collect();
        MeltPoolContour::new(pts)
    }
}

fn sample_x(x_min: f64, x_max: f64, n: usize, i: usize) -> f64 {
    if i + 1 == n {
        x_max
    } else {
        x_min + (x_max - x_min) * i as f64 / (n - 1) as f64
    }
}

/// Samples the contour's lower envelope at `n` equidistant lateral positions
/// spanning its extent. Where the boundary is multi-valued the deepest point
/// is kept.
pub fn resample_contour(contour: &MeltPoolContour, n: usize) -> Result<ResampledContour> {
    if n < 2 {
        return Err(Error::validation(format!("resampling needs n >= 2, got {n}")));
    }
    let (x_min, x_max) = contour.x_range();
    if !(x_max > x_min) {
        return Err(Error::validation("contour has zero lateral extent"));
    }
    let step = (x_max - x_min) / (n - 1) as f64;
    let mut depths = vec![f64::NEG_INFINITY; n];
    for (a, b) in contour.segments() {
        let (lo, hi) = if a.x <= b.x { (a, b) } else { (b, a) };
        // Candidate sample range with one index of slack; membership is then
        // decided on the exact sample coordinate.
        let first = (((lo.x - x_min) / step).floor() as isize - 1).max(0) as usize;
        let last = ((((hi.x - x_min) / step).ceil() as isize) + 1).min(n as isize - 1) as usize;
        for (i, slot) in depths.iter_mut().enumerate().take(last + 1).skip(first) {
            let x = sample_x(x_min, x_max, n, i);
            if x < lo.x || x > hi.x {
                continue;
            }
            let d = if hi.x == lo.x {
                lo.d.max(hi.d)
            } else if x == lo.x {
                lo.d
            } else if x == hi.x {
                hi.d
            } else {
                lo.d + (x - lo.x) / (hi.x - lo.x) * (hi.d - lo.d)
            };
            if d > *slot {
                *slot = d;
            }
        }
    }
    for d in &mut depths {
        if !d.is_finite() {
            *d = 0.0;
        }
        *d = d.max(0.0);
    }
    Ok(ResampledContour {
        x_min,
        x_max,
        depths,
    })
}
