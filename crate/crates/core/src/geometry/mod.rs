//! Melt-pool cross-section geometry.
//!
//! A cross-section is an open polyline of `(x, d)` points in micrometres: `x`
//! is the lateral offset from the melt-pool centerline and `d` the depth below
//! the surface line. The polyline starts and ends on the surface (`d = 0`);
//! closing it along the surface gives the melted region as a simple polygon.
//!
//! The regression target is a truncated signed-distance image of that polygon
//! ([`SdfGrid`]), negative inside the melt pool.

mod io;
mod marching;
mod resample;
mod sdf;

pub use io::{read_contour_csv, read_sdf_file, write_contour_csv, write_sdf_file, SDF_FILE_VERSION};
pub use marching::{iso_polylines, largest_surface_contour, Polyline};
pub use resample::{resample_contour, ResampledContour, DEFAULT_RESAMPLE_POINTS};
pub use sdf::{contour_to_sdf, extract_iso_contour, sdf_to_mask, Mask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation distance of the signed-distance target, in µm.
pub const DEFAULT_TRUNCATION_UM: f64 = 100.0;

/// A point of a cross-section contour: lateral offset and depth, both in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub d: f64,
}

impl Point {
    pub const fn new(x: f64, d: f64) -> Self {
        Self { x, d }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.d - other.d)
    }
}

/// Euclidean distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (ex, ed) = (b.x - a.x, b.d - a.d);
    let len2 = ex * ex + ed * ed;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * ex + (p.d - a.d) * ed) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * ex, a.d + t * ed))
}

/// Signed shoelace area of a closed ring (counter-clockwise positive in `(x, d)`).
pub(crate) fn signed_ring_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.x * b.d - b.x * a.d;
    }
    0.5 * acc
}

const SURFACE_EPS: f64 = 1e-9;

/// Open polyline describing one melt-pool cross-section boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct MeltPoolContour {
    points: Vec<Point>,
}

impl MeltPoolContour {
    /// Validates and wraps a boundary polyline.
    ///
    /// Requires at least three points, surface endpoints, non-negative depths
    /// and a simple surface-closed polygon with positive area.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::validation(format!(
                "contour needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.d.is_finite()) {
            return Err(Error::validation("contour has non-finite coordinates"));
        }
        let (first, last) = (points[0], points[points.len() - 1]);
        if first.d.abs() > SURFACE_EPS || last.d.abs() > SURFACE_EPS {
            return Err(Error::validation(
                "contour endpoints must lie on the surface line d = 0",
            ));
        }
        if let Some(p) = points.iter().find(|p| p.d < -SURFACE_EPS) {
            return Err(Error::validation(format!(
                "contour point above the surface: d = {}",
                p.d
            )));
        }
        let contour = Self { points };
        if contour.area() <= 0.0 {
            return Err(Error::validation("degenerate contour: zero area"));
        }
        if !contour.is_simple() {
            return Err(Error::validation("contour polygon self-intersects"));
        }
        Ok(contour)
    }

    /// Wraps points that are known to satisfy the invariants (e.g. produced by
    /// marching squares).
    pub(crate) fn from_trusted(points: Vec<Point>) -> Self {
        debug_assert!(points.len() >= 2);
        Self { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Segments of the open boundary polyline.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// Segments of the polygon closed along the surface line.
    pub fn closed_segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Area of the surface-closed polygon, µm².
    pub fn area(&self) -> f64 {
        signed_ring_area(&self.points).abs()
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.x), hi.max(p.x))
            })
    }

    pub fn max_depth(&self) -> f64 {
        self.points.iter().map(|p| p.d).fold(0.0, f64::max)
    }

    /// Copy shifted laterally by `dx` µm.
    pub fn translated(&self, dx: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| Point::new(p.x + dx, p.d)).collect(),
        }
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    /// Even-odd point-in-polygon test against the surface-closed polygon.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.closed_segments() {
            if (a.d > p.d) != (b.d > p.d) {
                let x_cross = a.x + (p.d - a.d) * (b.x - a.x) / (b.d - a.d);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance from `p` to the closed polygon boundary.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.closed_segments()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    fn is_simple(&self) -> bool {
        let segs: Vec<(Point, Point)> = self.closed_segments().collect();
        let n = segs.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = segs[i];
                let (c, d) = segs[j];
                if adjacent {
                    // Neighbouring edges share one vertex; they may only touch there.
                    if collinear_overlap(a, b, c, d) {
                        return false;
                    }
                    continue;
                }
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.d - a.d) - (b.d - a.d) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.d >= a.d.min(b.d) && p.d <= a.d.max(b.d)
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub(crate) fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// True when two segments that share an endpoint fold back over each other.
fn collinear_overlap(a: Point, b: Point, c: Point, d: Point) -> bool {
    if orient(a, b, c) != 0.0 || orient(a, b, d) != 0.0 {
        return false;
    }
    // Collinear: overlap is more than the shared vertex iff the directions oppose.
    let (shared, u, v) = if b == c {
        (b, a, d)
    } else if a == d {
        (a, b, c)
    } else if a == c {
        (a, b, d)
    } else {
        (b, a, c)
    };
    let du = (u.x - shared.x, u.d - shared.d);
    let dv = (v.x - shared.x, v.d - shared.d);
    du.0 * dv.0 + du.1 * dv.1 > 0.0
}

/// Rectangular raster on which signed distances are sampled.
///
/// Column `j` has its pixel center at lateral offset
/// `(j + 0.5 - cols / 2) * pitch_x`, so the columns are centered on the
/// melt-pool centerline; row `i` has its center at depth `(i + 0.5) * pitch_d`
/// with the top edge of row 0 on the surface line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub pitch_x_um: f64,
    pub pitch_d_um: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            pitch_x_um: 6.25,
            pitch_d_um: 5.46,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::validation("grid needs at least 2x2 pixels"));
        }
        if !(self.pitch_x_um > 0.0 && self.pitch_d_um > 0.0) {
            return Err(Error::validation("grid pitch must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_center(&self, col: usize) -> f64 {
        (col as f64 + 0.5 - self.cols as f64 / 2.0) * self.pitch_x_um
    }

    pub fn d_center(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.pitch_d_um
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point {
        Point::new(self.x_center(col), self.d_center(row))
    }

    pub fn width_um(&self) -> f64 {
        self.cols as f64 * self.pitch_x_um
    }

    pub fn depth_um(&self) -> f64 {
        self.rows as f64 * self.pitch_d_um
    }

    pub fn diagonal_um(&self) -> f64 {
        self.pitch_x_um.hypot(self.pitch_d_um)
    }
}

/// Truncated, normalized signed-distance image. Values lie in `[-1, 1]`;
/// multiply by [`SdfGrid::truncation_um`] for distances in µm.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    spec: GridSpec,
    truncation_um: f64,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn from_values(spec: GridSpec, truncation_um: f64, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![spec.rows, spec.cols],
                actual: vec![values.len()],
            });
        }
        if !(truncation_um > 0.0) {
            return Err(Error::validation("truncation distance must be positive"));
        }
        if let Some(v) = values.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::validation(format!("sdf value {v} outside [-1, 1]")));
        }
        Ok(Self {
            spec,
            truncation_um,
            values,
        })
    }

    /// Builds a grid from raw network output, clamping into `[-1, 1]`.
    pub fn from_prediction(spec: GridSpec, truncation_um: f64, values: &[f32]) -> Result<Self> {
        let values = values
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    f64::from(v).clamp(-1.0, 1.0)
                } else {
                    1.0
                }
            })
            .collect();
        Self::from_values(spec, truncation_um, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn truncation_um(&self) -> f64 {
        self.truncation_um
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols + col]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn half_disc(r: f64, n: usize) -> MeltPoolContour {
        let pts = (0..=n)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / n as f64;
                Point::new(-r * th.cos(), if i == 0 || i == n { 0.0 } else { r * th.sin() })
            })
            .collect();
        MeltPoolContour::new(pts).unwrap()
    }

    #[test]
    fn rejects_short_and_off_surface_contours() {
        assert!(MeltPoolContour::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        let off = vec![
            Point::new(0.0, 1.0),
            Point::new(5.0, 10.0),
            Point::new(10.0, 0.0),
        ];
        assert!(MeltPoolContour::new(off).is_err());
    }

    #[test]
    fn rejects_zero_area_and_self_intersection() {
        let flat = vec![
            Point::new(0.0, 0.0),
            Point::new(5.0, 0.0),
            Point::new(10.0, 0.0),
        ];
        assert!(matches!(MeltPoolContour::new(flat), Err(Error::Validation(_))));
        let bowtie = vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
            Point::new(10.0, 0.0),
        ];
        assert!(MeltPoolContour::new(bowtie).is_err());
    }

    #[test]
    fn half_disc_area_and_containment() {
        let c = half_disc(50.0, 400);
        let exact = std::f64::consts::PI * 2500.0 / 2.0;
        assert!((c.area() - exact).abs() / exact < 1e-4);
        assert!(c.contains(Point::new(0.0, 25.0)));
        assert!(!c.contains(Point::new(0.0, 60.0)));
        assert!(!c.contains(Point::new(49.0, 40.0)));
    }

    #[test]
    fn grid_centers_are_symmetric() {
        let g = GridSpec::default();
        assert!((g.x_center(0) + g.x_center(63)).abs() < 1e-12);
        assert!((g.d_center(0) - 2.73).abs() < 1e-12);
        assert!((g.diagonal_um() - 8.30).abs() < 0.01);
    }
}
