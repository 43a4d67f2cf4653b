//! Evaluation quantities for predicted cross-sections.

mod report;

pub(crate) use report::std_dev;
pub use report::{evaluate_prediction, write_samples_csv, Aggregates, MetricsReport, SampleMetrics};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    point_segment_distance, resample_contour, Mask, MeltPoolContour, Point, DEFAULT_RESAMPLE_POINTS,
};

/// Intersection over union of two binary masks; 1 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.rows != b.rows || a.cols != b.cols || a.cells.len() != b.cells.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.rows, a.cols],
            actual: vec![b.rows, b.cols],
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.cells.iter().zip(&b.cells) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn check_pairs(xs: &[f64], ys: &[f64], min_len: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![xs.len()],
            actual: vec![ys.len()],
        });
    }
    if xs.len() < min_len {
        return Err(Error::validation(format!(
            "need at least {min_len} samples, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::validation("samples must be finite"));
    }
    Ok(())
}

/// Pearson correlation coefficient, accumulated in a single pass.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys, 2)?;
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Square of [`pearson_r`].
pub fn r_squared(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson_r(xs, ys).map(|r| r * r)
}

/// Mean absolute difference.
pub fn mae(ys: &[f64], preds: &[f64]) -> Result<f64> {
    check_pairs(ys, preds, 1)?;
    Ok(ys.iter().zip(preds).map(|(a, b)| (a - b).abs()).sum::<f64>() / ys.len() as f64)
}

/// Mean absolute depth difference over equidistant resamplings of both
/// contours, each across its own lateral extent.
pub fn contour_mae(pred: &MeltPoolContour, gt: &MeltPoolContour) -> Result<f64> {
    let a = resample_contour(pred, DEFAULT_RESAMPLE_POINTS)?;
    let b = resample_contour(gt, DEFAULT_RESAMPLE_POINTS)?;
    mae(&b.depths, &a.depths)
}

/// Symmetric Hausdorff distance between two contour polylines.
pub fn hausdorff(a: &MeltPoolContour, b: &MeltPoolContour) -> Result<f64> {
    hausdorff_polylines(a.points(), b.points())
}

/// Symmetric Hausdorff distance between polylines, with distances measured to
/// segments rather than vertices. A single point counts as a polyline.
pub fn hausdorff_polylines(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("hausdorff distance of an empty polyline"));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

fn segments_of(pts: &[Point]) -> Vec<(Point, Point)> {
    if pts.len() == 1 {
        vec![(pts[0], pts[0])]
    } else {
        pts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

const HAUSDORFF_TOL: f64 = 1e-9;

/// Exact sup over `a` of the distance to `b`, by branch and bound. Along a
/// segment the distance to each target segment is convex, so on an interval it
/// is bounded by the larger endpoint value; the minimum over targets of those
/// bounds caps the interval.
fn directed_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let targets = segments_of(b);
    let dists = |p: Point| -> Vec<f64> {
        targets.iter().map(|&(s, e)| point_segment_distance(p, s, e)).collect()
    };
    let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let lerp = |s: Point, e: Point, t: f64| Point::new(s.x + t * (e.x - s.x), s.d + t * (e.d - s.d));

    let mut best = 0.0f64;
    let mut stack: Vec<(Point, Point, f64, f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for (s, e) in segments_of(a) {
        let (g0, g1) = (dists(s), dists(e));
        best = best.max(min_of(&g0)).max(min_of(&g1));
        stack.push((s, e, 0.0, 1.0, g0, g1));
        while let Some((s, e, t0, t1, g0, g1)) = stack.pop() {
            let bound = g0.iter().zip(&g1).map(|(x, y)| x.max(*y)).fold(f64::INFINITY, f64::min);
            if bound <= best + HAUSDORFF_TOL {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            let gm = dists(lerp(s, e, tm));
            best = best.max(min_of(&gm));
            stack.push((s, e, t0, tm, g0, gm.clone()));
            stack.push((s, e, tm, t1, gm, g1));
        }
    }
    best
}

/// Cross-section size measures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeltPoolDimensions {
    pub depth_um: f64,
    pub width_um: f64,
    pub area_um2: f64,
}

/// Maximum depth, lateral extent and surface-closed area of a contour.
pub fn melt_pool_dimensions(contour: &MeltPoolContour) -> Result<MeltPoolDimensions> {
    let (x0, x1) = contour.x_range();
    let dims = MeltPoolDimensions {
        depth_um: contour.max_depth(),
        width_um: x1 - x0,
        area_um2: contour.area(),
    };
    if !(dims.width_um > 0.0 && dims.depth_um > 0.0 && dims.area_um2 > 0.0) {
        return Err(Error::validation("degenerate contour"));
    }
    Ok(dims)
}

/// Outcome of the adjacent-track overlap measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intersection {
    /// The boundaries cross; `distance_um` is measured from the deeper pool's
    /// base up to the deepest crossing.
    Overlap { distance_um: f64, crossing_depth_um: f64 },
    NoOverlap,
}

impl Intersection {
    pub fn distance_um(&self) -> Option<f64> {
        match *self {
            Intersection::Overlap { distance_um, .. } => Some(distance_um),
            Intersection::NoOverlap => None,
        }
    }

    pub fn overlaps(&self) -> bool {
        matches!(self, Intersection::Overlap { .. })
    }
}

/// Deepest common point of two closed segments, if any.
fn deepest_common_point(a: Point, b: Point, c: Point, d: Point) -> Option<Point> {
    let r = (b.x - a.x, b.d - a.d);
    let s = (d.x - c.x, d.d - c.d);
    let cross = |u: (f64, f64), v: (f64, f64)| u.0 * v.1 - u.1 * v.0;
    let qp = (c.x - a.x, c.d - a.d);
    let denom = cross(r, s);
    let scale = (r.0.abs() + r.1.abs()).max(s.0.abs() + s.1.abs()).max(1e-300);
    if denom.abs() > 1e-12 * scale * scale {
        let t = cross(qp, s) / denom;
        let u = cross(qp, r) / denom;
        let eps = 1e-12;
        if (-eps..=1.0 + eps).contains(&t) && (-eps..=1.0 + eps).contains(&u) {
            let t = t.clamp(0.0, 1.0);
            return Some(Point::new(a.x + t * r.0, a.d + t * r.1));
        }
        return None;
    }
    // Parallel: only collinear overlaps count; keep the deepest shared point.
    if cross(qp, r).abs() > 1e-12 * scale * scale {
        return None;
    }
    let on = |p: Point, s0: Point, s1: Point| {
        p.x >= s0.x.min(s1.x) - 1e-12
            && p.x <= s0.x.max(s1.x) + 1e-12
            && p.d >= s0.d.min(s1.d) - 1e-12
            && p.d <= s0.d.max(s1.d) + 1e-12
    };
    [a, b]
        .into_iter()
        .filter(|&p| on(p, c, d))
        .chain([c, d].into_iter().filter(|&p| on(p, a, b)))
        .max_by(|p, q| p.d.total_cmp(&q.d))
}

/// Distance from the base of the deeper pool to the deepest crossing of the
/// left boundary and the right boundary shifted by `hatch_spacing_um`.
pub fn intersection_distance(
    left: &MeltPoolContour,
    right: &MeltPoolContour,
    hatch_spacing_um: f64,
) -> Result<Intersection> {
    if !hatch_spacing_um.is_finite() {
        return Err(Error::validation("hatch spacing must be finite"));
    }
    let shifted = right.translated(hatch_spacing_um);
    let (l0, l1) = left.x_range();
    let (r0, r1) = shifted.x_range();
    let mut deepest: Option<f64> = None;
    if r0 <= l1 && l0 <= r1 {
        for (a, b) in left.segments() {
            for (c, d) in shifted.segments() {
                if a.x.max(b.x) < c.x.min(d.x) || c.x.max(d.x) < a.x.min(b.x) {
                    continue;
                }
                if let Some(p) = deepest_common_point(a, b, c, d) {
                    deepest = Some(deepest.map_or(p.d, |z: f64| z.max(p.d)));
                }
            }
        }
    }
    Ok(match deepest {
        Some(z) => {
            let base = left.max_depth().max(right.max_depth());
            Intersection::Overlap {
                distance_um: (base - z).max(0.0),
                crossing_depth_um: z,
            }
        }
        None => Intersection::NoOverlap,
    })
}
