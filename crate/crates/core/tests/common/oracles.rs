//! Brute-force reference implementations, written independently of the
//! library code paths they check.

use meltpool::geometry::{MeltPoolContour, Point};
use meltpool::nn::Tensor;
use rand::Rng;

/// Intersection over union by counting index sets.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<usize> = a.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect();
    let sb: BTreeSet<usize> = b.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

/// Two-pass textbook Pearson coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

/// Deepest point of the polyline on the vertical line `x`, by testing every
/// segment.
pub fn depth_at(pts: &[Point], x: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x < a.x.min(b.x) || x > a.x.max(b.x) {
            continue;
        }
        let d = if a.x == b.x {
            a.d.max(b.d)
        } else {
            a.d + (b.d - a.d) * (x - a.x) / (b.x - a.x)
        };
        best = best.max(d);
    }
    best
}

fn profile(c: &MeltPoolContour, n: usize) -> Vec<f64> {
    let lo = c.points().iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let hi = c.points().iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    (0..n)
        .map(|i| {
            let x = if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            depth_at(c.points(), x)
        })
        .collect()
}

/// Mean absolute difference of 100-sample depth profiles.
pub fn contour_mae(pred: &MeltPoolContour, gt: &MeltPoolContour) -> f64 {
    mae(&profile(gt, 100), &profile(pred, 100))
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vd) = (b.x - a.x, b.d - a.d);
    let len2 = vx * vx + vd * vd;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * vx + (p.d - a.d) * vd) / len2).clamp(0.0, 1.0)
    };
    let (qx, qd) = (a.x + t * vx, a.d + t * vd);
    ((p.x - qx).powi(2) + (p.d - qd).powi(2)).sqrt()
}

/// Points along a polyline no further than `step` apart.
pub fn densify(pts: &[Point], step: f64) -> Vec<Point> {
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = ((a.dist(b) / step).ceil() as usize).max(1);
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push(Point::new(a.x + t * (b.x - a.x), a.d + t * (b.d - a.d)));
        }
    }
    out
}

fn directed(samples: &[Point], target: &[Point]) -> f64 {
    samples
        .iter()
        .map(|&p| {
            target
                .windows(2)
                .map(|w| seg_dist(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance from dense sampling; underestimates by at
/// most `step / 2`.
pub fn hausdorff(a: &MeltPoolContour, b: &MeltPoolContour, step: f64) -> f64 {
    directed(&densify(a.points(), step), b.points()).max(directed(&densify(b.points(), step), a.points()))
}

/// `(depth, width, area)`; area as the integral of the depth profile along
/// the boundary (trapezoids), which equals the polygon closed by the surface.
pub fn dimensions(c: &MeltPoolContour) -> (f64, f64, f64) {
    let p = c.points();
    let depth = p.iter().map(|q| q.d).fold(0.0, f64::max);
    let lo = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
    let hi = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max);
    let area: f64 = p.windows(2).map(|w| (w[1].x - w[0].x) * (w[0].d + w[1].d) / 2.0).sum();
    (depth, hi - lo, area.abs())
}

/// Row-by-row softmax-weighted sum.
pub fn attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Vec<f64> {
    let (l, d) = (q.shape()[0], q.shape()[1]);
    let (lk, dv) = (k.shape()[0], v.shape()[1]);
    let mut out = vec![0.0; l * dv];
    for i in 0..l {
        let scores: Vec<f64> = (0..lk)
            .map(|j| (0..d).map(|t| q.data()[i * d + t] * k.data()[j * d + t]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..lk {
            for t in 0..dv {
                out[i * dv + t] += e[j] / z * v.data()[j * dv + t];
            }
        }
    }
    out
}

/// Star-shaped boundary around `(cx, 0)`: a bumpy half ellipse with
/// semi-axes `a` (lateral) and `b` (depth). `bumps` is the relative amplitude
/// of the low-order harmonics; `n` the number of points.
#[allow(clippy::too_many_arguments)]
pub fn star_contour<R: Rng>(rng: &mut R, cx: f64, a: f64, b: f64, bumps: f64, n: usize) -> MeltPoolContour {
    let harmonics: Vec<(f64, f64)> = (2..5)
        .map(|k| (rng.random_range(-bumps..=bumps) / k as f64, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let pts: Vec<Point> = (0..n)
        .map(|i| {
            let th = std::f64::consts::PI * i as f64 / (n - 1) as f64;
            let r = 1.0 + harmonics.iter().enumerate().map(|(k, (amp, ph))| amp * ((k + 2) as f64 * th + ph).sin()).sum::<f64>();
            let d = if i == 0 || i == n - 1 { 0.0 } else { (b * r * th.sin()).max(0.0) };
            Point::new(cx - a * r * th.cos(), d)
        })
        .collect();
    MeltPoolContour::new(pts).expect("star-shaped contour")
}

/// Irregular contour with `n` random vertices below the surface.
pub fn jagged_contour<R: Rng>(rng: &mut R, n: usize) -> MeltPoolContour {
    loop {
        let mut th: Vec<f64> = (0..n - 2).map(|_| rng.random_range(0.02..std::f64::consts::PI - 0.02)).collect();
        th.sort_by(f64::total_cmp);
        let cx = rng.random_range(-30.0..30.0);
        let mut pts = vec![Point::new(cx - rng.random_range(20.0..120.0), 0.0)];
        for t in th {
            let r = rng.random_range(10.0..150.0);
            pts.push(Point::new(cx - r * t.cos(), r * t.sin()));
        }
        pts.push(Point::new(cx + rng.random_range(20.0..120.0), 0.0));
        if let Ok(c) = MeltPoolContour::new(pts) {
            return c;
        }
    }
}
