//! Marching squares on rectilinear sample grids.
//!
//! Samples are "inside" when strictly below the level. Crossing points are
//! linearly interpolated along cell edges; the two ambiguous saddle cases are
//! resolved with the bilinear value at the cell center.

use super::{signed_ring_area, MeltPoolContour, Point};
use crate::error::{Error, Result};

/// Polyline produced by [`iso_polylines`].
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point>,
    pub closed: bool,
}

const NONE: u32 = u32::MAX;

struct EdgeIndex {
    rows: usize,
    cols: usize,
}

impl EdgeIndex {
    // Horizontal edges (i, j)-(i, j+1) first, then vertical (i, j)-(i+1, j).
    fn h(&self, i: usize, j: usize) -> usize {
        i * (self.cols - 1) + j
    }

    fn v(&self, i: usize, j: usize) -> usize {
        self.rows * (self.cols - 1) + i * self.cols + j
    }

    fn count(&self) -> usize {
        self.rows * (self.cols - 1) + (self.rows - 1) * self.cols
    }
}

/// Extracts all level-set polylines of a sampled scalar field.
///
/// `xs` are the column coordinates and `ds` the row coordinates (both strictly
/// increasing); `values` is row-major with `ds.len()` rows. Open polylines end
/// on the grid boundary, closed ones repeat no vertex.
pub fn iso_polylines(xs: &[f64], ds: &[f64], values: &[f64], level: f64) -> Vec<Polyline> {
    let rows = ds.len();
    let cols = xs.len();
    assert_eq!(values.len(), rows * cols, "value grid does not match coordinates");
    if rows < 2 || cols < 2 {
        return Vec::new();
    }
    let at = |i: usize, j: usize| values[i * cols + j];
    let inside = |i: usize, j: usize| at(i, j) < level;
    let edges = EdgeIndex { rows, cols };

    let mut pos = vec![Point::new(f64::NAN, f64::NAN); edges.count()];
    let mut adj = vec![[NONE; 2]; edges.count()];

    let mut crossing = |e: usize, (i0, j0): (usize, usize), (i1, j1): (usize, usize)| {
        if pos[e].x.is_nan() {
            let (a, b) = (at(i0, j0), at(i1, j1));
            let t = (level - a) / (b - a);
            pos[e] = Point::new(
                xs[j0] + t * (xs[j1] - xs[j0]),
                ds[i0] + t * (ds[i1] - ds[i0]),
            );
        }
        e
    };
    let link = |adj: &mut Vec<[u32; 2]>, a: usize, b: usize| {
        for (from, to) in [(a, b), (b, a)] {
            let slot = &mut adj[from];
            if slot[0] == NONE {
                slot[0] = to as u32;
            } else {
                debug_assert_eq!(slot[1], NONE);
                slot[1] = to as u32;
            }
        }
    };

    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let tl = inside(i, j);
            let tr = inside(i, j + 1);
            let br = inside(i + 1, j + 1);
            let bl = inside(i + 1, j);
            let top = (tl != tr).then(|| crossing(edges.h(i, j), (i, j), (i, j + 1)));
            let right = (tr != br).then(|| crossing(edges.v(i, j + 1), (i, j + 1), (i + 1, j + 1)));
            let bottom = (br != bl).then(|| crossing(edges.h(i + 1, j), (i + 1, j), (i + 1, j + 1)));
            let left = (bl != tl).then(|| crossing(edges.v(i, j), (i, j), (i + 1, j)));
            match (top, right, bottom, left) {
                (None, None, None, None) => {}
                (Some(t), Some(r), Some(b), Some(l)) => {
                    let center = 0.25 * (at(i, j) + at(i, j + 1) + at(i + 1, j) + at(i + 1, j + 1));
                    if (center < level) == tl {
                        // tl and br are connected through the center: cut off tr and bl.
                        link(&mut adj, t, r);
                        link(&mut adj, b, l);
                    } else {
                        link(&mut adj, t, l);
                        link(&mut adj, b, r);
                    }
                }
                (t, r, b, l) => {
                    let mut ends = [t, r, b, l].into_iter().flatten();
                    let a = ends.next().expect("two crossings");
                    let b = ends.next().expect("two crossings");
                    link(&mut adj, a, b);
                }
            }
        }
    }

    let mut visited = vec![false; edges.count()];
    let mut out = Vec::new();
    let degree = |e: usize| adj[e].iter().filter(|&&n| n != NONE).count();
    let walk = |start: usize, visited: &mut Vec<bool>| {
        let mut chain = vec![start];
        visited[start] = true;
        let mut cur = start;
        loop {
            let next = adj[cur]
                .iter()
                .copied()
                .find(|&n| n != NONE && !visited[n as usize]);
            match next {
                Some(n) => {
                    let n = n as usize;
                    visited[n] = true;
                    chain.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        chain
    };
    // Open chains start at degree-1 edges on the boundary.
    for e in 0..edges.count() {
        if !visited[e] && degree(e) == 1 {
            let chain = walk(e, &mut visited);
            out.push(Polyline {
                points: chain.iter().map(|&k| pos[k]).collect(),
                closed: false,
            });
        }
    }
    for e in 0..edges.count() {
        if !visited[e] && degree(e) == 2 {
            let chain = walk(e, &mut visited);
            out.push(Polyline {
                points: chain.iter().map(|&k| pos[k]).collect(),
                closed: true,
            });
        }
    }
    out
}

/// Largest surface-anchored component of a sampled field's level set.
///
/// The first row of the field must lie on the surface (`ds[0] == 0`). The
/// field is padded on the left, right and bottom with `pad_value` (which must
/// be above `level`), so every open polyline starts and ends on the surface.
/// Among those, the one enclosing the largest surface-closed area is returned,
/// oriented left to right.
pub fn largest_surface_contour(
    xs: &[f64],
    ds: &[f64],
    values: &[f64],
    level: f64,
    pad_value: f64,
) -> Result<MeltPoolContour> {
    let rows = ds.len();
    let cols = xs.len();
    if rows < 2 || cols < 2 || values.len() != rows * cols {
        return Err(Error::validation("field grid must be at least 2x2"));
    }
    if ds[0] != 0.0 {
        return Err(Error::validation("first field row must lie on the surface"));
    }
    if !(pad_value > level) {
        return Err(Error::validation("padding value must lie above the level"));
    }
    let dx_lo = xs[1] - xs[0];
    let dx_hi = xs[cols - 1] - xs[cols - 2];
    let dd = ds[rows - 1] - ds[rows - 2];
    let mut pxs = Vec::with_capacity(cols + 2);
    pxs.push(xs[0] - dx_lo);
    pxs.extend_from_slice(xs);
    pxs.push(xs[cols - 1] + dx_hi);
    let mut pds = ds.to_vec();
    pds.push(ds[rows - 1] + dd);
    let pcols = cols + 2;
    let mut pv = vec![pad_value; (rows + 1) * pcols];
    for i in 0..rows {
        pv[i * pcols + 1..i * pcols + 1 + cols].copy_from_slice(&values[i * cols..(i + 1) * cols]);
    }

    let best = iso_polylines(&pxs, &pds, &pv, level)
        .into_iter()
        .filter(|p| !p.closed && p.points.len() >= 2)
        .filter(|p| p.points[0].d == 0.0 && p.points[p.points.len() - 1].d == 0.0)
        .map(|mut p| {
            if p.points[0].x > p.points[p.points.len() - 1].x {
                p.points.reverse();
            }
            let area = signed_ring_area(&p.points).abs();
            (area, p.points)
        })
        .filter(|(area, pts)| *area > 0.0 && pts.len() >= 3)
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((_, points)) => Ok(MeltPoolContour::from_trusted(points)),
        None => Err(Error::NoContour { level }),
    }
}
