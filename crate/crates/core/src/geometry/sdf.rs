use super::{
    largest_surface_contour, point_segment_distance, segments_intersect, GridSpec, MeltPoolContour,
    Point, SdfGrid,
};
use crate::error::{Error, Result};

/// Binary raster, `true` inside the melt pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                actual: vec![cells.len()],
            });
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }
}

fn polygon_touches_extent(contour: &MeltPoolContour, spec: &GridSpec) -> bool {
    let half_w = 0.5 * spec.width_um();
    let (x0, x1, d0, d1) = (-half_w, half_w, 0.0, spec.depth_um());
    let in_rect = |p: &Point| p.x >= x0 && p.x <= x1 && p.d >= d0 && p.d <= d1;
    if contour.points().iter().any(in_rect) {
        return true;
    }
    let corners = [
        Point::new(x0, d0),
        Point::new(x1, d0),
        Point::new(x1, d1),
        Point::new(x0, d1),
    ];
    if corners.iter().any(|&c| contour.contains(c)) {
        return true;
    }
    contour.closed_segments().any(|(a, b)| {
        (0..4).any(|k| segments_intersect(a, b, corners[k], corners[(k + 1) % 4]))
    })
}

/// Truncated signed distance of the surface-closed polygon, sampled at pixel
/// centers and normalized by `truncation_um`.
pub fn contour_to_sdf(
    contour: &MeltPoolContour,
    spec: &GridSpec,
    truncation_um: f64,
) -> Result<SdfGrid> {
    spec.validate()?;
    if !(truncation_um > 0.0) {
        return Err(Error::validation("truncation distance must be positive"));
    }
    if contour.area() <= 0.0 {
        return Err(Error::validation("degenerate contour: zero area"));
    }
    if !polygon_touches_extent(contour, spec) {
        return Err(Error::ContourOutOfFrame);
    }
    let segs: Vec<(Point, Point)> = contour.closed_segments().collect();
    let mut values = Vec::with_capacity(spec.len());
    for row in 0..spec.rows {
        let d = spec.d_center(row);
        // Lateral crossings of the polygon with this row, for the parity test.
        let mut crossings: Vec<f64> = segs
            .iter()
            .filter(|(a, b)| (a.d > d) != (b.d > d))
            .map(|(a, b)| a.x + (d - a.d) * (b.x - a.x) / (b.d - a.d))
            .collect();
        crossings.sort_by(f64::total_cmp);
        for col in 0..spec.cols {
            let p = Point::new(spec.x_center(col), d);
            let dist = segs
                .iter()
                .map(|&(a, b)| point_segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let right_of = crossings.iter().filter(|&&x| x > p.x).count();
            let signed = if right_of % 2 == 1 { -dist } else { dist };
            values.push(signed.clamp(-truncation_um, truncation_um) / truncation_um);
        }
    }
    SdfGrid::from_values(*spec, truncation_um, values)
}

/// Pixels with negative signed distance.
pub fn sdf_to_mask(sdf: &SdfGrid) -> Mask {
    let spec = sdf.spec();
    Mask {
        rows: spec.rows,
        cols: spec.cols,
        cells: sdf.values().iter().map(|&v| v < 0.0).collect(),
    }
}

/// Reconstructs the cross-section boundary from the level set of a signed
/// distance image.
///
/// The sampled field is extended upward to the surface line by linear
/// extrapolation of the two top rows and bordered with `+1` elsewhere, so the
/// recovered polyline always starts and ends on the surface. When several
/// components exist, the one enclosing the largest area is returned.
pub fn extract_iso_contour(sdf: &SdfGrid, level: f64) -> Result<MeltPoolContour> {
    if !(level > -1.0 && level < 1.0) {
        return Err(Error::validation(format!("level {level} outside (-1, 1)")));
    }
    let spec = sdf.spec();
    let (rows, cols) = (spec.rows, spec.cols);
    let xs: Vec<f64> = (0..cols).map(|j| spec.x_center(j)).collect();
    let mut ds = Vec::with_capacity(rows + 1);
    ds.push(0.0);
    ds.extend((0..rows).map(|i| spec.d_center(i)));

    let v = sdf.values();
    let mut field = Vec::with_capacity((rows + 1) * cols);
    for j in 0..cols {
        field.push(1.5 * v[j] - 0.5 * v[cols + j]);
    }
    field.extend_from_slice(v);
    largest_surface_contour(&xs, &ds, &field, level, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests::half_disc;

    #[test]
    fn half_disc_interior_value() {
        let spec = GridSpec {
            rows: 64,
            cols: 64,
            pitch_x_um: 6.25,
            pitch_d_um: 6.25,
        };
        let sdf = contour_to_sdf(&half_disc(50.0, 2000), &spec, 100.0).unwrap();
        // Pixel (3, 32) has its center at (3.125, 21.875).
        let p = spec.pixel_center(3, 32);
        let rho = p.x.hypot(p.d);
        let expected = -(50.0 - rho).min(p.d) / 100.0;
        assert!((sdf.get(3, 32) - expected).abs() < 1e-4);
    }

    #[test]
    fn value_at_boundary_pixel_is_zero() {
        // Rectangle whose bottom edge passes through the row-1 pixel centers.
        let spec = GridSpec::default();
        let d = spec.d_center(1);
        let c = MeltPoolContour::new(vec![
            Point::new(-100.0, 0.0),
            Point::new(-100.0, d),
            Point::new(100.0, d),
            Point::new(100.0, 0.0),
        ])
        .unwrap();
        let sdf = contour_to_sdf(&c, &spec, 100.0).unwrap();
        assert_eq!(sdf.get(1, 32), 0.0);
        assert!(sdf.get(0, 32) < 0.0);
        assert!(sdf.get(2, 32) > 0.0);
    }

    #[test]
    fn out_of_frame_contour() {
        let c = half_disc(20.0, 50).translated(5000.0);
        assert!(matches!(
            contour_to_sdf(&c, &GridSpec::default(), 100.0),
            Err(Error::ContourOutOfFrame)
        ));
    }

    #[test]
    fn constant_positive_grid_has_no_contour() {
        let spec = GridSpec::default();
        let sdf = SdfGrid::from_values(spec, 100.0, vec![0.5; spec.len()]).unwrap();
        assert!(sdf_to_mask(&sdf).count() == 0);
        assert!(matches!(
            extract_iso_contour(&sdf, 0.0),
            Err(Error::NoContour { .. })
        ));
    }
}
