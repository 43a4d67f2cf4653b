mod common;

use common::oracles::{depth_at, jagged_contour, star_contour};
use meltpool::geometry::{
    contour_to_sdf, extract_iso_contour, read_contour_csv, read_sdf_file, resample_contour, sdf_to_mask,
    write_contour_csv, write_sdf_file, GridSpec, MeltPoolContour, Point, DEFAULT_TRUNCATION_UM,
};
use meltpool::metrics::hausdorff;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAU: f64 = DEFAULT_TRUNCATION_UM;

/// Winding number of the surface-closed ring around `p`.
fn winding(ring: &[Point], p: Point) -> i32 {
    let mut w = 0;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        let side = (b.x - a.x) * (p.d - a.d) - (p.x - a.x) * (b.d - a.d);
        if a.d <= p.d {
            if b.d > p.d && side > 0.0 {
                w += 1;
            }
        } else if b.d <= p.d && side < 0.0 {
            w -= 1;
        }
    }
    w
}

fn ring_distance(ring: &[Point], p: Point) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        let (ex, ed) = (b.x - a.x, b.d - a.d);
        let t = (((p.x - a.x) * ex + (p.d - a.d) * ed) / (ex * ex + ed * ed)).clamp(0.0, 1.0);
        best = best.min((p.x - a.x - t * ex).hypot(p.d - a.d - t * ed));
    }
    best
}

fn oracle_sdf(c: &MeltPoolContour, spec: &GridSpec) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..spec.rows {
        for col in 0..spec.cols {
            let p = spec.pixel_center(r, col);
            let dist = ring_distance(c.points(), p);
            let signed = if winding(c.points(), p) != 0 { -dist } else { dist };
            out.push(signed.clamp(-TAU, TAU));
        }
    }
    out
}

#[test]
fn sdf_matches_winding_oracle_on_random_polygons() {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let c = jagged_contour(&mut rng, 12);
        let sdf = contour_to_sdf(&c, &spec, TAU).unwrap();
        let mask = sdf_to_mask(&sdf);
        for (i, (v, o)) in sdf.values().iter().zip(oracle_sdf(&c, &spec)).enumerate() {
            assert!((v * TAU - o).abs() <= 1e-9, "pixel {i}: {} vs {o}", v * TAU);
            // Mask equals point-in-polygon rasterization away from the boundary.
            if o.abs() > 1e-9 {
                assert_eq!(mask.cells[i], o < 0.0);
            }
        }
    }
}

#[test]
fn half_disc_mask_area() {
    let spec = GridSpec::default();
    let r = 50.0;
    let pts: Vec<Point> = (0..=720)
        .map(|i| {
            let th = std::f64::consts::PI * i as f64 / 720.0;
            Point::new(-r * th.cos(), if i == 0 || i == 720 { 0.0 } else { r * th.sin() })
        })
        .collect();
    let c = MeltPoolContour::new(pts).unwrap();
    let mask = sdf_to_mask(&contour_to_sdf(&c, &spec, TAU).unwrap());
    let exact = std::f64::consts::PI * r * r / 2.0 / (spec.pitch_x_um * spec.pitch_d_um);
    // One band of pixels along the perimeter.
    let band = (std::f64::consts::PI * r + 2.0 * r) / spec.pitch_x_um.min(spec.pitch_d_um);
    assert!((mask.count() as f64 - exact).abs() <= band, "{} vs {exact}", mask.count());
}

#[test]
fn sdf_bounded_and_lipschitz() {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let c = jagged_contour(&mut rng, 10);
        let sdf = contour_to_sdf(&c, &spec, TAU).unwrap();
        assert!(sdf.values().iter().all(|v| v.abs() <= 1.0));
        for r in 0..spec.rows {
            for col in 0..spec.cols {
                let v = sdf.get(r, col) * TAU;
                if col + 1 < spec.cols {
                    assert!((sdf.get(r, col + 1) * TAU - v).abs() <= spec.pitch_x_um + 1e-9);
                }
                if r + 1 < spec.rows {
                    assert!((sdf.get(r + 1, col) * TAU - v).abs() <= spec.pitch_d_um + 1e-9);
                }
            }
        }
    }
}

#[test]
fn rectangle_corners_recovered() {
    let spec = GridSpec::default();
    let (x0, x1, depth) = (-80.0, 60.0, 120.0);
    let c = MeltPoolContour::new(vec![
        Point::new(x0, 0.0),
        Point::new(x0, depth),
        Point::new(x1, depth),
        Point::new(x1, 0.0),
    ])
    .unwrap();
    let back = extract_iso_contour(&contour_to_sdf(&c, &spec, TAU).unwrap(), 0.0).unwrap();
    let diag = spec.pitch_x_um.hypot(spec.pitch_d_um);
    for corner in [Point::new(x0, depth), Point::new(x1, depth)] {
        let nearest = back.points().iter().map(|p| p.dist(corner)).fold(f64::INFINITY, f64::min);
        assert!(nearest <= diag, "corner {corner:?} missed by {nearest}");
    }
    let (bx0, bx1) = back.x_range();
    assert!((bx0 - x0).abs() <= spec.pitch_x_um && (bx1 - x1).abs() <= spec.pitch_x_um);
}

#[test]
fn resample_matches_ray_casting() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let c = jagged_contour(&mut rng, 9);
        let r = resample_contour(&c, 100).unwrap();
        for (i, d) in r.depths.iter().enumerate() {
            assert!((d - depth_at(c.points(), r.x_at(i))).abs() <= 1e-9);
        }
    }
}

#[test]
fn resample_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        // Single-valued profile with its surface endpoints at the lateral extremes.
        let n = rng.random_range(3..30);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        xs.sort_by(f64::total_cmp);
        let mut pts = vec![Point::new(-120.0, 0.0)];
        pts.extend(xs.iter().map(|&x| Point::new(x, rng.random_range(1.0..150.0))));
        pts.push(Point::new(130.0, 0.0));
        let c = MeltPoolContour::new(pts).unwrap();
        let once = resample_contour(&c, 100).unwrap();
        let twice = resample_contour(&once.to_contour().unwrap(), 100).unwrap();
        for (a, b) in once.depths.iter().zip(&twice.depths) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = jagged_contour(&mut rng, 11);
    let p = dir.path().join("c.csv");
    write_contour_csv(&p, &c).unwrap();
    assert_eq!(read_contour_csv(&p).unwrap(), c);
    let sdf = contour_to_sdf(&c, &spec, TAU).unwrap();
    let p = dir.path().join("t.sdf");
    write_sdf_file(&p, &sdf).unwrap();
    // Stored as 32-bit floats.
    let back = read_sdf_file(&p, &spec, TAU).unwrap();
    for (a, b) in back.values().iter().zip(sdf.values()) {
        assert_eq!(*a, f64::from(*b as f32));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_within_a_pixel_diagonal(
        seed in 0u64..1_000_000,
        a in 40.0f64..170.0,
        b in 30.0f64..300.0,
        cx in -20.0f64..20.0,
    ) {
        let spec = GridSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = star_contour(&mut rng, cx, a, b, 0.12, 200);
        let back = extract_iso_contour(&contour_to_sdf(&c, &spec, TAU).unwrap(), 0.0).unwrap();
        prop_assert!(hausdorff(&c, &back).unwrap() <= spec.pitch_x_um.hypot(spec.pitch_d_um));
    }

    #[test]
    fn sdf_sign_matches_winding(seed in 0u64..1_000_000, n in 4usize..16) {
        let spec = GridSpec { rows: 24, cols: 24, pitch_x_um: 12.0, pitch_d_um: 9.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = jagged_contour(&mut rng, n);
        let sdf = contour_to_sdf(&c, &spec, TAU).unwrap();
        for r in 0..spec.rows {
            for col in 0..spec.cols {
                let p = spec.pixel_center(r, col);
                if ring_distance(c.points(), p) > 1e-9 {
                    prop_assert_eq!(sdf.get(r, col) < 0.0, winding(c.points(), p) != 0);
                }
            }
        }
    }
}
