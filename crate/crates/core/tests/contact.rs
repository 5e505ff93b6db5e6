use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::Matrix2;
use proptest::prelude::*;
use tactilekit::contact::*;
use tactilekit::sensors::{lookup_profile, Frame};
use tactilekit::Error;

/// Pixels of a filled ellipse centred at (cr, cc), axes a/b, major axis at
/// `theta` from the column axis towards increasing rows.
fn raster_ellipse(cr: f64, cc: f64, a: f64, b: f64, theta: f64) -> Vec<(usize, usize)> {
    let (s, c) = theta.sin_cos();
    let reach = a.ceil() as isize + 1;
    let mut out = Vec::new();
    for r in (cr as isize - reach)..=(cr as isize + reach) {
        for col in (cc as isize - reach)..=(cc as isize + reach) {
            let (x, y) = (col as f64 - cc, r as f64 - cr);
            let u = x * c + y * s;
            let v = -x * s + y * c;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 && r >= 0 && col >= 0 {
                out.push((r as usize, col as usize));
            }
        }
    }
    out
}

struct Oracle {
    row: f64,
    col: f64,
    a: f64,
    b: f64,
    theta: f64,
}

/// Straight sums over the pixel list, eigen-decomposition by nalgebra.
fn oracle(pixels: &[(usize, usize)]) -> Oracle {
    let n = pixels.len() as f64;
    let row = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let col = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let mut cov = Matrix2::<f64>::zeros();
    for &(r, c) in pixels {
        let d = nalgebra::Vector2::new(c as f64 - col, r as f64 - row);
        cov += d * d.transpose() / n;
    }
    let eig = cov.symmetric_eigen();
    let (i_max, i_min) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let v = eig.eigenvectors.column(i_max);
    let theta = v[1].atan2(v[0]).rem_euclid(PI);
    Oracle {
        row,
        col,
        a: 2.0 * eig.eigenvalues[i_max].sqrt(),
        b: 2.0 * eig.eigenvalues[i_min].sqrt(),
        theta,
    }
}

fn angle_gap(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(PI);
    d.min(PI - d)
}

fn diff_from_pixels(h: usize, w: usize, pixels: &[(usize, usize)], value: f32) -> DiffImage {
    let mut m = vec![0.0; h * w];
    for &(r, c) in pixels {
        m[r * w + c] = value;
    }
    DiffImage::new(h, w, m).unwrap()
}

#[test]
fn identical_frames_have_zero_diff() {
    let p = lookup_profile("digit").unwrap();
    let f = Frame::filled(p, 77);
    let d = diff(&f, &f).unwrap();
    assert!(d.magnitude.iter().all(|&v| v == 0.0));
}

#[test]
fn extreme_frames_have_unit_diff() {
    let p = lookup_profile("digit").unwrap();
    let d = diff(&Frame::filled(p.clone(), 255), &Frame::filled(p, 0)).unwrap();
    assert!(d.magnitude.iter().all(|&v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn single_changed_pixel() {
    let p = lookup_profile("digit").unwrap();
    let reference = Frame::filled(p.clone(), 40);
    let mut f = reference.clone();
    f.pixels_mut()[(5 * 320 + 7) * 3 + 1] = 140;
    let d = diff(&f, &reference).unwrap();
    let nonzero: Vec<usize> = (0..d.magnitude.len()).filter(|&i| d.magnitude[i] != 0.0).collect();
    assert_eq!(nonzero, vec![5 * 320 + 7]);
    let expected = 100.0 / (255.0 * 3f64.sqrt());
    assert!((d.at(5, 7) as f64 - expected).abs() < 1e-6);
}

#[test]
fn diff_rejects_profile_mismatch() {
    let a = Frame::filled(lookup_profile("digit").unwrap(), 0);
    let b = Frame::filled(lookup_profile("omnitact").unwrap(), 0);
    assert!(matches!(diff(&a, &b), Err(Error::ProfileMismatch { .. })));
}

#[test]
fn all_zero_diff_gives_no_masks() {
    let d = DiffImage::new(50, 60, vec![0.0; 3000]).unwrap();
    assert!(segment(&d, &SegmentOptions::default()).is_empty());
    let fixed = SegmentOptions { policy: ThresholdPolicy::Fixed(DEFAULT_FIXED_THRESHOLD), ..Default::default() };
    assert!(segment(&d, &fixed).is_empty());
}

#[test]
fn two_disjoint_disks_larger_first() {
    let mut px = raster_ellipse(30.0, 30.0, 8.0, 8.0, 0.0);
    px.extend(raster_ellipse(30.0, 80.0, 14.0, 14.0, 0.0));
    let d = diff_from_pixels(64, 120, &px, 0.5);
    let masks = segment(&d, &SegmentOptions::default());
    assert_eq!(masks.len(), 2);
    assert!(masks[0].area() > masks[1].area());
    assert_eq!((masks[0].id, masks[1].id), (0, 1));
    let big = fit_ellipse(&masks[0]).unwrap();
    assert!((big.centroid_col - 80.0).abs() < 1e-9);
}

#[test]
fn small_components_are_dropped() {
    let px: Vec<_> = (0..4).flat_map(|r| (0..6).map(move |c| (r + 2, c + 2))).collect();
    let d = diff_from_pixels(20, 20, &px, 0.9);
    assert!(segment(&d, &SegmentOptions::default()).is_empty());
    let keep = SegmentOptions { min_area: 24, ..Default::default() };
    assert_eq!(segment(&d, &keep).len(), 1);
}

/// Labels with a recursive 8-neighbour fill over a boolean grid.
fn flood_fill_oracle(grid: &[Vec<bool>]) -> Vec<BTreeSet<(usize, usize)>> {
    fn fill(grid: &[Vec<bool>], seen: &mut [Vec<bool>], r: usize, c: usize, out: &mut BTreeSet<(usize, usize)>) {
        if seen[r][c] || !grid[r][c] {
            return;
        }
        seen[r][c] = true;
        out.insert((r, c));
        for nr in r.saturating_sub(1)..=(r + 1).min(grid.len() - 1) {
            for nc in c.saturating_sub(1)..=(c + 1).min(grid[0].len() - 1) {
                fill(grid, seen, nr, nc, out);
            }
        }
    }
    let mut seen = vec![vec![false; grid[0].len()]; grid.len()];
    let mut comps = Vec::new();
    for r in 0..grid.len() {
        for c in 0..grid[0].len() {
            let mut s = BTreeSet::new();
            fill(grid, &mut seen, r, c, &mut s);
            if !s.is_empty() {
                comps.push(s);
            }
        }
    }
    comps
}

#[test]
fn diagonal_bridge_joins_disks() {
    let mut px = raster_ellipse(20.0, 20.0, 6.0, 6.0, 0.0);
    px.extend(raster_ellipse(20.0, 40.0, 6.0, 6.0, 0.0));
    // Staircase bridge touching only at corners.
    for (i, c) in (26..35).enumerate() {
        px.push((20 + i % 2, c));
    }
    let (h, w) = (40, 60);
    let mut grid = vec![vec![false; w]; h];
    for &(r, c) in &px {
        grid[r][c] = true;
    }
    let expected = flood_fill_oracle(&grid);
    assert_eq!(expected.len(), 1);
    let masks = segment(&diff_from_pixels(h, w, &px, 0.5), &SegmentOptions::default());
    assert_eq!(masks.len(), 1);
    let got: BTreeSet<_> = masks[0].pixels.iter().copied().collect();
    assert_eq!(got, expected[0]);
}

#[test]
fn disks_recover_radius() {
    for r in [5.0, 20.0, 60.0] {
        let m = Mask::new(0, raster_ellipse(70.0, 70.0, r, r, 0.0));
        let e = fit_ellipse(&m).unwrap();
        assert!((e.semi_major / r - 1.0).abs() < 0.02, "r={r} a={}", e.semi_major);
        assert!((e.semi_minor / r - 1.0).abs() < 0.02, "r={r} b={}", e.semi_minor);
        assert!(e.semi_major >= e.semi_minor);
        assert_eq!(e.area, m.area());
    }
}

#[test]
fn rectangle_long_axis() {
    let (w, h) = (60usize, 12usize);
    let px: Vec<_> = (0..h).flat_map(|r| (0..w).map(move |c| (r + 5, c + 3))).collect();
    let e = fit_ellipse(&Mask::new(0, px)).unwrap();
    let expected = w as f64 / 3f64.sqrt();
    assert!((e.semi_major / expected - 1.0).abs() < 0.02);
    assert!(e.orientation.abs() < 1e-12);
}

#[test]
fn rotated_ellipse_orientation() {
    let theta = 30f64.to_radians();
    let px = raster_ellipse(60.0, 60.0, 40.0, 15.0, theta);
    let e = fit_ellipse(&Mask::new(0, px.clone())).unwrap();
    assert!(angle_gap(e.orientation, theta) < 2f64.to_radians());
    let o = oracle(&px);
    assert!(angle_gap(e.orientation, o.theta) < 1e-9);
}

#[test]
fn collinear_pixels_are_degenerate() {
    let px: Vec<_> = (0..40).map(|i| (i + 1, i + 3)).collect();
    match fit_ellipse(&Mask::new(0, px)) {
        Err(Error::DegenerateRegion { centroid_row, centroid_col, semi_major }) => {
            assert!((centroid_row - 20.5).abs() < 1e-9);
            assert!((centroid_col - 22.5).abs() < 1e-9);
            assert!(semi_major > 0.0);
        }
        other => panic!("expected degenerate region, got {other:?}"),
    }
}

#[test]
fn estimate_contacts_counts_degenerate_segments() {
    let p = lookup_profile("digit").unwrap();
    let reference = Frame::filled(p, 0);
    let mut f = reference.clone();
    for i in 0..40 {
        for ch in 0..3 {
            f.pixels_mut()[((10 + i) * 320 + 10) * 3 + ch] = 200;
        }
    }
    let out = estimate_contacts(&f, &reference, &SegmentOptions::default()).unwrap();
    assert!(out.regions.is_empty());
    assert_eq!(out.skipped_degenerate, 1);
    let blank = estimate_contacts(&reference, &reference, &SegmentOptions::default()).unwrap();
    assert!(blank.regions.is_empty());
    assert_eq!(blank.skipped_degenerate, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fit_matches_moment_oracle(
        cr in 70.0f64..130.0, cc in 70.0f64..130.0,
        b in 5.0f64..60.0, ratio in 1.0f64..3.0, theta in 0.0f64..PI,
    ) {
        let a = (b * ratio).min(60.0);
        let px = raster_ellipse(cr, cc, a, b, theta);
        let o = oracle(&px);
        let e = fit_ellipse(&Mask::new(0, px)).unwrap();
        prop_assert!((e.centroid_row - o.row).abs() < 0.5);
        prop_assert!((e.centroid_col - o.col).abs() < 0.5);
        prop_assert!((e.semi_major / o.a - 1.0).abs() < 0.02);
        prop_assert!((e.semi_minor / o.b - 1.0).abs() < 0.02);
        prop_assert!(e.semi_major >= e.semi_minor && e.semi_minor > 0.0);
        prop_assert!((0.0..PI).contains(&e.orientation));
        if o.a / o.b >= 1.05 {
            prop_assert!(angle_gap(e.orientation, o.theta) < 2f64.to_radians());
        }
    }

    #[test]
    fn translation_equivariance(
        b in 5.0f64..30.0, ratio in 1.0f64..2.5, theta in 0.0f64..PI,
        dr in 0usize..50, dc in 0usize..50,
    ) {
        let px = raster_ellipse(70.0, 70.0, b * ratio, b, theta);
        let moved: Vec<_> = px.iter().map(|&(r, c)| (r + dr, c + dc)).collect();
        let e0 = fit_ellipse(&Mask::new(0, px)).unwrap();
        let e1 = fit_ellipse(&Mask::new(0, moved)).unwrap();
        prop_assert!((e1.centroid_row - e0.centroid_row - dr as f64).abs() < 1e-9);
        prop_assert!((e1.centroid_col - e0.centroid_col - dc as f64).abs() < 1e-9);
        prop_assert!((e1.semi_major - e0.semi_major).abs() < 1e-9);
        prop_assert!((e1.semi_minor - e0.semi_minor).abs() < 1e-9);
        prop_assert!(angle_gap(e1.orientation, e0.orientation) < 1e-9);
    }

    #[test]
    fn quarter_turn_shifts_orientation(
        b in 5.0f64..30.0, ratio in 1.1f64..2.5, theta in 0.0f64..PI,
    ) {
        let px = raster_ellipse(70.0, 70.0, b * ratio, b, theta);
        // (row, col) -> (col, 200 - row): a quarter turn in image coordinates.
        let turned: Vec<_> = px.iter().map(|&(r, c)| (c, 200 - r)).collect();
        let e0 = fit_ellipse(&Mask::new(0, px)).unwrap();
        let e1 = fit_ellipse(&Mask::new(0, turned)).unwrap();
        prop_assert!(angle_gap(e1.orientation, e0.orientation + PI / 2.0) < 1e-9);
        prop_assert!((e1.semi_major - e0.semi_major).abs() < 1e-9);
        prop_assert!((e1.semi_minor - e0.semi_minor).abs() < 1e-9);
    }

    #[test]
    fn segments_partition_foreground(bits in proptest::collection::vec(any::<bool>(), 24 * 30), min_area in 1usize..6) {
        let (h, w) = (24, 30);
        let mag: Vec<f32> = bits.iter().map(|&b| if b { 0.6 } else { 0.0 }).collect();
        let d = DiffImage::new(h, w, mag).unwrap();
        let masks = segment(&d, &SegmentOptions { policy: ThresholdPolicy::Fixed(0.3), min_area });
        let grid: Vec<Vec<bool>> = bits.chunks(w).map(|r| r.to_vec()).collect();
        let mut expected: Vec<BTreeSet<_>> = flood_fill_oracle(&grid).into_iter().filter(|s| s.len() >= min_area).collect();
        expected.sort();
        let mut got: Vec<BTreeSet<_>> = masks.iter().map(|m| m.pixels.iter().copied().collect()).collect();
        got.sort();
        prop_assert_eq!(got, expected);
        for pair in masks.windows(2) {
            prop_assert!(pair[0].area() >= pair[1].area());
        }
    }
}
