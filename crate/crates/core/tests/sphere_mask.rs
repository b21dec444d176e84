use std::f64::consts::PI;

use panosphere::mask::{build_mask, build_mask_brute_force, mask_density_curve};
use panosphere::sphere::{haversine_distance, rotate_point, rotation_matrix, temporal_distance};
use panosphere::{ErpGrid, EulerAnglesF64, SphereMask, SphericalPointF64, TokenGrid};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = SphericalPointF64> {
    (-PI..PI, -1.0f64..1.0).prop_map(|(t, z)| SphericalPointF64::new(t, z.asin()))
}

fn euler() -> impl Strategy<Value = EulerAnglesF64> {
    (-PI..PI, -PI / 2.0..PI / 2.0, -PI..PI).prop_map(|(y, p, r)| EulerAnglesF64::new(y, p, r))
}

proptest! {
    #[test]
    fn haversine_agrees_with_dot_product(a in point(), b in point()) {
        let (u, v) = (a.to_unit_vector(), b.to_unit_vector());
        let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
        prop_assert!((haversine_distance(a, b) - dot.clamp(-1.0, 1.0).acos()).abs() < 1e-9);
    }

    #[test]
    fn rotations_preserve_distance(a in point(), b in point(), e in euler()) {
        let r = rotation_matrix(e);
        let d = haversine_distance(a, b);
        let dr = haversine_distance(rotate_point(a, &r), rotate_point(b, &r));
        prop_assert!((d - dr).abs() < 1e-9);
        // a shared orientation cancels out
        prop_assert!((temporal_distance(a, e, b, e) - d).abs() < 1e-9);
    }

    #[test]
    fn fast_mask_equals_brute_force(
        frames in 1usize..4,
        rows in prop::sample::select(vec![1usize, 2, 3, 4, 6]),
        cols in prop::sample::select(vec![1usize, 2, 4, 6, 8]),
        tau in 0.0f64..=PI,
        es in prop::collection::vec(euler(), 3),
    ) {
        let grid = TokenGrid::new(frames, rows, cols, ErpGrid::new(96, 48).unwrap()).unwrap();
        let mut orientations = vec![EulerAnglesF64::zero()];
        orientations.extend_from_slice(&es[..frames - 1]);
        let fast = build_mask(&grid, &orientations, tau).unwrap();
        prop_assert_eq!(&fast, &build_mask_brute_force(&grid, &orientations, tau).unwrap());
        prop_assert!(fast.is_reflexive() && fast.is_symmetric());
    }
}

#[test]
fn density_curve_is_monotone_with_exact_endpoints() {
    let grid = TokenGrid::new(2, 6, 12, ErpGrid::new(960, 480).unwrap()).unwrap();
    let orientations = [EulerAnglesF64::zero(), EulerAnglesF64::new(0.3, 0.05, -0.02)];
    let taus: Vec<f64> = (0..=32).map(|i| if i == 32 { PI } else { PI * i as f64 / 32.0 }).collect();
    let curve = mask_density_curve(&grid, &orientations, &taus).unwrap();
    assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
    assert_eq!(build_mask(&grid, &orientations, 0.0).unwrap().pair_count(), grid.len());
    assert_eq!(curve.last().unwrap().1, 1.0);
    assert!(mask_density_curve(&grid, &orientations, &[0.5, 0.1]).is_err());
}

#[test]
fn identical_frames_attend_to_their_twins_at_tau_zero() {
    let grid = TokenGrid::new(2, 3, 6, ErpGrid::new(96, 48).unwrap()).unwrap();
    let mask = build_mask(&grid, &[EulerAnglesF64::zero(); 2], 0.0).unwrap();
    let per = grid.tokens_per_frame();
    for q in 0..grid.len() {
        assert_eq!(mask.row(q), &[(q % per) as u32, (q % per + per) as u32]);
    }
}

#[test]
fn mask_formats_round_trip() {
    let grid = TokenGrid::new(2, 4, 8, ErpGrid::new(960, 480).unwrap()).unwrap();
    let mask = build_mask(&grid, &[EulerAnglesF64::zero(), EulerAnglesF64::new(1.0, 0.2, 0.0)], 0.5).unwrap();
    let mut bin = Vec::new();
    mask.write_spam(&mut bin).unwrap();
    let back = SphereMask::read_spam(&mut bin.as_slice()).unwrap();
    assert_eq!(back, mask);
    let json = mask.to_json().unwrap();
    assert_eq!(SphereMask::from_json(&json).unwrap().to_json().unwrap(), json);
    let mut bad = bin.clone();
    bad[0] = b'X';
    assert!(SphereMask::read_spam(&mut bad.as_slice()).is_err());
}
