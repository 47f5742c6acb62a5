use super::*;
use crate::geometry::{Point2, Polyline};
use proptest::prelude::*;

fn profile() -> PrintProfile {
    PrintProfile::default()
}

fn plan(z: f64, pts: &[(f64, f64)], closed: bool) -> LayerPlan {
    let points = pts.iter().map(|&(x, y)| Point2::from_mm(x, y)).collect();
    LayerPlan {
        z,
        walls: Vec::new(),
        infill: Vec::new(),
        bridges: Vec::new(),
        toolpaths: vec![Polyline { points, closed }],
        unbridged: 0,
    }
}

#[test]
fn empty_plans_have_no_density() {
    assert_eq!(realized_density(&[], &Region::cube([0.0; 3], 10.0), &profile()), 0.0);
}

#[test]
fn single_segment_inside() {
    let p = profile();
    let r = Region::cube([0.0; 3], 10.0);
    let d = realized_density(&[plan(5.0, &[(1.0, 1.0), (4.0, 5.0)], false)], &r, &p);
    assert!((d - 5.0 * 0.38 * 0.1 / 1000.0).abs() < 1e-15);
    // half outside in x, and a slab straddling the top
    let d = realized_density(&[plan(5.0, &[(8.0, 1.0), (12.0, 1.0)], false)], &r, &p);
    assert!((d - 2.0 * 0.038 / 1000.0).abs() < 1e-15);
    let d = realized_density(&[plan(10.0, &[(1.0, 1.0), (3.0, 1.0)], false)], &r, &p);
    assert!((d - 2.0 * 0.38 * 0.05 / 1000.0).abs() < 1e-15);
}

#[test]
fn segments_on_a_shared_face_count_once() {
    let p = profile();
    let line = [plan(1.0, &[(5.0, 0.0), (5.0, 4.0)], false)];
    let left = Region { min: [0.0; 3], max: [5.0, 10.0, 10.0] };
    let right = Region { min: [5.0, 0.0, 0.0], max: [10.0, 10.0, 10.0] };
    let a = realized_density(&line, &left, &p) * left.volume();
    let b = realized_density(&line, &right, &p) * right.volume();
    assert_eq!(a, 0.0);
    assert!((b - 4.0 * 0.038).abs() < 1e-12);
}

#[test]
fn grid_cells_sum_to_the_whole() {
    let p = profile();
    let plans: Vec<LayerPlan> =
        (0..40).map(|i| plan(0.05 + 0.1 * i as f64, &[(0.3, 0.2), (3.7, 1.1), (2.2, 3.9), (0.1, 2.5)], true)).collect();
    let cube = Region::cube([0.0; 3], 4.0);
    let whole = realized_density(&plans, &cube, &p);
    for n in [1, 2, 3, 8] {
        let g = realized_grid(&plans, &cube, n, &p);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        assert!((mean - whole).abs() < 1e-12, "n {n}");
    }
}

proptest! {
    #[test]
    fn density_is_additive(
        pts in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 2..12),
        z in 0.0..10.0f64,
        cut in 0.5..9.5f64,
        zcut in 0.5..9.5f64,
    ) {
        let p = profile();
        let plans = [plan(z, &pts, true)];
        let whole = Region::cube([0.0; 3], 10.0);
        let parts = [
            Region { min: [0.0, 0.0, 0.0], max: [cut, 10.0, zcut] },
            Region { min: [cut, 0.0, 0.0], max: [10.0, 10.0, zcut] },
            Region { min: [0.0, 0.0, zcut], max: [cut, 10.0, 10.0] },
            Region { min: [cut, 0.0, zcut], max: [10.0, 10.0, 10.0] },
        ];
        let total = realized_density(&plans, &whole, &p) * whole.volume();
        let sum: f64 = parts.iter().map(|r| realized_density(&plans, r, &p) * r.volume()).sum();
        prop_assert!((total - sum).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn pchip_stays_monotone(ys in prop::collection::vec(0.0..0.1f64, 3..10)) {
        let mut acc = 0.0;
        let ys: Vec<f64> = ys.into_iter().map(|d| { acc += d; acc }).collect();
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 0.1).collect();
        let f = Pchip::new(xs.clone(), ys.clone()).unwrap();
        let mut prev = f.eval(0.0);
        for i in 1..=200 {
            let v = f.eval(*xs.last().unwrap() * i as f64 / 200.0);
            prop_assert!(v >= prev - 1e-12);
            prev = v;
        }
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!((f.eval(*x) - y).abs() < 1e-12);
        }
    }
}

#[test]
fn pchip_matches_reference_values() {
    // reference values from an independent monotone cubic implementation
    let f = Pchip::new(vec![0.0, 0.1, 0.25, 0.5, 0.8], vec![0.0, 0.12, 0.2, 0.45, 0.9]).unwrap();
    for (x, y) in [
        (0.05, 0.06885964912280701),
        (0.1, 0.12),
        (0.2, 0.1726037512312387),
        (0.3, 0.23816807867512454),
        (0.6, 0.5802847754654984),
        (0.75, 0.8133967688937568),
    ] {
        assert!((f.eval(x) - y).abs() < 1e-12, "{x}");
    }
    let g = Pchip::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0, 3.0]).unwrap();
    for (x, y) in [(0.5, 0.6875), (1.5, 1.0), (2.5, 1.625)] {
        assert!((g.eval(x) - y).abs() < 1e-12);
    }
}

#[test]
fn compensation_round_trip() {
    let samples: Vec<(f64, f64)> =
        sample_range(0.01, 0.8, 17).into_iter().map(|x| (x, 0.9 * x + 0.2 * x * x)).collect();
    let c = CompensationCurve::fit(samples.clone(), MONOTONE_TOLERANCE).unwrap();
    for y in [0.05, 0.2, 0.3, 0.5] {
        assert!((c.forward(c.inverse(y)) - y).abs() < 1e-9);
    }
    // locally averaged, so close to but not exactly through the samples
    for (x, y) in &samples {
        assert!((c.forward(*x) - y).abs() < 2e-3);
    }
    let back = CompensationCurve::from_csv(&c.to_csv()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn non_monotone_samples_are_reported() {
    let bad = vec![(0.1, 0.1), (0.2, 0.25), (0.3, 0.2), (0.4, 0.4)];
    assert!(matches!(CompensationCurve::fit(bad, MONOTONE_TOLERANCE), Err(Error::NonMonotone(_))));
    // small wobbles are smoothed instead
    let wobble = vec![(0.1, 0.1), (0.2, 0.205), (0.3, 0.2), (0.4, 0.4)];
    let c = CompensationCurve::fit(wobble, MONOTONE_TOLERANCE).unwrap();
    assert!(c.forward(0.3) >= c.forward(0.2));
}

#[test]
fn zero_request_realizes_nothing() {
    let cube = CubeSetup::new(4, profile());
    assert_eq!(cube.realized_homogeneous(0.0).unwrap(), 0.0);
}

#[test]
fn self_measured_spec_has_no_local_error() {
    let p = profile();
    let cube = CubeSetup::new(4, p);
    let side = cube.side();
    let field = TestSpec::Gradient.field(side, 8).unwrap();
    let (_, plans) = cube.run(&field).unwrap();
    let region = Region::cube([0.0; 3], side);
    let n = 4;
    let realized = realized_grid(&plans, &region, n, &p);
    let spec = DensityField::new([n; 3], [side / n as f64; 3], [0.0; 3], realized.iter().map(|v| v.min(1.0)).collect())
        .unwrap();
    let curve = local_error_curve(&spec, &plans, &region, &[side / n as f64], &p);
    assert!(curve[0].1 < 1e-12);
    let grid = local_error_grid(&field, &plans, &region, side / 2.0, &p);
    assert_eq!(grid.tiles_at(0.1, 0.1).len(), 4);
    assert!(grid.tiles_at(-1.0, 0.1).is_empty());
}

#[test]
fn test_specs() {
    let s = 10.0;
    assert!((TestSpec::Gradient.density_at(s, [0.0; 3]) - 0.1).abs() < 1e-12);
    assert!((TestSpec::Gradient.density_at(s, [s; 3]) - 0.4).abs() < 1e-12);
    assert_eq!(TestSpec::SphereShell.density_at(s, [5.0; 3]), 0.1);
    assert_eq!(TestSpec::SphereShell.density_at(s, [5.0, 5.0, 9.5]), 0.4);
    assert_eq!(TestSpec::SphereShell.density_at(s, [0.0; 3]), 0.1);
    // the contrast plane halves the cube
    let f = TestSpec::ContrastPlane.field(s, 32).unwrap();
    let mean = f.values().iter().sum::<f64>() / f.values().len() as f64;
    assert!((mean - 0.25).abs() < 0.01);
    assert_eq!(TestSpec::ContrastPlane.density_at(s, [5.0, 5.0, 9.0]), 0.4);
    assert_eq!(TestSpec::ContrastPlane.density_at(s, [5.0, 5.0, 1.0]), 0.1);
}

#[test]
fn csv_export() {
    assert_eq!(curve_csv(["kernel", "error"], &[(1.0, 0.5)]), "kernel,error\n1,0.5\n");
}
