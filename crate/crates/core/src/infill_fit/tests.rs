use super::*;
use crate::forest::CellId;

const W: f64 = 0.4;

fn curve(pts: &[(f64, f64)]) -> LayerCurve {
    LayerCurve {
        z: 0.0,
        points: pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
        cells: vec![CellId(0); pts.len()],
        faces: vec![None; pts.len()],
        width: W,
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::rect_mm(x0, y0, x1, y1)
}

fn rect_curve(x0: f64, y0: f64, x1: f64, y1: f64) -> LayerCurve {
    curve(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
}

#[test]
fn contained_curve_is_one_unchanged_loop() {
    let c = rect_curve(2.0, 2.0, 8.0, 8.0);
    let loops = fit_to_area(&c, &PolygonSet::new(vec![rect(0.0, 0.0, 10.0, 10.0)]), W);
    assert_eq!(loops.len(), 1);
    assert_eq!(loops[0].points, c.to_polyline().points);
}

#[test]
fn splitting_area_gives_two_loops_closed_along_the_boundary() {
    let c = rect_curve(1.0, 3.0, 9.0, 7.0);
    let area = PolygonSet::new(vec![rect(0.0, 0.0, 4.0, 10.0), rect(6.0, 0.0, 10.0, 10.0)]);
    let loops = fit_to_area(&c, &area, W);
    assert_eq!(loops.len(), 2);
    let mut areas: Vec<f64> = loops.iter().map(|l| l.area_mm2().abs()).collect();
    areas.sort_by(f64::total_cmp);
    // [1, 3.8] x [3, 7] and [6.2, 9] x [3, 7]
    assert!((areas[0] - 2.8 * 4.0).abs() < 1e-6, "{areas:?}");
    assert!((areas[1] - 2.8 * 4.0).abs() < 1e-6);
}

#[test]
fn untouched_region_becomes_its_own_loop() {
    let c = rect_curve(1.0, 3.0, 9.0, 7.0);
    let area = PolygonSet::new(vec![rect(0.0, 0.0, 10.0, 10.0), rect(0.0, 12.0, 10.0, 14.0)]);
    let loops = fit_to_area(&c, &area, W);
    assert_eq!(loops.len(), 2);
    let orphan = loops.iter().find(|l| l.centroid_mm().y > 11.0).unwrap();
    assert!((orphan.area_mm2().abs() - 9.6 * 1.6).abs() < 1e-6);
}

#[test]
fn enclosed_hole_is_kept_and_outside_hole_dropped() {
    let c = rect_curve(1.0, 1.0, 9.0, 9.0);
    let area = PolygonSet::new(vec![
        rect(0.0, 0.0, 20.0, 10.0),
        rect(4.0, 4.0, 6.0, 6.0).reversed(),
        rect(14.0, 4.0, 16.0, 6.0).reversed(),
    ]);
    let loops = fit_to_area(&c, &area, W);
    assert_eq!(loops.len(), 2);
    assert!(loops.iter().any(|l| (l.area_mm2().abs() - 2.4 * 2.4).abs() < 1e-6));
}

#[test]
fn clockwise_curve_gives_the_same_loops() {
    let mut c = rect_curve(1.0, 3.0, 9.0, 7.0);
    let area = PolygonSet::new(vec![rect(0.0, 0.0, 4.0, 10.0), rect(6.0, 0.0, 10.0, 10.0)]);
    let a = fit_to_area(&c, &area, W);
    c.points.reverse();
    let b = fit_to_area(&c, &area, W);
    let total = |v: &Vec<Polygon>| v.iter().map(|l| l.area_mm2().abs()).sum::<f64>();
    assert!((total(&a) - total(&b)).abs() < 1e-9);
}

#[test]
fn ring_walk_wraps() {
    let sq = rect(0.0, 0.0, 1.0, 1.0);
    let mut out = Vec::new();
    ring_walk(&sq, 0.5, 0.7, &mut out);
    assert!(out.is_empty());
    ring_walk(&sq, 0.5, 2.5, &mut out);
    assert_eq!(out, vec![sq.points[1], sq.points[2]]);
    out.clear();
    ring_walk(&sq, 2.5, 0.5, &mut out);
    assert_eq!(out, vec![sq.points[3], sq.points[0]]);
    out.clear();
    ring_walk(&sq, 0.5, 0.2, &mut out);
    assert_eq!(out.len(), 4);
}

#[test]
fn single_loop_is_returned_unchanged() {
    let sq = rect(0.0, 0.0, 5.0, 5.0);
    let (path, bridges) = connect_polygons(std::slice::from_ref(&sq), W, &BridgeCriteria::default()).unwrap();
    assert!(bridges.is_empty());
    assert_eq!(path.points, sq.points);
    assert!(path.closed);
}

#[test]
fn concentric_squares_one_bridge_of_width_length() {
    let outer = rect(0.0, 0.0, 10.0, 10.0);
    let inner = rect(W, W, 10.0 - W, 10.0 - W);
    let inputs = outer.perimeter_mm() + inner.perimeter_mm();
    let (path, bridges) = connect_polygons(&[outer, inner], W, &BridgeCriteria::default()).unwrap();
    assert_eq!(bridges.len(), 1);
    let b = bridges[0];
    assert!((b.length() - W).abs() < 2e-3, "{}", b.length());
    assert!((b.p.dist(b.q) - W).abs() < 1e-9);
    let expected = inputs - 2.0 * W + 2.0 * b.length();
    assert!((path.length_mm() - expected).abs() < 5e-3, "{} vs {expected}", path.length_mm());
    // low curvature keeps the bridge off the corners
    for v in [b.p, b.q] {
        let to_corner = [0.0, 10.0]
            .iter()
            .flat_map(|&x| [0.0, 10.0].map(|y| v.dist(Vec2::new(x, y))))
            .fold(f64::INFINITY, f64::min);
        assert!(to_corner > W);
    }
}

#[test]
fn smallest_loops_connect_first() {
    let outer = rect(0.0, 0.0, 10.0, 10.0);
    let middle = rect(W, W, 10.0 - W, 10.0 - W);
    let small = rect(2.0 * W, 2.0 * W, 3.0, 3.0);
    let (path, bridges) =
        connect_polygons(&[outer.clone(), middle.clone(), small.clone()], W, &BridgeCriteria::default()).unwrap();
    assert_eq!(bridges.len(), 2);
    // the first bridge leaves the small square
    let inside_small = |v: Vec2| v.x <= 3.0 + 1e-9 && v.y <= 3.0 + 1e-9;
    assert!(inside_small(bridges[0].p) && inside_small(bridges[0].q));
    for b in &bridges {
        assert!(b.length() <= MAX_BRIDGE_WIDTHS * W + 1e-9);
    }
    assert!(path.closed && path.points.len() > 8);
}

#[test]
fn far_apart_loops_are_unbridgeable() {
    let a = rect(0.0, 0.0, 2.0, 2.0);
    let b = rect(5.0, 0.0, 7.0, 2.0);
    match connect_polygons(&[a, b], W, &BridgeCriteria::default()) {
        Err(Error::Unbridgeable { cx, .. }) => assert!((cx - 1.0).abs() < 1e-9 || (cx - 6.0).abs() < 1e-9),
        other => panic!("{other:?}"),
    }
}

#[test]
fn most_interior_prefers_the_middle_of_the_boundary() {
    let outer = rect(0.0, 0.0, 10.0, 4.0);
    let inner = rect(W, W, 10.0 - W, 4.0 - W);
    let crit = BridgeCriteria::MostInterior(PolygonSet::new(vec![rect(-5.0, -1.0, 15.0, 5.0)]));
    let (_, bridges) = connect_polygons(&[outer, inner], W, &crit).unwrap();
    let m = (bridges[0].p + bridges[0].q2) * 0.5;
    // the long sides hug the boundary; the middles of the short sides are farthest from it
    assert!((m.x < 1.0 || m.x > 9.0) && (m.y - 2.0).abs() < 0.5, "{m:?}");
}

#[test]
fn walls_and_infill_make_one_path_per_island() {
    let outer = PolygonSet::new(vec![rect(0.0, 0.0, 10.0, 10.0), rect(20.0, 0.0, 30.0, 10.0)]);
    let inner = PolygonSet::new(vec![rect(W, W, 10.0 - W, 10.0 - W), rect(20.0 + W, W, 30.0 - W, 10.0 - W)]);
    let infill = vec![rect(2.0 * W, 2.0 * W, 5.0, 5.0)];
    let plan =
        connect_to_walls(1.0, infill.clone(), vec![outer.clone(), inner.clone()], W, &BridgeCriteria::default(), false);
    assert_eq!(plan.toolpaths.len(), 2);
    assert_eq!(plan.bridges.len(), 3);
    let plan = connect_to_walls(1.0, infill, vec![outer, inner], W, &BridgeCriteria::default(), true);
    assert_eq!(plan.toolpaths.len(), 4);
    assert!(plan.toolpaths.iter().all(|t| t.closed));
}

#[test]
fn infill_out_of_reach_stays_a_separate_path() {
    let outer = PolygonSet::new(vec![rect(0.0, 0.0, 10.0, 10.0)]);
    let infill = vec![rect(4.0, 4.0, 6.0, 6.0)];
    let plan = connect_to_walls(1.0, infill.clone(), vec![outer.clone()], W, &BridgeCriteria::default(), false);
    assert_eq!(plan.toolpaths.len(), 2);
    assert!(plan.bridges.is_empty());
    assert_eq!(plan.unbridged, 1);
    assert!(matches!(
        connect_polygons(&[outer.polygons[0].clone(), infill[0].clone()], W, &BridgeCriteria::default()),
        Err(Error::Unbridgeable { .. })
    ));
}
