//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with the measured numbers.

mod common;

use common::*;
use crossfill::analysis::{
    calibrate_compensation, local_error_curve, predicted_density, realized_density, sample_range, CubeSetup, Region,
    TestSpec,
};
use crossfill::density_field::DensityField;
use crossfill::export::{write_outputs, PrintProfile};
use crossfill::forest::{default_max_depth, Route, SubdivisionForest};
use crossfill::geometry::{clip_polyline_to_area, offset_polygons, Point2, Polygon, PolygonSet, Vec2};
use crossfill::grading::{build_lower_bound, dither, DiffusionWeights};
use crossfill::infill_fit::{connect_to_walls, fit_to_area, BridgeCriteria, MAX_BRIDGE_WIDTHS};
use crossfill::pipeline::{layer_heights, run_slice, walls_and_infill_area, DensityConfig, RunConfig};
use crossfill::slicing::{slice_layer, trace_layer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(n: u32, label: &str, pass: bool, detail: String) {
    println!("[{n:>2}] {label}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{label}: {detail}");
}

#[test]
fn closed_simple_curves_with_right_turns() {
    let start = Instant::now();
    let profile = PrintProfile::default();
    let mut layers = 0;
    let mut failures = Vec::new();
    for depth in 0..=10 {
        let s = uniform_structure(6, depth);
        let l = s.forest.l_init();
        for z in layer_heights(0.0, l, &profile) {
            layers += 1;
            let c = match trace_layer(&s.forest, &s.surface, z, Vec2::new(0.0, 0.0)) {
                Ok(c) => c,
                Err(e) => {
                    failures.push(format!("depth {depth} z {z:.2}: {e}"));
                    continue;
                }
            };
            if !c.is_simple() {
                failures.push(format!("depth {depth} z {z:.2}: not simple"));
            }
            if let Some(a) = turning_angles(&c).into_iter().find(|a| (a - 45.0).abs() > 1e-6 && (a - 90.0).abs() > 1e-6)
            {
                failures.push(format!("depth {depth} z {z:.2}: turning angle {a}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "closed simple layer curves, turns of 45 or 90 degrees",
        failures.is_empty() && secs < 10.0,
        format!("{layers} layers, {} failures {:?}, {secs:.2} s", failures.len(), failures.first()),
    );
}

#[test]
fn realized_density_follows_the_cell_formula() {
    // the 1/3 average holds once the route ratio has converged; every depth is checked against
    // the sum over its actual cells
    let profile = PrintProfile::default();
    let (mut worst_cells, mut worst_third) = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    let mut forty = 0.0;
    for depth in 0..=8 {
        let s = uniform_structure(6, depth);
        let plans = crossfill::pipeline::cube_plans(&s, &profile).unwrap();
        let realized = realized_density(&plans, &Region::of_forest(&s.forest), &profile);
        let cells = predicted_density(&s.forest);
        worst_cells = worst_cells.max((realized - cells).abs() / cells);
        let cath = s.forest.cathetus_at(depth);
        let third = (2.0f64.sqrt() + 2.0) / 3.0 * W / cath;
        if depth >= 5 {
            worst_third = worst_third.max((realized - third).abs() / third);
        }
        rows.push(format!("d{depth}: {realized:.4}/{cells:.4}/{third:.4}"));
        if (cath - 2.0 * 2f64.sqrt() * W).abs() < 1e-9 {
            forty = realized;
        }
    }
    report(
        2,
        "uniform realized density within 5% of the cell formula, 40% +- 2% at cathetus 2*sqrt(2)*w",
        worst_cells <= 0.05 && worst_third <= 0.05 && (forty - 0.40).abs() <= 0.02,
        format!(
            "worst relative {worst_cells:.4} vs cells, {worst_third:.4} vs 1/3 average from depth 5; at 2*sqrt(2)*w {forty:.4}; realized/cells/third {}",
            rows.join(" ")
        ),
    );
}

#[test]
fn route_fractions_converge_to_a_third() {
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for depth in [10, 11] {
        let mut f = SubdivisionForest::new(64.0 * W, W, depth).unwrap();
        f.subdivide_uniform(depth).unwrap();
        let n = f.leaf_count() as f64;
        let count = |r: Route| f.leaves().filter(|&id| f.cell(id).kind.route == r).count() as f64 / n;
        let fr = [count(Route::A), count(Route::L), count(Route::R)];
        for x in fr {
            worst = worst.max((x - 1.0 / 3.0).abs());
        }
        rows.push(format!("depth {depth}: {:.4}/{:.4}/{:.4}", fr[0], fr[1], fr[2]));
    }
    report(
        3,
        "A:L:R leaf fractions within 0.01 of 1/3",
        worst <= 0.01,
        format!("{} (worst {worst:.4})", rows.join(", ")),
    );
}

#[test]
fn full_density_request_hits_the_cap() {
    let l = 32.0 * W;
    let mut f = SubdivisionForest::new(l, W, 8).unwrap();
    let field = DensityField::uniform(1.0, [4, 4, 4], [l / 4.0; 3], [0.0; 3]).unwrap();
    build_lower_bound(&mut f, &field);
    dither(&mut f, &field, &DiffusionWeights::default());
    let rho = predicted_density(&f);
    let cap = (1.0 + 2f64.sqrt()) / 3.0;
    report(4, "requesting 100% gives the 80.47% cap", (rho - 0.8047).abs() <= 0.005, format!("{rho:.5}, cap {cap:.5}"));
}

#[test]
fn lower_bound_postcondition_on_random_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut leaves = 0;
    for _ in 0..50 {
        let field = random_field(&mut rng, 16.0 * W);
        let mut f = SubdivisionForest::new(16.0 * W, W, 7).unwrap();
        build_lower_bound(&mut f, &field);
        if f.audit().is_err() {
            violations += 1;
        }
        for id in f.leaves() {
            leaves += 1;
            let c = f.cell(id);
            if c.depth < f.max_depth() && f.mass_after_subdivision(id) < field.target_mass(c) {
                violations += 1;
            }
        }
    }
    report(
        5,
        "lower bound: M_N >= M_T or max depth, linked levels differ by at most one",
        violations == 0,
        format!("{leaves} leaves, {violations} violations"),
    );
}

#[test]
fn dithering_lowers_local_error_and_ranks_specs() {
    let start = Instant::now();
    let profile = PrintProfile::default();
    let kernel = 16.0 * W;
    let run = |spec: TestSpec, dithered: bool| -> f64 {
        let mut cube = CubeSetup::new(6, profile);
        cube.dither = dithered;
        let side = cube.side();
        let field = spec.field(side, 64).unwrap();
        let (_, plans) = cube.run(&field).unwrap();
        local_error_curve(&field, &plans, &Region::cube([0.0; 3], side), &[kernel], &profile)[0].1
    };
    let mut ok = true;
    let mut rows = Vec::new();
    let mut smooth_worst = 0.0f64;
    for spec in [TestSpec::Gradient, TestSpec::Homogeneous(0.2), TestSpec::Homogeneous(0.4)] {
        let (d, lb) = (run(spec, true), run(spec, false));
        ok &= d < lb;
        smooth_worst = smooth_worst.max(d);
        rows.push(format!("{} {d:.4} < {lb:.4}", spec.name()));
    }
    let gradient = run(TestSpec::Gradient, true);
    let plane = run(TestSpec::ContrastPlane, true);
    let shell = run(TestSpec::SphereShell, true);
    ok &= smooth_worst < plane && plane < shell;
    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        "dithering beats lower bound at 16w; smooth < contrast plane < sphere shell",
        ok && secs < 120.0,
        format!("{}; gradient {gradient:.4}, plane {plane:.4}, shell {shell:.4}; {secs:.1} s", rows.join(", ")),
    );
}

#[test]
fn dropped_error_accounts_for_the_mass_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut fields: Vec<DensityField> = (0..20).map(|_| random_field(&mut rng, 32.0 * W)).collect();
    for spec in [
        TestSpec::Gradient,
        TestSpec::Homogeneous(0.2),
        TestSpec::Homogeneous(0.4),
        TestSpec::ContrastPlane,
        TestSpec::SphereShell,
    ] {
        fields.push(spec.field(32.0 * W, 32).unwrap());
    }
    for field in &fields {
        let mut f = SubdivisionForest::new(32.0 * W, W, 8).unwrap();
        build_lower_bound(&mut f, field);
        let stats = dither(&mut f, field, &DiffusionWeights::default());
        let target: f64 = f.roots().iter().map(|&r| field.target_mass(f.cell(r))).sum();
        let realized = f.total_current_mass();
        let rel = ((target - realized) - stats.dropped_error).abs() / target;
        worst = worst.max(rel);
    }
    report(
        7,
        "target - realized mass equals dropped error",
        worst <= 1e-6,
        format!("{} fields, worst relative {worst:.2e}", fields.len()),
    );
}

#[test]
fn toolpaths_keep_clear_of_themselves() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::INFINITY;
    let mut below = 0;
    let mut beyond_arc = f64::INFINITY;
    for _ in 0..100 {
        let s = dithered_structure(&mut rng, 5, default_max_depth(32.0 * W, W));
        let z = rng.gen::<f64>() * s.forest.l_init();
        let c = slice_layer(&s.forest, &s.surface, z, Vec2::new(0.0, 0.0)).unwrap();
        let d = c.min_clearance_below(W).unwrap_or(W);
        if d < 0.95 * W {
            below += 1;
        }
        worst = worst.min(d);
        beyond_arc = beyond_arc.min(clearance_beyond_arc(&c, W));
    }
    println!("[ 8] diagnostic: closest pair more than w apart along the curve {:.3}w", beyond_arc / W);
    report(
        8,
        "non-consecutive segments at least 0.95w apart",
        worst >= 0.95 * W,
        format!("closest {:.3}w, {below}/100 layers below 0.95w", worst / W),
    );
}

#[test]
fn every_layer_rests_on_the_one_below() {
    let profile = PrintProfile::default();
    let limit = profile.layer_height * 55f64.to_radians().tan() + 0.5 * W;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for _ in 0..4 {
        let s = dithered_structure(&mut rng, 5, 8);
        let zs = layer_heights(0.0, s.forest.l_init(), &profile);
        let curves = s.slice_all(&zs).unwrap();
        for pair in curves.windows(2) {
            worst = worst.max(pair[1].support_gap(&pair[0]));
            pairs += 1;
        }
    }
    report(
        9,
        "layer vertices within lh*tan(55)+w/2 of the layer below",
        worst <= limit,
        format!("{pairs} layer pairs, worst {worst:.4} mm, limit {limit:.4} mm"),
    );
}

#[test]
fn continuity_holds_and_enforcement_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut gaps = 0;
    let mut not_idempotent = 0;
    for _ in 0..100 {
        let s = dithered_structure(&mut rng, 5, 7);
        for _ in 0..20 {
            let z = rng.gen::<f64>() * s.forest.l_init();
            gaps += s.surface.horizontal_gaps(&s.forest, z).len();
        }
        let mut again = s.surface.clone();
        let n = again.adjustments.len();
        again.enforce(&s.forest);
        if again.adjustments.len() != n || again.interfaces != s.surface.interfaces {
            not_idempotent += 1;
        }
    }
    report(
        10,
        "no slice discontinuities, second enforcement is a no-op",
        gaps == 0 && not_idempotent == 0,
        format!("100 forests x 20 z: {gaps} gaps, {not_idempotent} changed on second pass"),
    );
}

#[test]
fn fit_and_bridge_gives_one_path() {
    let fx = split_fixture();
    let (walls, area) = walls_and_infill_area(&fx.outline, 2, W);
    let infill = fit_to_area(&fx.curve, &area, W);
    let shrunk = offset_polygons(&area, -0.5 * W);
    let orphans = infill.iter().filter(|l| shrunk.polygons.iter().any(|p| same_ring(p, l))).count();
    let plan = connect_to_walls(fx.curve.z, infill.clone(), walls, W, &BridgeCriteria::default(), false);
    let longest = plan.bridges.iter().map(|b| b.length()).fold(0.0, f64::max);
    let path = &plan.toolpaths[0];
    let euler = path.closed && path.segments().len() == path.points.len();
    report(
        11,
        "fit-and-bridge fixture gives one closed path, bridges <= 1.5w, Euler check",
        plan.toolpaths.len() == 1
            && longest <= MAX_BRIDGE_WIDTHS * W + 1e-9
            && euler
            && infill.len() >= 3
            && orphans >= 1,
        format!(
            "{} infill loops ({orphans} orphan), {} bridges, longest {:.3}w, {} paths",
            infill.len(),
            plan.bridges.len(),
            longest / W,
            plan.toolpaths.len()
        ),
    );
}

#[test]
fn compensation_closes_the_loop() {
    let start = Instant::now();
    let cube = CubeSetup::new(5, PrintProfile::default());
    let curve = calibrate_compensation(&cube, &sample_range(0.01, 0.80, 17)).unwrap();
    let input = curve.inverse(0.30);
    let realized = cube.realized_homogeneous(input).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        12,
        "calibrated 30% request realizes 30% +- 2%",
        (realized - 0.30).abs() <= 0.02 && secs < 300.0,
        format!("input {input:.4}, realized {realized:.4}, {secs:.1} s"),
    );
}

#[test]
fn integration_and_clipping_match_sampling_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_density = 0.0f64;
    for i in 0..50 {
        let field = random_field(&mut rng, 16.0 * W);
        let mut f = SubdivisionForest::new(16.0 * W, W, 6).unwrap();
        let depth = rng.gen_range(0..=6);
        f.subdivide_uniform(depth).unwrap();
        let leaves: Vec<_> = f.leaves().collect();
        let id = leaves[rng.gen_range(0..leaves.len())];
        let exact = field.target_density(f.cell(id));
        let mc = monte_carlo(&field, &f, id, 200_000, i as u64);
        worst_density = worst_density.max((exact - mc).abs());
    }
    let mut worst_clip = 0.0f64;
    for _ in 0..200 {
        let area = random_area(&mut rng);
        let line: Vec<Point2> = (0..rng.gen_range(2..8))
            .map(|_| Point2::from_mm(rng.gen_range(-1.0..11.0), rng.gen_range(-1.0..11.0)))
            .collect();
        let clipped: f64 = clip_polyline_to_area(&line, &area).iter().map(|p| p.length_mm()).sum();
        let sampled = sampled_length_inside(&line, &area, 20_000);
        let total: f64 = line.windows(2).map(|w| w[0].dist(w[1])).sum();
        worst_clip = worst_clip.max((clipped - sampled).abs() / total.max(1e-9));
    }
    report(
        13,
        "prism integration vs Monte Carlo within 0.005, clipping vs point sampling",
        worst_density <= 0.005 && worst_clip <= 2e-3,
        format!("density worst {worst_density:.5}, clip worst relative {worst_clip:.2e}"),
    );
}

#[test]
fn slicing_twice_gives_identical_bytes() {
    let config = RunConfig {
        cube_size: Some(12.16),
        density: DensityConfig { homogeneous: Some(0.2), ..Default::default() },
        ..RunConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run_slice(&config).unwrap();
        write_outputs(d.path(), &out.gcode, &out.svgs, &out.stats).unwrap();
    }
    let read = |i: usize, name: &str| std::fs::read(dirs[i].path().join(name)).unwrap();
    let same = ["out.gcode", "stats.json"].iter().all(|n| read(0, n) == read(1, n));
    report(
        14,
        "two slice runs produce byte-identical gcode and stats",
        same,
        format!("{} bytes of gcode", read(0, "out.gcode").len()),
    );
}

fn same_ring(a: &Polygon, b: &Polygon) -> bool {
    a.len() == b.len() && a.points.iter().all(|p| b.points.contains(p))
}

fn random_area(rng: &mut ChaCha8Rng) -> PolygonSet {
    // a star-shaped ring with an optional square hole
    let c = (5.0, 5.0);
    let n = rng.gen_range(3..10);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let r = rng.gen_range(2.5..5.0);
            (c.0 + r * a.cos(), c.1 + r * a.sin())
        })
        .collect();
    let mut polys = vec![Polygon::from_mm(&pts)];
    if rng.gen_bool(0.5) {
        polys.push(Polygon::rect_mm(4.0, 4.0, 6.0, 6.0).reversed());
    }
    PolygonSet::new(polys).normalize_orientation()
}
