#![allow(dead_code)]

use crossfill::density_field::DensityField;
use crossfill::forest::{CellId, SubdivisionForest};
use crossfill::geometry::{Point2, Polygon, PolygonSet, Vec2};
use crossfill::grading::GradingReport;
use crossfill::pipeline::{Structure, StructureParams};
use crossfill::slicing::{trace_layer, LayerCurve};
use crossfill::surface::enforce_continuity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const W: f64 = 0.38;

/// Every leaf at `depth` on a `2^i w` cube, with its continuous surface.
pub fn uniform_structure(i: u32, depth: u32) -> Structure {
    let mut forest = SubdivisionForest::new(2f64.powi(i as i32) * W, W, depth).unwrap();
    forest.subdivide_uniform(depth).unwrap();
    let surface = enforce_continuity(&forest).unwrap();
    Structure { forest, surface, report: GradingReport::default() }
}

/// A blocky field with a few voxels per axis and densities in [0.02, 0.9].
pub fn random_field(rng: &mut ChaCha8Rng, side: f64) -> DensityField {
    let dims = [rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6)];
    let size = [side / dims[0] as f64, side / dims[1] as f64, side / dims[2] as f64];
    let values = (0..dims[0] * dims[1] * dims[2]).map(|_| rng.gen_range(0.02..0.9)).collect();
    DensityField::new(dims, size, [0.0; 3], values).unwrap()
}

/// Dithered structure of a random field on a `2^i w` cube.
pub fn dithered_structure(rng: &mut ChaCha8Rng, i: u32, max_depth: u32) -> Structure {
    let side = 2f64.powi(i as i32) * W;
    let field = random_field(rng, side);
    let mut params = StructureParams::cube(side, W);
    params.max_depth = max_depth;
    Structure::build(&field, &params, &[]).unwrap()
}

/// Angle in degrees between each segment and the face its end vertices lie on.
pub fn turning_angles(c: &LayerCurve) -> Vec<f64> {
    let n = c.points.len();
    let mut out = Vec::new();
    for k in 0..n {
        let Some(face) = c.faces[k] else { continue };
        let f = face.to - face.from;
        for (a, b) in [(c.points[(k + n - 1) % n], c.points[k]), (c.points[k], c.points[(k + 1) % n])] {
            let s = b - a;
            if s.norm() < 1e-6 {
                continue;
            }
            let cos = (s.dot(f).abs() / (s.norm() * f.norm())).min(1.0);
            out.push(cos.acos().to_degrees());
        }
    }
    out
}

/// Mean of point samples of `field`, uniform over the prism of `id`.
pub fn monte_carlo(field: &DensityField, forest: &SubdivisionForest, id: CellId, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = forest.cell(id);
    let t = &c.triangle;
    let mut sum = 0.0;
    for _ in 0..samples {
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = t.c + (t.a - t.c) * u + (t.b - t.c) * v;
        let z = c.z_min + rng.gen::<f64>() * (c.z_max - c.z_min);
        sum += field.sample(p.x, p.y, z);
    }
    sum / samples as f64
}

fn inside(area: &PolygonSet, p: Vec2) -> bool {
    // even-odd ray cast over all rings
    let mut odd = false;
    for ring in &area.polygons {
        let n = ring.points.len();
        for i in 0..n {
            let a = ring.points[i].to_vec();
            let b = ring.points[(i + 1) % n].to_vec();
            if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
                odd = !odd;
            }
        }
    }
    odd
}

/// Length of `line` inside `area`, by testing `per_segment` midpoints of equal sub-steps.
pub fn sampled_length_inside(line: &[Point2], area: &PolygonSet, per_segment: usize) -> f64 {
    let mut total = 0.0;
    for w in line.windows(2) {
        let (a, b) = (w[0].to_vec(), w[1].to_vec());
        let step = a.dist(b) / per_segment as f64;
        let hits = (0..per_segment).filter(|&i| inside(area, a.lerp(b, (i as f64 + 0.5) / per_segment as f64))).count();
        total += hits as f64 * step;
    }
    total
}

pub struct SplitFixture {
    pub curve: LayerCurve,
    pub outline: PolygonSet,
}

/// Two bodies and a lobe joined by necks `3.5w` wide, over a uniform `2^5 w` structure. Two
/// walls stay connected through the necks while the infill area falls apart into three
/// pieces; the lobe lies beyond the cube, so the curve never reaches it.
pub fn split_fixture() -> SplitFixture {
    let s = uniform_structure(5, 6);
    let curve = trace_layer(&s.forest, &s.surface, 6.05, Vec2::new(0.0, 0.0)).unwrap();
    let neck = 3.5 * W;
    let (y0, y1) = (6.0 - neck / 2.0, 6.0 + neck / 2.0);
    let outline = Polygon::from_mm(&[
        (0.5, 0.5),
        (5.5, 0.5),
        (5.5, y0),
        (6.5, y0),
        (6.5, 0.5),
        (11.5, 0.5),
        (11.5, 4.5 + 0.3),
        (11.5, y0),
        (12.5, y0),
        (12.5, 4.5),
        (15.5, 4.5),
        (15.5, 7.5),
        (12.5, 7.5),
        (12.5, y1),
        (11.5, y1),
        (11.5, 11.5),
        (6.5, 11.5),
        (6.5, y1),
        (5.5, y1),
        (5.5, 11.5),
        (0.5, 11.5),
    ]);
    SplitFixture { curve, outline: PolygonSet::new(vec![outline]).normalize_orientation() }
}

/// Smallest distance between segments whose nearest ends are more than `arc` apart along the
/// closed curve.
pub fn clearance_beyond_arc(c: &LayerCurve, arc: f64) -> f64 {
    let n = c.points.len();
    let mut cum = vec![0.0];
    for (a, b) in c.segments() {
        cum.push(cum.last().unwrap() + a.dist(b));
    }
    let total = cum[n];
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            // gap between segment i ending at cum[i+1] and segment j starting at cum[j], both ways round
            let gap = (cum[j] - cum[i + 1]).min(total - cum[j + 1] + cum[i]);
            if gap <= arc {
                continue;
            }
            let (a0, a1) = (c.points[i], c.points[(i + 1) % n]);
            let (b0, b1) = (c.points[j], c.points[(j + 1) % n]);
            best = best.min(crossfill::geometry::segment_distance(a0, a1, b0, b1));
        }
    }
    best
}
