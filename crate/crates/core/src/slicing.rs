//! Layer curves: tracing the surface at a height, then clamping and detouring against overlap.

use crate::error::{Error, Result};
use crate::forest::{CellId, FaceSegment, Side, SubdivisionForest, Triangle};
use crate::geometry::{
    point_segment_distance, segment_distance, segments_intersect, Point2, Polyline, Vec2, UNITS_PER_MM,
};
use crate::surface::SurfaceSet;
use serde::Serialize;
use std::collections::HashMap;

/// Height nudge applied when a layer lies exactly on a cell boundary: one fixed-point unit.
pub const SEAM_NUDGE_MM: f64 = 1.0 / UNITS_PER_MM as f64;

/// One closed curve per layer. Vertex `k` lies on the exit face of `cells[k]` and the segment
/// ending at vertex `k` runs through `cells[k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCurve {
    pub z: f64,
    pub points: Vec<Vec2>,
    /// Cell containing the segment that ends at each vertex.
    pub cells: Vec<CellId>,
    /// Shared face each vertex lies on, or `None` for inserted detour vertices.
    pub faces: Vec<Option<FaceSegment>>,
    pub width: f64,
}

impl LayerCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length_mm(&self) -> f64 {
        let n = self.points.len();
        (0..n).map(|i| self.points[i].dist(self.points[(i + 1) % n])).sum()
    }

    /// Segments as point pairs, closing segment included.
    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Distance from `p` to the nearest point of the curve.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.segments().map(|(a, b)| point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Largest horizontal distance from a vertex of this curve to the curve `below`.
    pub fn support_gap(&self, below: &LayerCurve) -> f64 {
        self.points.iter().map(|&p| below.distance_to(p)).fold(0.0, f64::max)
    }

    fn nonzero_segments(&self) -> Vec<(Vec2, Vec2)> {
        self.segments().filter(|(a, b)| a.dist(*b) > 1e-9).collect()
    }

    /// Smallest distance between two segments that do not share a vertex, capped at `limit`.
    /// Zero-length segments are skipped. `None` for curves with fewer than four segments.
    pub fn min_clearance_below(&self, limit: f64) -> Option<f64> {
        let segs = self.nonzero_segments();
        let n = segs.len();
        if n < 4 {
            return None;
        }
        let mut best = limit;
        close_pairs(&segs, limit, |i, j| {
            if j != i + 1 && !(i == 0 && j == n - 1) {
                best = best.min(segment_distance(segs[i].0, segs[i].1, segs[j].0, segs[j].1));
            }
        });
        Some(best)
    }

    /// Exact smallest distance between two segments that do not share a vertex.
    pub fn min_clearance(&self) -> Option<f64> {
        self.min_clearance_below(f64::INFINITY)
    }

    /// No two non-adjacent segments touch and no adjacent pair folds back onto itself.
    pub fn is_simple(&self) -> bool {
        let segs = self.nonzero_segments();
        let n = segs.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let (a0, a1) = segs[i];
            let (b0, b1) = segs[(i + 1) % n];
            if (a1 - a0).cross(b1 - b0).abs() < 1e-12 && (a1 - a0).dot(b1 - b0) < 0.0 {
                return false;
            }
        }
        let mut simple = true;
        close_pairs(&segs, 1e-9, |i, j| {
            if j != i + 1 && !(i == 0 && j == n - 1) && segments_intersect(segs[i].0, segs[i].1, segs[j].0, segs[j].1) {
                simple = false;
            }
        });
        simple
    }

    /// Fixed-point closed polyline with consecutive duplicates removed.
    pub fn to_polyline(&self) -> Polyline {
        let mut pts: Vec<Point2> = Vec::with_capacity(self.points.len());
        for &p in &self.points {
            let q = Point2::from_vec(p);
            if pts.last() != Some(&q) {
                pts.push(q);
            }
        }
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        Polyline { points: pts, closed: true }
    }
}

/// Calls `f(i, j)` with `i < j` for every pair of segments whose bounding boxes come within
/// `radius` of each other, and possibly some more. An infinite radius visits all pairs.
fn close_pairs(segs: &[(Vec2, Vec2)], radius: f64, mut f: impl FnMut(usize, usize)) {
    let n = segs.len();
    if !radius.is_finite() || n < 64 {
        for i in 0..n {
            for j in i + 1..n {
                f(i, j);
            }
        }
        return;
    }
    let mean = segs.iter().map(|(a, b)| a.dist(*b)).sum::<f64>() / n as f64;
    let cell = mean.max(radius).max(1e-6);
    let half = 0.5 * radius;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segs.iter().enumerate() {
        let (x0, x1) = (a.x.min(b.x) - half, a.x.max(b.x) + half);
        let (y0, y1) = (a.y.min(b.y) - half, a.y.max(b.y) + half);
        for gx in (x0 / cell).floor() as i64..=(x1 / cell).floor() as i64 {
            for gy in (y0 / cell).floor() as i64..=(y1 / cell).floor() as i64 {
                grid.entry((gx, gy)).or_default().push(k);
            }
        }
    }
    let mut keys: Vec<_> = grid.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let list = &grid[&key];
        for (x, &i) in list.iter().enumerate() {
            for &j in &list[x + 1..] {
                f(i.min(j), i.max(j));
            }
        }
    }
}

/// Height actually sliced for a requested layer height: nudged up off cell seams.
pub fn effective_z(forest: &SubdivisionForest, z: f64) -> f64 {
    let mut z_eff = z;
    // seams sit on multiples of the finest cell height
    let finest = forest.height_at(forest.max_depth());
    let rel = (z - forest.origin()[2]) / finest;
    if (rel - rel.round()).abs() * finest < 1e-9 {
        z_eff += SEAM_NUDGE_MM;
    }
    z_eff
}

/// Traces the curve at `z`, starting in the leaf nearest `start_hint` and following right-links.
pub fn trace_layer(forest: &SubdivisionForest, surface: &SurfaceSet, z: f64, start_hint: Vec2) -> Result<LayerCurve> {
    let zs = effective_z(forest, z);
    let [x0, y0, z0] = forest.origin();
    let l = forest.l_init();
    let inset = 1e-6 * l;
    let hint =
        Vec2::new(start_hint.x.clamp(x0 + inset, x0 + l - inset), start_hint.y.clamp(y0 + inset, y0 + l - inset));
    let zc = zs.clamp(z0, z0 + l - SEAM_NUDGE_MM);
    let start = forest.leaf_at(hint, zc).ok_or(Error::TraversalNotClosed { z, steps: 0 })?;
    let mut cells = vec![start];
    let mut points = Vec::new();
    let mut faces = Vec::new();
    let mut cur = start;
    let limit = forest.leaf_count() + 1;
    loop {
        let Some(i) = surface.exit_interface(cur, zc) else {
            return Err(Error::TraversalNotClosed { z, steps: cells.len() });
        };
        let it = &surface.interfaces[i];
        points.push(it.edge.point_at(zc));
        faces.push(Some(it.edge.segment));
        cur = it.right;
        debug_assert!(forest.cell(cur).links(Side::Left).contains(&it.left));
        if cur == start {
            break;
        }
        if cells.len() > limit {
            return Err(Error::TraversalNotClosed { z, steps: cells.len() });
        }
        cells.push(cur);
    }
    Ok(LayerCurve { z: zc, points, cells, faces, width: forest.line_width() })
}

/// Interior angle of `tri` at `p`, or `None` when `p` is not one of its corners.
fn corner_angle(tri: &Triangle, p: Vec2) -> Option<f64> {
    let tol = 1e-6 * tri.cathetus();
    if p.dist(tri.c) < tol {
        Some(std::f64::consts::FRAC_PI_2)
    } else if p.dist(tri.a) < tol || p.dist(tri.b) < tol {
        Some(std::f64::consts::FRAC_PI_4)
    } else {
        None
    }
}

/// Along-face distance from `end` that keeps a point `half_w` away from the other faces of the
/// prisms meeting there. Zero when neither prism has a corner at `end`.
fn end_margin(tris: [&Triangle; 2], end: Vec2, half_w: f64) -> f64 {
    tris.iter().filter_map(|t| corner_angle(t, end)).map(|a| half_w / a.sin()).fold(0.0, f64::max)
}

/// Closest point of `seg` to `p` at least `m0` from `seg.from` and `m1` from `seg.to`. When the
/// margins overlap, the point splits the face in the ratio of the margins.
fn clamp_on_face(seg: &FaceSegment, p: Vec2, m0: f64, m1: f64) -> Vec2 {
    let len = seg.length();
    if m0 + m1 >= len {
        return seg.at(m0 / (m0 + m1));
    }
    let t = seg.param_of(p);
    let tc = t.clamp(m0 / len, 1.0 - m1 / len);
    if tc == t {
        p
    } else {
        seg.at(tc)
    }
}

/// Moves every vertex at least `w / 2` away from the faces of the prisms beyond the ends of the
/// face it sits on.
pub fn clamp_endpoints(forest: &SubdivisionForest, curve: &LayerCurve, w: f64) -> LayerCurve {
    let mut out = curve.clone();
    let n = curve.len();
    for k in 0..n {
        let Some(seg) = curve.faces[k] else { continue };
        let tris = [&forest.cell(curve.cells[k]).triangle, &forest.cell(curve.cells[(k + 1) % n]).triangle];
        let m0 = end_margin(tris, seg.from, 0.5 * w);
        let m1 = end_margin(tris, seg.to, 0.5 * w);
        out.points[k] = clamp_on_face(&seg, curve.points[k], m0, m1);
    }
    out
}

/// Angle in radians between a segment direction and a face line, in `[0, π/2]`.
fn angle_to_face(dir: Vec2, seg: &FaceSegment) -> f64 {
    let f = seg.to - seg.from;
    let c = (dir.dot(f) / (dir.norm() * f.norm())).abs().min(1.0);
    c.acos()
}

/// Inserts a vertex `w·√2/2` from each face vertex whose adjacent segment meets the face at
/// less than 45°, so that the path turns off the face at 45° instead.
pub fn detour_sharp_turns(curve: &LayerCurve, w: f64) -> LayerCurve {
    let n = curve.points.len();
    let mut out =
        LayerCurve { z: curve.z, points: Vec::new(), cells: Vec::new(), faces: Vec::new(), width: curve.width };
    let limit = std::f64::consts::FRAC_PI_4 - 1e-9;
    let d = 0.5 * w;
    for k in 0..n {
        let v = curve.points[k];
        let prev = curve.points[(k + n - 1) % n];
        let next = curve.points[(k + 1) % n];
        let Some(seg) = curve.faces[k] else {
            out.points.push(v);
            out.cells.push(curve.cells[k]);
            out.faces.push(None);
            continue;
        };
        let along = (seg.to - seg.from).normalized();
        let side_of = |p: Vec2| -> Option<Vec2> {
            // unit normal of the face pointing toward p, and the along-face direction toward p
            let off = p - v;
            if off.norm() < 1e-9 {
                return None;
            }
            let nrm = along.perp();
            let nrm = if nrm.dot(off) >= 0.0 { nrm } else { nrm * -1.0 };
            let u = if along.dot(off) >= 0.0 { along } else { along * -1.0 };
            Some(nrm * d + u * d)
        };
        let incoming_sharp = (v - prev).norm() > 1e-9 && angle_to_face(v - prev, &seg) < limit;
        let outgoing_sharp = (next - v).norm() > 1e-9 && angle_to_face(next - v, &seg) < limit;
        if incoming_sharp {
            if let Some(off) = side_of(prev) {
                out.points.push(v + off);
                out.cells.push(curve.cells[k]);
                out.faces.push(None);
            }
        }
        out.points.push(v);
        out.cells.push(curve.cells[k]);
        out.faces.push(Some(seg));
        if outgoing_sharp {
            if let Some(off) = side_of(next) {
                out.points.push(v + off);
                out.cells.push(curve.cells[(k + 1) % n]);
                out.faces.push(None);
            }
        }
    }
    out
}

/// Trace, clamp and detour in one go.
pub fn slice_layer(forest: &SubdivisionForest, surface: &SurfaceSet, z: f64, start_hint: Vec2) -> Result<LayerCurve> {
    let w = forest.line_width();
    let raw = trace_layer(forest, surface, z, start_hint)?;
    Ok(detour_sharp_turns(&clamp_endpoints(forest, &raw, w), w))
}
