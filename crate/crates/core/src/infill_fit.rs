//! Trimming the layer curve to the model and joining every piece into one extrusion path.

use crate::error::{Error, Result};
use crate::geometry::{
    clip_polyline_to_area, offset_polygons, point_segment_distance, segment_distance, Point2, Polygon, PolygonSet,
    Polyline, Vec2,
};
use crate::slicing::LayerCurve;
use serde::Serialize;
use std::collections::HashMap;

/// Where a point sits on a ring: ring index and `edge + t`.
#[derive(Debug, Clone, Copy)]
struct RingPos {
    ring: usize,
    key: f64,
}

fn locate_on_rings(rings: &[Polygon], p: Point2) -> RingPos {
    let v = p.to_vec();
    let mut best = (f64::INFINITY, RingPos { ring: 0, key: 0.0 });
    for (r, ring) in rings.iter().enumerate() {
        let n = ring.len();
        for i in 0..n {
            let a = ring.points[i].to_vec();
            let b = ring.points[(i + 1) % n].to_vec();
            let d = point_segment_distance(v, a, b);
            if d < best.0 {
                let ab = b - a;
                let len2 = ab.dot(ab);
                let t = if len2 == 0.0 { 0.0 } else { ((v - a).dot(ab) / len2).clamp(0.0, 1.0 - 1e-12) };
                best = (d, RingPos { ring: r, key: i as f64 + t });
            }
        }
    }
    best.1
}

/// Ring vertices strictly after `from` up to and including the last vertex before `to`,
/// walking forward. A full turn when `to` is not ahead of `from` on the same edge.
fn ring_walk(ring: &Polygon, from: f64, to: f64, out: &mut Vec<Point2>) {
    let n = ring.len();
    let i0 = from.floor() as usize;
    let i1 = to.floor() as usize;
    let steps = match (i1 + n - i0) % n {
        0 if to > from => 0,
        0 => n,
        s => s,
    };
    for k in 1..=steps {
        out.push(ring.points[(i0 + k) % n]);
    }
}

fn push_unique(out: &mut Vec<Point2>, p: Point2) {
    if out.last() != Some(&p) {
        out.push(p);
    }
}

fn finish_loop(mut pts: Vec<Point2>) -> Option<Polygon> {
    while pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    (pts.len() >= 3).then(|| Polygon::new(pts))
}

/// Intersects the curve with `infill_area` shrunk by `w / 2`. Open pieces are closed along the
/// shrunk boundary, walking each ring in its own orientation, so the loops bound the part of the
/// area enclosed by the curve. Outer rings around regions the curve never reaches come back as
/// loops of their own; untouched holes only when the curve encloses them.
pub fn fit_to_area(curve: &LayerCurve, infill_area: &PolygonSet, w: f64) -> Vec<Polygon> {
    let area = offset_polygons(infill_area, -0.5 * w).normalize_orientation();
    let mut points = curve.to_polyline().points;
    if points.len() < 3 || area.is_empty() {
        return Vec::new();
    }
    let curve_poly = Polygon::new(points.clone());
    if !curve_poly.is_ccw() {
        points.reverse();
    }
    let curve_poly = Polygon::new(points.clone());

    let pieces = clip_polyline_to_area(&points, &area);
    let mut loops = Vec::new();
    let rings = &area.polygons;
    let mut touched = vec![false; rings.len()];
    let mut open: Vec<(Vec<Point2>, RingPos, RingPos)> = Vec::new();
    for piece in pieces {
        if piece.closed {
            loops.extend(finish_loop(piece.points));
            continue;
        }
        let s = locate_on_rings(rings, piece.points[0]);
        let e = locate_on_rings(rings, *piece.points.last().unwrap());
        touched[s.ring] = true;
        touched[e.ring] = true;
        open.push((piece.points, s, e));
    }

    let mut used = vec![false; open.len()];
    for first in 0..open.len() {
        if used[first] {
            continue;
        }
        let mut pts = Vec::new();
        let mut k = first;
        loop {
            used[k] = true;
            for &p in &open[k].0 {
                push_unique(&mut pts, p);
            }
            let exit = open[k].2;
            // next entry forward along the same ring
            let next = (0..open.len()).filter(|&j| open[j].1.ring == exit.ring).min_by(|&a, &b| {
                let da = ahead(exit.key, open[a].1.key, rings[exit.ring].len());
                let db = ahead(exit.key, open[b].1.key, rings[exit.ring].len());
                da.total_cmp(&db)
            });
            let Some(j) = next else { break };
            ring_walk(&rings[exit.ring], exit.key, open[j].1.key, &mut pts);
            if j == first || used[j] {
                break;
            }
            k = j;
        }
        loops.extend(finish_loop(pts));
    }

    for (r, ring) in rings.iter().enumerate() {
        if touched[r] || ring.len() < 3 {
            continue;
        }
        // an outer ring is an orphan unless the curve lies inside it; a hole counts when enclosed
        let keep = if ring.is_ccw() {
            !points.iter().any(|&p| area_contains(ring, p))
        } else {
            area_contains(&curve_poly, ring.points[0])
        };
        if keep {
            loops.push(ring.clone());
        }
    }
    loops
}

/// Forward distance in ring keys from `from` to `to`; a full turn for `to == from`.
fn ahead(from: f64, to: f64, n: usize) -> f64 {
    let d = to - from;
    if d > 0.0 {
        d
    } else {
        d + n as f64
    }
}

fn area_contains(poly: &Polygon, p: Point2) -> bool {
    crate::geometry::point_in_polygon(p, poly) != crate::geometry::Containment::Outside
}

/// Longest bridge accepted, in line widths.
pub const MAX_BRIDGE_WIDTHS: f64 = 1.5;
/// Clearance a bridge keeps from toolpath segments away from its own attachment points.
pub const BRIDGE_CLEARANCE_WIDTHS: f64 = 0.95;

/// Two parallel legs `p → p2` and `q → q2` replacing the arcs `p..q` and `p2..q2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bridge {
    pub p: Vec2,
    pub q: Vec2,
    pub p2: Vec2,
    pub q2: Vec2,
}

impl Bridge {
    /// Length of the longer leg.
    pub fn length(&self) -> f64 {
        self.p.dist(self.p2).max(self.q.dist(self.q2))
    }
}

/// How to choose among valid bridge positions.
#[derive(Debug, Clone, Default)]
pub enum BridgeCriteria {
    /// Least turning of both loops around the attachment points.
    #[default]
    LowCurvature,
    /// Farthest from the given boundary, e.g. the outer wall.
    MostInterior(PolygonSet),
}

/// A closed loop with cumulative arc lengths; `cum[i]` is the arc length at vertex `i`.
#[derive(Debug, Clone)]
struct Loop {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Loop {
    fn new(mut pts: Vec<Vec2>) -> Self {
        pts.dedup_by(|a, b| a.dist(*b) < 1e-9);
        while pts.len() > 1 && pts[0].dist(pts[pts.len() - 1]) < 1e-9 {
            pts.pop();
        }
        let n = pts.len();
        let mut cum = Vec::with_capacity(n + 1);
        let mut s = 0.0;
        for i in 0..n {
            cum.push(s);
            s += pts[i].dist(pts[(i + 1) % n]);
        }
        cum.push(s);
        Self { pts, cum }
    }

    fn len(&self) -> usize {
        self.pts.len()
    }

    fn total(&self) -> f64 {
        self.cum[self.len()]
    }

    fn seg(&self, i: usize) -> (Vec2, Vec2) {
        (self.pts[i], self.pts[(i + 1) % self.len()])
    }

    fn arc_at(&self, i: usize, t: f64) -> f64 {
        self.cum[i] + t * (self.cum[i + 1] - self.cum[i])
    }

    fn signed_area(&self) -> f64 {
        let n = self.len();
        0.5 * (0..n).map(|i| self.pts[i].cross(self.pts[(i + 1) % n])).sum::<f64>()
    }

    fn centroid(&self) -> Vec2 {
        let n = self.len() as f64;
        let s = self.pts.iter().fold(Vec2::new(0.0, 0.0), |acc, &p| acc + p);
        s * (1.0 / n)
    }

    /// Forward arc offset from `from` to `to`, in `[0, total)`.
    fn fwd(&self, from: f64, to: f64) -> f64 {
        (to - from).rem_euclid(self.total())
    }

    fn point_at_arc(&self, a: f64) -> (usize, Vec2) {
        let a = a.rem_euclid(self.total());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&a)) {
            Ok(i) => i.min(self.len() - 1),
            Err(i) => i - 1,
        };
        let (p, q) = self.seg(i);
        let l = self.cum[i + 1] - self.cum[i];
        let t = if l > 0.0 { (a - self.cum[i]) / l } else { 0.0 };
        (i, p + (q - p) * t)
    }

    /// Points from arc `from` to arc `to`, both included, walking forward or backward.
    fn walk(&self, from: f64, to: f64, forward: bool) -> Vec<Vec2> {
        let n = self.len();
        let mut out = vec![self.point_at_arc(from).1];
        let (span, start) = if forward {
            (self.fwd(from, to), self.point_at_arc(from).0 + 1)
        } else {
            (self.fwd(to, from), self.point_at_arc(from).0 + n)
        };
        for k in 0..n {
            let v = if forward { (start + k) % n } else { (start - k) % n };
            let off = if forward { self.fwd(from, self.cum[v]) } else { self.fwd(self.cum[v], from) };
            if off < 1e-12 {
                continue;
            }
            if off >= span - 1e-12 {
                break;
            }
            out.push(self.pts[v]);
        }
        out.push(self.point_at_arc(to).1);
        out
    }

    /// Summed absolute turning angle of the vertices within the forward arc window.
    fn turning(&self, from: f64, span: f64) -> f64 {
        let n = self.len();
        let (i0, _) = self.point_at_arc(from);
        let mut total = 0.0;
        for k in 1..=n {
            let v = (i0 + k) % n;
            if self.fwd(from, self.cum[v]) > span {
                break;
            }
            let a = self.pts[v] - self.pts[(v + n - 1) % n];
            let b = self.pts[(v + 1) % n] - self.pts[v];
            total += a.cross(b).atan2(a.dot(b)).abs();
        }
        total
    }
}

/// Uniform grid over loop segments for radius queries.
struct SegmentGrid {
    cell: f64,
    map: HashMap<(i64, i64), Vec<(usize, usize)>>,
}

impl SegmentGrid {
    fn new(loops: &[Loop], cell: f64) -> Self {
        let mut map: HashMap<(i64, i64), Vec<(usize, usize)>> = HashMap::new();
        for (li, l) in loops.iter().enumerate() {
            for si in 0..l.len() {
                let (a, b) = l.seg(si);
                let (x0, x1) = ((a.x.min(b.x) / cell).floor() as i64, (a.x.max(b.x) / cell).floor() as i64);
                let (y0, y1) = ((a.y.min(b.y) / cell).floor() as i64, (a.y.max(b.y) / cell).floor() as i64);
                for x in x0..=x1 {
                    for y in y0..=y1 {
                        map.entry((x, y)).or_default().push((li, si));
                    }
                }
            }
        }
        Self { cell, map }
    }

    /// Segments in the cells touched by the box around `a`-`b` grown by `r`, deduplicated.
    fn near(&self, a: Vec2, b: Vec2, r: f64) -> Vec<(usize, usize)> {
        let c = self.cell;
        let (x0, x1) = (((a.x.min(b.x) - r) / c).floor() as i64, ((a.x.max(b.x) + r) / c).floor() as i64);
        let (y0, y1) = (((a.y.min(b.y) - r) / c).floor() as i64, ((a.y.max(b.y) + r) / c).floor() as i64);
        let mut out = Vec::new();
        for x in x0..=x1 {
            for y in y0..=y1 {
                if let Some(v) = self.map.get(&(x, y)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// First point after arc `a_p` on `l` at distance `w` from `p`, within `max_arc` of arc.
fn step_by_chord(l: &Loop, a_p: f64, p: Vec2, w: f64, max_arc: f64) -> Option<f64> {
    let n = l.len();
    let (i0, _) = l.point_at_arc(a_p);
    for k in 0..n {
        let i = (i0 + k) % n;
        let (a, b) = l.seg(i);
        let d = b - a;
        let dd = d.dot(d);
        if dd == 0.0 {
            continue;
        }
        // |a + t d - p| = w, larger root
        let f = a - p;
        let bq = f.dot(d);
        let c = f.dot(f) - w * w;
        let disc = bq * bq - dd * c;
        if disc >= 0.0 {
            let t = (-bq + disc.sqrt()) / dd;
            if (0.0..=1.0).contains(&t) {
                let arc = l.arc_at(i, t);
                let off = l.fwd(a_p, arc);
                if off > 0.0 && off <= max_arc {
                    return Some(arc);
                }
            }
        }
        if l.fwd(a_p, l.cum[i + 1]) > max_arc && k > 0 {
            return None;
        }
    }
    None
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    target: usize,
    a_p: f64,
    a_q: f64,
    a_p2: f64,
    a_q2: f64,
    bridge: Bridge,
    score: f64,
}

fn closest_on(l: &Loop, si: usize, p: Vec2) -> (f64, Vec2) {
    let (a, b) = l.seg(si);
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) };
    (l.arc_at(si, t), a + ab * t)
}

/// Nearest hit of the ray `q + s·d`, `0 < s ≤ max`, on the segments of loop `li`.
fn ray_hit(loops: &[Loop], grid: &SegmentGrid, li: usize, q: Vec2, d: Vec2, max: f64) -> Option<(f64, f64)> {
    let end = q + d * max;
    let mut best: Option<(f64, f64)> = None;
    for (lj, si) in grid.near(q, end, 0.0) {
        if lj != li {
            continue;
        }
        let l = &loops[li];
        let (a, b) = l.seg(si);
        let e = b - a;
        let den = d.cross(e);
        if den.abs() < 1e-15 {
            continue;
        }
        let s = (a - q).cross(e) / den;
        let t = (a - q).cross(d) / den;
        if s > 1e-9 && s <= max && (-1e-12..=1.0 + 1e-12).contains(&t) && best.is_none_or(|(bs, _)| s < bs) {
            best = Some((s, l.arc_at(si, t.clamp(0.0, 1.0))));
        }
    }
    best
}

/// The arc `from..to` on `l` that is shorter, as (start, span) walking forward.
fn short_arc(l: &Loop, x: f64, y: f64) -> (f64, f64) {
    let f = l.fwd(x, y);
    if f <= l.total() - f {
        (x, f)
    } else {
        (y, l.total() - f)
    }
}

fn in_window(l: &Loop, start: f64, span: f64, si: usize) -> bool {
    let a = l.fwd(start, l.cum[si]);
    let b = l.fwd(start, l.cum[si + 1]);
    a <= span || b <= span || l.fwd(start, l.cum[si]) > l.fwd(start, l.cum[si + 1])
}

fn search(loops: &[Loop], grid: &SegmentGrid, src: usize, w: f64, criteria: &BridgeCriteria) -> Option<Candidate> {
    let max_len = MAX_BRIDGE_WIDTHS * w;
    let clearance = BRIDGE_CLEARANCE_WIDTHS * w;
    let s = &loops[src];
    let step = 0.5 * w;
    let mut best: Option<Candidate> = None;
    for i in 0..s.len() {
        let seg_len = s.cum[i + 1] - s.cum[i];
        let k = (seg_len / step).ceil().max(1.0) as usize;
        for j in 0..k {
            let a_p = s.cum[i] + seg_len * j as f64 / k as f64;
            let p = s.point_at_arc(a_p).1;
            let Some(a_q) = step_by_chord(s, a_p, p, w, max_len) else { continue };
            let q = s.point_at_arc(a_q).1;
            // closest point on any other loop
            let mut near: Option<(f64, usize, f64, Vec2)> = None;
            for (li, si) in grid.near(p, p, max_len) {
                if li == src {
                    continue;
                }
                let (arc, x) = closest_on(&loops[li], si, p);
                let d = p.dist(x);
                if near.is_none_or(|n| d < n.0) {
                    near = Some((d, li, arc, x));
                }
            }
            let Some((d, target, a_p2, p2)) = near else { continue };
            if d > max_len || d < 1e-9 {
                continue;
            }
            let dir = (p2 - p) * (1.0 / d);
            let Some((dq, a_q2)) = ray_hit(loops, grid, target, q, dir, max_len) else { continue };
            let o = &loops[target];
            let (o_start, o_span) = short_arc(o, a_p2, a_q2);
            if o_span > 2.0 * w {
                continue;
            }
            let q2 = q + dir * dq;
            let bridge = Bridge { p, q, p2, q2 };
            // clearance from everything but the neighborhoods of the attachment points
            let s_start = a_p - w;
            let s_span = s.fwd(a_p, a_q) + 2.0 * w;
            let clear = [(p, p2), (q, q2)].iter().all(|&(x, y)| {
                grid.near(x, y, clearance).into_iter().all(|(li, si)| {
                    if li == src && in_window(s, s_start, s_span, si) {
                        return true;
                    }
                    if li == target && in_window(o, o_start - w, o_span + 2.0 * w, si) {
                        return true;
                    }
                    let (a, b) = loops[li].seg(si);
                    segment_distance(x, y, a, b) >= clearance
                })
            });
            if !clear {
                continue;
            }
            let score = match criteria {
                BridgeCriteria::LowCurvature => s.turning(s_start, s_span) + o.turning(o_start - w, o_span + 2.0 * w),
                BridgeCriteria::MostInterior(boundary) => {
                    let m = (p + p2 + q + q2) * 0.25;
                    -boundary
                        .polygons
                        .iter()
                        .flat_map(|poly| poly.edges())
                        .map(|(a, b)| point_segment_distance(m, a.to_vec(), b.to_vec()))
                        .fold(f64::INFINITY, f64::min)
                }
            };
            if best.is_none_or(|b| score < b.score - 1e-12) {
                best = Some(Candidate { target, a_p, a_q, a_p2, a_q2, bridge, score });
            }
        }
    }
    best
}

fn merge(loops: &[Loop], src: usize, c: &Candidate) -> Loop {
    let s = &loops[src];
    let o = &loops[c.target];
    let mut pts = s.walk(c.a_q, c.a_p, true);
    // leave the target away from the removed arc
    let toward_q2_forward = o.fwd(c.a_p2, c.a_q2) <= o.total() - o.fwd(c.a_p2, c.a_q2);
    pts.extend(o.walk(c.a_p2, c.a_q2, !toward_q2_forward));
    Loop::new(pts)
}

fn to_loops(loops: &[Polygon]) -> Vec<Loop> {
    loops.iter().map(|p| Loop::new(p.points.iter().map(|q| q.to_vec()).collect())).filter(|l| l.len() >= 2).collect()
}

fn to_polyline(l: &Loop) -> Polyline {
    let mut line = Polyline::closed(l.pts.iter().map(|&v| Point2::from_vec(v)).collect());
    line.points.dedup();
    line
}

/// Bridges loops together, smallest first. A loop with no bridge fails the whole join when
/// `strict`, else it is set aside as a finished loop of its own.
fn join(
    mut comps: Vec<Loop>,
    w: f64,
    criteria: &BridgeCriteria,
    strict: bool,
) -> Result<(Vec<Loop>, Vec<Bridge>, usize)> {
    let mut bridges = Vec::new();
    let mut done = Vec::new();
    while comps.len() > 1 {
        // smallest first, ties by centroid
        let key = |l: &Loop| (l.signed_area().abs(), l.centroid().x, l.centroid().y);
        let src = (0..comps.len())
            .min_by(|&a, &b| {
                let (ka, kb) = (key(&comps[a]), key(&comps[b]));
                ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
            })
            .unwrap();
        let grid = SegmentGrid::new(&comps, MAX_BRIDGE_WIDTHS * w);
        let Some(c) = search(&comps, &grid, src, w, criteria) else {
            let m = comps[src].centroid();
            if strict {
                return Err(Error::Unbridgeable { cx: m.x, cy: m.y, max_len_mm: MAX_BRIDGE_WIDTHS * w });
            }
            log::debug!("loop at ({:.3}, {:.3}) has no bridge; printed on its own", m.x, m.y);
            done.push(comps.remove(src));
            continue;
        };
        let merged = merge(&comps, src, &c);
        bridges.push(c.bridge);
        let target = c.target;
        comps[target] = merged;
        comps.swap_remove(src);
    }
    let unbridged = done.len();
    done.extend(comps);
    Ok((done, bridges, unbridged))
}

/// Joins `loops` into one closed polyline by repeatedly bridging the smallest remaining loop
/// to its best neighbor. Returns the polyline and the bridges in the order they were built.
pub fn connect_polygons(loops: &[Polygon], w: f64, criteria: &BridgeCriteria) -> Result<(Polyline, Vec<Bridge>)> {
    let comps = to_loops(loops);
    if comps.is_empty() {
        return Ok((Polyline::closed(Vec::new()), Vec::new()));
    }
    let (mut out, bridges, _) = join(comps, w, criteria, true)?;
    Ok((to_polyline(&out.remove(0)), bridges))
}

/// Walls, fitted infill and the final toolpaths of one layer.
#[derive(Debug, Clone, Serialize)]
pub struct LayerPlan {
    pub z: f64,
    /// Wall loops, outermost first.
    pub walls: Vec<PolygonSet>,
    pub infill: Vec<Polygon>,
    pub bridges: Vec<Bridge>,
    /// Separate outer walls first when requested, then one closed path per island.
    pub toolpaths: Vec<Polyline>,
    /// Loops printed as paths of their own because no bridge reached them.
    pub unbridged: usize,
}

/// Bridges the infill loops and the walls into one path per island. With `separate_outer` the
/// outermost walls stay as leading loops of their own. Loops that no bridge can reach, such as
/// infill that stays clear of the walls, become separate paths.
pub fn connect_to_walls(
    z: f64,
    infill: Vec<Polygon>,
    walls: Vec<PolygonSet>,
    w: f64,
    criteria: &BridgeCriteria,
    separate_outer: bool,
) -> LayerPlan {
    let islands: Vec<Polygon> =
        walls.first().map(|outer| outer.polygons.iter().filter(|p| p.is_ccw()).cloned().collect()).unwrap_or_default();
    let mut groups: Vec<Vec<Polygon>> = vec![Vec::new(); islands.len().max(1)];
    let mut toolpaths = Vec::new();
    let island_of = |p: &Polygon| -> usize {
        let probe = p.points[0];
        islands
            .iter()
            .enumerate()
            .filter(|(_, o)| area_contains(o, probe))
            .min_by_key(|(_, o)| o.area2())
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    for (level, set) in walls.iter().enumerate() {
        for poly in &set.polygons {
            if poly.len() < 3 {
                continue;
            }
            if level == 0 && separate_outer {
                toolpaths.push(Polyline::closed(poly.points.clone()));
            } else {
                groups[island_of(poly)].push(poly.clone());
            }
        }
    }
    for poly in &infill {
        groups[island_of(poly)].push(poly.clone());
    }
    let mut bridges = Vec::new();
    let mut unbridged = 0;
    for group in groups.iter().filter(|g| !g.is_empty()) {
        let (paths, b, u) = join(to_loops(group), w, criteria, false).expect("lenient join does not fail");
        bridges.extend(b);
        unbridged += u;
        toolpaths.extend(paths.iter().map(to_polyline));
    }
    LayerPlan { z, walls, infill, bridges, toolpaths, unbridged }
}

#[cfg(test)]
mod tests;
