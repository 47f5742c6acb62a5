use super::point::Point2;
use super::polygon::PolygonSet;
use serde::{Deserialize, Serialize};

/// An open or closed chain of vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Point2>,
    pub closed: bool,
}

impl Polyline {
    pub fn open(points: Vec<Point2>) -> Self {
        Self { points, closed: false }
    }

    pub fn closed(points: Vec<Point2>) -> Self {
        Self { points, closed: true }
    }

    pub fn length_mm(&self) -> f64 {
        if self.closed {
            super::polygon::closed_length_mm(&self.points)
        } else {
            super::polygon::open_length_mm(&self.points)
        }
    }

    /// Segments as point pairs, including the closing one for closed chains.
    pub fn segments(&self) -> Vec<(Point2, Point2)> {
        let n = self.points.len();
        let mut segs: Vec<_> = self.points.windows(2).map(|w| (w[0], w[1])).collect();
        if self.closed && n > 2 {
            segs.push((self.points[n - 1], self.points[0]));
        }
        segs
    }
}

/// Parameters along `a→b` where it meets the edge `c→d`, excluding the endpoints of `a→b`.
fn crossing_params(a: Point2, b: Point2, c: Point2, d: Point2, out: &mut Vec<f64>) {
    let r = b - a;
    let s = d - c;
    let den = r.cross(s);
    let ca = c - a;
    if den == 0 {
        if ca.cross(r) != 0 {
            return;
        }
        // collinear: split at the edge endpoints that fall inside the segment
        let rr = r.dot(r);
        if rr == 0 {
            return;
        }
        for p in [c, d] {
            let t = (p - a).dot(r) as f64 / rr as f64;
            if t > 0.0 && t < 1.0 {
                out.push(t);
            }
        }
        return;
    }
    let t_num = ca.cross(s);
    let u_num = ca.cross(r);
    let (t_num, u_num, den) = if den < 0 { (-t_num, -u_num, -den) } else { (t_num, u_num, den) };
    if t_num <= 0 || t_num >= den || u_num < 0 || u_num > den {
        return;
    }
    out.push(t_num as f64 / den as f64);
}

/// Returns the parts of the closed `curve` that lie inside `area`.
///
/// A curve fully inside comes back as a single closed polyline identical to the input; otherwise
/// the pieces are open polylines whose end points are the boundary crossings.
pub fn clip_polyline_to_area(curve: &[Point2], area: &PolygonSet) -> Vec<Polyline> {
    let n = curve.len();
    if n < 2 || area.is_empty() {
        return Vec::new();
    }
    let edges: Vec<(Point2, Point2)> = area.polygons.iter().flat_map(|p| p.edges()).collect();

    // split every segment at its crossings; pieces[i] = (start, end, inside)
    let mut pieces: Vec<(Point2, Point2, bool)> = Vec::new();
    let mut params = Vec::new();
    for i in 0..n {
        let a = curve[i];
        let b = curve[(i + 1) % n];
        if a == b {
            continue;
        }
        params.clear();
        for &(c, d) in &edges {
            crossing_params(a, b, c, d, &mut params);
        }
        params.sort_by(f64::total_cmp);
        let mut pts = vec![a];
        for &t in &params {
            let p = Point2::new(
                (a.x as f64 + t * (b.x - a.x) as f64).round() as i64,
                (a.y as f64 + t * (b.y - a.y) as f64).round() as i64,
            );
            if *pts.last().unwrap() != p && p != b {
                pts.push(p);
            }
        }
        pts.push(b);
        for w in pts.windows(2) {
            let mid = Point2::new((w[0].x + w[1].x).div_euclid(2), (w[0].y + w[1].y).div_euclid(2));
            let inside = if w[0] == w[1] { area.contains(w[0]) } else { area.contains(mid) };
            pieces.push((w[0], w[1], inside));
        }
    }
    if pieces.is_empty() {
        return Vec::new();
    }
    if pieces.iter().all(|p| p.2) {
        return vec![Polyline::closed(curve.to_vec())];
    }
    let first_out = pieces.iter().position(|p| !p.2).unwrap();
    pieces.rotate_left(first_out);
    let mut result = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    for (s, e, inside) in pieces {
        if inside {
            if current.is_empty() {
                current.push(s);
            }
            current.push(e);
        } else if !current.is_empty() {
            result.push(Polyline::open(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        result.push(Polyline::open(current));
    }
    result
}
