use super::point::{Point2, Vec2};
use serde::{Deserialize, Serialize};

/// A closed vertex loop. The closing edge from the last to the first vertex is implicit.
///
/// Outer loops are counterclockwise, holes clockwise.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<Point2>,
}

impl Polygon {
    pub fn new(points: Vec<Point2>) -> Self {
        Self { points }
    }

    pub fn from_mm(points: &[(f64, f64)]) -> Self {
        Self::new(points.iter().map(|&(x, y)| Point2::from_mm(x, y)).collect())
    }

    /// Axis-aligned counterclockwise rectangle, in millimeters.
    pub fn rect_mm(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::from_mm(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Twice the signed shoelace area, in square units. Positive for counterclockwise loops.
    pub fn area2(&self) -> i128 {
        let n = self.points.len();
        (0..n).map(|i| self.points[i].cross(self.points[(i + 1) % n])).sum()
    }

    /// Signed area in mm².
    pub fn area_mm2(&self) -> f64 {
        self.area2() as f64 / 2.0 / (super::UNITS_PER_MM as f64).powi(2)
    }

    pub fn is_ccw(&self) -> bool {
        self.area2() > 0
    }

    pub fn reversed(&self) -> Polygon {
        let mut p = self.points.clone();
        p.reverse();
        Polygon::new(p)
    }

    pub fn perimeter_mm(&self) -> f64 {
        closed_length_mm(&self.points)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Area-weighted centroid in mm, falling back to the vertex mean for degenerate loops.
    pub fn centroid_mm(&self) -> Vec2 {
        let pts: Vec<Vec2> = self.points.iter().map(|p| p.to_vec()).collect();
        let n = pts.len();
        if n == 0 {
            return Vec2::default();
        }
        let mut a = 0.0;
        let mut c = Vec2::default();
        for i in 0..n {
            let p = pts[i];
            let q = pts[(i + 1) % n];
            let cr = p.cross(q);
            a += cr;
            c = c + (p + q) * cr;
        }
        if a.abs() < 1e-12 {
            let s = pts.iter().fold(Vec2::default(), |acc, &p| acc + p);
            return s * (1.0 / n as f64);
        }
        c * (1.0 / (3.0 * a))
    }

    /// Drops consecutive duplicates and collinear vertices.
    pub fn simplified(&self) -> Polygon {
        let mut pts: Vec<Point2> = Vec::with_capacity(self.points.len());
        for &p in &self.points {
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        let mut changed = true;
        while changed && pts.len() >= 3 {
            changed = false;
            let n = pts.len();
            for i in 0..n {
                let a = pts[(i + n - 1) % n];
                let b = pts[i];
                let c = pts[(i + 1) % n];
                if (b - a).cross(c - b) == 0 {
                    pts.remove(i);
                    changed = true;
                    break;
                }
            }
        }
        Polygon::new(pts)
    }
}

/// Length in mm of an open polyline.
pub fn open_length_mm(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>() / super::UNITS_PER_MM as f64
}

/// Length in mm of a closed loop.
pub fn closed_length_mm(points: &[Point2]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    open_length_mm(points) + points[points.len() - 1].dist(points[0]) / super::UNITS_PER_MM as f64
}

/// A set of closed loops with the orientation convention (outer CCW, holes CW).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolygonSet {
    pub polygons: Vec<Polygon>,
}

impl PolygonSet {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    /// Net area in mm² (holes subtract).
    pub fn area_mm2(&self) -> f64 {
        self.polygons.iter().map(Polygon::area_mm2).sum()
    }

    /// Even-odd containment over every loop. Points on an edge count as inside.
    pub fn contains(&self, p: Point2) -> bool {
        let mut inside = false;
        for poly in &self.polygons {
            match point_in_polygon(p, poly) {
                Containment::Boundary => return true,
                Containment::Inside => inside = !inside,
                Containment::Outside => {}
            }
        }
        inside
    }

    /// Re-orients loops from their nesting depth: even depth counterclockwise, odd clockwise.
    pub fn normalize_orientation(mut self) -> Self {
        // a vertex of each loop is inside exactly the loops that enclose it
        let probes: Vec<Option<Point2>> = self.polygons.iter().map(|p| p.points.first().copied()).collect();
        let n = self.polygons.len();
        let mut depths = vec![0usize; n];
        for i in 0..n {
            let Some(p) = probes[i] else { continue };
            for j in 0..n {
                if i != j && point_in_polygon(p, &self.polygons[j]) == Containment::Inside {
                    depths[i] += 1;
                }
            }
        }
        for (poly, depth) in self.polygons.iter_mut().zip(depths) {
            let want_ccw = depth % 2 == 0;
            if poly.is_ccw() != want_ccw {
                poly.points.reverse();
            }
        }
        self
    }

    pub fn bounding_box(&self) -> Option<(Point2, Point2)> {
        let mut it = self.polygons.iter().flat_map(|p| p.points.iter());
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y)))
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Outside,
    Boundary,
}

/// Crossing-number point-in-polygon test with exact integer arithmetic.
pub fn point_in_polygon(p: Point2, poly: &Polygon) -> Containment {
    let n = poly.points.len();
    if n < 3 {
        return Containment::Outside;
    }
    let mut inside = false;
    for i in 0..n {
        let a = poly.points[i];
        let b = poly.points[(i + 1) % n];
        let cr = (b - a).cross(p - a);
        if cr == 0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y) {
            return Containment::Boundary;
        }
        if (a.y > p.y) != (b.y > p.y) {
            // sign of the crossing relative to the upward/downward edge
            let upward = b.y > a.y;
            if (cr > 0) == upward {
                inside = !inside;
            }
        }
    }
    if inside {
        Containment::Inside
    } else {
        Containment::Outside
    }
}
