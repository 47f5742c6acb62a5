use super::point::Point2;
use super::polygon::{point_in_polygon, Containment, Polygon, PolygonSet};
use geo::algorithm::buffer::{BufferStyle, LineJoin};
use geo::{BooleanOps, Buffer, Coord, LineString, MultiPolygon};

/// Offsets every loop by `delta` mm: negative insets, positive grows. Mitered joins.
///
/// Loops that vanish are dropped, so an empty result is valid.
pub fn offset_polygons(polys: &PolygonSet, delta: f64) -> PolygonSet {
    if polys.is_empty() {
        return PolygonSet::default();
    }
    if delta == 0.0 {
        return polys.clone();
    }
    let mp = to_geo(polys);
    let style = BufferStyle::new(delta).line_join(LineJoin::Miter(0.01));
    let out = mp.buffer_with_style(style);
    from_geo(&out)
}

/// Area of `a` not covered by `b`.
pub fn difference_polygons(a: &PolygonSet, b: &PolygonSet) -> PolygonSet {
    if a.is_empty() || b.is_empty() {
        return a.clone();
    }
    from_geo(&to_geo(a).difference(&to_geo(b)))
}

fn ring_to_geo(poly: &Polygon) -> LineString<f64> {
    let mut coords: Vec<Coord<f64>> = poly
        .points
        .iter()
        .map(|p| {
            let v = p.to_vec();
            Coord { x: v.x, y: v.y }
        })
        .collect();
    if let Some(&f) = coords.first() {
        coords.push(f);
    }
    LineString::new(coords)
}

/// Groups clockwise holes under the smallest counterclockwise loop containing them.
fn to_geo(set: &PolygonSet) -> MultiPolygon<f64> {
    let outers: Vec<&Polygon> = set.polygons.iter().filter(|p| p.is_ccw()).collect();
    let mut holes: Vec<Vec<LineString<f64>>> = vec![Vec::new(); outers.len()];
    for hole in set.polygons.iter().filter(|p| !p.is_ccw() && p.len() >= 3) {
        let probe = hole.points[0];
        let owner = outers
            .iter()
            .enumerate()
            .filter(|(_, o)| point_in_polygon(probe, o) != Containment::Outside)
            .min_by_key(|(_, o)| o.area2())
            .map(|(i, _)| i);
        if let Some(i) = owner {
            holes[i].push(ring_to_geo(hole));
        }
    }
    MultiPolygon::new(outers.iter().zip(holes).map(|(o, h)| geo::Polygon::new(ring_to_geo(o), h)).collect())
}

fn from_geo(mp: &MultiPolygon<f64>) -> PolygonSet {
    let mut out = Vec::new();
    let mut push = |ls: &LineString<f64>| {
        let mut pts: Vec<Point2> = ls.0.iter().map(|c| Point2::from_mm(c.x, c.y)).collect();
        if pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        let poly = Polygon::new(pts).simplified();
        if poly.len() >= 3 && poly.area2() != 0 {
            out.push(poly);
        }
    };
    for p in &mp.0 {
        push(p.exterior());
        for h in p.interiors() {
            push(h);
        }
    }
    PolygonSet::new(out).normalize_orientation()
}
