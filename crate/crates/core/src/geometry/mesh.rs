use super::point::{mm_to_units, Point2};
use super::polygon::{Polygon, PolygonSet};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Default gap tolerance when stitching slice segments into loops, in mm.
pub const DEFAULT_STITCH_TOLERANCE_MM: f64 = 0.02;

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    /// Vertex positions in mm.
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, validating indices and dropping zero-area triangles.
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} references a vertex beyond {n}")));
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i]);
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let cr = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                cr.iter().map(|x| x * x).sum::<f64>() > 0.0
            })
            .collect();
        Ok(Self { vertices, triangles })
    }

    /// Reads a binary or ASCII STL file.
    pub fn load_stl(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let indexed = stl_io::read_stl(&mut file).map_err(|e| Error::io(path, e))?;
        let vertices = indexed.vertices.iter().map(|v| [v[0] as f64, v[1] as f64, v[2] as f64]).collect();
        let triangles = indexed.faces.iter().map(|f| f.vertices).collect();
        Self::new(vertices, triangles)
    }

    pub fn bounding_box(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(mut lo, mut hi), v| {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
            (lo, hi)
        }))
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: [f64; 3], max: [f64; 3]) -> Self {
        let v = |i: usize| {
            [
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ]
        };
        let vertices = (0..8).map(v).collect();
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3], // bottom
            [4, 5, 6],
            [5, 7, 6], // top
            [0, 1, 4],
            [1, 5, 4], // y min
            [2, 6, 3],
            [3, 6, 7], // y max
            [0, 4, 2],
            [2, 4, 6], // x min
            [1, 3, 5],
            [3, 7, 5], // x max
        ];
        Self { vertices, triangles }
    }
}

/// Slices the mesh into one oriented [`PolygonSet`] per layer at
/// `first_layer_z + i * layer_height`, for every such z below the mesh top.
pub fn slice_mesh(mesh: &TriangleMesh, layer_height: f64, first_layer_z: f64) -> Result<Vec<(f64, PolygonSet)>> {
    slice_mesh_with_tolerance(mesh, layer_height, first_layer_z, DEFAULT_STITCH_TOLERANCE_MM)
}

pub fn slice_mesh_with_tolerance(
    mesh: &TriangleMesh,
    layer_height: f64,
    first_layer_z: f64,
    tolerance_mm: f64,
) -> Result<Vec<(f64, PolygonSet)>> {
    if layer_height <= 0.0 {
        return Err(Error::InvalidConfig("layer height must be positive".into()));
    }
    let Some((_, hi)) = mesh.bounding_box() else {
        return Ok(Vec::new());
    };
    let mut zs = Vec::new();
    let mut i = 0usize;
    loop {
        let z = first_layer_z + i as f64 * layer_height;
        if z >= hi[2] - 1e-9 {
            break;
        }
        zs.push(z);
        i += 1;
    }
    let verts: Vec<[i64; 3]> =
        mesh.vertices.iter().map(|v| [mm_to_units(v[0]), mm_to_units(v[1]), mm_to_units(v[2])]).collect();
    let tol = mm_to_units(tolerance_mm).max(1);
    zs.par_iter()
        .enumerate()
        .map(|(layer, &z)| {
            let polys = slice_at(&verts, &mesh.triangles, mm_to_units(z), tol)
                .map_err(|gap| Error::OpenContour { layer, gap_mm: gap as f64 / super::UNITS_PER_MM as f64 })?;
            Ok((z, polys))
        })
        .collect()
}

fn slice_at(verts: &[[i64; 3]], tris: &[[usize; 3]], mut z: i64, tol: i64) -> std::result::Result<PolygonSet, i64> {
    // coplanar vertices are avoided by nudging the plane upward
    while verts.iter().any(|v| v[2] == z) {
        z += 1;
    }
    let mut segments: Vec<(Point2, Point2)> = Vec::new();
    for t in tris {
        let p = t.map(|i| verts[i]);
        let mut hits: Vec<Point2> = Vec::with_capacity(2);
        for k in 0..3 {
            let (i, j) = (t[k], t[(k + 1) % 3]);
            let (a, b) = if i < j { (verts[i], verts[j]) } else { (verts[j], verts[i]) };
            if (a[2] < z) != (b[2] < z) {
                let s = (z - a[2]) as f64 / (b[2] - a[2]) as f64;
                hits.push(Point2::new(
                    (a[0] as f64 + s * (b[0] - a[0]) as f64).round() as i64,
                    (a[1] as f64 + s * (b[1] - a[1]) as f64).round() as i64,
                ));
            }
        }
        if hits.len() != 2 || hits[0] == hits[1] {
            continue;
        }
        // outward normal's xy part decides the direction so that the interior lies on the left
        let u = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
        let v = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
        let nx = u[1] as f64 * v[2] as f64 - u[2] as f64 * v[1] as f64;
        let ny = u[2] as f64 * v[0] as f64 - u[0] as f64 * v[2] as f64;
        let d = hits[1] - hits[0];
        let along = -ny * d.x as f64 + nx * d.y as f64;
        if along >= 0.0 {
            segments.push((hits[0], hits[1]));
        } else {
            segments.push((hits[1], hits[0]));
        }
    }
    stitch(segments, tol).map(|loops| PolygonSet::new(loops).normalize_orientation())
}

/// Chains directed segments into closed loops. Returns the offending gap on failure.
fn stitch(segments: Vec<(Point2, Point2)>, tol: i64) -> std::result::Result<Vec<Polygon>, i64> {
    let mut by_start: HashMap<Point2, Vec<usize>> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        by_start.entry(s.0).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for seed in 0..segments.len() {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        let start = segments[seed].0;
        let mut pts = vec![start];
        let mut end = segments[seed].1;
        loop {
            if end == start || (pts.len() > 2 && end.dist(start) <= tol as f64) {
                break;
            }
            let exact = by_start.get(&end).and_then(|c| c.iter().copied().find(|&i| !used[i]));
            let next = match exact {
                Some(i) => i,
                None => {
                    let (best, gap) = segments
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !used[*i])
                        .map(|(i, s)| (i, s.0.dist(end)))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap_or((usize::MAX, f64::INFINITY));
                    let close_gap = end.dist(start);
                    if close_gap <= gap && close_gap <= tol as f64 {
                        break;
                    }
                    if gap > tol as f64 {
                        return Err(gap.min(close_gap).min(i64::MAX as f64) as i64);
                    }
                    best
                }
            };
            used[next] = true;
            pts.push(end);
            end = segments[next].1;
        }
        let poly = Polygon::new(pts).simplified();
        if poly.len() >= 3 {
            loops.push(poly);
        }
    }
    Ok(loops)
}

/// One layer of the JSON layer-polygon input format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerPolygonsJson {
    pub z: f64,
    /// Loops of `[x, y]` vertices in mm.
    pub loops: Vec<Vec<[f64; 2]>>,
}

/// Reads per-layer polygons from the JSON schema `[{"z": .., "loops": [[[x, y], ..], ..]}, ..]`.
pub fn load_layer_json(path: &Path) -> Result<Vec<(f64, PolygonSet)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_layer_json(&text)
}

pub fn parse_layer_json(text: &str) -> Result<Vec<(f64, PolygonSet)>> {
    let layers: Vec<LayerPolygonsJson> = serde_json::from_str(text)?;
    Ok(layers
        .into_iter()
        .map(|l| {
            let polys = l
                .loops
                .iter()
                .map(|lp| Polygon::new(lp.iter().map(|p| Point2::from_mm(p[0], p[1])).collect()))
                .filter(|p| p.len() >= 3)
                .collect();
            (l.z, PolygonSet::new(polys).normalize_orientation())
        })
        .collect())
}
