//! Voxel density specification and its integration over prism cells.

use crate::error::{Error, Result};
use crate::forest::{PrismCell, Triangle};
use crate::geometry::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Linear map from 8-bit gray values to density, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrayMap {
    /// Gray value that maps to density 0.
    pub gray_empty: f64,
    /// Gray value that maps to density 1.
    pub gray_full: f64,
}

impl Default for GrayMap {
    fn default() -> Self {
        Self { gray_empty: 0.0, gray_full: 255.0 }
    }
}

impl GrayMap {
    /// The line through `(gray_a, rho_a)` and `(gray_b, rho_b)`.
    pub fn through(gray_a: f64, rho_a: f64, gray_b: f64, rho_b: f64) -> Result<Self> {
        if gray_a == gray_b || rho_a == rho_b {
            return Err(Error::InvalidConfig("gray map endpoints must differ".into()));
        }
        let slope = (rho_b - rho_a) / (gray_b - gray_a);
        let gray_empty = gray_a - rho_a / slope;
        Ok(Self { gray_empty, gray_full: gray_empty + 1.0 / slope })
    }

    pub fn density(&self, gray: f64) -> f64 {
        ((gray - self.gray_empty) / (self.gray_full - self.gray_empty)).clamp(0.0, 1.0)
    }
}

/// Piecewise-constant voxel grid of target densities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityField {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    pub origin: [f64; 3],
    pub gray_map: GrayMap,
    /// x fastest, then y, then z.
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) || voxel_size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "density grid needs positive dimensions and voxel size, got {dims:?} / {voxel_size:?}"
            )));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidConfig(format!("{} density values for a {dims:?} grid", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("density {v} outside [0, 1]")));
        }
        Ok(Self { dims, voxel_size, origin, gray_map: GrayMap::default(), values })
    }

    pub fn uniform(rho: f64, dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        Self::new(dims, voxel_size, origin, vec![rho; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a grid by evaluating `f` at every voxel center (clamped to `[0, 1]`).
    pub fn from_fn(
        dims: [usize; 3],
        voxel_size: [f64; 3],
        origin: [f64; 3],
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = origin[0] + (i as f64 + 0.5) * voxel_size[0];
                    let y = origin[1] + (j as f64 + 0.5) * voxel_size[1];
                    let z = origin[2] + (k as f64 + 0.5) * voxel_size[2];
                    values.push(f(x, y, z).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(dims, voxel_size, origin, values)
    }

    /// Loads one image per z layer, first file at the bottom. Image row 0 is the largest y.
    pub fn load_image_stack<P: AsRef<Path>>(
        files: &[P],
        gray_map: GrayMap,
        voxel_size: [f64; 3],
        origin: [f64; 3],
    ) -> Result<Self> {
        let Some(first) = files.first() else {
            return Err(Error::InvalidConfig("empty image stack".into()));
        };
        let mut dims = [0usize, 0, files.len()];
        let mut values = Vec::new();
        for (k, path) in files.iter().enumerate() {
            let path = path.as_ref();
            let img = image::open(path)
                .map_err(|e| Error::Io { path: PathBuf::from(path), message: e.to_string() })?
                .to_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            if k == 0 {
                dims[0] = w;
                dims[1] = h;
                values.reserve(w * h * files.len());
            } else if (w, h) != (dims[0], dims[1]) {
                return Err(Error::DimensionMismatch {
                    path: PathBuf::from(path),
                    got_w: w as u32,
                    got_h: h as u32,
                    want_w: dims[0] as u32,
                    want_h: dims[1] as u32,
                });
            }
            for j in 0..h {
                let row = (h - 1 - j) as u32;
                for i in 0..w {
                    values.push(gray_map.density(img.get_pixel(i as u32, row).0[0] as f64));
                }
            }
        }
        log::debug!("loaded {} layers of {}x{} from {}", dims[2], dims[0], dims[1], first.as_ref().display());
        let mut field = Self::new(dims, voxel_size, origin, values)?;
        field.gray_map = gray_map;
        Ok(field)
    }

    /// The same grid with every value passed through `f` and clamped to `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v).clamp(0.0, 1.0);
        }
        out
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Extent of the grid as `(min, max)` corners.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut hi = self.origin;
        for a in 0..3 {
            hi[a] += self.dims[a] as f64 * self.voxel_size[a];
        }
        (self.origin, hi)
    }

    fn clamped_index(&self, axis: usize, c: f64) -> usize {
        let t = ((c - self.origin[axis]) / self.voxel_size[axis]).floor();
        t.clamp(0.0, (self.dims[axis] - 1) as f64) as usize
    }

    /// Density of the voxel containing the point, or of the nearest voxel outside the grid.
    pub fn sample(&self, x: f64, y: f64, z: f64) -> f64 {
        self.value(self.clamped_index(0, x), self.clamped_index(1, y), self.clamped_index(2, z))
    }

    /// Voxel index range along `axis` overlapping `[lo, hi]`, restricted to the grid.
    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let s = self.voxel_size[axis];
        let a = ((lo - self.origin[axis]) / s).floor().max(0.0);
        let b = ((hi - self.origin[axis]) / s).ceil().min(self.dims[axis] as f64);
        (a < b).then_some((a as usize, b as usize))
    }

    /// Average density over the voxels a prism covers, weighted by intersection volume. A prism
    /// outside the grid takes the density of the voxel nearest its centroid.
    pub fn target_density(&self, cell: &PrismCell) -> f64 {
        self.prism_density(&cell.triangle, cell.z_min, cell.z_max)
    }

    pub fn prism_density(&self, tri: &Triangle, z_min: f64, z_max: f64) -> f64 {
        let (sum, vol) = self.integrate(tri, z_min, z_max);
        let prism_vol = tri.area() * (z_max - z_min);
        if vol > 1e-12 * prism_vol.max(f64::MIN_POSITIVE) {
            return (sum / vol).clamp(0.0, 1.0);
        }
        let c = tri.centroid();
        self.sample(c.x, c.y, 0.5 * (z_min + z_max))
    }

    /// Volume-weighted average over an axis-aligned box. Parts outside the grid are ignored; a
    /// box wholly outside takes the voxel nearest its center.
    pub fn box_density(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        let ranges = [0, 1, 2].map(|a| self.index_range(a, lo[a], hi[a]));
        let overlap = |axis: usize, idx: usize| {
            let v0 = self.origin[axis] + idx as f64 * self.voxel_size[axis];
            (hi[axis].min(v0 + self.voxel_size[axis]) - lo[axis].max(v0)).max(0.0)
        };
        let (mut sum, mut vol) = (0.0, 0.0);
        if let [Some((i0, i1)), Some((j0, j1)), Some((k0, k1))] = ranges {
            for k in k0..k1 {
                let hz = overlap(2, k);
                for j in j0..j1 {
                    let hy = overlap(1, j) * hz;
                    for i in i0..i1 {
                        let v = overlap(0, i) * hy;
                        sum += v * self.value(i, j, k);
                        vol += v;
                    }
                }
            }
        }
        if vol > 0.0 {
            return sum / vol;
        }
        let c = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        self.sample(c[0], c[1], c[2])
    }

    /// `(Σ Vol(v ∩ P)·ρ(v), Σ Vol(v ∩ P))`.
    fn integrate(&self, tri: &Triangle, z_min: f64, z_max: f64) -> (f64, f64) {
        let vs = tri.vertices();
        let (xl, xh) = vs.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.x), h.max(p.x)));
        let (yl, yh) = vs.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.y), h.max(p.y)));
        let (Some((i0, i1)), Some((j0, j1)), Some((k0, k1))) =
            (self.index_range(0, xl, xh), self.index_range(1, yl, yh), self.index_range(2, z_min, z_max))
        else {
            return (0.0, 0.0);
        };
        let dz: Vec<f64> = (k0..k1)
            .map(|k| {
                let lo = self.origin[2] + k as f64 * self.voxel_size[2];
                let hi = lo + self.voxel_size[2];
                (hi.min(z_max) - lo.max(z_min)).max(0.0)
            })
            .collect();
        let (mut sum, mut vol) = (0.0, 0.0);
        for j in j0..j1 {
            let y0 = self.origin[1] + j as f64 * self.voxel_size[1];
            for i in i0..i1 {
                let x0 = self.origin[0] + i as f64 * self.voxel_size[0];
                let area = clipped_area(&vs, x0, y0, x0 + self.voxel_size[0], y0 + self.voxel_size[1]);
                if area <= 0.0 {
                    continue;
                }
                for (k, &h) in (k0..k1).zip(&dz) {
                    let v = area * h;
                    sum += v * self.value(i, j, k);
                    vol += v;
                }
            }
        }
        (sum, vol)
    }

    /// `target_density · Vol`, in mm³.
    pub fn target_mass(&self, cell: &PrismCell) -> f64 {
        self.target_density(cell) * cell.volume()
    }

    /// Sampling estimate of [`Self::target_density`].
    pub fn monte_carlo_density(&self, cell: &PrismCell, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = &cell.triangle;
        let (mut sum, mut n) = (0.0, 0usize);
        let (lo, hi) = self.bounds();
        for _ in 0..samples {
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = t.a + (t.b - t.a) * u + (t.c - t.a) * v;
            let z = cell.z_min + rng.gen::<f64>() * cell.height();
            let inside = p.x >= lo[0] && p.x < hi[0] && p.y >= lo[1] && p.y < hi[1] && z >= lo[2] && z < hi[2];
            if inside {
                sum += self.sample(p.x, p.y, z);
                n += 1;
            }
        }
        if n == 0 {
            let c = t.centroid();
            return self.sample(c.x, c.y, 0.5 * (cell.z_min + cell.z_max));
        }
        sum / n as f64
    }
}

/// Area of a triangle clipped to an axis-aligned box.
fn clipped_area(tri: &[Vec2; 3], x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let mut poly: Vec<Vec2> = tri.to_vec();
    // each bound is (axis, value, keep the side >= value?)
    for (axis, bound, keep_above) in [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)] {
        if poly.is_empty() {
            return 0.0;
        }
        let coord = |p: &Vec2| if axis == 0 { p.x } else { p.y };
        let inside = |p: &Vec2| if keep_above { coord(p) >= bound } else { coord(p) <= bound };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                out.push(a);
            }
            if ia != ib {
                let t = (bound - coord(&a)) / (coord(&b) - coord(&a));
                out.push(a.lerp(b, t));
            }
        }
        poly = out;
    }
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>().abs()
}
