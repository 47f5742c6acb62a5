//! Measurements of produced structures: realized density, local error against the request, and
//! the compensation curve that maps requested densities to simplified input densities.

use crate::density_field::DensityField;
use crate::error::{Error, Result};
use crate::export::{HeatTile, PrintProfile};
use crate::forest::SubdivisionForest;
use crate::geometry::Vec2;
use crate::infill_fit::LayerPlan;
use crate::pipeline::{cube_plans, Structure, StructureParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Half-open axis-aligned box `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn cube(origin: [f64; 3], side: f64) -> Self {
        Self { min: origin, max: origin.map(|c| c + side) }
    }

    /// The starting cube of a forest.
    pub fn of_forest(forest: &SubdivisionForest) -> Self {
        Self::cube(forest.origin(), forest.l_init())
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).max(0.0)).product()
    }
}

/// Splits `a→b` at the lines of an `n[0] × n[1]` grid of `cell`-sized squares starting at `lo`
/// and reports every piece inside the grid as `(ix, iy, length)`.
fn for_each_piece(a: Vec2, b: Vec2, lo: [f64; 2], cell: [f64; 2], n: [usize; 2], mut f: impl FnMut(usize, usize, f64)) {
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return;
    }
    let mut ts = vec![0.0, 1.0];
    for (axis, (pa, da)) in [(a.x, d.x), (a.y, d.y)].into_iter().enumerate() {
        if da == 0.0 {
            continue;
        }
        let pb = pa + da;
        let g0 = ((pa.min(pb) - lo[axis]) / cell[axis]).ceil().max(0.0) as usize;
        let g1 = ((pa.max(pb) - lo[axis]) / cell[axis]).floor().min(n[axis] as f64);
        if g1 < 0.0 {
            continue;
        }
        for g in g0..=g1 as usize {
            let t = (lo[axis] + g as f64 * cell[axis] - pa) / da;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    for w in ts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let m = a + d * (0.5 * (w[0] + w[1]));
        let ix = ((m.x - lo[0]) / cell[0]).floor();
        let iy = ((m.y - lo[1]) / cell[1]).floor();
        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < n[0] && (iy as usize) < n[1] {
            f(ix as usize, iy as usize, (w[1] - w[0]) * len);
        }
    }
}

/// Overlap of the layer slab around `z` with `[lo, hi)`.
fn slab_overlap(z: f64, layer_height: f64, lo: f64, hi: f64) -> f64 {
    ((z + 0.5 * layer_height).min(hi) - (z - 0.5 * layer_height).max(lo)).max(0.0)
}

/// Deposited volume over the region's volume. Each layer is a slab of one layer height centered
/// on its slice height, each path a band of one line width.
pub fn realized_density(plans: &[LayerPlan], region: &Region, profile: &PrintProfile) -> f64 {
    let vol = region.volume();
    if vol <= 0.0 {
        return 0.0;
    }
    let lo = [region.min[0], region.min[1]];
    let cell = [region.max[0] - region.min[0], region.max[1] - region.min[1]];
    let mut deposited = 0.0;
    for plan in plans {
        let h = slab_overlap(plan.z, profile.layer_height, region.min[2], region.max[2]);
        if h <= 0.0 {
            continue;
        }
        let mut len = 0.0;
        for path in &plan.toolpaths {
            for (a, b) in path.segments() {
                for_each_piece(a.to_vec(), b.to_vec(), lo, cell, [1, 1], |_, _, l| len += l);
            }
        }
        deposited += len * profile.line_width * h;
    }
    deposited / vol
}

/// Total deposited volume of all toolpaths.
pub fn realized_volume(plans: &[LayerPlan], profile: &PrintProfile) -> f64 {
    let len: f64 = plans.iter().flat_map(|p| p.toolpaths.iter()).map(|t| t.length_mm()).sum();
    len * profile.volume_per_mm()
}

/// Simplified density of the whole structure: leaf masses over the cube volume.
pub fn predicted_density(forest: &SubdivisionForest) -> f64 {
    forest.total_current_mass() / forest.l_init().powi(3)
}

/// Realized density on a grid of `n³` subcubes of a cube, x fastest.
pub fn realized_grid(plans: &[LayerPlan], cube: &Region, n: usize, profile: &PrintProfile) -> Vec<f64> {
    let side = cube.max[0] - cube.min[0];
    let cell = side / n as f64;
    let mut vol = vec![0.0; n * n * n];
    let mut layer = vec![0.0; n * n];
    for plan in plans {
        let overlaps: Vec<(usize, f64)> = (0..n)
            .map(|k| {
                let z0 = cube.min[2] + k as f64 * cell;
                (k, slab_overlap(plan.z, profile.layer_height, z0, z0 + cell))
            })
            .filter(|&(_, h)| h > 0.0)
            .collect();
        if overlaps.is_empty() {
            continue;
        }
        layer.iter_mut().for_each(|v| *v = 0.0);
        for path in &plan.toolpaths {
            for (a, b) in path.segments() {
                for_each_piece(a.to_vec(), b.to_vec(), [cube.min[0], cube.min[1]], [cell; 2], [n, n], |i, j, l| {
                    layer[j * n + i] += l
                });
            }
        }
        for (k, h) in overlaps {
            for (ij, &l) in layer.iter().enumerate() {
                vol[k * n * n + ij] += l * profile.line_width * h;
            }
        }
    }
    let cell_vol = cell * cell * cell;
    vol.into_iter().map(|v| v / cell_vol).collect()
}

/// Absolute local errors of one kernel size over a cube.
#[derive(Debug, Clone, Serialize)]
pub struct LocalErrorGrid {
    pub kernel: f64,
    pub origin: [f64; 3],
    pub n: usize,
    /// `|mean spec density − realized density|` per subcube, x fastest.
    pub errors: Vec<f64>,
}

impl LocalErrorGrid {
    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// Heat tiles of the subcube row containing `z`, with opacity `error / full_scale`.
    pub fn tiles_at(&self, z: f64, full_scale: f64) -> Vec<HeatTile> {
        let k = ((z - self.origin[2]) / self.kernel).floor();
        if k < 0.0 || k as usize >= self.n {
            return Vec::new();
        }
        let k = k as usize;
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                out.push(HeatTile {
                    x: self.origin[0] + i as f64 * self.kernel,
                    y: self.origin[1] + j as f64 * self.kernel,
                    size: self.kernel,
                    value: (self.errors[(k * n + j) * n + i] / full_scale).min(1.0),
                });
            }
        }
        out
    }
}

/// Local errors of a cube at one kernel size. The kernel is rounded so that a whole number of
/// subcubes tiles the cube.
pub fn local_error_grid(
    spec: &DensityField,
    plans: &[LayerPlan],
    cube: &Region,
    kernel: f64,
    profile: &PrintProfile,
) -> LocalErrorGrid {
    let side = cube.max[0] - cube.min[0];
    let n = ((side / kernel).round() as usize).max(1);
    let cell = side / n as f64;
    let realized = realized_grid(plans, cube, n, profile);
    let errors = (0..n * n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
            let lo = [cube.min[0] + i as f64 * cell, cube.min[1] + j as f64 * cell, cube.min[2] + k as f64 * cell];
            let hi = lo.map(|c| c + cell);
            (spec.box_density(lo, hi) - realized[idx]).abs()
        })
        .collect();
    LocalErrorGrid { kernel: cell, origin: cube.min, n, errors }
}

/// Mean absolute local error for each kernel size.
pub fn local_error_curve(
    spec: &DensityField,
    plans: &[LayerPlan],
    cube: &Region,
    kernel_sizes: &[f64],
    profile: &PrintProfile,
) -> Vec<(f64, f64)> {
    kernel_sizes.iter().map(|&k| (k, local_error_grid(spec, plans, cube, k, profile).mean())).collect()
}

/// Density specifications of the accuracy experiments, defined on a cube `[0, side]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestSpec {
    Homogeneous(f64),
    /// 10% at one bottom corner rising linearly to 40% at the opposite corner.
    Gradient,
    /// 10% on one side of a plane through the center and 40% on the other. The plane runs at
    /// 22.5° to the x axis and overhangs at 45°.
    ContrastPlane,
    /// 40% in a shell of outer radius `side / 2` and thickness `side / 7`, 10% elsewhere.
    SphereShell,
}

impl TestSpec {
    pub fn name(&self) -> String {
        match self {
            TestSpec::Homogeneous(r) => format!("homogeneous-{:.0}", r * 100.0),
            TestSpec::Gradient => "gradient".into(),
            TestSpec::ContrastPlane => "contrast-plane".into(),
            TestSpec::SphereShell => "sphere-shell".into(),
        }
    }

    /// Density at a point of the cube `[0, side]³`.
    pub fn density_at(&self, side: f64, p: [f64; 3]) -> f64 {
        let c = 0.5 * side;
        match *self {
            TestSpec::Homogeneous(r) => r,
            TestSpec::Gradient => 0.1 + 0.3 * (p[0] + p[1] + p[2]) / (3.0 * side),
            TestSpec::ContrastPlane => {
                let a = 22.5f64.to_radians();
                let h = std::f64::consts::FRAC_1_SQRT_2;
                let n = [-a.sin() * h, a.cos() * h, h];
                let s: f64 = (0..3).map(|i| (p[i] - c) * n[i]).sum();
                if s < 0.0 {
                    0.1
                } else {
                    0.4
                }
            }
            TestSpec::SphereShell => {
                let r = (0..3).map(|i| (p[i] - c).powi(2)).sum::<f64>().sqrt();
                if r <= c && r >= c - side / 7.0 {
                    0.4
                } else {
                    0.1
                }
            }
        }
    }

    /// Sampled on `res³` voxels.
    pub fn field(&self, side: f64, res: usize) -> Result<DensityField> {
        let v = side / res as f64;
        DensityField::from_fn([res; 3], [v; 3], [0.0; 3], |x, y, z| self.density_at(side, [x, y, z]))
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// Needs at least two points with strictly increasing x.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("interpolation needs two or more points with increasing x".into()));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            m[0] = Self::end_slope(h[0], h[1], delta[0], delta[1]);
            m[n - 1] = Self::end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { xs, ys, slopes: m })
    }

    fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
        let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if m.signum() != d0.signum() || d0 == 0.0 {
            0.0
        } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            m
        }
    }

    /// Value at `x`, held constant beyond the end points.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.ys[0], *self.ys.last().unwrap())
    }
}

/// Allowed drop between consecutive realized samples before calibration is refused.
pub const MONOTONE_TOLERANCE: f64 = 0.01;

/// Simplified input density to realized output density, fitted to calibration samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationCurve {
    /// Raw `(simplified, realized)` samples sorted by input.
    pub samples: Vec<(f64, f64)>,
    fit: Pchip,
}

impl CompensationCurve {
    /// Averages each realized value with its neighbors, makes the result non-decreasing and fits
    /// a monotone cubic through it. Drops larger than `tolerance` in the raw samples are errors.
    pub fn fit(mut samples: Vec<(f64, f64)>, tolerance: f64) -> Result<Self> {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        samples.dedup_by(|a, b| a.0 == b.0);
        for w in samples.windows(2) {
            if w[1].1 < w[0].1 - tolerance {
                return Err(Error::NonMonotone(format!(
                    "realized density falls from {:.4} at {:.4} to {:.4} at {:.4}",
                    w[0].1, w[0].0, w[1].1, w[1].0
                )));
            }
        }
        let n = samples.len();
        let mut ys: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 || i + 1 == n {
                    samples[i].1
                } else {
                    (samples[i - 1].1 + samples[i].1 + samples[i + 1].1) / 3.0
                }
            })
            .collect();
        for i in 1..n {
            ys[i] = ys[i].max(ys[i - 1]);
        }
        let xs = samples.iter().map(|s| s.0).collect();
        let fit = Pchip::new(xs, ys)?;
        Ok(Self { samples, fit })
    }

    /// Realized density for a simplified input density.
    pub fn forward(&self, simplified: f64) -> f64 {
        self.fit.eval(simplified)
    }

    /// Smallest simplified density whose realized density reaches `realized`, clamped to the
    /// sampled range.
    pub fn inverse(&self, realized: f64) -> f64 {
        let (x0, x1) = self.fit.domain();
        let (y0, y1) = self.fit.range();
        if realized <= y0 {
            return x0;
        }
        if realized >= y1 {
            return x1;
        }
        let (mut lo, mut hi) = (x0, x1);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.fit.eval(mid) < realized {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("simplified,realized\n");
        for (x, y) in &self.samples {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<f64>().ok());
            let mut cols = line.split(',');
            match (parse(cols.next()), parse(cols.next())) {
                (Some(x), Some(y)) => samples.push((x, y)),
                _ => return Err(Error::InvalidConfig(format!("compensation table line {}: {line}", i + 1))),
            }
        }
        Self::fit(samples, MONOTONE_TOLERANCE)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Two-column CSV with a header line.
pub fn curve_csv(header: [&str; 2], rows: &[(f64, f64)]) -> String {
    let mut out = format!("{},{}\n", header[0], header[1]);
    for (a, b) in rows {
        let _ = writeln!(out, "{a},{b}");
    }
    out
}

/// Cube used for calibration and accuracy runs.
#[derive(Debug, Clone)]
pub struct CubeSetup {
    /// The cube side is `2^exponent · w`.
    pub exponent: u32,
    pub profile: PrintProfile,
    /// Defaults to the depth whose A-route cells are solid, which allows about 80% density.
    pub max_depth: Option<u32>,
    pub dither: bool,
}

impl CubeSetup {
    pub fn new(exponent: u32, profile: PrintProfile) -> Self {
        Self { exponent, profile, max_depth: None, dither: true }
    }

    pub fn side(&self) -> f64 {
        2f64.powi(self.exponent as i32) * self.profile.line_width
    }

    fn params(&self) -> StructureParams {
        let mut p = StructureParams::cube(self.side(), self.profile.line_width);
        p.max_depth = self.max_depth.unwrap_or(2 * self.exponent - 2);
        if !self.dither {
            p.dither = None;
        }
        p
    }

    /// Grades, slices and plans the cube for a density field on `[0, side]³`.
    pub fn run(&self, field: &DensityField) -> Result<(Structure, Vec<LayerPlan>)> {
        let s = Structure::build(field, &self.params(), &[])?;
        let plans = cube_plans(&s, &self.profile)?;
        Ok((s, plans))
    }

    /// Realized density of the cube for one homogeneous request. Zero requests print nothing.
    pub fn realized_homogeneous(&self, rho: f64) -> Result<f64> {
        if rho <= 0.0 {
            return Ok(0.0);
        }
        let side = self.side();
        let field = DensityField::uniform(rho, [1, 1, 1], [side; 3], [0.0; 3])?;
        let (_, plans) = self.run(&field)?;
        Ok(realized_density(&plans, &Region::cube([0.0; 3], side), &self.profile))
    }
}

/// Runs one homogeneous cube per sample and fits the compensation curve.
pub fn calibrate_compensation(cube: &CubeSetup, density_samples: &[f64]) -> Result<CompensationCurve> {
    let samples: Vec<(f64, f64)> = density_samples
        .par_iter()
        .map(|&rho| cube.realized_homogeneous(rho).map(|r| (rho, r)))
        .collect::<Result<_>>()?;
    for (x, y) in &samples {
        log::info!("simplified {x:.4} -> realized {y:.4}");
    }
    CompensationCurve::fit(samples, MONOTONE_TOLERANCE)
}

/// `count` samples spread evenly over `[lo, hi]`.
pub fn sample_range(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

#[cfg(test)]
mod tests;
