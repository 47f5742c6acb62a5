//! Choosing subdivision levels: lower bound, error-diffusion dithering and top-skin support.

use crate::density_field::DensityField;
use crate::forest::{CellId, PrismCell, Side, SubdivisionForest, Triangle};
use crate::geometry::{PolygonSet, Vec2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Error diffusion weights by position relative to the current cell, in the unfolded surface
/// where "right" runs along the traversal and "up" along z: `[up-left, up, up-right, right,
/// down-right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionWeights(pub [f64; 5]);

impl Default for DiffusionWeights {
    fn default() -> Self {
        Self([1.0, 2.0, 1.0, 2.0, 0.0])
    }
}

impl DiffusionWeights {
    pub fn up_left(&self) -> f64 {
        self.0[0]
    }
    pub fn up(&self) -> f64 {
        self.0[1]
    }
    pub fn up_right(&self) -> f64 {
        self.0[2]
    }
    pub fn right(&self) -> f64 {
        self.0[3]
    }
    pub fn down_right(&self) -> f64 {
        self.0[4]
    }
}

type MassFn<'a> = Box<dyn Fn(&PrismCell) -> f64 + Sync + 'a>;

/// Memoized target masses.
pub struct Targets<'a> {
    source: MassFn<'a>,
    mass: Vec<f64>,
}

impl<'a> Targets<'a> {
    pub fn new(field: &'a DensityField) -> Self {
        Self::from_fn(move |c| field.target_mass(c))
    }

    /// Targets from an arbitrary per-cell mass function.
    pub fn from_fn(f: impl Fn(&PrismCell) -> f64 + Sync + 'a) -> Self {
        Self { source: Box::new(f), mass: Vec::new() }
    }

    pub fn mass(&mut self, forest: &SubdivisionForest, id: CellId) -> f64 {
        if self.mass.len() < forest.cell_count() {
            self.mass.resize(forest.cell_count(), f64::NAN);
        }
        let m = &mut self.mass[id.index()];
        if m.is_nan() {
            *m = (self.source)(forest.cell(id));
        }
        *m
    }

    /// Fills in every cell in `ids` in parallel.
    pub fn prefetch(&mut self, forest: &SubdivisionForest, ids: &[CellId]) {
        if self.mass.len() < forest.cell_count() {
            self.mass.resize(forest.cell_count(), f64::NAN);
        }
        let todo: Vec<CellId> = ids.iter().copied().filter(|id| self.mass[id.index()].is_nan()).collect();
        let source = &self.source;
        let vals: Vec<f64> = todo.par_iter().map(|&id| source(forest.cell(id))).collect();
        for (id, v) in todo.into_iter().zip(vals) {
            self.mass[id.index()] = v;
        }
    }
}

/// Top-down pass subdividing every leaf whose post-subdivision mass is still below its target.
///
/// Neighbor pre-subdivision can split cells the pass has already visited, so passes repeat until
/// nothing changes. Returns the number of subdivisions.
pub fn build_lower_bound(forest: &mut SubdivisionForest, field: &DensityField) -> usize {
    let mut targets = Targets::new(field);
    build_lower_bound_with(forest, &mut targets)
}

pub fn build_lower_bound_with(forest: &mut SubdivisionForest, targets: &mut Targets) -> usize {
    let before = forest.cell_count();
    loop {
        let count = forest.cell_count();
        let mut stack: Vec<CellId> = forest.roots().iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            if forest.cell(id).is_leaf() && forest.cell(id).depth < forest.max_depth() {
                let m_n = forest.mass_after_subdivision(id);
                if m_n < targets.mass(forest, id) {
                    forest.subdivide(id).expect("leaf below max depth");
                }
            }
            let c = forest.cell(id);
            if !c.is_leaf() {
                targets.prefetch(forest, &c.children.clone());
                stack.extend(forest.cell(id).children.iter().rev());
            }
        }
        if forest.cell_count() == count {
            break;
        }
    }
    log::debug!("lower bound added {} cells", forest.cell_count() - before);
    forest.cell_count() - before
}

/// Outcome of the dithering pass.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DitherStats {
    pub subdivisions: usize,
    pub skipped_for_level_constraint: usize,
    /// Error of cells with no unprocessed neighbor as target minus realized mass, mm³. Equals the
    /// total target mass minus the total realized mass.
    pub dropped_error: f64,
    pub dropped_count: usize,
}

/// Error-diffusion dithering over the leaves in Morton order.
pub fn dither(forest: &mut SubdivisionForest, field: &DensityField, weights: &DiffusionWeights) -> DitherStats {
    let mut targets = Targets::new(field);
    dither_with(forest, &mut targets, weights)
}

pub fn dither_with(forest: &mut SubdivisionForest, targets: &mut Targets, weights: &DiffusionWeights) -> DitherStats {
    forest.reset_dither_state();
    let order = forest.morton_leaves();
    targets.prefetch(forest, &order);
    let mut stats = DitherStats::default();
    for id in order {
        debug_assert!(forest.cell(id).is_leaf());
        let m_c = forest.current_mass(id);
        let m_n = forest.mass_after_subdivision(id);
        let m_t = targets.mass(forest, id);
        let m_e = forest.cell(id).error_mass;
        let mut m = m_c;
        if 0.5 * (m_c + m_n) + m_e < m_t && forest.cell(id).depth < forest.max_depth() {
            if forest.shallower_neighbors(id).is_empty() {
                let kids = forest.subdivide(id).expect("no shallower neighbors");
                for k in kids {
                    forest.cell_mut(k).processed = true;
                }
                m = m_n;
                stats.subdivisions += 1;
            } else {
                stats.skipped_for_level_constraint += 1;
            }
        }
        forest.cell_mut(id).processed = true;
        let e = m + m_e - m_t;
        let share = neighborhood(forest, id, weights);
        let total: f64 = share.iter().map(|&(_, w)| w).sum();
        if total > 0.0 {
            for (n, w) in share {
                forest.cell_mut(n).error_mass += e * w / total;
            }
        } else {
            stats.dropped_error -= e;
            stats.dropped_count += 1;
        }
    }
    if stats.dropped_count > 0 {
        log::debug!("dithering dropped {:.4} mm³ of error from {} cells", stats.dropped_error, stats.dropped_count);
    }
    stats
}

/// Unprocessed cells around `id` with their accumulated weights.
///
/// Direct neighbors sharing a position split its weight equally; a cell reached at several
/// positions collects all of them. Diagonals come from links of links.
fn neighborhood(forest: &SubdivisionForest, id: CellId, weights: &DiffusionWeights) -> Vec<(CellId, f64)> {
    let c = forest.cell(id);
    let mut acc: Vec<(CellId, f64)> = Vec::new();
    let mut add = |n: CellId, w: f64| {
        if w <= 0.0 || n == id || forest.cell(n).processed || !forest.cell(n).is_leaf() {
            return;
        }
        match acc.iter_mut().find(|(m, _)| *m == n) {
            Some((_, v)) => *v += w,
            None => acc.push((n, w)),
        }
    };
    for (side, w) in [(Side::Up, weights.up()), (Side::Right, weights.right())] {
        let list = c.links(side);
        for &n in list {
            add(n, w / list.len() as f64);
        }
    }
    let diagonal = |first: Side, second: Side| -> Option<CellId> {
        let via = |a: Side, b: Side| {
            c.links(a).iter().flat_map(|&n| forest.cell(n).links(b).iter().copied()).find(|&m| m != id)
        };
        via(first, second).or_else(|| via(second, first))
    };
    for (a, b, w) in [
        (Side::Up, Side::Left, weights.up_left()),
        (Side::Up, Side::Right, weights.up_right()),
        (Side::Down, Side::Right, weights.down_right()),
    ] {
        if let Some(n) = diagonal(a, b) {
            add(n, w);
        }
    }
    acc
}

/// Subdivides until every leaf overlapping a skin area reaches `min_level`. `skin` pairs a layer
/// height with the skin region of that layer. Returns the number of subdivisions.
pub fn enforce_skin_support(forest: &mut SubdivisionForest, skin: &[(f64, PolygonSet)], min_level: u32) -> usize {
    let min_level = min_level.min(forest.max_depth());
    let skin: Vec<(f64, Vec<Vec<Vec2>>)> = skin
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(z, s)| (*z, s.polygons.iter().map(|p| p.points.iter().map(|q| q.to_vec()).collect()).collect()))
        .collect();
    if skin.is_empty() {
        return 0;
    }
    let mut count = 0;
    loop {
        let todo: Vec<CellId> = forest
            .leaves()
            .filter(|&id| {
                let c = forest.cell(id);
                c.depth < min_level
                    && skin.iter().any(|(z, loops)| {
                        *z >= c.z_min && *z <= c.z_max && loops.iter().any(|l| triangle_meets_loop(&c.triangle, l))
                    })
            })
            .collect();
        if todo.is_empty() {
            break;
        }
        for id in todo {
            if forest.cell(id).is_leaf() {
                forest.subdivide(id).expect("leaf below max depth");
                count += 1;
            }
        }
    }
    count
}

/// Do the closed triangle and the closed region of a loop share a point of positive area
/// measure? Touching along an edge does not count.
fn triangle_meets_loop(t: &Triangle, lp: &[Vec2]) -> bool {
    if lp.len() < 3 {
        return false;
    }
    if lp.iter().any(|&p| t.contains(p)) || point_in_loop(t.centroid(), lp) {
        return true;
    }
    let tv = t.vertices();
    for i in 0..3 {
        let (a, b) = (tv[i], tv[(i + 1) % 3]);
        for j in 0..lp.len() {
            let (p, q) = (lp[j], lp[(j + 1) % lp.len()]);
            if proper_cross(a, b, p, q) {
                return true;
            }
        }
    }
    false
}

fn proper_cross(a: Vec2, b: Vec2, p: Vec2, q: Vec2) -> bool {
    let d1 = (b - a).cross(p - a);
    let d2 = (b - a).cross(q - a);
    let d3 = (q - p).cross(a - p);
    let d4 = (q - p).cross(b - p);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn point_in_loop(p: Vec2, lp: &[Vec2]) -> bool {
    let mut inside = false;
    let n = lp.len();
    for i in 0..n {
        let (a, b) = (lp[i], lp[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Summary written next to the toolpath.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GradingReport {
    pub leaves_per_depth: BTreeMap<u32, usize>,
    pub leaf_count: usize,
    pub total_target_mass: f64,
    pub total_realized_mass: f64,
    pub lower_bound_cells_added: usize,
    pub dither: DitherStats,
    pub skin_subdivisions: usize,
}

/// Runs lower bound, dithering (unless disabled) and skin support, then summarizes.
pub fn grade(
    forest: &mut SubdivisionForest,
    field: &DensityField,
    weights: Option<&DiffusionWeights>,
    skin: &[(f64, PolygonSet)],
    skin_min_level: u32,
) -> GradingReport {
    let mut targets = Targets::new(field);
    let lower = build_lower_bound_with(forest, &mut targets);
    let total_target_mass: f64 = forest.roots().iter().map(|&r| targets.mass(forest, r)).sum();
    let dither = weights.map(|w| dither_with(forest, &mut targets, w)).unwrap_or_default();
    let skin_subdivisions = enforce_skin_support(forest, skin, skin_min_level);
    let mut leaves_per_depth = BTreeMap::new();
    for id in forest.leaves() {
        *leaves_per_depth.entry(forest.cell(id).depth).or_insert(0) += 1;
    }
    GradingReport {
        leaf_count: forest.leaf_count(),
        leaves_per_depth,
        total_target_mass,
        total_realized_mass: forest.total_current_mass(),
        lower_bound_cells_added: lower,
        dither,
        skin_subdivisions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::route_density;

    fn field(rho: f64, l: f64) -> DensityField {
        DensityField::uniform(rho, [4, 4, 4], [l / 4.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn zero_target_keeps_roots() {
        let mut f = SubdivisionForest::new(6.08, 0.38, 8).unwrap();
        build_lower_bound(&mut f, &field(0.0, 6.08));
        assert_eq!(f.leaf_count(), 4);
    }

    #[test]
    fn lower_bound_postcondition() {
        let l = 6.08;
        let g = DensityField::from_fn([8, 8, 8], [l / 8.0; 3], [0.0; 3], |x, y, z| (x + y + z) / (3.0 * l)).unwrap();
        let mut f = SubdivisionForest::new(l, 0.38, 6).unwrap();
        build_lower_bound(&mut f, &g);
        f.audit().unwrap();
        for id in f.leaves() {
            let c = f.cell(id);
            assert!(c.depth == f.max_depth() || f.mass_after_subdivision(id) >= g.target_mass(c));
        }
    }

    #[test]
    fn exact_fit_dithers_nothing() {
        let (l, w) = (6.08, 0.38);
        let mut f = SubdivisionForest::new(l, w, 8).unwrap();
        f.subdivide_uniform(4).unwrap();
        // closed-form level geometry, so that targets tie exactly with the current masses
        let mut t = Targets::from_fn(|c| {
            let cath = l * 2f64.powf(-((c.depth + 1) as f64) / 2.0);
            let h = l * 2f64.powi(-(c.depth.div_ceil(2) as i32));
            route_density(c.kind.route, cath, w) * (0.5 * cath * cath * h)
        });
        let stats = dither_with(&mut f, &mut t, &DiffusionWeights::default());
        assert_eq!(stats.subdivisions, 0);
        assert!(stats.dropped_error.abs() < 1e-9);
        for id in f.leaves() {
            assert!(f.cell(id).error_mass.abs() < 1e-9);
        }
    }

    #[test]
    fn weights_default() {
        let w = DiffusionWeights::default();
        assert_eq!((w.up_left(), w.up(), w.up_right(), w.right(), w.down_right()), (1.0, 2.0, 1.0, 2.0, 0.0));
    }

    #[test]
    fn empty_skin_is_noop() {
        let mut f = SubdivisionForest::new(6.08, 0.38, 8).unwrap();
        assert_eq!(enforce_skin_support(&mut f, &[], 4), 0);
        assert_eq!(f.leaf_count(), 4);
    }
}
