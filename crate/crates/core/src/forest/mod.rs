//! The subdivision tree and connectivity graph of typed prism cells.
//!
//! The starting cube of side `l_init` is cut along both base diagonals into four Q-prisms whose
//! surface patches form a pyramid. Q-prisms split into four H-prisms (two rows of two) and
//! H-prisms into two Q-prisms; the base triangle is always bisected along the altitude from its
//! right angle. Geometry conventions used throughout:
//!
//! * roots have depth 0; Q-prisms sit at even depth and H-prisms at odd depth,
//! * the cathetus of a depth-`n` cell is `l_init · 2^-(n+1)/2` (the starting cube counts as level
//!   zero of the halving sequence),
//! * cell height is `l_init · 2^-ceil(n/2)`, so every Q-prism is a quarter and every H-prism a
//!   half of an axis-aligned cube.
//!
//! Every leaf keeps four neighbor lists. Left/right follow the traversal of the surface (which
//! runs clockwise around each layer's curve); up/down link vertically stacked leaves whose base
//! triangles overlap. Linked leaves never differ by more than one level.

mod cell;
mod kind;

pub use cell::{CellId, FaceSegment, PrismCell, Side, Triangle};
pub use kind::{child_routes, production, CellKind, Direction, Embedding, Face, Route, Shape};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use serde::Serialize;
use std::f64::consts::SQRT_2;

/// Ratio `M_N / M_C` for L- and R-routes.
pub const LR_MASS_GROWTH: f64 = 1.0 + SQRT_2 / 2.0;

#[derive(Debug, Clone)]
pub struct SubdivisionForest {
    cells: Vec<PrismCell>,
    roots: [CellId; 4],
    l_init: f64,
    w: f64,
    max_depth: u32,
    origin: [f64; 3],
}

/// Returns `i` such that `l_init = 2^i · w`, if there is one.
pub fn power_of_two_exponent(l_init: f64, w: f64) -> Option<u32> {
    if !(l_init > 0.0 && w > 0.0) {
        return None;
    }
    let ratio = l_init / w;
    let i = ratio.log2().round();
    if !(0.0..=40.0).contains(&i) {
        return None;
    }
    ((ratio / 2f64.powi(i as i32) - 1.0).abs() < 1e-9).then_some(i as u32)
}

/// Deepest level whose cathetus is still at least `2√2 · w`.
pub fn default_max_depth(l_init: f64, w: f64) -> u32 {
    let i = power_of_two_exponent(l_init, w).unwrap_or_else(|| (l_init / w).log2().floor() as u32);
    // cathetus 2^(i - (n+1)/2) w >= 2^1.5 w  <=>  n <= 2i - 4
    (2 * i).saturating_sub(4)
}

impl SubdivisionForest {
    /// Four QCA⁻ roots tiling the cube `[0, l_init]³`.
    pub fn new(l_init: f64, w: f64, max_depth: u32) -> Result<Self> {
        Self::with_origin(l_init, w, max_depth, [0.0; 3])
    }

    pub fn with_origin(l_init: f64, w: f64, max_depth: u32, origin: [f64; 3]) -> Result<Self> {
        if power_of_two_exponent(l_init, w).is_none() {
            return Err(Error::NotPowerOfTwoCube { l_init, w });
        }
        let [x0, y0, z0] = origin;
        let corners = [
            Vec2::new(x0, y0),
            Vec2::new(x0 + l_init, y0),
            Vec2::new(x0 + l_init, y0 + l_init),
            Vec2::new(x0, y0 + l_init),
        ];
        let center = Vec2::new(x0 + l_init / 2.0, y0 + l_init / 2.0);
        let kind: CellKind = CellKind::new(Shape::Q, Embedding::C, Route::A, Direction::Minus);
        // bottom, left, top, right: the order of the clockwise traversal
        let sides = [(0, 1), (3, 0), (2, 3), (1, 2)];
        let cells: Vec<PrismCell> = sides
            .iter()
            .map(|&(i, j)| PrismCell {
                kind,
                depth: 0,
                triangle: Triangle { a: corners[i], b: corners[j], c: center },
                z_min: z0,
                z_max: z0 + l_init,
                parent: None,
                children: Vec::new(),
                links: Default::default(),
                error_mass: 0.0,
                processed: false,
            })
            .collect();
        let mut forest =
            Self { cells, roots: [CellId(0), CellId(1), CellId(2), CellId(3)], l_init, w, max_depth, origin };
        for k in 0..4 {
            let next = CellId(((k + 1) % 4) as u32);
            forest.cells[k].links[Side::Right as usize].push(next);
            forest.cells[next.index()].links[Side::Left as usize].push(CellId(k as u32));
        }
        Ok(forest)
    }

    pub fn l_init(&self) -> f64 {
        self.l_init
    }

    pub fn line_width(&self) -> f64 {
        self.w
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn set_max_depth(&mut self, max_depth: u32) {
        self.max_depth = max_depth;
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn roots(&self) -> [CellId; 4] {
        self.roots
    }

    pub fn cell(&self, id: CellId) -> &PrismCell {
        &self.cells[id.index()]
    }

    pub fn cell_mut(&mut self, id: CellId) -> &mut PrismCell {
        &mut self.cells[id.index()]
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = CellId> {
        (0..self.cells.len() as u32).map(CellId)
    }

    pub fn leaves(&self) -> impl Iterator<Item = CellId> + '_ {
        self.ids().filter(|&id| self.cell(id).is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_leaf()).count()
    }

    /// Leaves in depth-first order with children visited bottom row first, each row along the
    /// traversal direction.
    pub fn morton_leaves(&self) -> Vec<CellId> {
        let mut out = Vec::new();
        let mut stack: Vec<CellId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let c = self.cell(id);
            if c.is_leaf() {
                out.push(id);
            } else {
                stack.extend(c.children.iter().rev());
            }
        }
        out
    }

    /// Cathetus length of a depth-`n` cell.
    pub fn cathetus_at(&self, depth: u32) -> f64 {
        self.l_init * 2f64.powf(-((depth + 1) as f64) / 2.0)
    }

    /// Height of a depth-`n` cell.
    pub fn height_at(&self, depth: u32) -> f64 {
        self.l_init * 2f64.powi(-(depth.div_ceil(2) as i32))
    }

    pub fn volume_at(&self, depth: u32) -> f64 {
        let l = self.cathetus_at(depth);
        0.5 * l * l * self.height_at(depth)
    }

    /// Simplified density of a route at a depth.
    pub fn density_for(&self, route: Route, depth: u32) -> f64 {
        route_density(route, self.cathetus_at(depth), self.w)
    }

    pub fn current_density(&self, id: CellId) -> f64 {
        let c = self.cell(id);
        self.density_for(c.kind.route, c.depth)
    }

    pub fn current_mass(&self, id: CellId) -> f64 {
        let c = self.cell(id);
        self.density_for(c.kind.route, c.depth) * self.volume_at(c.depth)
    }

    /// Mass the children would carry after one subdivision.
    pub fn mass_after_subdivision(&self, id: CellId) -> f64 {
        self.current_mass(id) * mass_growth(self.cell(id).kind.route)
    }

    /// Splits a leaf, first splitting any linked leaf that is shallower so that linked leaves
    /// never differ by more than one level. Returns the children in traversal order, bottom row
    /// first.
    pub fn subdivide(&mut self, id: CellId) -> Result<Vec<CellId>> {
        {
            let c = self.cell(id);
            if !c.is_leaf() {
                return Err(Error::NotALeaf(id.index()));
            }
            if c.depth >= self.max_depth {
                return Err(Error::MaxDepthExceeded { cell: id.index(), max_depth: self.max_depth });
            }
        }
        while let Some(&n) = self.shallower_neighbors(id).first() {
            self.subdivide(n)?;
        }
        Ok(self.split(id))
    }

    /// Linked leaves that are shallower than `id`.
    pub fn shallower_neighbors(&self, id: CellId) -> Vec<CellId> {
        let d = self.cell(id).depth;
        self.cell(id).all_links().filter(|&n| self.cell(n).depth < d).collect()
    }

    fn split(&mut self, id: CellId) -> Vec<CellId> {
        let p = self.cells[id.index()].clone();
        let (t_ac, t_bc) = p.triangle.bisect();
        let tris = match p.kind.direction {
            Direction::Plus => [t_ac, t_bc],
            Direction::Minus => [t_bc, t_ac],
        };
        let rows = production(p.kind);
        let z_ranges: Vec<(f64, f64)> = if rows.len() == 1 {
            vec![(p.z_min, p.z_max)]
        } else {
            let mid = 0.5 * (p.z_min + p.z_max);
            vec![(p.z_min, mid), (mid, p.z_max)]
        };
        let first = self.cells.len() as u32;
        let mut grid: Vec<Vec<CellId>> = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let mut ids = Vec::new();
            for (k, &kind) in row.iter().enumerate() {
                let cid = CellId(self.cells.len() as u32);
                self.cells.push(PrismCell {
                    kind,
                    depth: p.depth + 1,
                    triangle: tris[k],
                    z_min: z_ranges[r].0,
                    z_max: z_ranges[r].1,
                    parent: Some(id),
                    children: Vec::new(),
                    links: Default::default(),
                    error_mass: 0.0,
                    processed: p.processed,
                });
                ids.push(cid);
            }
            grid.push(ids);
        }
        let children: Vec<CellId> = (first..self.cells.len() as u32).map(CellId).collect();

        let overlap_z = |a: (f64, f64), b: &PrismCell| a.0 < b.z_max && b.z_min < a.1;
        let nrows = grid.len();
        for (r, row) in grid.iter().enumerate() {
            let zr = z_ranges[r];
            let left: Vec<CellId> =
                p.links(Side::Left).iter().copied().filter(|&n| overlap_z(zr, self.cell(n))).collect();
            let right: Vec<CellId> =
                p.links(Side::Right).iter().copied().filter(|&n| overlap_z(zr, self.cell(n))).collect();
            self.cells[row[0].index()].links[Side::Left as usize] = left;
            self.cells[row[1].index()].links[Side::Right as usize] = right;
            self.cells[row[0].index()].links[Side::Right as usize] = vec![row[1]];
            self.cells[row[1].index()].links[Side::Left as usize] = vec![row[0]];
            for &ch in row {
                let tri = self.cell(ch).triangle;
                if r == 0 {
                    let down: Vec<CellId> =
                        p.links(Side::Down).iter().copied().filter(|&n| self.cell(n).triangle.overlaps(&tri)).collect();
                    self.cells[ch.index()].links[Side::Down as usize] = down;
                }
                if r + 1 == nrows {
                    let up: Vec<CellId> =
                        p.links(Side::Up).iter().copied().filter(|&n| self.cell(n).triangle.overlaps(&tri)).collect();
                    self.cells[ch.index()].links[Side::Up as usize] = up;
                }
            }
        }
        if nrows == 2 {
            for k in 0..2 {
                let (lo, hi) = (grid[0][k], grid[1][k]);
                self.cells[lo.index()].links[Side::Up as usize].push(hi);
                self.cells[hi.index()].links[Side::Down as usize].push(lo);
            }
        }

        // rewire the neighbors' back-links in place of the parent
        for side in Side::ALL {
            let back = side.opposite() as usize;
            for &n in p.links(side) {
                let replacing: Vec<CellId> =
                    children.iter().copied().filter(|&ch| self.cell(ch).links(side).contains(&n)).collect();
                let list = &mut self.cells[n.index()].links[back];
                if let Some(pos) = list.iter().position(|&x| x == id) {
                    list.splice(pos..pos + 1, replacing);
                }
            }
        }
        let pc = &mut self.cells[id.index()];
        pc.children = children.clone();
        pc.links = Default::default();
        children
    }

    /// Subdivides every leaf shallower than `depth` until all leaves reach it.
    pub fn subdivide_uniform(&mut self, depth: u32) -> Result<()> {
        for d in 0..depth {
            let batch: Vec<CellId> = self.leaves().filter(|&id| self.cell(id).depth == d).collect();
            for id in batch {
                if self.cell(id).is_leaf() {
                    self.subdivide(id)?;
                }
            }
        }
        Ok(())
    }

    /// Leaf whose prism contains the point; z on a shared boundary resolves to the upper cell.
    pub fn leaf_at(&self, p: Vec2, z: f64) -> Option<CellId> {
        let pick = |ids: &[CellId]| {
            let fits = |id: &CellId, strict: bool| {
                let c = self.cell(*id);
                c.triangle.contains_closed(p) && z >= c.z_min && (if strict { z < c.z_max } else { z <= c.z_max })
            };
            ids.iter().copied().find(|id| fits(id, true)).or_else(|| ids.iter().copied().find(|id| fits(id, false)))
        };
        let mut cur = pick(&self.roots)?;
        loop {
            let c = self.cell(cur);
            if c.is_leaf() {
                return Some(cur);
            }
            cur = pick(&c.children)?;
        }
    }

    /// Total simplified mass over all leaves.
    pub fn total_current_mass(&self) -> f64 {
        self.leaves().map(|id| self.current_mass(id)).sum()
    }

    /// Checks link symmetry, leaf-only links and the one-level difference rule.
    pub fn audit(&self) -> std::result::Result<(), String> {
        for id in self.ids() {
            let c = self.cell(id);
            if !c.is_leaf() {
                if c.all_links().next().is_some() {
                    return Err(format!("inner cell {id} keeps links"));
                }
                continue;
            }
            for side in Side::ALL {
                for &n in c.links(side) {
                    let nc = self.cell(n);
                    if !nc.is_leaf() {
                        return Err(format!("{id} links to inner cell {n}"));
                    }
                    if !nc.links(side.opposite()).contains(&id) {
                        return Err(format!("{id} -> {n} ({side:?}) has no mirror link"));
                    }
                    if nc.depth.abs_diff(c.depth) > 1 {
                        return Err(format!("{id} (depth {}) linked to {n} (depth {})", c.depth, nc.depth));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializable snapshot of all cells and links.
    pub fn dump(&self) -> ForestDump {
        ForestDump {
            l_init: self.l_init,
            line_width: self.w,
            max_depth: self.max_depth,
            roots: self.roots.iter().map(|r| r.0).collect(),
            cells: self
                .ids()
                .map(|id| {
                    let c = self.cell(id);
                    CellDump {
                        id: id.0,
                        kind: c.kind.to_string(),
                        depth: c.depth,
                        triangle: [
                            [c.triangle.a.x, c.triangle.a.y],
                            [c.triangle.b.x, c.triangle.b.y],
                            [c.triangle.c.x, c.triangle.c.y],
                        ],
                        z: [c.z_min, c.z_max],
                        children: c.children.iter().map(|x| x.0).collect(),
                        left: c.links(Side::Left).iter().map(|x| x.0).collect(),
                        right: c.links(Side::Right).iter().map(|x| x.0).collect(),
                        up: c.links(Side::Up).iter().map(|x| x.0).collect(),
                        down: c.links(Side::Down).iter().map(|x| x.0).collect(),
                    }
                })
                .collect(),
        }
    }

    pub(crate) fn reset_dither_state(&mut self) {
        for c in &mut self.cells {
            c.error_mass = 0.0;
            c.processed = false;
        }
    }
}

/// `w / l · √2` for A-routes, `w / l` for L and R.
pub fn route_density(route: Route, cathetus: f64, w: f64) -> f64 {
    match route {
        Route::A => w / cathetus * SQRT_2,
        Route::L | Route::R => w / cathetus,
    }
}

/// `M_N / M_C` for a route.
pub fn mass_growth(route: Route) -> f64 {
    match route {
        Route::A => 1.0,
        Route::L | Route::R => LR_MASS_GROWTH,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestDump {
    pub l_init: f64,
    pub line_width: f64,
    pub max_depth: u32,
    pub roots: Vec<u32>,
    pub cells: Vec<CellDump>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellDump {
    pub id: u32,
    pub kind: String,
    pub depth: u32,
    pub triangle: [[f64; 2]; 3],
    pub z: [f64; 2],
    pub children: Vec<u32>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub up: Vec<u32>,
    pub down: Vec<u32>,
}
