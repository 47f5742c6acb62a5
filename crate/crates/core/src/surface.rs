//! Patch edges of the space-filling surface and their continuity across level differences.
//!
//! The surface is never built as a mesh. Each leaf's patch is represented by the two edges where
//! it meets its entry and exit faces, as z-monotone polylines on those faces. Every linked pair of
//! leaves shares one *interface* edge for the z-range they have in common; the cell on each side
//! reads its entry or exit point from it, so horizontally linked patches always meet.
//!
//! The interface follows the finer cell's canonical edge, which turns the coarser patch into a
//! ruled surface (step 1). Where interfaces stacked on one face line end at different points the
//! coarser one has part of its edge flipped within the face (step 2). Where two finer cells meet
//! below or above a coarser cell, their interface end is moved onto the coarser cell's slice
//! segment and flipped the same way (step 3).

use crate::error::{Error, Result};
use crate::forest::{CellId, Embedding, Face, FaceSegment, Side, SubdivisionForest};
use crate::geometry::Vec2;
use serde::Serialize;
use std::io::Write;

/// Allowed mismatch between edges that should meet: two fixed-point units.
pub const CONTINUITY_TOLERANCE_MM: f64 = 0.002;

/// One patch edge: a polyline on a vertical face, parameterized by `t ∈ [0, 1]` along the face
/// segment at each knot height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchEdge {
    pub owner: CellId,
    pub face: Face,
    pub segment: FaceSegment,
    /// `(z, t)` knots with strictly increasing z.
    pub knots: Vec<(f64, f64)>,
    /// The edge belongs to a coarser cell's ruled patch as well.
    pub ruled: bool,
    pub flipped: bool,
}

impl PatchEdge {
    pub fn z_range(&self) -> (f64, f64) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    /// Face parameter at `z`, clamped to the edge's range.
    pub fn param_at(&self, z: f64) -> f64 {
        let k = &self.knots;
        if z <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if z <= w[1].0 {
                let s = (z - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + s * (w[1].1 - w[0].1);
            }
        }
        k[k.len() - 1].1
    }

    pub fn point_at(&self, z: f64) -> Vec2 {
        self.segment.at(self.param_at(z))
    }

    /// Largest horizontal speed `|dp/dz|` over the pieces of the edge.
    pub fn max_speed(&self) -> f64 {
        let len = self.segment.length();
        self.knots.windows(2).map(|w| (w[1].1 - w[0].1).abs() * len / (w[1].0 - w[0].0)).fold(0.0, f64::max)
    }

    /// Moves the top (`at_top`) or bottom end to parameter `target` by mirroring the part of the
    /// edge beyond the altitude where it passes halfway between the old and the new end. When
    /// the edge never reaches that halfway parameter the end is sheared into place linearly.
    /// Returns the flip altitude, or `None` for the linear fallback.
    fn move_end(&mut self, at_top: bool, target: f64) -> Option<f64> {
        let target = target.clamp(0.0, 1.0);
        if !at_top {
            self.mirror_z();
        }
        let res = self.move_top(target);
        if !at_top {
            self.mirror_z();
        }
        self.flipped = true;
        if at_top {
            res
        } else {
            res.map(|z| -z)
        }
    }

    fn mirror_z(&mut self) {
        for k in &mut self.knots {
            k.0 = -k.0;
        }
        self.knots.reverse();
    }

    fn move_top(&mut self, target: f64) -> Option<f64> {
        let n = self.knots.len();
        let t_end = self.knots[n - 1].1;
        let t_f = 0.5 * (t_end + target);
        // topmost crossing of t_f
        for i in (0..n - 1).rev() {
            let (za, ta) = self.knots[i];
            let (zb, tb) = self.knots[i + 1];
            let lo = ta.min(tb);
            let hi = ta.max(tb);
            if t_f < lo || t_f > hi || ta == tb {
                continue;
            }
            let z_f = za + (t_f - ta) / (tb - ta) * (zb - za);
            let mut knots: Vec<(f64, f64)> = self.knots[..=i].to_vec();
            if z_f > za {
                knots.push((z_f, t_f));
            }
            for &(z, t) in &self.knots[i + 1..] {
                if z > z_f {
                    knots.push((z, (2.0 * t_f - t).clamp(0.0, 1.0)));
                }
            }
            if knots.len() < 2 {
                break;
            }
            let last = knots.len() - 1;
            knots[last].1 = target;
            self.knots = knots;
            return Some(z_f);
        }
        let (z0, _) = self.knots[0];
        let z1 = self.knots[n - 1].0;
        let delta = target - t_end;
        for k in &mut self.knots {
            k.1 = (k.1 + delta * (k.0 - z0) / (z1 - z0)).clamp(0.0, 1.0);
        }
        None
    }
}

/// The canonical (unadjusted) edges of a leaf's patch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellPatch {
    pub cell: CellId,
    pub entry: PatchEdge,
    pub exit: PatchEdge,
}

impl CellPatch {
    /// The sliced segment at `z` from entry to exit.
    pub fn slice(&self, z: f64) -> (Vec2, Vec2) {
        (self.entry.point_at(z), self.exit.point_at(z))
    }
}

/// Canonical patch of a cell, from its kind alone.
///
/// Both edges run between the far end of their face and the vertex the two faces share, with
/// the same fraction of the way at every height, so each slice is parallel to the third side.
/// Moving toward the shared vertex means moving to its side of the traversal direction, which
/// the embedding fixes: expanding patches move from right to left as z rises.
pub fn canonical_patch(forest: &SubdivisionForest, id: CellId) -> CellPatch {
    let c = forest.cell(id);
    let (f_in, f_out) = c.kind.faces();
    let tri = c.triangle;
    let v = tri.shared_vertex(f_in, f_out);
    let seg_in = tri.face(f_in);
    let seg_out = tri.face(f_out);
    let dir = seg_out.mid() - seg_in.mid();
    let v_on_left = dir.cross(v - seg_in.mid()) > 0.0;
    let toward_v = v_on_left == (c.kind.embedding == Embedding::E);
    let edge = |face: Face, seg: FaceSegment| {
        let t_v = if seg.from == v { 0.0 } else { 1.0 };
        let t_far = 1.0 - t_v;
        let (t0, t1) = if toward_v { (t_far, t_v) } else { (t_v, t_far) };
        PatchEdge {
            owner: id,
            face,
            segment: seg,
            knots: vec![(c.z_min, t0), (c.z_max, t1)],
            ruled: false,
            flipped: false,
        }
    };
    CellPatch { cell: id, entry: edge(f_in, seg_in), exit: edge(f_out, seg_out) }
}

/// Shared edge between a cell and its right neighbor over their common z-range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interface {
    pub left: CellId,
    pub right: CellId,
    pub edge: PatchEdge,
}

impl Interface {
    pub fn z_range(&self) -> (f64, f64) {
        self.edge.z_range()
    }
}

/// A logged change to an interface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjustment {
    pub interface: usize,
    pub step: u8,
    pub at_top: bool,
    pub from: [f64; 2],
    pub to: [f64; 2],
    /// `None` when the edge had to be sheared instead of flipped.
    pub flip_z: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnforcementStats {
    pub interfaces: usize,
    pub ruled: usize,
    pub step2_flips: usize,
    pub step3_flips: usize,
    pub linear_fallbacks: usize,
    pub residual_count: usize,
    pub worst_residual_mm: f64,
}

/// All interfaces of a graded forest, indexed by cell.
#[derive(Debug, Clone, Serialize)]
pub struct SurfaceSet {
    pub interfaces: Vec<Interface>,
    /// Per cell index: interfaces where the cell is on the left (its exit), sorted by z.
    exits: Vec<Vec<usize>>,
    /// Per cell index: interfaces where the cell is on the right (its entry), sorted by z.
    entries: Vec<Vec<usize>>,
    pub adjustments: Vec<Adjustment>,
    pub stats: EnforcementStats,
}

fn lookup(list: &[usize], interfaces: &[Interface], z: f64) -> Option<usize> {
    let mut best = None;
    for &i in list {
        let (z0, z1) = interfaces[i].z_range();
        if z >= z0 && z < z1 {
            return Some(i);
        }
        if z >= z0 && z <= z1 {
            best = Some(i);
        }
    }
    best
}

impl SurfaceSet {
    /// Step 1: one interface per linked pair, following the finer cell's canonical edge.
    pub fn from_forest(forest: &SubdivisionForest) -> Self {
        let n = forest.cell_count();
        let mut exits = vec![Vec::new(); n];
        let mut entries = vec![Vec::new(); n];
        let mut interfaces = Vec::new();
        for id in forest.leaves() {
            let c = forest.cell(id);
            for &r in c.links(Side::Right) {
                let rc = forest.cell(r);
                let edge = if rc.depth > c.depth {
                    let mut e = canonical_patch(forest, r).entry;
                    e.ruled = true;
                    e
                } else {
                    let mut e = canonical_patch(forest, id).exit;
                    e.ruled = rc.depth < c.depth;
                    e
                };
                let idx = interfaces.len();
                interfaces.push(Interface { left: id, right: r, edge });
                exits[id.index()].push(idx);
                entries[r.index()].push(idx);
            }
        }
        let by_z =
            |v: &mut Vec<usize>| v.sort_by(|&a, &b| interfaces[a].z_range().0.total_cmp(&interfaces[b].z_range().0));
        for v in exits.iter_mut().chain(entries.iter_mut()) {
            by_z(v);
        }
        let stats = EnforcementStats {
            interfaces: interfaces.len(),
            ruled: interfaces.iter().filter(|i| i.edge.ruled).count(),
            ..Default::default()
        };
        Self { interfaces, exits, entries, adjustments: Vec::new(), stats }
    }

    pub fn exit_interface(&self, cell: CellId, z: f64) -> Option<usize> {
        lookup(self.exits.get(cell.index())?, &self.interfaces, z)
    }

    pub fn entry_interface(&self, cell: CellId, z: f64) -> Option<usize> {
        lookup(self.entries.get(cell.index())?, &self.interfaces, z)
    }

    pub fn exit_point(&self, cell: CellId, z: f64) -> Option<Vec2> {
        self.exit_interface(cell, z).map(|i| self.interfaces[i].edge.point_at(z))
    }

    pub fn entry_point(&self, cell: CellId, z: f64) -> Option<Vec2> {
        self.entry_interface(cell, z).map(|i| self.interfaces[i].edge.point_at(z))
    }

    pub fn exits_of(&self, cell: CellId) -> &[usize] {
        &self.exits[cell.index()]
    }

    pub fn entries_of(&self, cell: CellId) -> &[usize] {
        &self.entries[cell.index()]
    }

    /// The sliced segment of a cell at `z`.
    pub fn slice_cell(&self, cell: CellId, z: f64) -> Option<(Vec2, Vec2)> {
        Some((self.entry_point(cell, z)?, self.exit_point(cell, z)?))
    }

    /// Interfaces ending at `z` (top end if `at_top`) among the given cells' exits and entries.
    fn interfaces_at(&self, cells: &[CellId], z: f64, at_top: bool) -> Vec<usize> {
        let mut out = Vec::new();
        for &c in cells {
            for &i in self.exits[c.index()].iter().chain(&self.entries[c.index()]) {
                let (z0, z1) = self.interfaces[i].z_range();
                let zz = if at_top { z1 } else { z0 };
                if (zz - z).abs() < 1e-9 && !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Interfaces directly above `i` on the same face line, with overlapping segments.
    fn stacked_above(&self, forest: &SubdivisionForest, i: usize) -> Vec<usize> {
        let it = &self.interfaces[i];
        let (_, z1) = it.z_range();
        let mut above: Vec<CellId> = Vec::new();
        for c in [it.left, it.right] {
            for &u in forest.cell(c).links(Side::Up) {
                if !above.contains(&u) {
                    above.push(u);
                }
            }
        }
        self.interfaces_at(&above, z1, false)
            .into_iter()
            .filter(|&j| collinear_overlap(&it.edge.segment, &self.interfaces[j].edge.segment))
            .collect()
    }

    fn level(&self, forest: &SubdivisionForest, i: usize) -> (u32, u32) {
        let it = &self.interfaces[i];
        let (a, b) = (forest.cell(it.left).depth, forest.cell(it.right).depth);
        (a.max(b), a.min(b))
    }

    fn end_point(&self, i: usize, at_top: bool) -> Vec2 {
        let e = &self.interfaces[i].edge;
        let (z0, z1) = e.z_range();
        e.point_at(if at_top { z1 } else { z0 })
    }

    fn adjust(&mut self, i: usize, at_top: bool, target: Vec2, step: u8) {
        let seg = self.interfaces[i].edge.segment;
        let t = seg.param_of(target).clamp(0.0, 1.0);
        let from = self.end_point(i, at_top);
        let flip_z = self.interfaces[i].edge.move_end(at_top, t);
        let to = self.end_point(i, at_top);
        match (step, flip_z) {
            (_, None) => self.stats.linear_fallbacks += 1,
            (2, _) => self.stats.step2_flips += 1,
            _ => self.stats.step3_flips += 1,
        }
        self.adjustments.push(Adjustment {
            interface: i,
            step,
            at_top,
            from: [from.x, from.y],
            to: [to.x, to.y],
            flip_z,
        });
    }

    /// Step 2: stacked interfaces on one face line must meet; the coarser one gives way.
    fn vertical_side(&mut self, forest: &SubdivisionForest) -> usize {
        let mut changed = 0;
        for i in 0..self.interfaces.len() {
            for j in self.stacked_above(forest, i) {
                let (pi, pj) = (self.end_point(i, true), self.end_point(j, false));
                if pi.dist(pj) <= CONTINUITY_TOLERANCE_MM {
                    continue;
                }
                let (li, lj) = (self.level(forest, i), self.level(forest, j));
                // the coarser interface moves; among equals the upper one does
                let upper_moves = lj <= li;
                let (mover, at_top, target) = if upper_moves { (j, false, pi) } else { (i, true, pj) };
                if self.interfaces[mover].edge.segment.length() > 0.0
                    && on_segment(&self.interfaces[mover].edge.segment, target)
                {
                    self.adjust(mover, at_top, target, 2);
                    changed += 1;
                }
            }
        }
        changed
    }

    /// Step 3: where both cells of an interface sit under (or over) one coarser cell, the
    /// interface end moves onto that cell's slice segment.
    fn vertical_mid(&mut self, forest: &SubdivisionForest) -> usize {
        let mut changed = 0;
        for i in 0..self.interfaces.len() {
            for at_top in [true, false] {
                let it = &self.interfaces[i];
                let side = if at_top { Side::Up } else { Side::Down };
                let (z0, z1) = it.z_range();
                let z = if at_top { z1 } else { z0 };
                let l = forest.cell(it.left).links(side);
                let r = forest.cell(it.right).links(side);
                if l.len() != 1 || r.len() != 1 || l[0] != r[0] {
                    continue;
                }
                let c = l[0];
                let cz = forest.cell(c);
                if !(cz.depth < forest.cell(it.left).depth || cz.depth < forest.cell(it.right).depth) {
                    continue;
                }
                let Some((a, b)) = self.slice_cell(c, z) else { continue };
                let seg = it.edge.segment;
                let p = self.end_point(i, at_top);
                let Some(target) = line_segment_meet(seg, a, b) else { continue };
                if p.dist(target) > CONTINUITY_TOLERANCE_MM {
                    self.adjust(i, at_top, target, 3);
                    changed += 1;
                }
            }
        }
        changed
    }

    /// Applies steps 2 and 3 until nothing changes (bounded), then records residuals.
    pub fn enforce(&mut self, forest: &SubdivisionForest) {
        for _ in 0..8 {
            let a = self.vertical_side(forest);
            let b = self.vertical_mid(forest);
            if a + b == 0 {
                break;
            }
        }
        let (count, worst) = self.residuals(forest);
        self.stats.residual_count = count;
        self.stats.worst_residual_mm = worst;
        if count > 0 {
            log::warn!("{count} vertical patch mismatches remain after enforcement (worst {worst:.4} mm)");
        }
    }

    /// Mismatches between interfaces stacked on one face line, as `(count, worst mm)`.
    pub fn residuals(&self, forest: &SubdivisionForest) -> (usize, f64) {
        let mut count = 0;
        let mut worst: f64 = 0.0;
        for i in 0..self.interfaces.len() {
            for j in self.stacked_above(forest, i) {
                let d = self.end_point(i, true).dist(self.end_point(j, false));
                if d > CONTINUITY_TOLERANCE_MM {
                    count += 1;
                    worst = worst.max(d);
                }
            }
        }
        (count, worst)
    }

    /// Horizontal continuity: for every linked pair, the left cell's exit point equals the
    /// right cell's entry point at `z`. Returns the pairs that fail, with the gap.
    pub fn horizontal_gaps(&self, forest: &SubdivisionForest, z: f64) -> Vec<(CellId, CellId, f64)> {
        let mut out = Vec::new();
        for id in forest.leaves() {
            let c = forest.cell(id);
            if !c.contains_z(z) {
                continue;
            }
            for &r in c.links(Side::Right) {
                if !forest.cell(r).contains_z(z) {
                    continue;
                }
                match (self.exit_point(id, z), self.entry_point(r, z)) {
                    (Some(p), Some(q)) => {
                        let d = p.dist(q);
                        if d > CONTINUITY_TOLERANCE_MM {
                            out.push((id, r, d));
                        }
                    }
                    _ => out.push((id, r, f64::INFINITY)),
                }
            }
        }
        out
    }

    /// Writes each leaf's adjusted patch as a strip of quads between its entry and exit edges.
    pub fn write_obj<W: Write>(&self, forest: &SubdivisionForest, mut out: W) -> std::io::Result<()> {
        let mut vi = 1usize;
        for id in forest.leaves() {
            let c = forest.cell(id);
            let mut zs: Vec<f64> = vec![c.z_min, c.z_max];
            for &i in self.entries[id.index()].iter().chain(&self.exits[id.index()]) {
                zs.extend(self.interfaces[i].edge.knots.iter().map(|k| k.0));
            }
            zs.sort_by(f64::total_cmp);
            zs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let mut rows = 0;
            for &z in &zs {
                let Some((a, b)) = self.slice_cell(id, z) else { continue };
                writeln!(out, "v {} {} {}\nv {} {} {}", a.x, a.y, z, b.x, b.y, z)?;
                rows += 1;
            }
            for r in 1..rows {
                let base = vi + 2 * (r - 1);
                writeln!(out, "f {} {} {} {}", base, base + 1, base + 3, base + 2)?;
            }
            vi += 2 * rows;
        }
        Ok(())
    }
}

/// Builds the interfaces of a graded forest and enforces vertical continuity.
pub fn enforce_continuity(forest: &SubdivisionForest) -> Result<SurfaceSet> {
    let mut set = SurfaceSet::from_forest(forest);
    set.enforce(forest);
    let z_probe = forest.origin()[2] + 0.5 * forest.l_init();
    if let Some(&(_, _, gap)) = set.horizontal_gaps(forest, z_probe).first() {
        return Err(Error::Discontinuity { count: 1, worst_mm: gap });
    }
    Ok(set)
}

fn collinear_overlap(a: &FaceSegment, b: &FaceSegment) -> bool {
    let d = a.to - a.from;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return false;
    }
    let tol = 1e-9 * len2;
    if d.cross(b.from - a.from).abs() > tol || d.cross(b.to - a.from).abs() > tol {
        return false;
    }
    let (s0, s1) = (a.param_of(b.from), a.param_of(b.to));
    s0.max(s1) > 1e-9 && s0.min(s1) < 1.0 - 1e-9
}

fn on_segment(seg: &FaceSegment, p: Vec2) -> bool {
    let t = seg.param_of(p);
    (-1e-9..=1.0 + 1e-9).contains(&t) && seg.at(t).dist(p) <= CONTINUITY_TOLERANCE_MM
}

/// Where segment `a → b` meets the line of `seg`, clamped onto `seg`.
fn line_segment_meet(seg: FaceSegment, a: Vec2, b: Vec2) -> Option<Vec2> {
    let d = seg.to - seg.from;
    let e = b - a;
    let den = d.cross(e);
    if den.abs() < 1e-12 {
        return None;
    }
    // seg.from + s d = a + u e
    let s = (a - seg.from).cross(e) / den;
    let u = (a - seg.from).cross(d) / den;
    if !(-1e-9..=1.0 + 1e-9).contains(&u) {
        return None;
    }
    Some(seg.at(s.clamp(0.0, 1.0)))
}
