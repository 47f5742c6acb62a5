use super::kind::{CellKind, Face};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub u32);

impl CellId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Right isosceles base triangle `(a, b, c)`, counterclockwise, right angle at `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub a: Vec2,
    pub b: Vec2,
    pub c: Vec2,
}

/// A horizontal segment on which a vertical prism face stands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceSegment {
    pub from: Vec2,
    pub to: Vec2,
}

impl FaceSegment {
    pub fn length(&self) -> f64 {
        self.from.dist(self.to)
    }

    pub fn at(&self, t: f64) -> Vec2 {
        self.from.lerp(self.to, t)
    }

    /// Parameter of the orthogonal projection of `p`.
    pub fn param_of(&self, p: Vec2) -> f64 {
        let d = self.to - self.from;
        (p - self.from).dot(d) / d.dot(d)
    }

    pub fn mid(&self) -> Vec2 {
        self.from.mid(self.to)
    }
}

impl Triangle {
    pub fn area(&self) -> f64 {
        0.5 * (self.b - self.a).cross(self.c - self.a)
    }

    pub fn cathetus(&self) -> f64 {
        self.a.dist(self.c)
    }

    pub fn centroid(&self) -> Vec2 {
        (self.a + self.b + self.c) * (1.0 / 3.0)
    }

    pub fn vertices(&self) -> [Vec2; 3] {
        [self.a, self.b, self.c]
    }

    /// Face segment oriented from its first to its second named vertex.
    pub fn face(&self, face: Face) -> FaceSegment {
        match face {
            Face::AC => FaceSegment { from: self.a, to: self.c },
            Face::BC => FaceSegment { from: self.b, to: self.c },
            Face::AB => FaceSegment { from: self.a, to: self.b },
        }
    }

    /// The vertex two faces have in common.
    pub fn shared_vertex(&self, f1: Face, f2: Face) -> Vec2 {
        use Face::*;
        match (f1, f2) {
            (AC, BC) | (BC, AC) => self.c,
            (AC, AB) | (AB, AC) => self.a,
            (AB, BC) | (BC, AB) => self.b,
            _ => panic!("faces must differ"),
        }
    }

    /// Bisects along the altitude from the right angle: `(AC-side child, BC-side child)`.
    pub fn bisect(&self) -> (Triangle, Triangle) {
        let m = self.a.mid(self.b);
        (Triangle { a: self.c, b: self.a, c: m }, Triangle { a: self.b, b: self.c, c: m })
    }

    /// Strict containment with a relative tolerance.
    pub fn contains(&self, p: Vec2) -> bool {
        let eps = 1e-9 * self.cathetus() * self.cathetus();
        let s1 = (self.b - self.a).cross(p - self.a);
        let s2 = (self.c - self.b).cross(p - self.b);
        let s3 = (self.a - self.c).cross(p - self.c);
        s1 > eps && s2 > eps && s3 > eps
    }

    /// Interiors overlap. Valid for triangles of one hierarchical tiling (nested or disjoint).
    pub fn overlaps(&self, other: &Triangle) -> bool {
        if self.area() <= other.area() {
            other.contains(self.centroid())
        } else {
            self.contains(other.centroid())
        }
    }

    /// Is `p` in the closed triangle (with a small tolerance)?
    pub fn contains_closed(&self, p: Vec2) -> bool {
        let eps = 1e-9 * self.cathetus() * self.cathetus();
        let s1 = (self.b - self.a).cross(p - self.a);
        let s2 = (self.c - self.b).cross(p - self.b);
        let s3 = (self.a - self.c).cross(p - self.c);
        s1 >= -eps && s2 >= -eps && s3 >= -eps
    }
}

/// Neighbor directions in the connectivity graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Up, Side::Down];

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            Side::Up => Side::Down,
            Side::Down => Side::Up,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrismCell {
    pub kind: CellKind,
    pub depth: u32,
    pub triangle: Triangle,
    pub z_min: f64,
    pub z_max: f64,
    pub parent: Option<CellId>,
    pub children: Vec<CellId>,
    /// Indexed by [`Side`].
    pub links: [Vec<CellId>; 4],
    /// Quantization error diffused into this cell, mm³.
    pub error_mass: f64,
    pub processed: bool,
}

impl PrismCell {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn volume(&self) -> f64 {
        self.triangle.area() * self.height()
    }

    pub fn links(&self, side: Side) -> &[CellId] {
        &self.links[side as usize]
    }

    pub fn contains_z(&self, z: f64) -> bool {
        z >= self.z_min && z < self.z_max
    }

    pub fn entry_face(&self) -> FaceSegment {
        self.triangle.face(self.kind.entry_face())
    }

    pub fn exit_face(&self) -> FaceSegment {
        self.triangle.face(self.kind.exit_face())
    }

    pub fn all_links(&self) -> impl Iterator<Item = CellId> + '_ {
        self.links.iter().flatten().copied()
    }
}
