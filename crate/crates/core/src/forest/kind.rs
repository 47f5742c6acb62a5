use serde::{Deserialize, Serialize};
use std::fmt;

/// Half-cube (H) or quarter-cube (Q) prism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    H,
    Q,
}

/// Which two side faces the surface patch crosses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    /// Both catheti.
    A,
    /// Hypotenuse and left cathetus.
    L,
    /// Hypotenuse and right cathetus.
    R,
}

/// Horizontal traversal orientation through the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// left → right, left → hypotenuse, hypotenuse → right
    Plus,
    /// right → left, right → hypotenuse, hypotenuse → left
    Minus,
}

/// Whether the sliced segment contracts or expands with increasing z.
///
/// Expanding means moving from the right of the traversal direction to the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Embedding {
    C,
    E,
}

/// A side face of a prism, named by the base-triangle edge it stands on.
///
/// The base triangle is stored counterclockwise as `(a, b, c)` with the right angle at `c`, so
/// `AC` is the left cathetus, `BC` the right cathetus and `AB` the hypotenuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    AC,
    BC,
    AB,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Plus => Direction::Minus,
            Direction::Minus => Direction::Plus,
        }
    }
}

impl Embedding {
    pub fn flipped(self) -> Self {
        match self {
            Embedding::C => Embedding::E,
            Embedding::E => Embedding::C,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKind {
    pub shape: Shape,
    pub route: Route,
    pub direction: Direction,
    pub embedding: Embedding,
}

impl CellKind {
    pub const fn new(shape: Shape, embedding: Embedding, route: Route, direction: Direction) -> Self {
        Self { shape, route, direction, embedding }
    }

    /// The twelve kinds that occur: H-prisms always travel `+`, Q-prisms always `−`.
    pub fn all() -> [CellKind; 12] {
        use Embedding::*;
        use Route::*;
        let mut out = [CellKind::new(Shape::H, C, A, Direction::Plus); 12];
        let mut i = 0;
        for (shape, dir) in [(Shape::H, Direction::Plus), (Shape::Q, Direction::Minus)] {
            for emb in [C, E] {
                for route in [L, R, A] {
                    out[i] = CellKind::new(shape, emb, route, dir);
                    i += 1;
                }
            }
        }
        out
    }

    /// Entry and exit faces along the traversal direction.
    pub fn faces(self) -> (Face, Face) {
        let (from, to) = match self.route {
            Route::A => (Face::AC, Face::BC),
            Route::L => (Face::AC, Face::AB),
            Route::R => (Face::AB, Face::BC),
        };
        match self.direction {
            Direction::Plus => (from, to),
            Direction::Minus => (to, from),
        }
    }

    pub fn entry_face(self) -> Face {
        self.faces().0
    }

    pub fn exit_face(self) -> Face {
        self.faces().1
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.shape {
            Shape::H => 'H',
            Shape::Q => 'Q',
        };
        let e = match self.embedding {
            Embedding::C => 'C',
            Embedding::E => 'E',
        };
        let r = match self.route {
            Route::A => 'A',
            Route::L => 'L',
            Route::R => 'R',
        };
        let d = match self.direction {
            Direction::Plus => '+',
            Direction::Minus => '-',
        };
        write!(f, "{s}{e}{r}{d}")
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let c: Vec<char> = s.chars().collect();
        if c.len() != 4 {
            return Err(format!("bad cell kind {s:?}"));
        }
        let shape = match c[0] {
            'H' => Shape::H,
            'Q' => Shape::Q,
            _ => return Err(format!("bad shape in {s:?}")),
        };
        let embedding = match c[1] {
            'C' => Embedding::C,
            'E' => Embedding::E,
            _ => return Err(format!("bad embedding in {s:?}")),
        };
        let route = match c[2] {
            'A' => Route::A,
            'L' => Route::L,
            'R' => Route::R,
            _ => return Err(format!("bad route in {s:?}")),
        };
        let direction = match c[3] {
            '+' => Direction::Plus,
            '-' | '−' => Direction::Minus,
            _ => return Err(format!("bad direction in {s:?}")),
        };
        Ok(CellKind { shape, route, direction, embedding })
    }
}

/// Child routes of a production `x → a | b`, listed by position in the base triangle:
/// `(child on the AC side, child on the BC side)`.
///
/// Bisecting along the altitude from the right angle turns the parent's `AC` face into the first
/// child's hypotenuse, `BC` into the second's, and splits the hypotenuse between the two; the
/// altitude is the face the children share.
pub fn child_routes(route: Route) -> (Route, Route) {
    match route {
        Route::A => (Route::L, Route::R),
        Route::L => (Route::L, Route::A),
        Route::R => (Route::A, Route::R),
    }
}

/// The kinds of the children of `kind`, grouped in rows from bottom to top and ordered along
/// the traversal within each row.
///
/// A Q-prism always gets a contracting bottom row under an expanding top row. A QE cell is the
/// z-mirror of a QC cell, so mirroring the QC rows swaps them and flips both embeddings, which
/// lands on the same pattern. Stacked cells then alternate C and E at every depth.
pub fn production(kind: CellKind) -> Vec<Vec<CellKind>> {
    let (r_ac, r_bc) = child_routes(kind.route);
    let dir = kind.direction.flipped();
    let ordered = match kind.direction {
        Direction::Plus => [r_ac, r_bc],
        Direction::Minus => [r_bc, r_ac],
    };
    let row = |shape: Shape, emb: Embedding| -> Vec<CellKind> {
        ordered.iter().map(|&r| CellKind::new(shape, emb, r, dir)).collect()
    };
    match kind.shape {
        Shape::H => vec![row(Shape::Q, kind.embedding)],
        Shape::Q => vec![row(Shape::H, Embedding::C), row(Shape::H, Embedding::E)],
    }
}
