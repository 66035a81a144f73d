//! Planar geometry helpers in the map frame (metres).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Closest point on segment `a`–`b` to `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Foot {
    pub point: Point,
    /// Segment parameter in `[0, 1]` after clamping.
    pub t: f64,
    /// True when the unclamped perpendicular foot fell strictly inside the segment.
    pub interior: bool,
    pub dist_sq: f64,
}

pub fn project_onto_segment(p: Point, a: Point, b: Point) -> Foot {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len_sq = dx * dx + dy * dy;
    let raw = if len_sq > 0.0 {
        ((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq
    } else {
        0.0
    };
    let (t, interior) = if raw <= 0.0 {
        (0.0, false)
    } else if raw >= 1.0 {
        (1.0, false)
    } else {
        (raw, true)
    };
    let point = if interior {
        Point::new(a.x + dx * t, a.y + dy * t)
    } else if t == 0.0 {
        a
    } else {
        b
    };
    Foot {
        point,
        t,
        interior,
        dist_sq: p.dist_sq(point),
    }
}

pub fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    project_onto_segment(p, a, b).dist_sq.sqrt()
}
