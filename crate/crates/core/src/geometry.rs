//! Straight boundary panels.

use nalgebra::Vector2;

pub type Vec2 = Vector2<f64>;

/// Straight segment `a → b` parametrized by `ξ ∈ [−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub a: Vec2,
    pub b: Vec2,
}

/// How two panels touch; decides the quadrature used for the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contact {
    Identical,
    /// Shared endpoint, given as `(end of first, end of second)` with `false = a`, `true = b`.
    Vertex(bool, bool),
    Disjoint,
}

impl Panel {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Half length, the Jacobian of `ξ ↦ point`.
    pub fn jacobian(&self) -> f64 {
        0.5 * self.length()
    }

    pub fn tangent(&self) -> Vec2 {
        (self.b - self.a) / self.length()
    }

    /// Outward normal of a counterclockwise boundary, `(t_y, −t_x)`.
    pub fn normal(&self) -> Vec2 {
        let t = self.tangent();
        Vec2::new(t.y, -t.x)
    }

    pub fn point(&self, xi: f64) -> Vec2 {
        self.a + (self.b - self.a) * (0.5 * (xi + 1.0))
    }

    pub fn midpoint(&self) -> Vec2 {
        0.5 * (self.a + self.b)
    }

    /// Sub-panel over the parameter range `[s, t] ⊂ [−1, 1]`.
    pub fn sub(&self, s: f64, t: f64) -> Panel {
        Panel::new(self.point(s), self.point(t))
    }

    /// Euclidean distance between two segments.
    pub fn distance(&self, other: &Panel) -> f64 {
        if segments_intersect(self, other) {
            return 0.0;
        }
        point_segment_distance(&self.a, other)
            .min(point_segment_distance(&self.b, other))
            .min(point_segment_distance(&other.a, self))
            .min(point_segment_distance(&other.b, self))
    }

    pub fn classify(&self, other: &Panel) -> Contact {
        let tol = 1e-12 * self.length().max(other.length());
        let same = |p: &Vec2, q: &Vec2| (p - q).norm() <= tol;
        if same(&self.a, &other.a) && same(&self.b, &other.b) {
            return Contact::Identical;
        }
        for (ea, pa) in [(false, &self.a), (true, &self.b)] {
            for (eb, pb) in [(false, &other.a), (true, &other.b)] {
                if same(pa, pb) {
                    return Contact::Vertex(ea, eb);
                }
            }
        }
        Contact::Disjoint
    }
}

pub fn point_segment_distance(p: &Vec2, s: &Panel) -> f64 {
    let d = s.b - s.a;
    let t = ((p - s.a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (s.a + d * t)).norm()
}

fn cross(u: &Vec2, v: &Vec2) -> f64 {
    u.x * v.y - u.y * v.x
}

fn segments_intersect(p: &Panel, q: &Panel) -> bool {
    let d1 = cross(&(q.b - q.a), &(p.a - q.a));
    let d2 = cross(&(q.b - q.a), &(p.b - q.a));
    let d3 = cross(&(p.b - p.a), &(q.a - p.a));
    let d4 = cross(&(p.b - p.a), &(q.b - p.a));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}
