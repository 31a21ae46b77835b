//! Planar geometry: angle wrapping, rigid transforms, oriented rectangles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Pose `(x, y, heading)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Express the world pose `p` in the frame of `self`.
    pub fn to_local(&self, p: &Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Pose {
            x: c * dx + s * dy,
            y: -s * dx + c * dy,
            heading: wrap_angle(p.heading - self.heading),
        }
    }

    /// Map the local pose `p` (in the frame of `self`) to world coordinates.
    pub fn to_world(&self, p: &Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        Pose {
            x: self.x + c * p.x - s * p.y,
            y: self.y + s * p.x + c * p.y,
            heading: wrap_angle(self.heading + p.heading),
        }
    }
}

/// Oriented rectangle centred on a pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn new(pose: Pose, length: f64, width: f64) -> Self {
        Self {
            cx: pose.x,
            cy: pose.y,
            heading: pose.heading,
            length,
            width,
        }
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let pt = |a: f64, b: f64| [self.cx + c * a - s * b, self.cy + s * a + c * b];
        [pt(hl, hw), pt(-hl, hw), pt(-hl, -hw), pt(hl, -hw)]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let a = c * dx + s * dy;
        let b = -s * dx + c * dy;
        a.abs() <= self.length / 2.0 && b.abs() <= self.width / 2.0
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.length * self.length + self.width * self.width).sqrt()
    }

    /// Separating-axis overlap test (touching counts as overlap).
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let d = ((self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2)).sqrt();
        if d > self.half_diagonal() + other.half_diagonal() {
            return false;
        }
        let ca = self.corners();
        let cb = other.corners();
        for h in [self.heading, other.heading] {
            for axis in [[h.cos(), h.sin()], [-h.sin(), h.cos()]] {
                let proj = |pts: &[[f64; 2]; 4]| {
                    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        let v = p[0] * axis[0] + p[1] * axis[1];
                        (lo.min(v), hi.max(v))
                    })
                };
                let (a0, a1) = proj(&ca);
                let (b0, b1) = proj(&cb);
                if a1 < b0 || b1 < a0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let eps = 1e-9;
    let opposite = |a: f64, b: f64| (a > eps && b < -eps) || (a < -eps && b > eps);
    opposite(d1, d2) && opposite(d3, d4)
}

/// True when no two non-adjacent edges properly intersect.
pub fn polygon_is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}
