//! Small 2D geometry toolkit shared by map validation, candidate generation,
//! and the metrics suite.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2D cross product (z component).
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn scaled(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::ZERO
        } else {
            self.scaled(1.0 / n)
        }
    }

    /// Left-hand normal of the same length.
    pub fn left_normal(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct PolylineProjection {
    /// Index of the segment holding the closest point.
    pub segment: usize,
    /// Arc length from the polyline start to the closest point.
    pub arc_length: f64,
    /// Distance from the query point to the closest point.
    pub distance: f64,
    /// Unit tangent of the segment at the closest point.
    pub tangent: Vec2,
    /// Signed lateral offset; positive when the point lies left of the line.
    pub signed_offset: f64,
}

pub fn polyline_length(poly: &[Vec2]) -> f64 {
    poly.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Closest point on segment `ab`, returned as the clamp parameter in [0, 1].
fn segment_parameter(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return 0.0;
    }
    ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
}

/// Project `p` onto `poly`. Requires at least two points.
pub fn project_to_polyline(poly: &[Vec2], p: Vec2) -> PolylineProjection {
    assert!(poly.len() >= 2, "polyline needs at least two points");
    let mut best: Option<PolylineProjection> = None;
    let mut arc_before = 0.0;
    for (idx, w) in poly.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let t = segment_parameter(p, a, b);
        let closest = a + (b - a).scaled(t);
        let distance = p.dist(closest);
        if best.map_or(true, |bst| distance < bst.distance) {
            let tangent = (b - a).normalized();
            best = Some(PolylineProjection {
                segment: idx,
                arc_length: arc_before + a.dist(closest),
                distance,
                tangent,
                signed_offset: tangent.left_normal().dot(p - closest),
            });
        }
        arc_before += a.dist(b);
    }
    best.unwrap()
}

/// Point at arc length `s` along `poly`, extrapolating along the end tangents
/// when `s` lies outside `[0, length]`. Returns the point and the unit tangent.
pub fn point_at_arc_length(poly: &[Vec2], s: f64) -> (Vec2, Vec2) {
    assert!(poly.len() >= 2, "polyline needs at least two points");
    if s < 0.0 {
        let tangent = (poly[1] - poly[0]).normalized();
        return (poly[0] + tangent.scaled(s), tangent);
    }
    let mut remaining = s;
    for w in poly.windows(2) {
        let seg_len = w[0].dist(w[1]);
        if remaining <= seg_len && seg_len > 0.0 {
            let tangent = (w[1] - w[0]).normalized();
            return (w[0] + tangent.scaled(remaining), tangent);
        }
        remaining -= seg_len;
    }
    let n = poly.len();
    let tangent = (poly[n - 1] - poly[n - 2]).normalized();
    (poly[n - 1] + tangent.scaled(remaining), tangent)
}

pub fn distance_to_polyline(poly: &[Vec2], p: Vec2) -> f64 {
    project_to_polyline(poly, p).distance
}

/// Even-odd point-in-polygon test. The polygon is implicitly closed.
pub fn point_in_polygon(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_in_any_polygon(polys: &[Vec<Vec2>], p: Vec2) -> bool {
    polys.iter().any(|poly| point_in_polygon(poly, p))
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// Proper intersection of open segments `ab` and `cd` (shared endpoints do
/// not count).
pub fn segments_properly_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Checks that no two non-adjacent edges of the implicitly closed polygon
/// intersect.
pub fn polygon_is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for k in i + 1..n {
            // Skip edges sharing a vertex with edge i.
            if k == i || (k + 1) % n == i || k == (i + 1) % n {
                continue;
            }
            let (c, d) = (poly[k], poly[(k + 1) % n]);
            if segments_properly_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Minimum distance between closed segments `ab` and `cd`.
pub fn segment_segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_properly_intersect(a, b, c, d) {
        return 0.0;
    }
    let dist_pt = |p: Vec2, s0: Vec2, s1: Vec2| {
        let t = segment_parameter(p, s0, s1);
        p.dist(s0 + (s1 - s0).scaled(t))
    };
    dist_pt(a, c, d)
        .min(dist_pt(b, c, d))
        .min(dist_pt(c, a, b))
        .min(dist_pt(d, a, b))
}

/// Distance from `p` to the boundary of the union of `polys`; 0 when `p`
/// lies inside any polygon.
pub fn distance_to_drivable(polys: &[Vec<Vec2>], p: Vec2) -> f64 {
    if point_in_any_polygon(polys, p) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for poly in polys {
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let t = segment_parameter(p, a, b);
            best = best.min(p.dist(a + (b - a).scaled(t)));
        }
    }
    best
}

pub fn wrap_angle(mut theta: f64) -> f64 {
    while theta > std::f64::consts::PI {
        theta -= 2.0 * std::f64::consts::PI;
    }
    while theta <= -std::f64::consts::PI {
        theta += 2.0 * std::f64::consts::PI;
    }
    theta
}
