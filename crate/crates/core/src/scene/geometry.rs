//! Planar geometry: oriented boxes, polygons and arc-length polylines.

use crate::error::{Error, Result};

pub type P2 = [f64; 2];

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Rectangle centred at (cx, cy), long side along `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: P2, heading: f64, length: f64, width: f64) -> Self {
        OrientedBox {
            cx: center[0],
            cy: center[1],
            heading,
            length,
            width,
        }
    }

    fn axes(&self) -> [P2; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Front-left, front-right, rear-right, rear-left.
    pub fn corners(&self) -> [P2; 4] {
        let [f, l] = self.axes();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let at = |a: f64, b: f64| [self.cx + a * f[0] + b * l[0], self.cy + a * f[1] + b * l[1]];
        [at(hl, hw), at(hl, -hw), at(-hl, -hw), at(-hl, hw)]
    }

    /// Point in this box's frame: (forward, left).
    pub fn to_local(&self, p: P2) -> P2 {
        let [f, l] = self.axes();
        let d = sub(p, [self.cx, self.cy]);
        [dot(d, f), dot(d, l)]
    }

    pub fn front_center(&self) -> P2 {
        let [f, _] = self.axes();
        [self.cx + f[0] * self.length / 2.0, self.cy + f[1] * self.length / 2.0]
    }

    /// Separating-axis test; boxes that only touch do not overlap.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (amin, amax) = project(&ca, axis);
            let (bmin, bmax) = project(&cb, axis);
            if amax <= bmin || bmax <= amin {
                return false;
            }
        }
        true
    }
}

fn project(pts: &[P2; 4], axis: P2) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = dot(*p, axis);
        (lo.min(v), hi.max(v))
    })
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: P2, poly: &[P2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Shoelace area, positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>() / 2.0
}

fn segments_cross(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = cross(sub(b, a), sub(c, a));
    let d2 = cross(sub(b, a), sub(d, a));
    let d3 = cross(sub(d, c), sub(a, c));
    let d4 = cross(sub(d, c), sub(b, c));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: P2, q: P2, r: P2, o: f64| {
        o == 0.0 && r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

/// Cheap checks: at least three vertices, finite, non-zero area.
pub fn check_polygon_basic(poly: &[P2], what: &str) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::DegeneratePolygon(format!("{what} has {} vertices", poly.len())));
    }
    if poly.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::DegeneratePolygon(format!("{what} has a non-finite vertex")));
    }
    if signed_area(poly).abs() <= 1e-12 {
        return Err(Error::DegeneratePolygon(format!("{what} has zero area")));
    }
    Ok(())
}

/// Full check including self-intersection between non-adjacent edges.
pub fn check_polygon_simple(poly: &[P2], what: &str) -> Result<()> {
    check_polygon_basic(poly, what)?;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            if j == i || (j + 1) % n == i || j == (i + 1) % n {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return Err(Error::DegeneratePolygon(format!("{what} self-intersects at edges {i} and {j}")));
            }
        }
    }
    Ok(())
}

/// Closest-point projection onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point.
    pub s: f64,
    /// Signed distance, positive to the left of travel direction.
    pub lateral: f64,
    pub segment: usize,
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<P2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: &[P2]) -> Result<Self> {
        if pts.len() < 2 {
            return Err(Error::InvalidArgument("a polyline needs at least two points".into()));
        }
        let mut cum = Vec::with_capacity(pts.len());
        cum.push(0.0);
        for w in pts.windows(2) {
            let len = dot(sub(w[1], w[0]), sub(w[1], w[0])).sqrt();
            if !(len > 0.0) {
                return Err(Error::InvalidArgument("polyline has repeated points".into()));
            }
            cum.push(cum.last().unwrap() + len);
        }
        Ok(Polyline { pts: pts.to_vec(), cum })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.pts.len() - 1
    }

    pub fn segment_heading(&self, i: usize) -> f64 {
        let d = sub(self.pts[i + 1], self.pts[i]);
        d[1].atan2(d[0])
    }

    pub fn project(&self, p: P2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: f64::INFINITY,
            segment: 0,
        };
        let mut best_d2 = f64::INFINITY;
        for i in 0..self.num_segments() {
            let (a, b) = (self.pts[i], self.pts[i + 1]);
            let ab = sub(b, a);
            let len2 = dot(ab, ab);
            let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d2 = dot(sub(p, q), sub(p, q));
            if d2 < best_d2 {
                best_d2 = d2;
                let side = cross(ab, sub(p, a)).signum();
                best = Projection {
                    s: self.cum[i] + t * len2.sqrt(),
                    lateral: side * d2.sqrt(),
                    segment: i,
                };
            }
        }
        best
    }

    /// Point and heading at arc length `s` (clamped to the ends).
    pub fn point_at(&self, s: f64) -> (P2, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.num_segments() - 1),
            Err(i) => (i - 1).min(self.num_segments() - 1),
        };
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let t = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i]);
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], self.segment_heading(i))
    }

    pub fn points(&self) -> &[P2] {
        &self.pts
    }
}
