//! Planar geometry in a local tangent plane (meters, x east / y north,
//! angles counter-clockwise from +x in degrees).

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2 { x: v[0], y: v[1] }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Direction of the vector in degrees, [0, 360).
    pub fn bearing_deg(self) -> f64 {
        wrap_deg(self.y.atan2(self.x).to_degrees())
    }

    pub fn from_bearing_deg(deg: f64) -> Point2 {
        let r = deg.to_radians();
        Point2::new(r.cos(), r.sin())
    }

    pub fn rotate_deg(self, deg: f64) -> Point2 {
        let (s, c) = deg.to_radians().sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle in degrees into [0, 360).
pub fn wrap_deg(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed smallest difference `a - b` in degrees, in (-180, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = wrap_deg(a - b);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Position of a point relative to a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength of the foot point, measured from the first vertex.
    pub arclength: f64,
    /// Signed perpendicular offset, positive to the left of the direction
    /// of increasing arclength.
    pub lateral: f64,
    /// Unsigned distance to the foot point.
    pub distance: f64,
    pub foot: Point2,
}

/// An open polyline with cached cumulative arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline; consecutive duplicate vertices are dropped.
    /// Returns `None` for fewer than two distinct vertices.
    pub fn new(points: &[Point2]) -> Option<Self> {
        let mut pts: Vec<Point2> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last().is_none_or(|q: &Point2| q.distance(p) > 1e-9) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in pts.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Some(Polyline {
            points: pts,
            cumulative,
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_index(&self, s: f64) -> usize {
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point at arclength `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let f = if seg > 0.0 {
            (s - self.cumulative[i]) / seg
        } else {
            0.0
        };
        a + (b - a) * f
    }

    /// Direction of travel at arclength `s`, degrees in [0, 360).
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        (self.points[i + 1] - self.points[i]).bearing_deg()
    }

    pub fn project(&self, p: Point2) -> Projection {
        let mut best: Option<Projection> = None;
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let f = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
            let foot = a + ab * f;
            let distance = p.distance(foot);
            if best.is_none_or(|bp| distance < bp.distance) {
                let len = len2.sqrt();
                best = Some(Projection {
                    arclength: self.cumulative[i] + f * len,
                    lateral: ab.cross(p - a) / len,
                    distance,
                    foot,
                });
            }
        }
        best.unwrap()
    }

    /// Arclength of the first crossing of the segment `a`-`b` with this
    /// polyline, if any.
    pub fn first_crossing(&self, a: Point2, b: Point2) -> Option<(Point2, f64)> {
        self.points.windows(2).enumerate().find_map(|(i, w)| {
            segment_intersection(w[0], w[1], a, b)
                .map(|(p, f)| (p, self.cumulative[i] + f * w[0].distance(w[1])))
        })
    }
}

/// Intersection of segments `p0-p1` and `q0-q1`. Returns the point and the
/// fractional position along the first segment.
pub fn segment_intersection(p0: Point2, p1: Point2, q0: Point2, q1: Point2) -> Option<(Point2, f64)> {
    let r = p1 - p0;
    let s = q1 - q0;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = q0 - p0;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    let eps = 1e-12;
    if (-eps..=1.0 + eps).contains(&t) && (-eps..=1.0 + eps).contains(&u) {
        Some((p0 + r * t, t))
    } else {
        None
    }
}

/// Intersection of the infinite lines through `p0-p1` and `q0-q1`.
pub fn line_intersection(p0: Point2, p1: Point2, q0: Point2, q1: Point2) -> Option<Point2> {
    let r = p1 - p0;
    let s = q1 - q0;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (q0 - p0).cross(s) / denom;
    Some(p0 + r * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_on_straight_line() {
        let pl = Polyline::new(&[Point2::new(0.0, 0.0), Point2::new(100.0, 0.0)]).unwrap();
        let pr = pl.project(Point2::new(30.0, 5.0));
        assert!((pr.arclength - 30.0).abs() < 1e-12);
        assert!((pr.lateral - 5.0).abs() < 1e-12);
        let pr = pl.project(Point2::new(30.0, -5.0));
        assert!((pr.lateral + 5.0).abs() < 1e-12);
    }

    #[test]
    fn arclength_through_corner() {
        let pl = Polyline::new(&[
            Point2::new(0.0, 0.0),
            Point2::new(10.0, 0.0),
            Point2::new(10.0, 10.0),
        ])
        .unwrap();
        assert_eq!(pl.length(), 20.0);
        let p = pl.point_at(15.0);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
        assert!((pl.heading_at(15.0) - 90.0).abs() < 1e-12);
        assert_eq!(pl.point_at(-3.0), Point2::new(0.0, 0.0));
    }

    #[test]
    fn crossing_and_lines() {
        let (p, f) = segment_intersection(
            Point2::new(0.0, 0.0),
            Point2::new(10.0, 0.0),
            Point2::new(4.0, -1.0),
            Point2::new(4.0, 1.0),
        )
        .unwrap();
        assert!((p.x - 4.0).abs() < 1e-12 && (f - 0.4).abs() < 1e-12);
        assert!(line_intersection(
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0)
        )
        .is_none());
    }

    #[test]
    fn angle_helpers() {
        assert_eq!(wrap_deg(-90.0), 270.0);
        assert_eq!(wrap_deg(720.0), 0.0);
        assert_eq!(angle_diff_deg(10.0, 350.0), 20.0);
        assert_eq!(angle_diff_deg(350.0, 10.0), -20.0);
    }
}
