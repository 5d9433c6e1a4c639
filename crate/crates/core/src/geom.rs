//! Planar primitives and polyline operations shared by every stage.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive vertices closer than this are treated as duplicates.
pub const DUPLICATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Point2) -> f64 {
        let d = self - other;
        d.x * d.x + d.y * d.y
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }

    /// Left-hand perpendicular (rotated +90°).
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Option<Point2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| Point2::new(self.x / n, self.y / n))
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new((self.x + other.x) * 0.5, (self.y + other.y) * 0.5)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Axis-aligned rectangle, closed on all sides. Serialized as
/// `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl From<[f64; 4]> for Rect {
    fn from(a: [f64; 4]) -> Self {
        Rect::from_array(a)
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        r.to_array()
    }
}

impl Rect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            min: Point2::new(xmin, ymin),
            max: Point2::new(xmax, ymax),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Option<Rect> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut r = Rect {
            min: first,
            max: first,
        };
        for p in it {
            r.include(*p);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn include(&mut self, p: Point2) {
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let mut r = *self;
        r.include(other.min);
        r.include(other.max);
        r
    }

    pub fn expanded(&self, margin: f64) -> Rect {
        Rect::new(
            self.min.x - margin,
            self.min.y - margin,
            self.max.x + margin,
            self.max.y + margin,
        )
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    /// True when `p` lies on one of the four edges within `tol`.
    pub fn on_boundary(&self, p: Point2, tol: f64) -> bool {
        self.contains(p, tol)
            && ((p.x - self.min.x).abs() <= tol
                || (p.x - self.max.x).abs() <= tol
                || (p.y - self.min.y).abs() <= tol
                || (p.y - self.max.y).abs() <= tol)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.min.x, self.min.y, self.max.x, self.max.y]
    }

    pub fn from_array(a: [f64; 4]) -> Rect {
        Rect::new(a[0], a[1], a[2], a[3])
    }

    /// Parameter interval `[t0, t1]` of segment `a→b` inside the rectangle
    /// (Liang–Barsky), or `None` when the segment misses it.
    pub fn clip_segment(&self, a: Point2, b: Point2) -> Option<(f64, f64)> {
        let d = b - a;
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        let checks = [
            (-d.x, a.x - self.min.x),
            (d.x, self.max.x - a.x),
            (-d.y, a.y - self.min.y),
            (d.y, self.max.y - a.y),
        ];
        for (p, q) in checks {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }
}

pub fn polyline_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Vertex list with the closing vertex appended for closed rings.
pub fn ring_closed(points: &[Point2], closed: bool) -> Vec<Point2> {
    let mut v = points.to_vec();
    if closed && points.len() > 2 {
        v.push(points[0]);
    }
    v
}

/// Drops consecutive vertices closer than [`DUPLICATE_EPS`].
pub fn dedup_points(points: &mut Vec<Point2>) {
    points.dedup_by(|b, a| a.distance(*b) <= DUPLICATE_EPS);
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len_sq = ab.dot(ab);
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a.lerp(b, t))
}

pub fn point_polyline_distance(p: Point2, points: &[Point2]) -> f64 {
    match points {
        [] => f64::INFINITY,
        [only] => p.distance(*only),
        _ => points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Resamples a polyline to `n` points uniformly spaced by arc length.
/// The first and last input points are reproduced exactly.
pub fn resample_polyline(points: &[Point2], n: usize) -> Result<Vec<Point2>> {
    if points.len() < 2 || n < 2 {
        return Err(Error::InvalidGeometry(format!(
            "resample needs >= 2 points and n >= 2 (got {} points, n = {n})",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidGeometry("non-finite vertex".into()));
    }
    let total = polyline_length(points);
    if total <= DUPLICATE_EPS {
        return Err(Error::InvalidGeometry("zero-length polyline".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let step = total / (n - 1) as f64;
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..n - 1 {
        let target = step * k as f64;
        loop {
            let len = points[seg].distance(points[seg + 1]);
            if seg_start + len >= target || seg + 2 == points.len() {
                let t = if len > 0.0 {
                    ((target - seg_start) / len).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                out.push(points[seg].lerp(points[seg + 1], t));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out.push(points[points.len() - 1]);
    Ok(out)
}

/// Splits a polyline into the maximal sub-polylines lying inside `rect`.
///
/// Each returned piece carries the arc-length parameter of its first vertex
/// along the input so callers can interpolate per-vertex attributes.
pub(crate) fn clip_polyline(points: &[Point2], rect: &Rect) -> Vec<Vec<(Point2, f64)>> {
    let mut pieces = Vec::new();
    let mut current: Vec<(Point2, f64)> = Vec::new();
    for (seg, w) in points.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        match rect.clip_segment(a, b) {
            None => {
                if !current.is_empty() {
                    pieces.push(std::mem::take(&mut current));
                }
            }
            Some((t0, t1)) => {
                let p0 = if t0 == 0.0 { a } else { a.lerp(b, t0) };
                let p1 = if t1 == 1.0 { b } else { a.lerp(b, t1) };
                if t0 > 0.0 && !current.is_empty() {
                    pieces.push(std::mem::take(&mut current));
                }
                if current.is_empty() {
                    current.push((p0, seg as f64 + t0));
                }
                let last = current.last().unwrap().0;
                if last.distance(p1) > DUPLICATE_EPS {
                    current.push((p1, seg as f64 + t1));
                }
                if t1 < 1.0 {
                    pieces.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces.retain(|p| p.len() >= 2);
    pieces
}

/// Douglas–Peucker simplification; endpoints always kept.
pub fn simplify_douglas_peucker(points: &[Point2], tolerance: f64) -> Vec<Point2> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut best, mut best_d) = (lo, -1.0);
        for i in lo + 1..hi {
            let d = point_segment_distance(points[i], points[lo], points[hi]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > tolerance {
            keep[best] = true;
            stack.push((lo, best));
            stack.push((best, hi));
        }
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

/// Simplifies a closed ring by splitting it at the vertex farthest from
/// the first one and simplifying both halves.
pub fn simplify_ring(points: &[Point2], tolerance: f64) -> Vec<Point2> {
    if points.len() <= 3 {
        return points.to_vec();
    }
    let far = (1..points.len())
        .max_by(|&a, &b| {
            points[0]
                .distance_sq(points[a])
                .total_cmp(&points[0].distance_sq(points[b]))
        })
        .unwrap();
    let mut first_half = simplify_douglas_peucker(&points[..=far], tolerance);
    let mut tail: Vec<Point2> = points[far..].to_vec();
    tail.push(points[0]);
    let second_half = simplify_douglas_peucker(&tail, tolerance);
    first_half.pop();
    first_half.extend_from_slice(&second_half[..second_half.len() - 1]);
    first_half
}

/// Intersection of segments `p1→p2` and `q1→q2`, returning the parameters
/// along each when they cross properly.
pub fn segment_intersection(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> Option<(f64, f64)> {
    let r = p2 - p1;
    let s = q2 - q1;
    let denom = r.cross(s);
    if denom.abs() < 1e-15 {
        return None;
    }
    let qp = q1 - p1;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some((t, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
        v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn resample_uniform_line() {
        let out = resample_polyline(&pts(&[(0.0, 0.0), (10.0, 0.0)]), 3).unwrap();
        assert_eq!(out, pts(&[(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)]));
    }

    #[test]
    fn resample_l_shape_walks_arc_length() {
        // Arc-length walk by hand: 0,2,4 on the first leg, 6,8 on the second.
        let out = resample_polyline(&pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0)]), 5).unwrap();
        let expected = pts(&[(0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (4.0, 2.0), (4.0, 4.0)]);
        for (a, b) in out.iter().zip(&expected) {
            assert!(a.distance(*b) < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn resample_already_uniform_is_identity() {
        let input = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let out = resample_polyline(&input, 4).unwrap();
        for (a, b) in out.iter().zip(&input) {
            assert!(a.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn resample_rejects_degenerate() {
        let r = resample_polyline(&pts(&[(1.0, 1.0), (1.0, 1.0)]), 4);
        assert!(matches!(r, Err(Error::InvalidGeometry(_))));
        assert!(resample_polyline(&pts(&[(0.0, 0.0), (1.0, 0.0)]), 1).is_err());
    }

    #[test]
    fn liang_barsky_single_crossing() {
        let rect = Rect::new(0.0, -1.0, 10.0, 1.0);
        let (t0, t1) = rect
            .clip_segment(Point2::new(-5.0, 0.0), Point2::new(5.0, 0.0))
            .unwrap();
        assert_eq!((t0, t1), (0.5, 1.0));
        assert!(rect
            .clip_segment(Point2::new(-5.0, 3.0), Point2::new(5.0, 3.0))
            .is_none());
    }

    #[test]
    fn douglas_peucker_collapses_collinear() {
        let line: Vec<Point2> = (0..20).map(|i| Point2::new(i as f64, 0.0)).collect();
        assert_eq!(simplify_douglas_peucker(&line, 0.25).len(), 2);
        let bent = pts(&[(0.0, 0.0), (5.0, 1.0), (10.0, 0.0)]);
        assert_eq!(simplify_douglas_peucker(&bent, 0.25).len(), 3);
    }

    #[test]
    fn ring_simplification_keeps_corners() {
        let mut ring = Vec::new();
        for i in 0..10 {
            ring.push(Point2::new(i as f64, 0.0));
        }
        for i in 0..10 {
            ring.push(Point2::new(10.0, i as f64));
        }
        for i in 0..10 {
            ring.push(Point2::new(10.0 - i as f64, 10.0));
        }
        for i in 0..10 {
            ring.push(Point2::new(0.0, 10.0 - i as f64));
        }
        let s = simplify_ring(&ring, 0.1);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn point_to_polyline() {
        let line = pts(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]);
        assert!((point_polyline_distance(Point2::new(5.0, 2.0), &line) - 2.0).abs() < 1e-12);
        assert!((point_polyline_distance(Point2::new(12.0, 5.0), &line) - 2.0).abs() < 1e-12);
    }
}
