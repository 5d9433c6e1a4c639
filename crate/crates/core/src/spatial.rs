//! Static 2D k-d tree over point indices.

use crate::geom::Point2;

/// Balanced k-d tree stored implicitly: the median of every index range is
/// the node, its halves are the children.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point2>,
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Point2>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> Point2 {
        self.points[idx]
    }

    /// Index and squared distance of the nearest point. Ties go to the
    /// lowest index.
    pub fn nearest(&self, query: Point2) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(query, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn nearest_in(&self, q: Point2, lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d = q.distance_sq(p);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let diff = axis_value(q, depth) - axis_value(p, depth);
        let (first, second) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, first.0, first.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.nearest_in(q, second.0, second.1, depth + 1, best);
        }
    }

    /// Up to `k` nearest points within `radius`, sorted by distance then index.
    /// Returns `(index, distance)` pairs.
    pub fn k_nearest_within(&self, query: Point2, k: usize, radius: f64) -> Vec<(usize, f64)> {
        let mut found: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return found;
        }
        self.knn_in(query, k, radius * radius, 0, self.order.len(), 0, &mut found);
        found.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn knn_in(
        &self,
        q: Point2,
        k: usize,
        r2: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        found: &mut Vec<(usize, f64)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d = q.distance_sq(p);
        if d <= r2 {
            let pos = found
                .iter()
                .position(|&(i, fd)| d < fd || (d == fd && idx < i))
                .unwrap_or(found.len());
            if pos < k {
                found.insert(pos, (idx, d));
                found.truncate(k);
            }
        }
        let bound = |found: &Vec<(usize, f64)>| {
            if found.len() == k {
                found[k - 1].1.min(r2)
            } else {
                r2
            }
        };
        let diff = axis_value(q, depth) - axis_value(p, depth);
        let (first, second) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(q, k, r2, first.0, first.1, depth + 1, found);
        if diff * diff <= bound(found) {
            self.knn_in(q, k, r2, second.0, second.1, depth + 1, found);
        }
    }
}

fn axis_value(p: Point2, depth: usize) -> f64 {
    if depth.is_multiple_of(2) {
        p.x
    } else {
        p.y
    }
}

fn build(points: &[Point2], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        axis_value(points[a], depth)
            .total_cmp(&axis_value(points[b], depth))
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
