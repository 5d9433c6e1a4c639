//! Ground-truth labeling from a pose trace and a point cloud: centerline,
//! offset boundaries, tiled RANSAC ground planes, and height lookup.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geom::{self, Point2, Point3, Rect};
use crate::map::{MapClass, MapElement, Pose2, VectorMap};
use crate::spatial::KdTree;
use crate::{Error, Result};

/// Ten feet.
pub const DEFAULT_HALF_WIDTH: f64 = 3.048;

#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    pub points: Vec<Point2>,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneSpec {
    pub half_width: f64,
}

impl Default for LaneSpec {
    fn default() -> Self {
        LaneSpec {
            half_width: DEFAULT_HALF_WIDTH,
        }
    }
}

impl LaneSpec {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGeometry(format!("half width {half_width} must be > 0")));
        }
        Ok(LaneSpec { half_width })
    }
}

/// Keeps each position at least `min_spacing` from the previously kept one.
pub fn dedup_trace(points: &[Point2], min_spacing: f64) -> Vec<Point2> {
    let mut kept: Vec<Point2> = Vec::new();
    for &p in points {
        if kept.last().is_none_or(|q| q.distance(p) >= min_spacing) {
            kept.push(p);
        }
    }
    kept
}

/// Centered moving average; the ends are padded by repeating the first and
/// last point.
pub fn moving_average(points: &[Point2], window: usize) -> Vec<Point2> {
    let half = window / 2;
    if half == 0 || points.is_empty() {
        return points.to_vec();
    }
    let n = points.len() as i64;
    let span = (2 * half + 1) as f64;
    (0..n)
        .map(|i| {
            let sum = (i - half as i64..=i + half as i64)
                .map(|k| points[k.clamp(0, n - 1) as usize])
                .fold(Point2::new(0.0, 0.0), |acc, p| acc + p);
            sum * (1.0 / span)
        })
        .collect()
}

pub fn extract_centerline(
    poses: &[Pose2],
    dedup_distance: f64,
    smooth_window: usize,
    source: &str,
) -> Result<Centerline> {
    if let Some(w) = poses.windows(2).find(|w| w[1].t < w[0].t) {
        return Err(Error::InvalidGeometry(format!(
            "pose timestamps go backwards at t={}",
            w[1].t
        )));
    }
    let positions: Vec<Point2> = poses.iter().map(Pose2::position).collect();
    let kept = dedup_trace(&positions, dedup_distance);
    if kept.len() < 2 {
        return Err(Error::DegenerateTrace);
    }
    // Smoothing pulls the padded ends together; a second pass restores the
    // spacing guarantee.
    let points = dedup_trace(&moving_average(&kept, smooth_window), dedup_distance);
    if points.len() < 2 {
        return Err(Error::DegenerateTrace);
    }
    Ok(Centerline {
        points,
        source: source.to_string(),
    })
}

/// Offsets an open polyline by `d` along its left normal (negative `d` goes
/// right). Joins are mitered up to twice `|d|` and beveled beyond, then
/// self-intersection loops are cut out.
pub fn offset_polyline(points: &[Point2], d: f64) -> Vec<Point2> {
    let mut pts = points.to_vec();
    geom::dedup_points(&mut pts);
    if pts.len() < 2 {
        return pts;
    }
    let normals: Vec<Point2> = pts
        .windows(2)
        .map(|w| (w[1] - w[0]).normalized().expect("deduplicated").perp())
        .collect();
    let mut out = vec![pts[0] + normals[0] * d];
    for i in 1..pts.len() - 1 {
        let (n0, n1) = (normals[i - 1], normals[i]);
        let bisector = (n0 + n1).normalized();
        match bisector {
            Some(m) if m.dot(n1) >= 0.5 => out.push(pts[i] + m * (d / m.dot(n1))),
            _ => {
                out.push(pts[i] + n0 * d);
                out.push(pts[i] + n1 * d);
            }
        }
    }
    out.push(pts[pts.len() - 1] + normals[normals.len() - 1] * d);
    geom::dedup_points(&mut out);
    remove_loops(out)
}

/// Repeatedly replaces the stretch between two crossing segments with their
/// crossing point.
fn remove_loops(mut pts: Vec<Point2>) -> Vec<Point2> {
    'outer: loop {
        let n = pts.len();
        for i in 0..n.saturating_sub(1) {
            let (a0, a1) = (pts[i], pts[i + 1]);
            let abox = Rect::from_points(&[a0, a1]).expect("two points");
            for j in (i + 2..n - 1).rev() {
                let (b0, b1) = (pts[j], pts[j + 1]);
                if !abox.intersects(&Rect::from_points(&[b0, b1]).expect("two points")) {
                    continue;
                }
                if let Some((t, _)) = geom::segment_intersection(a0, a1, b0, b1) {
                    let x = a0.lerp(a1, t);
                    pts.splice(i + 1..=j, [x]);
                    geom::dedup_points(&mut pts);
                    continue 'outer;
                }
            }
        }
        return pts;
    }
}

/// Left boundary, right boundary, and center divider of a two-way road.
pub fn offset_boundaries(center: &Centerline, spec: &LaneSpec) -> Result<(MapElement, MapElement, MapElement)> {
    let hw = spec.half_width;
    let left = MapElement::new(
        format!("{}-boundary-left", center.source),
        MapClass::Boundary,
        offset_polyline(&center.points, hw),
        false,
    )?;
    let right = MapElement::new(
        format!("{}-boundary-right", center.source),
        MapClass::Boundary,
        offset_polyline(&center.points, -hw),
        false,
    )?;
    let divider = MapElement::new(
        format!("{}-divider", center.source),
        MapClass::Divider,
        center.points.clone(),
        false,
    )?;
    Ok((left, right, divider))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub inlier_tol: f64,
    pub iterations: usize,
    pub max_slope_deg: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            inlier_tol: 0.15,
            iterations: 500,
            max_slope_deg: 20.0,
            seed: 0,
        }
    }
}

/// Plane `z = a·x + b·y + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Plane {
    pub fn z_at(&self, p: Point2) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn residual(&self, p: &Point3) -> f64 {
        p.z - self.z_at(p.xy())
    }

    /// Unit upward normal.
    pub fn normal(&self) -> [f64; 3] {
        let n = (self.a * self.a + self.b * self.b + 1.0).sqrt();
        [-self.a / n, -self.b / n, 1.0 / n]
    }

    pub fn slope_deg(&self) -> f64 {
        self.a.hypot(self.b).atan().to_degrees()
    }

    fn through(p: &Point3, q: &Point3, r: &Point3) -> Option<Plane> {
        let u = [q.x - p.x, q.y - p.y, q.z - p.z];
        let v = [r.x - p.x, r.y - p.y, r.z - p.z];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let scale = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len <= 1e-12 * scale.max(f64::MIN_POSITIVE) || n[2].abs() <= 1e-12 * len {
            return None;
        }
        let a = -n[0] / n[2];
        let b = -n[1] / n[2];
        Some(Plane { a, b, c: p.z - a * p.x - b * p.y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Indices into the input points, ascending.
    pub inliers: Vec<usize>,
    pub rms: f64,
}

fn inliers_of(points: &[Point3], plane: &Plane, tol: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut sq = 0.0;
    for (k, p) in points.iter().enumerate() {
        let r = plane.residual(p);
        if r.abs() <= tol {
            idx.push(k);
            sq += r * r;
        }
    }
    let rms = if idx.is_empty() { f64::INFINITY } else { (sq / idx.len() as f64).sqrt() };
    (idx, rms)
}

/// Least-squares plane through the given points.
pub fn fit_plane_least_squares(points: &[Point3]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my, mz) = points
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, p| (acc.0 + p.x / n, acc.1 + p.y / n, acc.2 + p.z / n));
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (x, y, z) = (p.x - mx, p.y - my, p.z - mz);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxz += x * z;
        syz += y * z;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE) {
        return None;
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    Some(Plane { a, b, c: mz - a * mx - b * my })
}

pub fn ransac_plane(points: &[Point3], params: &RansacParams) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::NoGroundFound);
    }
    let max_tan = params.max_slope_deg.to_radians().tan();
    let steep = |pl: &Plane| pl.a.hypot(pl.b) > max_tan;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Plane, usize, f64)> = None;
    for _ in 0..params.iterations {
        let s = sample(&mut rng, points.len(), 3);
        let Some(plane) = Plane::through(&points[s.index(0)], &points[s.index(1)], &points[s.index(2)]) else {
            continue;
        };
        if steep(&plane) {
            continue;
        }
        let (idx, rms) = inliers_of(points, &plane, params.inlier_tol);
        let better = match &best {
            None => true,
            Some((_, count, best_rms)) => idx.len() > *count || (idx.len() == *count && rms < *best_rms),
        };
        if better {
            best = Some((plane, idx.len(), rms));
        }
    }
    let (mut plane, _, _) = best.ok_or(Error::NoGroundFound)?;
    let (mut inliers, mut rms) = inliers_of(points, &plane, params.inlier_tol);
    for _ in 0..3 {
        let subset: Vec<Point3> = inliers.iter().map(|&k| points[k]).collect();
        let Some(refit) = fit_plane_least_squares(&subset) else { break };
        if steep(&refit) {
            break;
        }
        let (next, next_rms) = inliers_of(points, &refit, params.inlier_tol);
        if next.is_empty() {
            break;
        }
        let stable = next == inliers;
        plane = refit;
        inliers = next;
        rms = next_rms;
        if stable {
            break;
        }
    }
    Ok(PlaneFit { plane, inliers, rms })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundParams {
    pub tile_size: f64,
    pub min_inliers: usize,
    pub ransac: RansacParams,
}

impl Default for GroundParams {
    fn default() -> Self {
        GroundParams {
            tile_size: 20.0,
            min_inliers: 50,
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTile {
    pub ix: usize,
    pub iy: usize,
    pub rect: Rect,
    pub plane: Option<Plane>,
    pub inliers: Vec<Point3>,
}

#[derive(Debug, Clone)]
pub struct GroundModel {
    pub origin: Point2,
    pub tile_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `iy * nx + ix`.
    pub tiles: Vec<GroundTile>,
}

impl GroundModel {
    pub fn inlier_points(&self) -> impl Iterator<Item = &Point3> {
        self.tiles.iter().flat_map(|t| t.inliers.iter())
    }

    pub fn inlier_count(&self) -> usize {
        self.tiles.iter().map(|t| t.inliers.len()).sum()
    }

    fn tile_index(&self, p: Point2) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.tile_size).floor();
        let fy = ((p.y - self.origin.y) / self.tile_size).floor();
        let inside = |f: f64, n: usize, v: f64, lo: f64| {
            // The far edge of the lattice belongs to the last tile.
            if f >= 0.0 && (f as usize) < n {
                Some(f as usize)
            } else if v == lo + n as f64 * self.tile_size {
                Some(n - 1)
            } else {
                None
            }
        };
        let ix = inside(fx, self.nx, p.x, self.origin.x)?;
        let iy = inside(fy, self.ny, p.y, self.origin.y)?;
        Some(iy * self.nx + ix)
    }

    /// Plane height at `p` from its tile, or from the nearest tile that has a
    /// plane.
    pub fn plane_z(&self, p: Point2) -> Option<f64> {
        if let Some(plane) = self.tile_index(p).and_then(|k| self.tiles[k].plane) {
            return Some(plane.z_at(p));
        }
        self.tiles
            .iter()
            .filter(|t| t.plane.is_some())
            .map(|t| (rect_distance(&t.rect, p), t))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, t)| t.plane.expect("filtered").z_at(p))
    }
}

fn rect_distance(r: &Rect, p: Point2) -> f64 {
    let dx = (r.min.x - p.x).max(0.0).max(p.x - r.max.x);
    let dy = (r.min.y - p.y).max(0.0).max(p.y - r.max.y);
    dx.hypot(dy)
}

pub fn build_ground_model(cloud: &[Point3], params: &GroundParams) -> Result<GroundModel> {
    let bounds = Rect::from_points(cloud.iter().map(|p| p.xy()).collect::<Vec<_>>().iter())
        .ok_or(Error::NoGroundFound)?;
    if !(params.tile_size > 0.0) {
        return Err(Error::InvalidGeometry("tile size must be > 0".into()));
    }
    let ts = params.tile_size;
    let nx = ((bounds.width() / ts).ceil() as usize).max(1);
    let ny = ((bounds.height() / ts).ceil() as usize).max(1);
    let origin = bounds.min;
    let mut buckets: Vec<Vec<Point3>> = vec![Vec::new(); nx * ny];
    for p in cloud {
        let ix = (((p.x - origin.x) / ts).floor() as usize).min(nx - 1);
        let iy = (((p.y - origin.y) / ts).floor() as usize).min(ny - 1);
        buckets[iy * nx + ix].push(*p);
    }
    let tiles: Vec<GroundTile> = buckets
        .into_par_iter()
        .enumerate()
        .map(|(k, pts)| {
            let (ix, iy) = (k % nx, k / nx);
            let x0 = origin.x + ix as f64 * ts;
            let y0 = origin.y + iy as f64 * ts;
            let rect = Rect::new(x0, y0, x0 + ts, y0 + ts);
            let fit = (pts.len() >= params.min_inliers)
                .then(|| {
                    let ransac = RansacParams {
                        seed: params.ransac.seed ^ k as u64,
                        ..params.ransac
                    };
                    ransac_plane(&pts, &ransac).ok()
                })
                .flatten()
                .filter(|f| f.inliers.len() >= params.min_inliers);
            match fit {
                Some(f) => GroundTile {
                    ix,
                    iy,
                    rect,
                    plane: Some(f.plane),
                    inliers: f.inliers.iter().map(|&i| pts[i]).collect(),
                },
                None => GroundTile {
                    ix,
                    iy,
                    rect,
                    plane: None,
                    inliers: Vec::new(),
                },
            }
        })
        .collect();
    if tiles.iter().all(|t| t.plane.is_none()) {
        return Err(Error::NoGroundFound);
    }
    Ok(GroundModel {
        origin,
        tile_size: ts,
        nx,
        ny,
        tiles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftParams {
    pub k: usize,
    pub radius: f64,
}

impl Default for LiftParams {
    fn default() -> Self {
        LiftParams { k: 5, radius: 2.0 }
    }
}

/// Height lookup over a ground model's inlier points.
pub struct HeightIndex<'a> {
    model: &'a GroundModel,
    tree: KdTree,
    z: Vec<f64>,
    params: LiftParams,
}

impl<'a> HeightIndex<'a> {
    pub fn new(model: &'a GroundModel, params: LiftParams) -> Self {
        let pts: Vec<&Point3> = model.inlier_points().collect();
        HeightIndex {
            model,
            tree: KdTree::new(pts.iter().map(|p| p.xy()).collect()),
            z: pts.iter().map(|p| p.z).collect(),
            params,
        }
    }

    /// Mean z of the k nearest inliers within the radius, else the tile plane.
    pub fn height(&self, p: Point2) -> f64 {
        let near = self.tree.k_nearest_within(p, self.params.k, self.params.radius);
        if near.is_empty() {
            self.model.plane_z(p).expect("model has at least one plane")
        } else {
            near.iter().map(|&(i, _)| self.z[i]).sum::<f64>() / near.len() as f64
        }
    }
}

pub fn lift_to_3d(map2d: &VectorMap, model: &GroundModel, params: LiftParams) -> VectorMap {
    let index = HeightIndex::new(model, params);
    let elements = map2d
        .elements
        .par_iter()
        .map(|e| MapElement {
            heights: Some(e.points.iter().map(|&p| index.height(p)).collect()),
            ..e.clone()
        })
        .collect();
    VectorMap {
        elements,
        ..map2d.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelParams {
    pub lane: LaneSpec,
    pub dedup_distance: f64,
    pub smooth_window: usize,
    pub ground: GroundParams,
    pub lift: LiftParams,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            lane: LaneSpec::default(),
            dedup_distance: 0.5,
            smooth_window: 5,
            ground: GroundParams::default(),
            lift: LiftParams::default(),
        }
    }
}

/// Pose trace and point cloud to a 3D map with two boundaries and a divider.
pub fn auto_label(poses: &[Pose2], cloud: &[Point3], params: &LabelParams) -> Result<VectorMap> {
    let center = extract_centerline(poses, params.dedup_distance, params.smooth_window, "road")?;
    let (left, right, divider) = offset_boundaries(&center, &params.lane)?;
    let model = build_ground_model(cloud, &params.ground)?;
    let fallback = Rect::from_points(&center.points).expect("centerline has points");
    let map2d = VectorMap::enclosing("map", vec![left, right, divider], 5.0, fallback)?;
    Ok(lift_to_3d(&map2d, &model, params.lift))
}
