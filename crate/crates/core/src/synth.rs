//! Synthetic ground-truth scenarios and a seeded stand-in for the neural
//! predictor.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::geom::{self, Point2, Rect};
use crate::labeling::{Centerline, DEFAULT_HALF_WIDTH};
use crate::map::{self, clip_to_rect, FramePrediction, MapClass, MapElement, PerceptionWindow, Pose2, VectorMap};
use crate::{Error, Result};

/// Points per simulated element.
pub const FRAME_ELEMENT_POINTS: usize = 20;
const ARC_STEP: f64 = 5.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    StraightRoad,
    Intersection,
    Loop,
    Roundabout,
    MultiLane,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::StraightRoad,
        ScenarioKind::Intersection,
        ScenarioKind::Loop,
        ScenarioKind::Roundabout,
        ScenarioKind::MultiLane,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::StraightRoad => "straight",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::Loop => "loop",
            ScenarioKind::Roundabout => "roundabout",
            ScenarioKind::MultiLane => "multilane",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        match key.as_str() {
            "straight" | "straightroad" => Ok(ScenarioKind::StraightRoad),
            "intersection" => Ok(ScenarioKind::Intersection),
            "loop" => Ok(ScenarioKind::Loop),
            "roundabout" => Ok(ScenarioKind::Roundabout),
            "multilane" => Ok(ScenarioKind::MultiLane),
            _ => Err(Error::InvalidScenario(format!("unknown scenario kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Width of one lane, meters. One lane each way puts the boundaries at
    /// ±half_width.
    pub half_width: f64,
    pub lanes_per_direction: usize,
    /// Road length (straight, multilane), straight section (loop), or arm
    /// length (intersection, roundabout).
    pub length: f64,
    /// Loop end radius or roundabout centerline radius.
    pub radius: f64,
    /// Roundabout arms, evenly spaced.
    pub arms: usize,
    /// Intersection corner fillet radius.
    pub fillet: f64,
    /// Crosswalk centers: stations along the road, or distances from the
    /// center along each arm.
    pub crosswalk_stations: Vec<f64>,
    /// Crosswalk extent along the road.
    pub crosswalk_depth: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        let base = ScenarioSpec {
            kind,
            half_width: DEFAULT_HALF_WIDTH,
            lanes_per_direction: 1,
            length: 100.0,
            radius: 25.0,
            arms: 0,
            fillet: 5.0,
            crosswalk_stations: Vec::new(),
            crosswalk_depth: 4.0,
        };
        match kind {
            ScenarioKind::StraightRoad => ScenarioSpec {
                crosswalk_stations: vec![50.0],
                ..base
            },
            ScenarioKind::MultiLane => ScenarioSpec {
                lanes_per_direction: 2,
                ..base
            },
            ScenarioKind::Intersection => ScenarioSpec {
                length: 60.0,
                crosswalk_stations: vec![12.0],
                ..base
            },
            ScenarioKind::Loop => ScenarioSpec {
                crosswalk_stations: vec![50.0],
                ..base
            },
            ScenarioKind::Roundabout => ScenarioSpec {
                radius: 15.0,
                // Keeps the arm sides off the 30 m cell borders.
                length: 42.0,
                arms: 4,
                ..base
            },
        }
    }

    /// Distance from the reference line to the outer boundary.
    pub fn road_half_width(&self) -> f64 {
        self.half_width * self.lanes_per_direction as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let positive = [
            ("half_width", self.half_width),
            ("length", self.length),
            ("radius", self.radius),
            ("crosswalk_depth", self.crosswalk_depth),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.fillet.is_finite() && self.fillet >= 0.0) {
            return bad(format!("fillet must be >= 0, got {}", self.fillet));
        }
        if self.lanes_per_direction == 0 {
            return bad("lanes_per_direction must be >= 1".into());
        }
        let w = self.road_half_width();
        match self.kind {
            ScenarioKind::Loop | ScenarioKind::Roundabout if self.radius <= w => {
                return bad(format!("radius {} must exceed the road half width {w}", self.radius));
            }
            ScenarioKind::Intersection if self.length <= w + self.fillet => {
                return bad("arm length must exceed the road half width plus fillet".into());
            }
            ScenarioKind::Roundabout if self.arms > 0 => {
                let alpha = (w / (self.radius + w)).asin();
                if 2.0 * alpha >= TAU / self.arms as f64 {
                    return bad(format!("{} arms do not fit around radius {}", self.arms, self.radius));
                }
            }
            _ => {}
        }
        let max_station = match self.kind {
            ScenarioKind::Intersection | ScenarioKind::Roundabout => self.length + self.radius + w,
            _ => self.length,
        };
        if let Some(s) = self.crosswalk_stations.iter().find(|s| !(0.0..=max_station).contains(*s)) {
            return bad(format!("crosswalk station {s} outside the road"));
        }
        Ok(())
    }
}

fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

/// Arc from angle `a0` to `a1` (either direction), both ends included.
fn arc(center: Point2, r: f64, a0: f64, a1: f64) -> Vec<Point2> {
    let n = (((a1 - a0).abs() / ARC_STEP).ceil() as usize).max(1);
    (0..=n)
        .map(|k| {
            let a = a0 + (a1 - a0) * k as f64 / n as f64;
            center + p(a.cos(), a.sin()) * r
        })
        .collect()
}

/// Stadium ring at distance `r` from the two end centers, open form.
fn stadium(length: f64, r: f64) -> Vec<Point2> {
    let mut pts = vec![p(0.0, -r)];
    pts.extend(arc(p(length, 0.0), r, -FRAC_PI_2, FRAC_PI_2));
    pts.extend(arc(p(0.0, 0.0), r, FRAC_PI_2, 3.0 * FRAC_PI_2));
    geom::dedup_points(&mut pts);
    pts.pop();
    pts
}

fn circle(r: f64) -> Vec<Point2> {
    let mut pts = arc(p(0.0, 0.0), r, 0.0, TAU);
    pts.pop();
    pts
}

fn rotate(q: Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    p(c * q.x - s * q.y, s * q.x + c * q.y)
}

fn rect_ring(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
    vec![p(x0, y0), p(x1, y0), p(x1, y1), p(x0, y1)]
}

/// Lateral offsets of the dividers between lanes.
fn divider_offsets(spec: &ScenarioSpec) -> Vec<f64> {
    let n = spec.lanes_per_direction as i64;
    (-(n - 1)..=(n - 1)).map(|k| k as f64 * spec.half_width).collect()
}

struct Builder {
    elements: Vec<MapElement>,
    counts: [usize; 3],
}

impl Builder {
    fn new() -> Self {
        Builder {
            elements: Vec::new(),
            counts: [0; 3],
        }
    }

    fn add(&mut self, class: MapClass, points: Vec<Point2>, closed: bool) -> Result<()> {
        let k = &mut self.counts[class.index()];
        let id = format!("{class}-{k:02}");
        *k += 1;
        self.elements.push(MapElement::new(id, class, points, closed)?);
        Ok(())
    }
}

/// Analytic ground truth plus the path the simulated vehicle drives.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(VectorMap, Centerline)> {
    spec.validate()?;
    let w = spec.road_half_width();
    let mut b = Builder::new();
    let path: Vec<Point2> = match spec.kind {
        ScenarioKind::StraightRoad | ScenarioKind::MultiLane => {
            let l = spec.length;
            b.add(MapClass::Boundary, vec![p(0.0, w), p(l, w)], false)?;
            b.add(MapClass::Boundary, vec![p(0.0, -w), p(l, -w)], false)?;
            for y in divider_offsets(spec) {
                b.add(MapClass::Divider, vec![p(0.0, y), p(l, y)], false)?;
            }
            let d = spec.crosswalk_depth / 2.0;
            for &s in &spec.crosswalk_stations {
                b.add(MapClass::Crosswalk, rect_ring(s - d, -w, s + d, w), true)?;
            }
            vec![p(0.0, 0.0), p(l, 0.0)]
        }
        ScenarioKind::Intersection => {
            let (a, f) = (spec.length, spec.fillet);
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                let mut pts = vec![p(w, a)];
                if f > 0.0 {
                    pts.extend(arc(p(w + f, w + f), f, PI, 1.5 * PI));
                } else {
                    pts.push(p(w, w));
                }
                pts.push(p(a, w));
                geom::dedup_points(&mut pts);
                b.add(MapClass::Boundary, pts.into_iter().map(|q| p(sx * q.x, sy * q.y)).collect(), false)?;
            }
            for arm in 0..4 {
                let angle = arm as f64 * FRAC_PI_2;
                for y in divider_offsets(spec) {
                    b.add(
                        MapClass::Divider,
                        vec![rotate(p(w, y), angle), rotate(p(a, y), angle)],
                        false,
                    )?;
                }
            }
            let d = spec.crosswalk_depth / 2.0;
            for arm in 0..4 {
                let angle = arm as f64 * FRAC_PI_2;
                for &s in &spec.crosswalk_stations {
                    let ring = rect_ring(s - d, -w, s + d, w).into_iter().map(|q| rotate(q, angle)).collect();
                    b.add(MapClass::Crosswalk, ring, true)?;
                }
            }
            vec![
                p(-a, 0.0),
                p(0.0, 0.0),
                p(0.0, a),
                p(0.0, 0.0),
                p(a, 0.0),
                p(0.0, 0.0),
                p(0.0, -a),
            ]
        }
        ScenarioKind::Loop => {
            let (l, r) = (spec.length, spec.radius);
            b.add(MapClass::Boundary, stadium(l, r + w), true)?;
            b.add(MapClass::Boundary, stadium(l, r - w), true)?;
            for y in divider_offsets(spec) {
                b.add(MapClass::Divider, stadium(l, r + y), true)?;
            }
            let d = spec.crosswalk_depth / 2.0;
            for &s in &spec.crosswalk_stations {
                b.add(MapClass::Crosswalk, rect_ring(s - d, -r - w, s + d, -r + w), true)?;
            }
            let mut path = stadium(l, r);
            path.push(path[0]);
            path
        }
        ScenarioKind::Roundabout => roundabout(spec, &mut b)?,
    };
    let fallback = Rect::from_points(&path).expect("path has points");
    let map = VectorMap::enclosing("map", b.elements, 5.0, fallback)?;
    let mut points = path;
    geom::dedup_points(&mut points);
    Ok((
        map,
        Centerline {
            points,
            source: spec.kind.to_string(),
        },
    ))
}

fn roundabout(spec: &ScenarioSpec, b: &mut Builder) -> Result<Vec<Point2>> {
    let (r, w) = (spec.radius, spec.road_half_width());
    let ro = r + w;
    b.add(MapClass::Boundary, circle(r - w), true)?;
    for y in divider_offsets(spec) {
        b.add(MapClass::Divider, circle(r + y), true)?;
    }
    if spec.arms == 0 {
        b.add(MapClass::Boundary, circle(ro), true)?;
        let mut path = circle(r);
        path.push(path[0]);
        return Ok(path);
    }
    let n = spec.arms;
    let theta = |k: usize| k as f64 * TAU / n as f64;
    let alpha = (w / ro).asin();
    let t0 = (ro * ro - w * w).sqrt();
    let t1 = ro + spec.length;
    let side = |k: usize, t: f64, lateral: f64| rotate(p(t, lateral), theta(k));
    for k in 0..n {
        let next = (k + 1) % n;
        let mut pts = vec![side(k, t1, w), side(k, t0, w)];
        let end = theta(k) + TAU / n as f64 - alpha;
        pts.extend(arc(p(0.0, 0.0), ro, theta(k) + alpha, end));
        pts.push(side(next, t0, -w));
        pts.push(side(next, t1, -w));
        geom::dedup_points(&mut pts);
        b.add(MapClass::Boundary, pts, false)?;
    }
    for k in 0..n {
        for y in divider_offsets(spec) {
            let start = (ro * ro - y * y).sqrt();
            b.add(MapClass::Divider, vec![side(k, start, y), side(k, t1, y)], false)?;
        }
    }
    let d = spec.crosswalk_depth / 2.0;
    for k in 0..n {
        for &s in &spec.crosswalk_stations {
            let ring = rect_ring(s - d, -w, s + d, w).into_iter().map(|q| rotate(q, theta(k))).collect();
            b.add(MapClass::Crosswalk, ring, true)?;
        }
    }
    let mut path = Vec::new();
    for k in 0..n {
        let on_circle = side(k, r, 0.0);
        path.push(on_circle);
        path.push(side(k, t1, 0.0));
        path.push(on_circle);
        path.extend(arc(p(0.0, 0.0), r, theta(k), theta(k) + TAU / n as f64));
    }
    geom::dedup_points(&mut path);
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub point_sigma: f64,
    pub dropout_prob: f64,
    /// Expected spurious elements per frame.
    pub spurious_rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            point_sigma: 0.0,
            dropout_prob: 0.0,
            spurious_rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.point_sigma.is_finite() && self.point_sigma >= 0.0) {
            return Err(Error::InvalidScenario(format!("point sigma {} must be >= 0", self.point_sigma)));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidScenario(format!("dropout {} outside [0, 1]", self.dropout_prob)));
        }
        if !(self.spurious_rate.is_finite() && self.spurious_rate >= 0.0) {
            return Err(Error::InvalidScenario(format!("spurious rate {} must be >= 0", self.spurious_rate)));
        }
        Ok(())
    }
}

/// Poses every `step` meters along the path, yaw along the local tangent.
pub fn sample_poses(path: &[Point2], step: f64) -> Vec<Pose2> {
    let mut poses = Vec::new();
    if path.len() < 2 || !(step > 0.0) {
        return poses;
    }
    let total = geom::polyline_length(path);
    let n = (total / step + 1e-9).floor() as usize;
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..=n {
        let s = k as f64 * step;
        while seg + 1 < path.len() - 1 && seg_start + path[seg].distance(path[seg + 1]) <= s {
            seg_start += path[seg].distance(path[seg + 1]);
            seg += 1;
        }
        let (a, b) = (path[seg], path[seg + 1]);
        let len = a.distance(b);
        let t = ((s - seg_start) / len).clamp(0.0, 1.0);
        let q = a.lerp(b, t);
        let d = b - a;
        poses.push(Pose2::new(k as f64 * 0.5, q.x, q.y, d.y.atan2(d.x)));
    }
    poses
}

/// Resamples to `n` points; rings come back as `n` distinct vertices.
fn resample_element(el: &MapElement, n: usize) -> Result<Vec<Point2>> {
    if el.closed {
        let mut pts = geom::resample_polyline(&el.path(), n + 1)?;
        pts.pop();
        Ok(pts)
    } else {
        geom::resample_polyline(&el.points, n)
    }
}

fn clamp_to(rect: &Rect, q: Point2) -> Point2 {
    p(q.x.clamp(rect.min.x, rect.max.x), q.y.clamp(rect.min.y, rect.max.y))
}

fn simulate_frame(
    gt: &VectorMap,
    pose: &Pose2,
    window: &PerceptionWindow,
    noise: &NoiseSpec,
    index: usize,
) -> Result<FramePrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ index as u64);
    let jitter = (noise.point_sigma > 0.0)
        .then(|| Normal::new(0.0, noise.point_sigma).expect("valid sigma"));
    let rect = window.rect();
    let mut elements = Vec::new();
    for el in &gt.elements {
        let ego = MapElement {
            points: el
                .points
                .iter()
                .map(|q| map::map_to_ego(pose, *q))
                .collect::<Result<Vec<_>>>()?,
            heights: None,
            ..el.clone()
        };
        if !ego.bbox().intersects(&rect) {
            continue;
        }
        for piece in clip_to_rect(&ego, &rect) {
            if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
                continue;
            }
            let mut pts = resample_element(&piece, FRAME_ELEMENT_POINTS)?;
            if let Some(dist) = &jitter {
                for q in &mut pts {
                    let moved = p(q.x + dist.sample(&mut rng), q.y + dist.sample(&mut rng));
                    *q = clamp_to(&rect, moved);
                }
            }
            if let Ok(e) = MapElement::new(piece.id.clone(), piece.class, pts, piece.closed) {
                elements.push(e);
            }
        }
    }
    if noise.spurious_rate > 0.0 {
        let count = Poisson::new(noise.spurious_rate).expect("positive rate").sample(&mut rng) as usize;
        let inner = rect.expanded(-5.0);
        for j in 0..count {
            let class = MapClass::ALL[rng.random_range(0..3)];
            let start = p(
                rng.random_range(inner.min.x..inner.max.x),
                rng.random_range(inner.min.y..inner.max.y),
            );
            let heading = rng.random_range(0.0..TAU);
            let len = rng.random_range(2.0..5.0);
            let end = start + p(heading.cos(), heading.sin()) * len;
            let pts = geom::resample_polyline(&[start, end], FRAME_ELEMENT_POINTS)?;
            elements.push(MapElement::new(format!("spurious-{j}"), class, pts, false)?);
        }
    }
    Ok(FramePrediction { pose: *pose, elements })
}

/// Frames every `step` meters along the drive path. Each frame sees the
/// ground truth through the perception window, resampled to 20 points per
/// element, with seeded jitter, dropout and spurious segments.
pub fn simulate_frames(
    gt: &VectorMap,
    drive_path: &Centerline,
    window: &PerceptionWindow,
    step: f64,
    noise: &NoiseSpec,
) -> Result<Vec<FramePrediction>> {
    window.validate()?;
    noise.validate()?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidScenario(format!("frame step {step} must be > 0")));
    }
    sample_poses(&drive_path.points, step)
        .par_iter()
        .enumerate()
        .map(|(k, pose)| simulate_frame(gt, pose, window, noise, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Change {
    RemoveElement { id: String },
    ShiftElement { id: String, dx: f64, dy: f64 },
    /// Moves boundary vertices between two stations toward the nearest
    /// divider by `inset`, tapering linearly over `taper` meters at each
    /// side.
    NarrowRoad {
        element_id: String,
        start: f64,
        end: f64,
        inset: f64,
        taper: f64,
    },
}

impl Change {
    pub fn element_id(&self) -> &str {
        match self {
            Change::RemoveElement { id } | Change::ShiftElement { id, .. } => id,
            Change::NarrowRoad { element_id, .. } => element_id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Change::RemoveElement { .. } => "remove",
            Change::ShiftElement { .. } => "shift",
            Change::NarrowRoad { .. } => "narrow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeRecord {
    pub kind: &'static str,
    pub element_id: String,
    /// Box around the old and new geometry that changed.
    pub affected: Rect,
}

/// Applies one change to a copy of `gt`.
pub fn inject_change(gt: &VectorMap, change: &Change) -> Result<(VectorMap, ChangeRecord)> {
    let id = change.element_id();
    let k = gt
        .elements
        .iter()
        .position(|e| e.id == id)
        .ok_or_else(|| Error::UnknownElement(id.to_string()))?;
    let old = &gt.elements[k];
    let mut out = gt.clone();
    let affected = match change {
        Change::RemoveElement { .. } => {
            out.elements.remove(k);
            old.bbox()
        }
        Change::ShiftElement { dx, dy, .. } => {
            let moved = old.map_points(|q| p(q.x + dx, q.y + dy));
            let bbox = old.bbox().union(&moved.bbox());
            out.elements[k] = moved;
            bbox
        }
        Change::NarrowRoad {
            start,
            end,
            inset,
            taper,
            ..
        } => {
            let (moved, bbox) = narrow(gt, old, *start, *end, *inset, *taper)?;
            out.elements[k] = moved;
            bbox
        }
    };
    out.bounds = out
        .elements
        .iter()
        .map(|e| e.bbox())
        .fold(out.bounds, |acc, b| acc.union(&b));
    Ok((
        out,
        ChangeRecord {
            kind: change.kind(),
            element_id: id.to_string(),
            affected,
        },
    ))
}

fn narrow(gt: &VectorMap, el: &MapElement, start: f64, end: f64, inset: f64, taper: f64) -> Result<(MapElement, Rect)> {
    if !(start < end && inset.is_finite() && taper >= 0.0) {
        return Err(Error::InvalidScenario(format!("bad narrowing {start}..{end} by {inset}")));
    }
    // Densify so the taper has vertices to act on.
    let path = el.path();
    let length = geom::polyline_length(&path);
    let n = ((length / 0.5).ceil() as usize + 1).max(2);
    let mut pts = geom::resample_polyline(&path, n)?;
    if el.closed {
        pts.pop();
    }
    let dividers: Vec<Vec<Point2>> = gt.of_class(MapClass::Divider).map(|d| d.path()).collect();
    let weight = |s: f64| {
        if s < start - taper || s > end + taper {
            0.0
        } else if s < start {
            (s - (start - taper)) / taper
        } else if s > end {
            ((end + taper) - s) / taper
        } else {
            1.0
        }
    };
    let mut station = 0.0;
    let mut bbox: Option<Rect> = None;
    let mut out = Vec::with_capacity(pts.len());
    for (i, &q) in pts.iter().enumerate() {
        if i > 0 {
            station += pts[i - 1].distance(q);
        }
        let w = weight(station);
        if w == 0.0 {
            out.push(q);
            continue;
        }
        let toward = dividers
            .iter()
            .map(|d| nearest_on_polyline(q, d))
            .min_by(|a, b| a.distance(q).total_cmp(&b.distance(q)))
            .and_then(|target| (target - q).normalized());
        let moved = match toward {
            Some(dir) => q + dir * (inset * w),
            None => q,
        };
        let r = bbox.get_or_insert(Rect::new(q.x, q.y, q.x, q.y));
        r.include(q);
        r.include(moved);
        out.push(moved);
    }
    let bbox = bbox.ok_or_else(|| Error::InvalidScenario("narrowing misses the element".into()))?;
    let moved = MapElement::new(el.id.clone(), el.class, out, el.closed)?;
    Ok((moved, bbox))
}

fn nearest_on_polyline(q: Point2, pts: &[Point2]) -> Point2 {
    pts.windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let len2 = d.dot(d);
            let t = if len2 > 0.0 { ((q - w[0]).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            w[0].lerp(w[1], t)
        })
        .min_by(|a, b| a.distance(q).total_cmp(&b.distance(q)))
        .unwrap_or(pts[0])
}
