//! Vector map domain types and the ego→map frame transform.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point2, Point3, Rect, DUPLICATE_EPS};

/// Slack allowed between element vertices and the declared map bounds.
pub const BOUNDS_SLACK: f64 = 1.0;

/// Clipped pieces shorter than this are dropped by [`clip_to_rect`].
pub const MIN_CLIP_LENGTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapClass {
    Boundary,
    Divider,
    Crosswalk,
}

impl MapClass {
    pub const ALL: [MapClass; 3] = [MapClass::Boundary, MapClass::Divider, MapClass::Crosswalk];

    pub fn as_str(&self) -> &'static str {
        match self {
            MapClass::Boundary => "boundary",
            MapClass::Divider => "divider",
            MapClass::Crosswalk => "crosswalk",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for MapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "boundary" => Ok(MapClass::Boundary),
            "divider" => Ok(MapClass::Divider),
            "crosswalk" => Ok(MapClass::Crosswalk),
            other => Err(format!("unknown map class `{other}`")),
        }
    }
}

/// One vectorized map feature.
///
/// `points` holds the planar geometry; `heights`, when present, carries one
/// z value per vertex. Closed elements (crosswalk polygons) do not repeat
/// their first vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct MapElement {
    pub id: String,
    pub class: MapClass,
    pub points: Vec<Point2>,
    pub heights: Option<Vec<f64>>,
    pub closed: bool,
    pub confidence: Option<f64>,
}

impl MapElement {
    pub fn new(
        id: impl Into<String>,
        class: MapClass,
        points: Vec<Point2>,
        closed: bool,
    ) -> Result<Self> {
        let el = MapElement {
            id: id.into(),
            class,
            points,
            heights: None,
            closed,
            confidence: None,
        };
        el.validate()?;
        Ok(el)
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGeometry(format!("element {}: {msg}", self.id)));
        let min_points = if self.closed { 3 } else { 2 };
        if self.points.len() < min_points {
            return bad(format!("needs at least {min_points} points"));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return bad("non-finite coordinate".into());
        }
        if let Some(i) = self
            .points
            .windows(2)
            .position(|w| w[0].distance(w[1]) <= DUPLICATE_EPS)
        {
            return bad(format!("duplicate consecutive vertex at index {}", i + 1));
        }
        if self.closed && self.points[0].distance(*self.points.last().unwrap()) <= DUPLICATE_EPS {
            return bad("closed ring repeats its first vertex".into());
        }
        if let Some(h) = &self.heights {
            if h.len() != self.points.len() {
                return bad("height count differs from point count".into());
            }
            if h.iter().any(|z| !z.is_finite()) {
                return bad("non-finite height".into());
            }
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("confidence {c} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Vertices with the closing vertex appended for closed rings.
    pub fn path(&self) -> Vec<Point2> {
        geom::ring_closed(&self.points, self.closed)
    }

    pub fn length(&self) -> f64 {
        geom::polyline_length(&self.path())
    }

    pub fn points3(&self) -> Option<Vec<Point3>> {
        self.heights.as_ref().map(|h| {
            self.points
                .iter()
                .zip(h)
                .map(|(p, &z)| Point3::new(p.x, p.y, z))
                .collect()
        })
    }

    pub fn bbox(&self) -> Rect {
        Rect::from_points(&self.points).expect("validated element has points")
    }

    /// Confidence used for ranking; extracted lines carry none and rank as 1.0.
    pub fn rank_confidence(&self) -> f64 {
        self.confidence.unwrap_or(1.0)
    }

    pub(crate) fn map_points(&self, mut f: impl FnMut(Point2) -> Point2) -> MapElement {
        MapElement {
            points: self.points.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    pub frame_id: String,
    pub bounds: Rect,
    pub elements: Vec<MapElement>,
}

impl VectorMap {
    pub fn new(frame_id: impl Into<String>, bounds: Rect, elements: Vec<MapElement>) -> Result<Self> {
        let map = VectorMap {
            frame_id: frame_id.into(),
            bounds,
            elements,
        };
        map.validate()?;
        Ok(map)
    }

    /// Builds a map whose bounds enclose all elements plus `padding` meters.
    /// An empty element list yields `fallback` bounds.
    pub fn enclosing(
        frame_id: impl Into<String>,
        elements: Vec<MapElement>,
        padding: f64,
        fallback: Rect,
    ) -> Result<Self> {
        let bounds = Rect::from_points(elements.iter().flat_map(|e| e.points.iter()))
            .map(|r| r.expanded(padding))
            .unwrap_or(fallback);
        VectorMap::new(frame_id, bounds, elements)
    }

    pub fn empty(frame_id: impl Into<String>, bounds: Rect) -> Self {
        VectorMap {
            frame_id: frame_id.into(),
            bounds,
            elements: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bounds.min.is_finite() || !self.bounds.max.is_finite() {
            return Err(Error::InvalidGeometry("non-finite map bounds".into()));
        }
        let mut ids = HashSet::new();
        for el in &self.elements {
            el.validate()?;
            if !ids.insert(el.id.as_str()) {
                return Err(Error::InvalidGeometry(format!("duplicate element id {}", el.id)));
            }
            if let Some(p) = el.points.iter().find(|p| !self.bounds.contains(**p, BOUNDS_SLACK)) {
                return Err(Error::InvalidGeometry(format!(
                    "element {} vertex ({}, {}) outside map bounds",
                    el.id, p.x, p.y
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&MapElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn of_class(&self, class: MapClass) -> impl Iterator<Item = &MapElement> {
        self.elements.iter().filter(move |e| e.class == class)
    }
}

/// Planar vehicle pose in the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Counterclockwise from map +x, normalized to (−π, π].
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(t: f64, x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            t,
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Ego-centric perception extents, x forward and y left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionWindow {
    pub forward: f64,
    pub backward: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for PerceptionWindow {
    fn default() -> Self {
        PerceptionWindow {
            forward: 30.0,
            backward: 30.0,
            left: 15.0,
            right: 15.0,
        }
    }
}

impl PerceptionWindow {
    pub fn validate(&self) -> Result<()> {
        let all = [self.forward, self.backward, self.left, self.right];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidGeometry("perception window extents must be > 0".into()))
        }
    }

    /// The window as a rectangle in ego coordinates.
    pub fn rect(&self) -> Rect {
        Rect::new(-self.backward, -self.right, self.forward, self.left)
    }
}

/// One timestamped set of ego-frame predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub pose: Pose2,
    pub elements: Vec<MapElement>,
}

impl FramePrediction {
    pub fn validate(&self) -> Result<()> {
        if !self.pose.is_finite() {
            return Err(Error::InvalidGeometry("non-finite pose".into()));
        }
        self.elements.iter().try_for_each(MapElement::validate)
    }

    /// Checks that every element vertex lies inside `window` (1e-9 slack).
    pub fn check_window(&self, window: &PerceptionWindow) -> Result<()> {
        let rect = window.rect();
        for el in &self.elements {
            if let Some(p) = el.points.iter().find(|p| !rect.contains(**p, 1e-9)) {
                return Err(Error::InvalidGeometry(format!(
                    "frame t={} element {} vertex ({}, {}) outside perception window",
                    self.pose.t, el.id, p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// Rigid ego→map transform: `R(yaw)·p + (x, y)`.
pub fn ego_to_map(pose: &Pose2, p: Point2) -> Result<Point2> {
    if !pose.is_finite() || !p.is_finite() {
        return Err(Error::InvalidGeometry("non-finite pose or point".into()));
    }
    let (s, c) = pose.yaw.sin_cos();
    Ok(Point2::new(
        c * p.x - s * p.y + pose.x,
        s * p.x + c * p.y + pose.y,
    ))
}

/// Inverse of [`ego_to_map`].
pub fn map_to_ego(pose: &Pose2, p: Point2) -> Result<Point2> {
    if !pose.is_finite() || !p.is_finite() {
        return Err(Error::InvalidGeometry("non-finite pose or point".into()));
    }
    let (s, c) = pose.yaw.sin_cos();
    let d = Point2::new(p.x - pose.x, p.y - pose.y);
    Ok(Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y))
}

/// Moves every element of a frame into the map frame. Ids gain an
/// `@<timestamp>` suffix so elements from different frames stay distinct.
pub fn transform_frame(fp: &FramePrediction) -> Result<Vec<MapElement>> {
    fp.elements
        .iter()
        .map(|el| {
            let points = el
                .points
                .iter()
                .map(|&p| ego_to_map(&fp.pose, p))
                .collect::<Result<Vec<_>>>()?;
            Ok(MapElement {
                id: format!("{}@{}", el.id, fp.pose.t),
                points,
                ..el.clone()
            })
        })
        .collect()
}

/// Clips an element to `rect`, dropping pieces shorter than one meter.
pub fn clip_to_rect(element: &MapElement, rect: &Rect) -> Vec<MapElement> {
    clip_element(element, rect, MIN_CLIP_LENGTH)
}

/// Clips an element to `rect`, keeping pieces of at least `min_length`.
///
/// Closed rings that fit entirely inside come back unchanged; otherwise the
/// ring is cut into open boundary pieces. Heights are interpolated along
/// each cut segment.
pub fn clip_element(element: &MapElement, rect: &Rect, min_length: f64) -> Vec<MapElement> {
    if element.points.iter().all(|p| rect.contains(*p, 0.0)) {
        return if element.length() >= min_length {
            vec![element.clone()]
        } else {
            vec![]
        };
    }
    let path = element.path();
    let mut pieces = geom::clip_polyline(&path, rect);
    if element.closed && pieces.len() > 1 {
        let last_param = (path.len() - 1) as f64;
        let starts_at_origin = pieces[0][0].1 == 0.0;
        let ends_at_close = pieces.last().unwrap().last().unwrap().1 == last_param;
        if starts_at_origin && ends_at_close {
            let first = pieces.remove(0);
            pieces.last_mut().unwrap().extend(first.into_iter().skip(1));
        }
    }
    let heights = element.heights.as_ref().map(|h| {
        let mut h = h.clone();
        if element.closed {
            h.push(h[0]);
        }
        h
    });
    let mut out = Vec::new();
    for (k, piece) in pieces.into_iter().enumerate() {
        let points: Vec<Point2> = piece.iter().map(|(p, _)| *p).collect();
        if geom::polyline_length(&points) < min_length.max(DUPLICATE_EPS) {
            continue;
        }
        let piece_heights = heights.as_ref().map(|h| {
            piece
                .iter()
                .map(|&(_, s)| interpolate_param(h, s))
                .collect::<Vec<_>>()
        });
        out.push(MapElement {
            id: format!("{}#{k}", element.id),
            class: element.class,
            points,
            heights: piece_heights,
            closed: false,
            confidence: element.confidence,
        });
    }
    out
}

fn interpolate_param(values: &[f64], s: f64) -> f64 {
    let seg = (s.floor() as usize).min(values.len() - 1);
    let t = s - seg as f64;
    if t <= 0.0 || seg + 1 >= values.len() {
        values[seg]
    } else {
        values[seg] + (values[seg + 1] - values[seg]) * t
    }
}
