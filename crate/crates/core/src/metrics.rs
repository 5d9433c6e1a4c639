//! Chamfer distances, greedy instance matching, AP and mAP, over whole maps
//! and over a square cell lattice.

use rayon::prelude::*;
use serde::Serialize;

use crate::geom::{Point2, Rect};
use crate::map::{clip_to_rect, MapClass, MapElement, VectorMap};
use crate::spatial::KdTree;
use crate::{Error, Result};

pub const DEFAULT_CELL_SIZE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferParams {
    /// Spacing used to turn polylines into point sets, meters.
    pub sample_step: f64,
}

impl Default for ChamferParams {
    fn default() -> Self {
        ChamferParams { sample_step: 0.1 }
    }
}

impl ChamferParams {
    pub fn new(sample_step: f64) -> Result<Self> {
        if !(sample_step.is_finite() && sample_step > 0.0) {
            return Err(Error::InvalidGeometry(format!("sample step {sample_step} must be > 0")));
        }
        Ok(ChamferParams { sample_step })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApThresholds {
    thresholds: Vec<f64>,
}

impl Default for ApThresholds {
    fn default() -> Self {
        ApThresholds {
            thresholds: vec![0.5, 1.0, 1.5],
        }
    }
}

impl ApThresholds {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        let ok = !thresholds.is_empty()
            && thresholds.iter().all(|t| t.is_finite() && *t > 0.0)
            && thresholds.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::InvalidGeometry(format!(
                "thresholds {thresholds:?} must be positive and strictly increasing"
            )));
        }
        Ok(ApThresholds { thresholds })
    }

    pub fn values(&self) -> &[f64] {
        &self.thresholds
    }
}

/// Points every `step` meters along the element, closing segment included.
pub fn densify(element: &MapElement, step: f64) -> Vec<Point2> {
    let path = element.path();
    let mut out = Vec::new();
    for w in path.windows(2) {
        let len = w[0].distance(w[1]);
        let n = ((len / step).ceil() as usize).max(1);
        out.extend((0..n).map(|k| w[0].lerp(w[1], k as f64 / n as f64)));
    }
    out.push(*path.last().expect("validated element has points"));
    out
}

/// Squared-norm Chamfer distance: mean squared nearest distance from A to B
/// plus the same from B to A.
pub fn chamfer_eq2(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let ta = KdTree::new(a.to_vec());
    let tb = KdTree::new(b.to_vec());
    Ok(mean_nearest_sq(a, &tb) + mean_nearest_sq(b, &ta))
}

fn mean_nearest_sq(from: &[Point2], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest(*p).expect("non-empty").1).sum::<f64>() / from.len() as f64
}

fn mean_nearest(from: &[Point2], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest(*p).expect("non-empty").1.sqrt()).sum::<f64>() / from.len() as f64
}

/// An element's densified samples with an index over them.
struct Sampled {
    points: Vec<Point2>,
    tree: KdTree,
}

impl Sampled {
    fn new(element: &MapElement, params: &ChamferParams) -> Self {
        let points = densify(element, params.sample_step);
        let tree = KdTree::new(points.clone());
        Sampled { points, tree }
    }

    fn distance(&self, other: &Sampled) -> f64 {
        0.5 * (mean_nearest(&self.points, &other.tree) + mean_nearest(&other.points, &self.tree))
    }
}

/// Half the sum of the two directed mean nearest distances, in meters.
pub fn matching_distance(pred: &MapElement, gt: &MapElement, params: &ChamferParams) -> Result<f64> {
    if pred.class != gt.class {
        return Err(Error::ClassMismatch(pred.class.to_string(), gt.class.to_string()));
    }
    Ok(Sampled::new(pred, params).distance(&Sampled::new(gt, params)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceMatch {
    pub pred_id: String,
    pub gt_id: Option<String>,
    pub distance: Option<f64>,
}

/// Predictions in ranking order: confidence descending, then id ascending.
fn ranking(preds: &[&MapElement]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .rank_confidence()
            .total_cmp(&preds[a].rank_confidence())
            .then_with(|| preds[a].id.cmp(&preds[b].id))
    });
    order
}

/// Pairwise matching distances, `[pred][gt]`.
fn distance_matrix(preds: &[&MapElement], gts: &[&MapElement], params: &ChamferParams) -> Vec<Vec<f64>> {
    let ps: Vec<Sampled> = preds.par_iter().map(|e| Sampled::new(e, params)).collect();
    let gs: Vec<Sampled> = gts.par_iter().map(|e| Sampled::new(e, params)).collect();
    ps.par_iter()
        .map(|p| gs.iter().map(|g| p.distance(g)).collect())
        .collect()
}

/// For each ranked prediction, the gt index it matched, if any.
fn greedy(order: &[usize], gt_ids: &[&str], dist: &[Vec<f64>], theta: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gt_ids.len()];
    order
        .iter()
        .map(|&p| {
            let best = (0..gt_ids.len())
                .filter(|&g| !taken[g])
                .min_by(|&a, &b| dist[p][a].total_cmp(&dist[p][b]).then_with(|| gt_ids[a].cmp(gt_ids[b])))?;
            if dist[p][best] < theta {
                taken[best] = true;
                Some(best)
            } else {
                None
            }
        })
        .collect()
}

fn ap_from_hits(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            tp += h as usize;
            tp as f64 / (k + 1) as f64
        })
        .collect();
    let mut envelope = 0.0f64;
    let mut sum = 0.0;
    for k in (0..hits.len()).rev() {
        envelope = envelope.max(precision[k]);
        if hits[k] {
            sum += envelope;
        }
    }
    sum / n_gt as f64
}

fn check_same_class(preds: &[&MapElement], gts: &[&MapElement]) -> Result<()> {
    let mut classes = preds.iter().chain(gts).map(|e| e.class);
    if let Some(first) = classes.next() {
        if let Some(other) = classes.find(|c| *c != first) {
            return Err(Error::ClassMismatch(first.to_string(), other.to_string()));
        }
    }
    Ok(())
}

pub fn match_instances(
    preds: &[MapElement],
    gts: &[MapElement],
    theta: f64,
    params: &ChamferParams,
) -> Result<Vec<InstanceMatch>> {
    let preds: Vec<&MapElement> = preds.iter().collect();
    let gts: Vec<&MapElement> = gts.iter().collect();
    check_same_class(&preds, &gts)?;
    let dist = distance_matrix(&preds, &gts, params);
    let order = ranking(&preds);
    let gt_ids: Vec<&str> = gts.iter().map(|g| g.id.as_str()).collect();
    let assigned = greedy(&order, &gt_ids, &dist, theta);
    Ok(order
        .iter()
        .zip(assigned)
        .map(|(&p, g)| InstanceMatch {
            pred_id: preds[p].id.clone(),
            gt_id: g.map(|g| gts[g].id.clone()),
            distance: g.map(|g| dist[p][g]),
        })
        .collect())
}

pub fn average_precision(
    preds: &[MapElement],
    gts: &[MapElement],
    theta: f64,
    params: &ChamferParams,
) -> Result<f64> {
    let matches = match_instances(preds, gts, theta, params)?;
    let hits: Vec<bool> = matches.iter().map(|m| m.gt_id.is_some()).collect();
    Ok(ap_from_hits(&hits, gts.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: MapClass,
    /// AP at each threshold, in threshold order.
    pub ap: Vec<f64>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    pub class: MapClass,
    pub threshold: f64,
    #[serde(flatten)]
    pub matched: InstanceMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassReport>,
    #[serde(rename = "mAP")]
    pub map_ap: f64,
    pub matches: Vec<MatchRecord>,
}

impl EvalReport {
    pub fn class(&self, class: MapClass) -> &ClassReport {
        &self.classes[class.index()]
    }
}

fn evaluate_elements(
    pred: &[MapElement],
    gt: &[MapElement],
    thresholds: &ApThresholds,
    params: &ChamferParams,
) -> EvalReport {
    let mut classes = Vec::with_capacity(3);
    let mut matches = Vec::new();
    for class in MapClass::ALL {
        let preds: Vec<&MapElement> = pred.iter().filter(|e| e.class == class).collect();
        let gts: Vec<&MapElement> = gt.iter().filter(|e| e.class == class).collect();
        let dist = distance_matrix(&preds, &gts, params);
        let order = ranking(&preds);
        let gt_ids: Vec<&str> = gts.iter().map(|g| g.id.as_str()).collect();
        let mut ap = Vec::new();
        for &theta in thresholds.values() {
            let assigned = greedy(&order, &gt_ids, &dist, theta);
            let hits: Vec<bool> = assigned.iter().map(Option::is_some).collect();
            ap.push(ap_from_hits(&hits, gts.len()));
            matches.extend(order.iter().zip(&assigned).map(|(&p, g)| MatchRecord {
                class,
                threshold: theta,
                matched: InstanceMatch {
                    pred_id: preds[p].id.clone(),
                    gt_id: g.map(|g| gts[g].id.clone()),
                    distance: g.map(|g| dist[p][g]),
                },
            }));
        }
        let mean_ap = ap.iter().sum::<f64>() / ap.len() as f64;
        classes.push(ClassReport { class, ap, mean_ap });
    }
    let map_ap = classes.iter().map(|c| c.mean_ap).sum::<f64>() / classes.len() as f64;
    EvalReport {
        thresholds: thresholds.values().to_vec(),
        classes,
        map_ap,
        matches,
    }
}

pub fn evaluate(
    pred_map: &VectorMap,
    gt_map: &VectorMap,
    thresholds: &ApThresholds,
    params: &ChamferParams,
) -> Result<EvalReport> {
    check_frames(pred_map, gt_map)?;
    Ok(evaluate_elements(&pred_map.elements, &gt_map.elements, thresholds, params))
}

pub(crate) fn check_frames(a: &VectorMap, b: &VectorMap) -> Result<()> {
    if a.frame_id != b.frame_id {
        return Err(Error::FrameMismatch(a.frame_id.clone(), b.frame_id.clone()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEval {
    pub cell_id: String,
    pub ci: i64,
    pub cj: i64,
    pub rect: Rect,
    pub pred_count: usize,
    pub gt_count: usize,
    /// `None` when both clipped maps are empty.
    #[serde(rename = "mAP")]
    pub map_ap: Option<f64>,
}

impl CellEval {
    pub fn is_vacuous(&self) -> bool {
        self.map_ap.is_none()
    }
}

pub fn cell_id(ci: i64, cj: i64) -> String {
    format!("{ci}_{cj}")
}

pub fn parse_cell_id(id: &str) -> Option<(i64, i64)> {
    let (a, b) = id.split_once('_')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Square lattice anchored at a corner point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLattice {
    pub anchor: Point2,
    pub cell_size: f64,
}

impl CellLattice {
    pub fn new(anchor: Point2, cell_size: f64) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidGeometry(format!("cell size {cell_size} must be > 0")));
        }
        Ok(CellLattice { anchor, cell_size })
    }

    pub fn rect(&self, ci: i64, cj: i64) -> Rect {
        let x0 = self.anchor.x + ci as f64 * self.cell_size;
        let y0 = self.anchor.y + cj as f64 * self.cell_size;
        Rect::new(x0, y0, x0 + self.cell_size, y0 + self.cell_size)
    }

    /// Index range along one axis covering `[lo, hi]`, at least one cell.
    fn span(&self, lo: f64, hi: f64, origin: f64) -> (i64, i64) {
        let a = ((lo - origin) / self.cell_size).floor() as i64;
        let b = (((hi - origin) / self.cell_size).ceil() as i64 - 1).max(a);
        (a, b)
    }

    /// Cells covering `area`, row by row.
    pub fn cells_over(&self, area: &Rect) -> Vec<(i64, i64)> {
        let (i0, i1) = self.span(area.min.x, area.max.x, self.anchor.x);
        let (j0, j1) = self.span(area.min.y, area.max.y, self.anchor.y);
        (j0..=j1).flat_map(|j| (i0..=i1).map(move |i| (i, j))).collect()
    }
}

pub(crate) fn clip_all(elements: &[MapElement], rect: &Rect) -> Vec<MapElement> {
    elements
        .iter()
        .filter(|e| e.bbox().intersects(rect))
        .flat_map(|e| clip_to_rect(e, rect))
        .collect()
}

/// Evaluates `pred_map` against `gt_map` inside every lattice cell over the
/// union of both maps' bounds. The lattice is anchored at the gt bounds'
/// minimum corner.
pub fn evaluate_per_cell(
    pred_map: &VectorMap,
    gt_map: &VectorMap,
    cell_size: f64,
    thresholds: &ApThresholds,
    params: &ChamferParams,
) -> Result<Vec<CellEval>> {
    check_frames(pred_map, gt_map)?;
    let lattice = CellLattice::new(gt_map.bounds.min, cell_size)?;
    let cells = lattice.cells_over(&gt_map.bounds.union(&pred_map.bounds));
    Ok(cells
        .par_iter()
        .map(|&(ci, cj)| {
            let rect = lattice.rect(ci, cj);
            let pred = clip_all(&pred_map.elements, &rect);
            let gt = clip_all(&gt_map.elements, &rect);
            let map_ap = if pred.is_empty() && gt.is_empty() {
                None
            } else {
                Some(evaluate_elements(&pred, &gt, thresholds, params).map_ap)
            };
            CellEval {
                cell_id: cell_id(ci, cj),
                ci,
                cj,
                rect,
                pred_count: pred.len(),
                gt_count: gt.len(),
                map_ap,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(id: &str, class: MapClass, pts: &[(f64, f64)]) -> MapElement {
        MapElement::new(id, class, pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(), false).unwrap()
    }

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn chamfer_examples() {
        let a = [p(0.0, 0.0), p(1.0, 0.0)];
        assert_eq!(chamfer_eq2(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_eq2(&[p(0.0, 0.0)], &[p(1.0, 0.0)]).unwrap(), 2.0);
        assert_eq!(chamfer_eq2(&a, &[p(0.0, 1.0), p(1.0, 1.0)]).unwrap(), 2.0);
        assert!(matches!(chamfer_eq2(&[], &a), Err(Error::EmptySet)));
    }

    #[test]
    fn densify_spacing() {
        let e = el("a", MapClass::Boundary, &[(0.0, 0.0), (1.0, 0.0)]);
        let d = densify(&e, 0.1);
        assert_eq!(d.len(), 11);
        assert!((d[3].x - 0.3).abs() < 1e-12);
        let sq = MapElement::new("c", MapClass::Crosswalk, vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)], true)
            .unwrap();
        let d = densify(&sq, 0.5);
        assert_eq!(d.len(), 9);
        assert_eq!(d[8], p(0.0, 0.0));
    }

    #[test]
    fn matching_distance_examples() {
        let params = ChamferParams::default();
        let a = el("a", MapClass::Boundary, &[(0.0, 0.0), (10.0, 0.0)]);
        let b = el("b", MapClass::Boundary, &[(0.0, 1.0), (10.0, 1.0)]);
        assert_eq!(matching_distance(&a, &a, &params).unwrap(), 0.0);
        assert!((matching_distance(&a, &b, &params).unwrap() - 1.0).abs() < 1e-12);
        let c = el("c", MapClass::Divider, &[(0.0, 0.0), (10.0, 0.0)]);
        assert!(matches!(matching_distance(&a, &c, &params), Err(Error::ClassMismatch(..))));
    }

    #[test]
    fn match_examples() {
        let params = ChamferParams::default();
        let gt = el("g", MapClass::Divider, &[(0.0, 0.0), (10.0, 0.0)]);
        let m = match_instances(std::slice::from_ref(&gt), std::slice::from_ref(&gt), 0.5, &params).unwrap();
        assert_eq!(m[0].gt_id.as_deref(), Some("g"));
        assert_eq!(m[0].distance, Some(0.0));
        let far = el("p", MapClass::Divider, &[(0.0, 2.0), (10.0, 2.0)]);
        let m = match_instances(&[far], &[gt], 1.5, &params).unwrap();
        assert_eq!(m[0].gt_id, None);
    }

    #[test]
    fn ap_examples() {
        assert!((ap_from_hits(&[true, false, true], 2) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(ap_from_hits(&[], 0), 1.0);
        assert_eq!(ap_from_hits(&[false], 0), 0.0);
        assert_eq!(ap_from_hits(&[], 3), 0.0);
        assert_eq!(ap_from_hits(&[true, true], 2), 1.0);
    }

    #[test]
    fn ap_two_gts_three_preds() {
        let params = ChamferParams::default();
        let g1 = el("g1", MapClass::Boundary, &[(0.0, 0.0), (10.0, 0.0)]);
        let g2 = el("g2", MapClass::Boundary, &[(0.0, 20.0), (10.0, 20.0)]);
        let p1 = el("p1", MapClass::Boundary, &[(0.0, 0.1), (10.0, 0.1)]).with_confidence(0.9);
        let p2 = el("p2", MapClass::Boundary, &[(0.0, 40.0), (10.0, 40.0)]).with_confidence(0.8);
        let p3 = el("p3", MapClass::Boundary, &[(0.0, 20.1), (10.0, 20.1)]).with_confidence(0.7);
        let ap = average_precision(&[p3, p1, p2], &[g1, g2], 0.5, &params).unwrap();
        assert!((ap - 0.8333333333333334).abs() < 1e-12);
    }

    #[test]
    fn evaluate_examples() {
        let params = ChamferParams::default();
        let th = ApThresholds::default();
        let gt = VectorMap::new(
            "map",
            Rect::new(-1.0, -1.0, 11.0, 11.0),
            vec![el("g", MapClass::Boundary, &[(0.0, 0.0), (10.0, 0.0)])],
        )
        .unwrap();
        let r = evaluate(&gt, &gt, &th, &params).unwrap();
        assert_eq!(r.map_ap, 1.0);
        let empty = VectorMap::empty("map", gt.bounds);
        let r = evaluate(&empty, &gt, &th, &params).unwrap();
        assert_eq!(r.class(MapClass::Boundary).mean_ap, 0.0);
        // The two classes absent from both sides count as vacuously perfect.
        assert!((r.map_ap - 2.0 / 3.0).abs() < 1e-12);
        let other = VectorMap::empty("odom", gt.bounds);
        assert!(matches!(evaluate(&other, &gt, &th, &params), Err(Error::FrameMismatch(..))));
    }

    #[test]
    fn thresholds_validated() {
        assert!(ApThresholds::new(vec![1.0, 0.5]).is_err());
        assert!(ApThresholds::new(vec![]).is_err());
        assert!(ApThresholds::new(vec![0.5, 1.0]).is_ok());
        assert!(ChamferParams::new(0.0).is_err());
    }

    #[test]
    fn lattice_cover() {
        let l = CellLattice::new(p(0.0, 0.0), 30.0).unwrap();
        assert_eq!(l.cells_over(&Rect::new(0.0, 0.0, 10.0, 10.0)), vec![(0, 0)]);
        assert_eq!(l.cells_over(&Rect::new(0.0, 0.0, 60.0, 30.0)), vec![(0, 0), (1, 0)]);
        assert_eq!(l.cells_over(&Rect::new(-5.0, 0.0, 0.0, 0.0)), vec![(-1, 0)]);
        assert_eq!(parse_cell_id("-1_3"), Some((-1, 3)));
        assert_eq!(cell_id(-1, 3), "-1_3");
    }

    #[test]
    fn per_cell_small_map_is_one_cell() {
        let params = ChamferParams::default();
        let th = ApThresholds::default();
        let gt = VectorMap::new(
            "map",
            Rect::new(0.0, 0.0, 12.0, 12.0),
            vec![el("g", MapClass::Boundary, &[(1.0, 1.0), (11.0, 1.0)])],
        )
        .unwrap();
        let cells = evaluate_per_cell(&gt, &gt, 30.0, &th, &params).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].map_ap, Some(1.0));
    }
}
