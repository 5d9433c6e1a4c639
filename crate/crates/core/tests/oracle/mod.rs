//! Slow, straightforward reimplementations used as test oracles.
#![allow(dead_code)]

use mapweld_core::geom::Point2;
use mapweld_core::map::{MapClass, MapElement};

pub fn densify(el: &MapElement, step: f64) -> Vec<Point2> {
    let mut verts = el.points.clone();
    if el.closed {
        verts.push(verts[0]);
    }
    let mut out = Vec::new();
    for k in 0..verts.len() - 1 {
        let (a, b) = (verts[k], verts[k + 1]);
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        let n = ((len / step).ceil() as usize).max(1);
        for s in 0..n {
            let t = s as f64 / n as f64;
            out.push(Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t));
        }
    }
    out.push(*verts.last().unwrap());
    out
}

fn directed(a: &[Point2], b: &[Point2]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

pub fn point_set_distance(a: &[Point2], b: &[Point2]) -> f64 {
    0.5 * (directed(a, b) + directed(b, a))
}

pub fn matching_distance(a: &MapElement, b: &MapElement, step: f64) -> f64 {
    point_set_distance(&densify(a, step), &densify(b, step))
}

/// Greedy rule followed literally: walk ranked predictions, take the closest
/// free gt if it is under the threshold. Returns per ranked prediction the gt
/// index.
pub fn greedy(preds: &[&MapElement], gts: &[&MapElement], theta: f64, step: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = preds[a].confidence.unwrap_or(1.0);
        let cb = preds[b].confidence.unwrap_or(1.0);
        cb.partial_cmp(&ca).unwrap().then(preds[a].id.cmp(&preds[b].id))
    });
    let mut free = vec![true; gts.len()];
    let mut out = Vec::new();
    for p in order {
        let mut best: Option<(f64, usize)> = None;
        for g in 0..gts.len() {
            if !free[g] {
                continue;
            }
            let d = matching_distance(preds[p], gts[g], step);
            let better = match best {
                None => true,
                Some((bd, bg)) => d < bd || (d == bd && gts[g].id < gts[bg].id),
            };
            if better {
                best = Some((d, g));
            }
        }
        match best {
            Some((d, g)) if d < theta => {
                free[g] = false;
                out.push((p, Some(g)));
            }
            _ => out.push((p, None)),
        }
    }
    out
}

/// AP as the area under the interpolated PR curve, summed per recall step.
pub fn ap(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, h) in hits.iter().enumerate() {
        if *h {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &(r, _) in &points {
        if r > prev_recall {
            let interp = points.iter().filter(|(r2, _)| *r2 >= r).map(|(_, p)| *p).fold(0.0, f64::max);
            area += (r - prev_recall) * interp;
            prev_recall = r;
        }
    }
    area
}

pub fn class_ap(pred: &[MapElement], gt: &[MapElement], class: MapClass, theta: f64, step: f64) -> f64 {
    let p: Vec<&MapElement> = pred.iter().filter(|e| e.class == class).collect();
    let g: Vec<&MapElement> = gt.iter().filter(|e| e.class == class).collect();
    let hits: Vec<bool> = greedy(&p, &g, theta, step).iter().map(|(_, m)| m.is_some()).collect();
    ap(&hits, g.len())
}

pub fn map_ap(pred: &[MapElement], gt: &[MapElement], thresholds: &[f64], step: f64) -> f64 {
    let mut sum = 0.0;
    for class in MapClass::ALL {
        let mut c = 0.0;
        for &t in thresholds {
            c += class_ap(pred, gt, class, t, step);
        }
        sum += c / thresholds.len() as f64;
    }
    sum / 3.0
}
