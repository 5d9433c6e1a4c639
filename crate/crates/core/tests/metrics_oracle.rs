mod oracle;

use mapweld_core::geom::{Point2, Rect};
use mapweld_core::map::{MapClass, MapElement, VectorMap};
use mapweld_core::metrics::{
    average_precision, chamfer_eq2, evaluate, match_instances, matching_distance, ApThresholds, ChamferParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_element(rng: &mut ChaCha8Rng, id: &str, class: MapClass, n: usize) -> MapElement {
    let mut pts = Vec::new();
    let (mut x, mut y) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
    for _ in 0..n {
        pts.push(Point2::new(x, y));
        x += rng.random_range(0.2..2.0);
        y += rng.random_range(-1.0..1.0);
    }
    MapElement::new(id, class, pts, false).unwrap()
}

#[test]
fn accelerated_distance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ChamferParams::default();
    for k in 0..1000 {
        let n = if k % 10 == 0 { 20 } else { rng.random_range(2..8) };
        let a = random_element(&mut rng, "a", MapClass::Boundary, n);
        let m = rng.random_range(2..8);
        let b = random_element(&mut rng, "b", MapClass::Boundary, m);
        let fast = matching_distance(&a, &b, &params).unwrap();
        let slow = oracle::matching_distance(&a, &b, 0.1);
        assert!((fast - slow).abs() < 1e-9, "pair {k}: {fast} vs {slow}");
    }
}

fn enumerate_assignments(n_pred: usize, n_gt: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![vec![]];
    for _ in 0..n_pred {
        let mut next = Vec::new();
        for partial in &out {
            next.push([partial.clone(), vec![None]].concat());
            for g in 0..n_gt {
                if !partial.contains(&Some(g)) {
                    next.push([partial.clone(), vec![Some(g)]].concat());
                }
            }
        }
        out = next;
    }
    out
}

#[test]
fn greedy_assignment_is_the_unique_rule_consistent_outcome() {
    let params = ChamferParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let gts: Vec<MapElement> = (0..2)
            .map(|k| {
                let y = k as f64 * rng.random_range(0.3..2.0);
                MapElement::new(format!("g{k}"), MapClass::Divider, vec![Point2::new(0.0, y), Point2::new(8.0, y)], false)
                    .unwrap()
            })
            .collect();
        let preds: Vec<MapElement> = [0.9, 0.8, 0.7]
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let y = rng.random_range(-0.5..2.5);
                MapElement::new(format!("p{k}"), MapClass::Divider, vec![Point2::new(0.0, y), Point2::new(8.0, y)], false)
                    .unwrap()
                    .with_confidence(c)
            })
            .collect();
        let theta = 1.0;
        let d = |p: usize, g: usize| oracle::matching_distance(&preds[p], &gts[g], 0.1);
        // Predictions are already in rank order (p0, p1, p2).
        let consistent: Vec<Vec<Option<usize>>> = enumerate_assignments(3, 2)
            .into_iter()
            .filter(|a| {
                (0..3).all(|p| {
                    let free: Vec<usize> = (0..2).filter(|g| !a[..p].contains(&Some(*g))).collect();
                    let best = free.iter().copied().min_by(|&x, &y| d(p, x).partial_cmp(&d(p, y)).unwrap());
                    match (a[p], best) {
                        (Some(g), Some(b)) => g == b && d(p, g) < theta,
                        (None, Some(b)) => d(p, b) >= theta,
                        (None, None) => true,
                        (Some(_), None) => false,
                    }
                })
            })
            .collect();
        assert_eq!(consistent.len(), 1);
        let got: Vec<Option<usize>> = match_instances(&preds, &gts, theta, &params)
            .unwrap()
            .iter()
            .map(|m| m.gt_id.as_ref().map(|id| if id == "g0" { 0 } else { 1 }))
            .collect();
        assert_eq!(got, consistent[0]);
    }
}

#[test]
fn ap_matches_recall_area_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let n = rng.random_range(0..10);
        let hits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let tp = hits.iter().filter(|h| **h).count();
        let n_gt = tp + rng.random_range(0..3);
        let preds: Vec<MapElement> = hits
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                let y = if h { 3.0 * k as f64 } else { 1000.0 + k as f64 };
                MapElement::new(format!("p{k:02}"), MapClass::Boundary, vec![Point2::new(0.0, y), Point2::new(5.0, y)], false)
                    .unwrap()
                    .with_confidence(1.0 - k as f64 * 0.01)
            })
            .collect();
        let mut gts: Vec<MapElement> = hits
            .iter()
            .enumerate()
            .filter(|(_, h)| **h)
            .map(|(k, _)| {
                let y = 3.0 * k as f64;
                MapElement::new(format!("g{k:02}"), MapClass::Boundary, vec![Point2::new(0.0, y), Point2::new(5.0, y)], false)
                    .unwrap()
            })
            .collect();
        for extra in 0..n_gt - tp {
            let y = -500.0 - extra as f64 * 3.0;
            gts.push(
                MapElement::new(format!("x{extra}"), MapClass::Boundary, vec![Point2::new(0.0, y), Point2::new(5.0, y)], false)
                    .unwrap(),
            );
        }
        let got = average_precision(&preds, &gts, 0.5, &ChamferParams::default()).unwrap();
        assert!((got - oracle::ap(&hits, n_gt)).abs() < 1e-12, "{hits:?} {n_gt}");
    }
}

fn noisy_map(seed: u64, n: usize) -> (Vec<MapElement>, Vec<MapElement>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for k in 0..n {
        let class = MapClass::ALL[k % 3];
        let g = random_element(&mut rng, &format!("g{k}"), class, 4);
        let (dx, dy) = (rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
        let p = MapElement::new(
            format!("p{k}"),
            class,
            g.points.iter().map(|q| Point2::new(q.x + dx, q.y + dy)).collect(),
            false,
        )
        .unwrap()
        .with_confidence(rng.random_range(0.0..1.0));
        if rng.random_bool(0.85) {
            pred.push(p);
        }
        gt.push(g);
    }
    (pred, gt)
}

fn as_map(elements: Vec<MapElement>) -> VectorMap {
    VectorMap::enclosing("map", elements, 5.0, Rect::new(0.0, 0.0, 1.0, 1.0)).unwrap()
}

#[test]
fn evaluate_matches_naive_oracle() {
    for seed in 0..10 {
        let (pred, gt) = noisy_map(seed, 12);
        let expected = oracle::map_ap(&pred, &gt, &[0.5, 1.0, 1.5], 0.1);
        let report = evaluate(&as_map(pred), &as_map(gt), &ApThresholds::default(), &ChamferParams::default()).unwrap();
        assert!((report.map_ap - expected).abs() < 1e-9, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_symmetric(a in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..30),
                         b in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..30)) {
        let a: Vec<Point2> = a.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        let b: Vec<Point2> = b.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        prop_assert!((chamfer_eq2(&a, &b).unwrap() - chamfer_eq2(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(chamfer_eq2(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ap_monotone_in_threshold(seed in 0u64..10_000) {
        let (pred, gt) = noisy_map(seed, 9);
        let r = evaluate(&as_map(pred), &as_map(gt), &ApThresholds::default(), &ChamferParams::default()).unwrap();
        for c in &r.classes {
            prop_assert!(c.ap.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(c.ap[0] <= c.ap[1] + 1e-12 && c.ap[1] <= c.ap[2] + 1e-12, "{:?}", c);
        }
    }

    #[test]
    fn rigid_motion_invariance(seed in 0u64..10_000, yaw in -3.1..3.1f64, tx in -100.0..100.0f64, ty in -100.0..100.0f64) {
        let (pred, gt) = noisy_map(seed, 9);
        let (s, c) = yaw.sin_cos();
        let mv = |els: &[MapElement]| -> Vec<MapElement> {
            els.iter().map(|e| MapElement {
                points: e.points.iter().map(|p| Point2::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty)).collect(),
                ..e.clone()
            }).collect()
        };
        let th = ApThresholds::default();
        let params = ChamferParams::default();
        let a = evaluate(&as_map(pred.clone()), &as_map(gt.clone()), &th, &params).unwrap();
        let b = evaluate(&as_map(mv(&pred)), &as_map(mv(&gt)), &th, &params).unwrap();
        for (x, y) in a.classes.iter().zip(&b.classes) {
            for (u, v) in x.ap.iter().zip(&y.ap) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn low_confidence_duplicate_never_helps(seed in 0u64..10_000) {
        let (pred, gt) = noisy_map(seed, 9);
        let params = ChamferParams::default();
        for class in MapClass::ALL {
            let p: Vec<MapElement> = pred.iter().filter(|e| e.class == class).cloned().collect();
            let g: Vec<MapElement> = gt.iter().filter(|e| e.class == class).cloned().collect();
            for theta in [0.5, 1.0, 1.5] {
                let base = average_precision(&p, &g, theta, &params).unwrap();
                let matches = match_instances(&p, &g, theta, &params).unwrap();
                if let Some(m) = matches.iter().find(|m| m.gt_id.is_some()) {
                    let mut dup = p.iter().find(|e| e.id == m.pred_id).unwrap().clone();
                    dup.id = format!("{}-dup", dup.id);
                    dup.confidence = Some(-1.0);
                    let mut with = p.clone();
                    with.push(dup);
                    let after = average_precision(&with, &g, theta, &params).unwrap();
                    let dup_match = match_instances(&with, &g, theta, &params)
                        .unwrap()
                        .into_iter()
                        .find(|x| x.pred_id.ends_with("-dup"))
                        .unwrap();
                    match dup_match.gt_id {
                        // The copy found another free gt of its own within the threshold.
                        Some(other) => {
                            prop_assert_ne!(Some(other), m.gt_id.clone());
                            prop_assert!(dup_match.distance.unwrap() < theta);
                        }
                        None => prop_assert!(after <= base + 1e-12),
                    }
                }
            }
        }
    }
}
