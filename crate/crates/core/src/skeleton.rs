//! Thinning of the dense mask and tracing of the skeleton into polylines.
//!
//! Thinning is Zhang–Suen with two changes. Candidates need at least three
//! set neighbours, and a candidate is only removed if at the moment of
//! removal it is still a simple point (8-connectivity number 1). Candidates
//! are visited in row-major order. Two-pixel-thick diagonals and 2×2 blocks,
//! which plain Zhang–Suen erases, survive, and the 8-connected component
//! count never changes. A final pass drops staircase corners so that traced
//! degree counts are meaningful.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;

use crate::geom::{self, Point2};
use crate::map::{FramePrediction, MapClass, MapElement, VectorMap};
use crate::raster::{accumulate, threshold_mask, BitGrid, DenseMask, GridSpec};
use crate::Result;

/// Offsets of P2..P9 (N, NE, E, SE, S, SW, W, NW) with +j as north.
const RING: [(i64, i64); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub spec: GridSpec,
    pub layers: [BitGrid; 3],
}

impl Skeleton {
    pub fn layer(&self, class: MapClass) -> &BitGrid {
        &self.layers[class.index()]
    }

    /// The skeleton reinterpreted as a mask, e.g. to thin it again.
    pub fn as_mask(&self) -> DenseMask {
        DenseMask {
            spec: self.spec,
            layers: self.layers.clone(),
        }
    }
}

fn ring_values(g: &BitGrid, i: usize, j: usize) -> [bool; 8] {
    RING.map(|(di, dj)| g.get_signed(i as i64 + di, j as i64 + dj))
}

fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count()
}

/// 8-connectivity (Yokoi) number; a set pixel with value 1 is simple.
fn connectivity_number(p: &[bool; 8]) -> i32 {
    // Yokoi walks E, NE, N, NW, W, SW, S, SE.
    let x = [p[2], p[1], p[0], p[7], p[6], p[5], p[4], p[3]].map(|b| !b as i32);
    [0, 2, 4, 6]
        .iter()
        .map(|&k| x[k] - x[k] * x[(k + 1) % 8] * x[(k + 2) % 8])
        .sum()
}

fn removable_now(g: &BitGrid, i: usize, j: usize) -> bool {
    let p = ring_values(g, i, j);
    let b = p.iter().filter(|v| **v).count();
    b >= 2 && connectivity_number(&p) == 1
}

fn zhang_suen_pass(g: &mut BitGrid, second: bool) -> bool {
    let candidates: Vec<(usize, usize)> = g
        .cells()
        .filter(|&(i, j)| {
            let p = ring_values(g, i, j);
            let b = p.iter().filter(|v| **v).count();
            let [p2, _, p4, _, p6, _, p8, _] = p;
            let side = if second {
                !(p2 && p4 && p8) && !(p2 && p6 && p8)
            } else {
                !(p2 && p4 && p6) && !(p4 && p6 && p8)
            };
            (3..=6).contains(&b) && transitions(&p) == 1 && side
        })
        .collect();
    let mut changed = false;
    for (i, j) in candidates {
        if connectivity_number(&ring_values(g, i, j)) == 1 {
            g.set(i, j, false);
            changed = true;
        }
    }
    changed
}

/// Removes pixels whose only orthogonal neighbours form an L, when doing so
/// keeps the topology.
fn staircase_pass(g: &mut BitGrid) -> bool {
    let cells: Vec<(usize, usize)> = g.cells().collect();
    let mut changed = false;
    for (i, j) in cells {
        let p = ring_values(g, i, j);
        let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
        let orth = [n, e, s, w].iter().filter(|b| **b).count();
        let l_shape = orth == 2 && !(n && s) && !(e && w);
        if l_shape && removable_now(g, i, j) {
            g.set(i, j, false);
            changed = true;
        }
    }
    changed
}

/// Thins one layer to a fixpoint.
pub fn thin(layer: &BitGrid) -> BitGrid {
    let mut g = layer.clone();
    loop {
        let a = zhang_suen_pass(&mut g, false);
        let b = zhang_suen_pass(&mut g, true);
        if a || b {
            continue;
        }
        if !staircase_pass(&mut g) {
            break;
        }
    }
    g
}

pub fn skeletonize(mask: &DenseMask) -> Skeleton {
    let layers: Vec<BitGrid> = mask.layers.par_iter().map(thin).collect();
    Skeleton {
        spec: mask.spec,
        layers: layers.try_into().expect("three layers"),
    }
}

/// Number of 8-connected components of set cells.
pub fn component_count(g: &BitGrid) -> usize {
    let mut seen = vec![false; g.bits.len()];
    let mut count = 0;
    for (i, j) in g.cells() {
        if seen[j * g.width + i] {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([(i, j)]);
        seen[j * g.width + i] = true;
        while let Some((ci, cj)) = queue.pop_front() {
            for n in neighbours(g, ci, cj) {
                let k = n.1 * g.width + n.0;
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    count
}

fn neighbours(g: &BitGrid, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    RING.iter().filter_map(move |&(di, dj)| {
        let (ni, nj) = (i as i64 + di, j as i64 + dj);
        g.get_signed(ni, nj).then_some((ni as usize, nj as usize))
    })
}

type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Degree-1 cell.
    Endpoint,
    /// 8-connected cluster of cells with degree ≥ 3.
    Junction,
    /// Degree-0 cell.
    Isolated,
    /// Arbitrary cell chosen to open a junction-free cycle.
    LoopAnchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonNode {
    pub kind: NodeKind,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonEdge {
    pub start: usize,
    pub end: usize,
    /// Degree-2 cells strictly between the two nodes, in walk order.
    pub cells: Vec<Cell>,
}

impl SkeletonEdge {
    pub fn is_loop(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkeletonGraph {
    pub nodes: Vec<SkeletonNode>,
    pub edges: Vec<SkeletonEdge>,
}

/// Partitions the set cells of one layer into nodes and degree-2 paths.
/// Scanning is row-major, so the result is deterministic.
pub fn trace_layer(g: &BitGrid) -> SkeletonGraph {
    let degree = |c: Cell| neighbours(g, c.0, c.1).count();
    let mut node_of: HashMap<Cell, usize> = HashMap::new();
    let mut nodes: Vec<SkeletonNode> = Vec::new();

    for c in g.cells() {
        if node_of.contains_key(&c) {
            continue;
        }
        let kind = match degree(c) {
            0 => NodeKind::Isolated,
            1 => NodeKind::Endpoint,
            2 => continue,
            _ => NodeKind::Junction,
        };
        let id = nodes.len();
        let mut cells = vec![c];
        node_of.insert(c, id);
        if kind == NodeKind::Junction {
            let mut queue = VecDeque::from([c]);
            while let Some(cur) = queue.pop_front() {
                for n in neighbours(g, cur.0, cur.1) {
                    if degree(n) >= 3 && !node_of.contains_key(&n) {
                        node_of.insert(n, id);
                        cells.push(n);
                        queue.push_back(n);
                    }
                }
            }
            cells.sort_by_key(|&(i, j)| (j, i));
        }
        nodes.push(SkeletonNode { kind, cells });
    }

    let mut visited: HashSet<Cell> = HashSet::new();
    let mut edges = Vec::new();
    let mut direct: HashSet<(usize, usize)> = HashSet::new();

    let walk = |start_node: usize,
                from: Cell,
                first: Cell,
                node_of: &HashMap<Cell, usize>,
                visited: &mut HashSet<Cell>|
     -> (Vec<Cell>, Option<usize>) {
        let mut path = Vec::new();
        let (mut prev, mut cur) = (from, first);
        loop {
            visited.insert(cur);
            path.push(cur);
            let next = neighbours(g, cur.0, cur.1).find(|&n| {
                n != prev && !(path.len() == 1 && node_of.get(&n) == Some(&start_node) && n == from)
                    && !visited.contains(&n)
                    || (n != prev && node_of.contains_key(&n))
            });
            match next {
                Some(n) if node_of.contains_key(&n) => return (path, Some(node_of[&n])),
                Some(n) => {
                    prev = cur;
                    cur = n;
                }
                None => return (path, None),
            }
        }
    };

    for id in 0..nodes.len() {
        let cells = nodes[id].cells.clone();
        for &c in &cells {
            for n in neighbours(g, c.0, c.1).collect::<Vec<_>>() {
                match node_of.get(&n) {
                    Some(&other) if other == id => {}
                    Some(&other) => {
                        let key = (id.min(other), id.max(other));
                        if direct.insert(key) {
                            edges.push(SkeletonEdge {
                                start: id,
                                end: other,
                                cells: vec![],
                            });
                        }
                    }
                    None if !visited.contains(&n) => {
                        let (path, end) = walk(id, c, n, &node_of, &mut visited);
                        edges.push(SkeletonEdge {
                            start: id,
                            end: end.unwrap_or(id),
                            cells: path,
                        });
                    }
                    None => {}
                }
            }
        }
    }

    // What is left are junction-free cycles.
    for c in g.cells().collect::<Vec<_>>() {
        if node_of.contains_key(&c) || visited.contains(&c) {
            continue;
        }
        let id = nodes.len();
        nodes.push(SkeletonNode {
            kind: NodeKind::LoopAnchor,
            cells: vec![c],
        });
        node_of.insert(c, id);
        let first = neighbours(g, c.0, c.1).next().expect("cycle cell has neighbours");
        let (path, _) = walk(id, c, first, &node_of, &mut visited);
        edges.push(SkeletonEdge {
            start: id,
            end: id,
            cells: path,
        });
    }

    SkeletonGraph { nodes, edges }
}

pub fn trace_skeleton(sk: &Skeleton) -> [SkeletonGraph; 3] {
    sk.layers.clone().map(|l| trace_layer(&l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    /// Shorter lines (and dangling spurs) are discarded, meters.
    pub min_length: f64,
    /// Douglas–Peucker tolerance, meters.
    pub simplify_tol: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            min_length: 2.0,
            simplify_tol: 0.25,
        }
    }
}

fn node_position(spec: &GridSpec, node: &SkeletonNode) -> Point2 {
    let n = node.cells.len() as f64;
    let sum = node
        .cells
        .iter()
        .fold(Point2::new(0.0, 0.0), |acc, &(i, j)| acc + spec.cell_center(i, j));
    sum * (1.0 / n)
}

fn edge_polyline(spec: &GridSpec, graph: &SkeletonGraph, edge: &SkeletonEdge) -> Vec<Point2> {
    let mut pts = vec![node_position(spec, &graph.nodes[edge.start])];
    pts.extend(edge.cells.iter().map(|&(i, j)| spec.cell_center(i, j)));
    if !edge.is_loop() {
        pts.push(node_position(spec, &graph.nodes[edge.end]));
    }
    geom::dedup_points(&mut pts);
    pts
}

/// Removes dangling branches shorter than `min_length` that hang off a
/// junction, re-tracing until none remain.
pub fn prune_spurs(spec: &GridSpec, layer: &BitGrid, min_length: f64) -> BitGrid {
    let mut g = layer.clone();
    for _ in 0..64 {
        let graph = trace_layer(&g);
        let mut removed = false;
        for edge in &graph.edges {
            let (a, b) = (&graph.nodes[edge.start], &graph.nodes[edge.end]);
            let spur_end = match (a.kind, b.kind) {
                (NodeKind::Endpoint, NodeKind::Junction) => Some(a),
                (NodeKind::Junction, NodeKind::Endpoint) => Some(b),
                _ => None,
            };
            let Some(tip) = spur_end else { continue };
            let length = geom::polyline_length(&edge_polyline(spec, &graph, edge));
            if length < min_length {
                for &(i, j) in edge.cells.iter().chain(&tip.cells) {
                    g.set(i, j, false);
                }
                removed = true;
            }
        }
        if !removed {
            break;
        }
        g = thin(&g);
    }
    g
}

/// Converts every traced edge into a map element of the layer's class.
pub fn extract_lines(sk: &Skeleton, params: &ExtractParams) -> VectorMap {
    let spec = sk.spec;
    let per_class: Vec<Vec<MapElement>> = MapClass::ALL
        .par_iter()
        .map(|&class| {
            let pruned = prune_spurs(&spec, sk.layer(class), params.min_length);
            let graph = trace_layer(&pruned);
            let mut out = Vec::new();
            for edge in &graph.edges {
                let pts = edge_polyline(&spec, &graph, edge);
                let closed = edge.is_loop() && pts.len() >= 3;
                let pts = if closed {
                    geom::simplify_ring(&pts, params.simplify_tol)
                } else {
                    geom::simplify_douglas_peucker(&pts, params.simplify_tol)
                };
                let closed = closed && pts.len() >= 3;
                if pts.len() < 2 || geom::polyline_length(&geom::ring_closed(&pts, closed)) < params.min_length {
                    continue;
                }
                let id = format!("{class}-{:04}", out.len());
                if let Ok(el) = MapElement::new(id, class, pts, closed) {
                    out.push(el);
                }
            }
            out
        })
        .collect();
    VectorMap {
        frame_id: "map".into(),
        bounds: spec.extent(),
        elements: per_class.into_iter().flatten().collect(),
    }
}

/// Accumulate, threshold, thin, trace, and vectorize in one call.
pub fn extract_from_frames(
    frames: &[FramePrediction],
    spec: GridSpec,
    threshold: u32,
    params: &ExtractParams,
) -> Result<VectorMap> {
    let grid = accumulate(frames, spec)?;
    Ok(extract_from_mask(&threshold_mask(&grid, threshold), params))
}

pub fn extract_from_mask(mask: &DenseMask, params: &ExtractParams) -> VectorMap {
    extract_lines(&skeletonize(mask), params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(rows: &[&str]) -> BitGrid {
        // rows[0] is the top (highest j).
        let h = rows.len();
        let w = rows[0].len();
        let mut g = BitGrid::new(w, h);
        for (r, row) in rows.iter().enumerate() {
            for (i, ch) in row.chars().enumerate() {
                if ch == '#' {
                    g.set(i, h - 1 - r, true);
                }
            }
        }
        g
    }

    /// Textbook parallel Zhang–Suen, used as a reference on inputs without
    /// topology hazards.
    fn reference_zhang_suen(g: &BitGrid) -> BitGrid {
        let mut g = g.clone();
        loop {
            let mut changed = false;
            for second in [false, true] {
                let del: Vec<_> = g
                    .cells()
                    .filter(|&(i, j)| {
                        let p = ring_values(&g, i, j);
                        let b = p.iter().filter(|v| **v).count();
                        let [p2, _, p4, _, p6, _, p8, _] = p;
                        let side = if second {
                            !(p2 && p4 && p8) && !(p2 && p6 && p8)
                        } else {
                            !(p2 && p4 && p6) && !(p4 && p6 && p8)
                        };
                        (2..=6).contains(&b) && transitions(&p) == 1 && side
                    })
                    .collect();
                changed |= !del.is_empty();
                for (i, j) in del {
                    g.set(i, j, false);
                }
            }
            if !changed {
                return g;
            }
        }
    }

    #[test]
    fn empty_and_single() {
        let g = BitGrid::new(5, 5);
        assert_eq!(thin(&g), g);
        let one = BitGrid::from_cells(5, 5, [(2, 2)]);
        assert_eq!(thin(&one), one);
    }

    #[test]
    fn bar_thins_to_middle_row() {
        let mut g = BitGrid::new(24, 7);
        for i in 2..22 {
            for j in 2..5 {
                g.set(i, j, true);
            }
        }
        let t = thin(&g);
        let reference: Vec<_> = reference_zhang_suen(&g).cells().collect();
        assert!(reference.iter().all(|&(_, j)| j == 3));
        let cells: Vec<_> = t.cells().collect();
        assert!(cells.iter().all(|&(_, j)| j == 3), "{cells:?}");
        let xs: Vec<usize> = cells.iter().map(|c| c.0).collect();
        assert!(*xs.first().unwrap() <= 4 && *xs.last().unwrap() >= 19);
        assert_eq!(xs.len(), xs.last().unwrap() - xs.first().unwrap() + 1);
    }

    #[test]
    fn two_by_two_block_survives() {
        let g = BitGrid::from_cells(6, 6, [(2, 2), (3, 2), (2, 3), (3, 3)]);
        assert!(reference_zhang_suen(&g).count() == 0);
        let t = thin(&g);
        assert!(t.count() >= 1);
        assert_eq!(component_count(&t), 1);
    }

    #[test]
    fn thick_diagonal_survives() {
        let mut g = BitGrid::new(20, 20);
        for k in 1..18 {
            g.set(k, k, true);
            g.set(k + 1, k, true);
        }
        let t = thin(&g);
        assert_eq!(component_count(&t), 1);
        assert!(t.count() >= 15);
    }

    #[test]
    fn straight_run_graph() {
        let g = BitGrid::from_cells(12, 3, (1..11).map(|i| (i, 1)));
        let graph = trace_layer(&g);
        assert_eq!(graph.nodes.len(), 2);
        assert!(graph.nodes.iter().all(|n| n.kind == NodeKind::Endpoint));
        assert_eq!(graph.edges.len(), 1);
        assert_eq!(graph.edges[0].cells.len(), 8);
    }

    #[test]
    fn plus_sign_graph() {
        let mut cells = vec![(5, 5)];
        for k in 1..=4 {
            cells.extend([(5 + k, 5), (5 - k, 5), (5, 5 + k), (5, 5 - k)]);
        }
        let graph = trace_layer(&BitGrid::from_cells(11, 11, cells));
        let junctions: Vec<_> = graph.nodes.iter().filter(|n| n.kind == NodeKind::Junction).collect();
        assert_eq!(junctions.len(), 1);
        assert_eq!(graph.edges.len(), 4);
    }

    #[test]
    fn ring_graph() {
        let ring = [
            (2, 0),
            (3, 0),
            (4, 1),
            (5, 2),
            (5, 3),
            (4, 4),
            (3, 5),
            (2, 5),
            (1, 4),
            (0, 3),
            (0, 2),
            (1, 1),
        ];
        let graph = trace_layer(&BitGrid::from_cells(6, 6, ring));
        assert_eq!(graph.nodes.len(), 1);
        assert_eq!(graph.nodes[0].kind, NodeKind::LoopAnchor);
        assert_eq!(graph.edges.len(), 1);
        assert!(graph.edges[0].is_loop());
        assert_eq!(graph.edges[0].cells.len(), 11);
    }

    #[test]
    fn graph_covers_every_cell_once() {
        let g = grid_from(&[
            "..........#.",
            "..#######.#.",
            "........#.#.",
            ".####...###.",
            "....#.......",
            "....######..",
        ]);
        let graph = trace_layer(&g);
        let mut seen = HashMap::new();
        for n in &graph.nodes {
            for c in &n.cells {
                *seen.entry(*c).or_insert(0) += 1;
            }
        }
        for e in &graph.edges {
            for c in &e.cells {
                *seen.entry(*c).or_insert(0) += 1;
            }
        }
        assert_eq!(seen.len(), g.count());
        assert!(seen.values().all(|&v| v == 1));
    }

    fn skeleton_with(spec: GridSpec, class: MapClass, layer: BitGrid) -> Skeleton {
        let mut layers = [
            BitGrid::new(spec.width, spec.height),
            BitGrid::new(spec.width, spec.height),
            BitGrid::new(spec.width, spec.height),
        ];
        layers[class.index()] = layer;
        Skeleton { spec, layers }
    }

    #[test]
    fn extract_straight_row() {
        let spec = GridSpec::new(Point2::new(0.0, 0.0), 0.5, 24, 10).unwrap();
        let layer = BitGrid::from_cells(24, 10, (0..20).map(|i| (i, 4)));
        let map = extract_lines(&skeleton_with(spec, MapClass::Divider, layer), &ExtractParams::default());
        assert_eq!(map.elements.len(), 1);
        let el = &map.elements[0];
        assert_eq!(el.class, MapClass::Divider);
        assert_eq!(el.points, vec![Point2::new(0.25, 2.25), Point2::new(9.75, 2.25)]);
    }

    #[test]
    fn extract_empty_and_speck() {
        let spec = GridSpec::new(Point2::new(0.0, 0.0), 0.5, 8, 8).unwrap();
        let empty = skeleton_with(spec, MapClass::Boundary, BitGrid::new(8, 8));
        assert!(extract_lines(&empty, &ExtractParams::default()).elements.is_empty());
        let speck = skeleton_with(spec, MapClass::Boundary, BitGrid::from_cells(8, 8, [(3, 3)]));
        assert!(extract_lines(&speck, &ExtractParams::default()).elements.is_empty());
    }

    #[test]
    fn extract_closed_crosswalk_ring() {
        let spec = GridSpec::new(Point2::new(0.0, 0.0), 0.5, 20, 20).unwrap();
        let mut cells = Vec::new();
        for i in 2..14 {
            cells.push((i, 2));
            cells.push((i, 9));
        }
        for j in 3..9 {
            cells.push((2, j));
            cells.push((13, j));
        }
        let layer = thin(&BitGrid::from_cells(20, 20, cells));
        let map = extract_lines(&skeleton_with(spec, MapClass::Crosswalk, layer), &ExtractParams::default());
        assert_eq!(map.elements.len(), 1);
        assert!(map.elements[0].closed);
        assert!(map.elements[0].points.len() >= 4);
    }

    #[test]
    fn short_spur_is_pruned() {
        let spec = GridSpec::new(Point2::new(0.0, 0.0), 0.5, 30, 10).unwrap();
        let mut cells: Vec<Cell> = (0..28).map(|i| (i, 4)).collect();
        cells.extend([(14, 5), (14, 6)]);
        let layer = BitGrid::from_cells(30, 10, cells);
        let map = extract_lines(&skeleton_with(spec, MapClass::Boundary, layer), &ExtractParams::default());
        assert_eq!(map.elements.len(), 1, "{:?}", map.elements);
        assert!(map.elements[0].length() > 13.0);
    }
}
