//! Cell flagging, per-cell human decisions, and merging accepted cells into
//! the existing map.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{Point2, Rect, DUPLICATE_EPS};
use crate::io::{self, round4, ElementRecord};
use crate::map::{clip_element, MapClass, MapElement, VectorMap};
use crate::metrics::{self, ApThresholds, ChamferParams, DEFAULT_CELL_SIZE};
use crate::{Error, Result};

pub const DEFAULT_UPDATE_THRESHOLD: f64 = 0.3;
pub const STITCH_TOLERANCE: f64 = 0.75;
const BORDER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pending,
    Accepted,
    Rejected,
}

impl std::str::FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(Decision::Pending),
            "accepted" | "accept" => Ok(Decision::Accepted),
            "rejected" | "reject" => Ok(Decision::Rejected),
            other => Err(Error::parse(1, 1, format!("unknown decision {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalCell {
    pub cell_id: String,
    pub rect: Rect,
    pub map_ap: f64,
    pub old_elements: Vec<MapElement>,
    pub new_elements: Vec<MapElement>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateProposal {
    pub base_map_ref: String,
    pub update_threshold: f64,
    pub cells: Vec<ProposalCell>,
}

impl UpdateProposal {
    pub fn cell(&self, cell_id: &str) -> Option<&ProposalCell> {
        self.cells.iter().find(|c| c.cell_id == cell_id)
    }

    /// Records a decision for one cell. Repeating it is a no-op and a later
    /// decision overrides an earlier one.
    pub fn decide(&mut self, cell_id: &str, decision: Decision) -> Result<()> {
        let cell = self
            .cells
            .iter_mut()
            .find(|c| c.cell_id == cell_id)
            .ok_or_else(|| Error::UnknownCell(cell_id.to_string()))?;
        cell.decision = decision;
        Ok(())
    }

    pub fn decide_all(&mut self, decision: Decision) {
        for c in &mut self.cells {
            c.decision = decision;
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &ProposalCell> {
        self.cells.iter().filter(|c| c.decision == Decision::Pending)
    }

    pub fn accepted_rects(&self) -> Vec<Rect> {
        self.cells
            .iter()
            .filter(|c| c.decision == Decision::Accepted)
            .map(|c| c.rect)
            .collect()
    }

    /// Fails with `StaleProposal` unless `base` hashes to `base_map_ref`.
    pub fn verify_base(&self, base: &VectorMap) -> Result<()> {
        let found = io::map_content_hash(base);
        if found != self.base_map_ref {
            return Err(Error::StaleProposal {
                expected: self.base_map_ref.clone(),
                found,
            });
        }
        Ok(())
    }
}

/// Free-standing form of [`UpdateProposal::decide`].
pub fn decide(mut proposal: UpdateProposal, cell_id: &str, decision: Decision) -> Result<UpdateProposal> {
    proposal.decide(cell_id, decision)?;
    Ok(proposal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlagParams {
    pub update_threshold: f64,
    pub cell_size: f64,
}

impl Default for FlagParams {
    fn default() -> Self {
        FlagParams {
            update_threshold: DEFAULT_UPDATE_THRESHOLD,
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

/// Flags every lattice cell whose mAP of `new_elements` against `existing`
/// falls strictly below the threshold. Cells where only the new map has
/// content score 0.
pub fn flag_cells(new_elements: &VectorMap, existing: &VectorMap, params: &FlagParams) -> Result<UpdateProposal> {
    flag_cells_with(
        new_elements,
        existing,
        params,
        &ApThresholds::default(),
        &ChamferParams::default(),
    )
}

pub fn flag_cells_with(
    new_elements: &VectorMap,
    existing: &VectorMap,
    params: &FlagParams,
    thresholds: &ApThresholds,
    chamfer: &ChamferParams,
) -> Result<UpdateProposal> {
    let evals = metrics::evaluate_per_cell(new_elements, existing, params.cell_size, thresholds, chamfer)?;
    let cells = evals
        .into_iter()
        .filter_map(|e| {
            let score = effective_score(&e)?;
            (score < params.update_threshold).then(|| ProposalCell {
                old_elements: metrics::clip_all(&existing.elements, &e.rect),
                new_elements: metrics::clip_all(&new_elements.elements, &e.rect),
                cell_id: e.cell_id,
                rect: e.rect,
                map_ap: score,
                decision: Decision::Pending,
            })
        })
        .collect();
    Ok(UpdateProposal {
        base_map_ref: io::map_content_hash(existing),
        update_threshold: params.update_threshold,
        cells,
    })
}

/// The score a cell is flagged on, `None` for vacuous cells.
pub fn effective_score(cell: &metrics::CellEval) -> Option<f64> {
    let ap = cell.map_ap?;
    Some(if cell.gt_count == 0 { 0.0 } else { ap })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellRecord {
    cell_id: String,
    rect: [f64; 4],
    #[serde(rename = "mAP")]
    map_ap: f64,
    old_elements: Vec<ElementRecord>,
    new_elements: Vec<ElementRecord>,
    decision: Decision,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalFile {
    base_map_ref: String,
    update_threshold: f64,
    cells: Vec<CellRecord>,
}

fn cell_record(c: &ProposalCell) -> CellRecord {
    CellRecord {
        cell_id: c.cell_id.clone(),
        rect: c.rect.to_array().map(round4),
        map_ap: c.map_ap,
        old_elements: io::elements_to_records(&c.old_elements),
        new_elements: io::elements_to_records(&c.new_elements),
        decision: c.decision,
    }
}

/// One cell in the same form it takes inside a proposal file.
pub fn cell_to_json(c: &ProposalCell) -> String {
    serde_json::to_string(&cell_record(c)).expect("cell serializes")
}

pub fn proposal_to_json(p: &UpdateProposal) -> String {
    let file = ProposalFile {
        base_map_ref: p.base_map_ref.clone(),
        update_threshold: p.update_threshold,
        cells: p.cells.iter().map(cell_record).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("proposal serializes");
    s.push('\n');
    s
}

pub fn proposal_from_json(text: &str) -> Result<UpdateProposal> {
    let file: ProposalFile = serde_json::from_str(text).map_err(io::json_error)?;
    let mut ids = HashSet::new();
    let mut cells = Vec::with_capacity(file.cells.len());
    for c in file.cells {
        if !ids.insert(c.cell_id.clone()) {
            return Err(Error::parse(1, 1, format!("duplicate cell {}", c.cell_id)));
        }
        cells.push(ProposalCell {
            cell_id: c.cell_id,
            rect: Rect::from_array(c.rect),
            map_ap: c.map_ap,
            old_elements: io::records_to_elements(c.old_elements)?,
            new_elements: io::records_to_elements(c.new_elements)?,
            decision: c.decision,
        });
    }
    Ok(UpdateProposal {
        base_map_ref: file.base_map_ref,
        update_threshold: file.update_threshold,
        cells,
    })
}

pub fn save_proposal(path: &Path, p: &UpdateProposal) -> Result<()> {
    io::write_atomic(path, proposal_to_json(p).as_bytes())
}

/// Loads a proposal without checking it against a base map.
pub fn read_proposal(path: &Path) -> Result<UpdateProposal> {
    proposal_from_json(&io::read_file(path)?)
}

/// Loads a proposal and checks that it was built against `base`.
pub fn load_proposal(path: &Path, base: &VectorMap) -> Result<UpdateProposal> {
    let p = read_proposal(path)?;
    p.verify_base(base)?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    KeptOld,
    InsertedNew,
    Stitched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    pub map: VectorMap,
    /// One tag per element of `map`, same order.
    pub provenance: Vec<Provenance>,
}

impl MergeResult {
    pub fn provenance_of(&self, id: &str) -> Option<Provenance> {
        let k = self.map.elements.iter().position(|e| e.id == id)?;
        Some(self.provenance[k])
    }
}

type Vertex = (Point2, Option<f64>);

/// A polyline fragment taking part in the merge.
#[derive(Debug, Clone)]
struct Part {
    id: String,
    class: MapClass,
    confidence: Option<f64>,
    verts: Vec<Vertex>,
    closed: bool,
    retained: bool,
    /// Whole element carried over untouched.
    intact: Option<MapElement>,
}

impl Part {
    fn from_element(el: &MapElement, retained: bool) -> Part {
        Part {
            id: el.id.clone(),
            class: el.class,
            confidence: el.confidence,
            verts: vertices(el),
            closed: el.closed,
            retained,
            intact: None,
        }
    }

    fn end(&self, start: bool) -> Point2 {
        if start {
            self.verts[0].0
        } else {
            self.verts[self.verts.len() - 1].0
        }
    }
}

fn vertices(el: &MapElement) -> Vec<Vertex> {
    el.points
        .iter()
        .enumerate()
        .map(|(k, &p)| (p, el.heights.as_ref().map(|h| h[k])))
        .collect()
}

fn lerp_vertex(a: Vertex, b: Vertex, t: f64) -> Vertex {
    let z = match (a.1, b.1) {
        (Some(za), Some(zb)) => Some(za + (zb - za) * t),
        _ => None,
    };
    (a.0.lerp(b.0, t), z)
}

/// Parameter intervals of segment `a→b` covered by any of `rects`, merged.
fn covered_intervals(a: Point2, b: Point2, rects: &[Rect]) -> Vec<(f64, f64)> {
    let mut iv: Vec<(f64, f64)> = rects
        .iter()
        .filter_map(|r| r.clip_segment(a, b))
        .filter(|(t0, t1)| t1 - t0 > 1e-12)
        .collect();
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (t0, t1) in iv {
        match merged.last_mut() {
            Some(last) if t0 <= last.1 => last.1 = last.1.max(t1),
            _ => merged.push((t0, t1)),
        }
    }
    merged
}

/// Pieces of `el` lying outside every rect, or `None` when no part of it is
/// covered.
fn outside_pieces(el: &MapElement, rects: &[Rect]) -> Option<Vec<Vec<Vertex>>> {
    let mut path = vertices(el);
    if el.closed {
        path.push(path[0]);
    }
    let mut touched = false;
    let mut pieces: Vec<Vec<Vertex>> = Vec::new();
    let mut cur: Vec<Vertex> = Vec::new();
    let last_seg = path.len() - 2;
    let mut starts_at_origin = false;
    let mut ends_at_close = false;
    for s in 0..path.len() - 1 {
        let (a, b) = (path[s], path[s + 1]);
        let inside = covered_intervals(a.0, b.0, rects);
        touched |= !inside.is_empty();
        let mut t = 0.0;
        for (t0, t1) in inside {
            if t0 > t {
                if cur.is_empty() {
                    if s == 0 && t == 0.0 {
                        starts_at_origin = true;
                    }
                    cur.push(lerp_vertex(a, b, t));
                }
                cur.push(lerp_vertex(a, b, t0));
            }
            if !cur.is_empty() {
                pieces.push(std::mem::take(&mut cur));
            }
            t = t1;
        }
        if t < 1.0 {
            if cur.is_empty() {
                if s == 0 && t == 0.0 {
                    starts_at_origin = true;
                }
                cur.push(lerp_vertex(a, b, t));
            }
            cur.push(b);
            if s == last_seg {
                ends_at_close = true;
            }
        }
    }
    if !touched {
        return None;
    }
    if !cur.is_empty() {
        pieces.push(cur);
    }
    if el.closed && starts_at_origin && ends_at_close && pieces.len() > 1 {
        let first = pieces.remove(0);
        pieces.last_mut().expect("non-empty").extend(first.into_iter().skip(1));
    }
    for p in &mut pieces {
        p.dedup_by(|x, y| x.0.distance(y.0) <= DUPLICATE_EPS);
    }
    pieces.retain(|p| p.len() >= 2);
    Some(pieces)
}

fn on_border(p: Point2, rects: &[Rect]) -> bool {
    rects.iter().any(|r| r.on_boundary(p, BORDER_TOL))
}

fn in_union(p: Point2, rects: &[Rect]) -> bool {
    rects.iter().any(|r| r.contains(p, BORDER_TOL))
}

/// Endpoint pairs to join: `(part, at_start)` on both sides, greedy by
/// distance.
fn stitch_pairs(parts: &[Part], rects: &[Rect]) -> Vec<((usize, bool), (usize, bool))> {
    let ends: Vec<(usize, bool)> = parts
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.closed && p.intact.is_none())
        .flat_map(|(k, _)| [(k, true), (k, false)])
        .collect();
    let mut candidates = Vec::new();
    for (x, &(pa, sa)) in ends.iter().enumerate() {
        for &(pb, sb) in &ends[x + 1..] {
            let (a, b) = (&parts[pa], &parts[pb]);
            if pa == pb || a.class != b.class || (a.retained && b.retained) {
                continue;
            }
            let (ea, eb) = (a.end(sa), b.end(sb));
            let d = ea.distance(eb);
            if d > STITCH_TOLERANCE {
                continue;
            }
            let border_ok = |part: &Part, e: Point2, both_inserted: bool| {
                if part.retained || both_inserted {
                    on_border(e, rects)
                } else {
                    true
                }
            };
            let both_inserted = !a.retained && !b.retained;
            if !border_ok(a, ea, both_inserted) || !border_ok(b, eb, both_inserted) {
                continue;
            }
            if !in_union(ea.midpoint(eb), rects) {
                continue;
            }
            candidates.push((d, (pa, sa), (pb, sb)));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut used = HashSet::new();
    let mut pairs = Vec::new();
    for (_, a, b) in candidates {
        if used.contains(&a) || used.contains(&b) {
            continue;
        }
        used.insert(a);
        used.insert(b);
        pairs.push((a, b));
    }
    pairs
}

fn joint(a: Vertex, b: Vertex) -> Vertex {
    let z = match (a.1, b.1) {
        (Some(x), Some(y)) => Some(0.5 * (x + y)),
        _ => None,
    };
    (a.0.midpoint(b.0), z)
}

/// Concatenates oriented parts; `wrap` closes the chain into a ring. Each
/// joint is emitted once, after the part that precedes it.
fn join_chain(parts: &[Part], chain: &[(usize, bool)], wrap: bool) -> Vec<Vertex> {
    let oriented: Vec<Vec<Vertex>> = chain
        .iter()
        .map(|&(k, forward)| {
            let mut v = parts[k].verts.clone();
            if !forward {
                v.reverse();
            }
            v
        })
        .collect();
    let n = oriented.len();
    let joints: Vec<Vertex> = (0..n)
        .map(|i| joint(*oriented[i].last().unwrap(), oriented[(i + 1) % n][0]))
        .collect();
    let mut out: Vec<Vertex> = Vec::new();
    for (i, verts) in oriented.iter().enumerate() {
        let retained = parts[chain[i].0].retained;
        let has_head = i > 0 || wrap;
        let has_tail = i + 1 < n || wrap;
        let start = usize::from(has_head && !retained);
        let end = if has_tail && !retained { verts.len() - 1 } else { verts.len() };
        if start < end {
            out.extend_from_slice(&verts[start..end]);
        }
        if has_tail {
            out.push(joints[i]);
        }
    }
    out.dedup_by(|x, y| x.0.distance(y.0) <= DUPLICATE_EPS);
    if wrap && out.len() > 1 && out[0].0.distance(out[out.len() - 1].0) <= DUPLICATE_EPS {
        out.pop();
    }
    out
}

/// Part index and whether its tail end is meant.
type PartEnd = (usize, bool);

/// Walks the stitch links into chains, each starting from its lowest part
/// index and oriented so that part runs forward.
fn chains(n_parts: usize, pairs: &[(PartEnd, PartEnd)]) -> Vec<(Vec<PartEnd>, bool)> {
    let mut link: HashMap<(usize, bool), (usize, bool)> = HashMap::new();
    for &(a, b) in pairs {
        link.insert(a, b);
        link.insert(b, a);
    }
    let mut seen = vec![false; n_parts];
    let mut out = Vec::new();
    for k in 0..n_parts {
        if seen[k] {
            continue;
        }
        // Forward from k's end, then backward from k's start.
        let mut fwd = vec![(k, true)];
        seen[k] = true;
        let mut wrap = false;
        let mut exit = (k, false);
        while let Some(&(q, qs)) = link.get(&exit) {
            if q == k {
                wrap = true;
                break;
            }
            seen[q] = true;
            fwd.push((q, qs));
            exit = (q, !qs);
        }
        let mut back = Vec::new();
        if !wrap {
            let mut exit = (k, true);
            while let Some(&(q, qs)) = link.get(&exit) {
                seen[q] = true;
                // Entered at `qs`; walking backwards means the part runs
                // forward when entered at its end.
                back.push((q, !qs));
                exit = (q, !qs);
            }
        }
        back.reverse();
        back.extend(fwd);
        out.push((back, wrap));
    }
    out
}

/// Splices accepted cells of `new_elements` into `existing`.
///
/// Geometry outside accepted cells is kept exactly. Inside an accepted cell
/// the new elements replace the old ones. Cut ends that meet across a cell
/// border (same class, within [`STITCH_TOLERANCE`]) are joined at their
/// midpoint; a retained end keeps its vertex and gains the joint, an
/// inserted end is moved onto the joint.
pub fn merge(existing: &VectorMap, new_elements: &VectorMap, proposal: &UpdateProposal) -> Result<MergeResult> {
    metrics::check_frames(new_elements, existing)?;
    if let Some(c) = proposal.pending().next() {
        return Err(Error::UndecidedCell(c.cell_id.clone()));
    }
    let rects = proposal.accepted_rects();
    if rects.is_empty() {
        return Ok(MergeResult {
            map: existing.clone(),
            provenance: vec![Provenance::KeptOld; existing.elements.len()],
        });
    }

    let mut parts: Vec<Part> = Vec::new();
    for el in &existing.elements {
        match outside_pieces(el, &rects) {
            None => parts.push(Part {
                intact: Some(el.clone()),
                ..Part::from_element(el, true)
            }),
            Some(pieces) => {
                for (k, verts) in pieces.into_iter().enumerate() {
                    parts.push(Part {
                        id: format!("{}#{k}", el.id),
                        class: el.class,
                        confidence: el.confidence,
                        verts,
                        closed: false,
                        retained: true,
                        intact: None,
                    });
                }
            }
        }
    }
    for cell in proposal.cells.iter().filter(|c| c.decision == Decision::Accepted) {
        for el in &new_elements.elements {
            if !el.bbox().intersects(&cell.rect) {
                continue;
            }
            for piece in clip_element(el, &cell.rect, 0.0) {
                let mut part = Part::from_element(&piece, false);
                part.id = format!("{}@{}", piece.id, cell.cell_id);
                parts.push(part);
            }
        }
    }

    let pairs = stitch_pairs(&parts, &rects);
    let mut elements = Vec::new();
    let mut provenance = Vec::new();
    for (chain, wrap) in chains(parts.len(), &pairs) {
        let head = &parts[chain.iter().map(|c| c.0).min().expect("non-empty chain")];
        if chain.len() == 1 {
            if let Some(el) = &head.intact {
                elements.push(el.clone());
                provenance.push(Provenance::KeptOld);
                continue;
            }
        }
        let verts = if chain.len() == 1 {
            head.verts.clone()
        } else {
            join_chain(&parts, &chain, wrap)
        };
        let closed = if chain.len() == 1 { head.closed } else { wrap && verts.len() >= 3 };
        if verts.len() < 2 || (closed && verts.len() < 3) {
            continue;
        }
        let heights = verts.iter().map(|v| v.1).collect::<Option<Vec<f64>>>();
        elements.push(MapElement {
            id: head.id.clone(),
            class: head.class,
            points: verts.iter().map(|v| v.0).collect(),
            heights,
            closed,
            confidence: head.confidence,
        });
        provenance.push(if chain.len() > 1 {
            Provenance::Stitched
        } else if head.retained {
            Provenance::KeptOld
        } else {
            Provenance::InsertedNew
        });
    }
    make_ids_unique(&mut elements);

    let bounds = elements
        .iter()
        .map(|e| e.bbox())
        .fold(existing.bounds, |acc, b| acc.union(&b));
    let map = VectorMap::new(existing.frame_id.clone(), bounds, elements)?;
    Ok(MergeResult { map, provenance })
}

fn make_ids_unique(elements: &mut [MapElement]) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in elements.iter() {
        *counts.entry(e.id.clone()).or_default() += 1;
    }
    let mut taken: HashSet<String> = counts.keys().cloned().collect();
    let mut seen: HashSet<String> = HashSet::new();
    for e in elements.iter_mut() {
        if seen.insert(e.id.clone()) {
            continue;
        }
        let mut n = 1;
        while taken.contains(&format!("{}~{n}", e.id)) {
            n += 1;
        }
        e.id = format!("{}~{n}", e.id);
        taken.insert(e.id.clone());
    }
}
