//! Per-class accumulation grid: rasterize every transformed frame element,
//! count observations per cell, and threshold the counts into a dense mask.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Rect};
use crate::io::write_atomic;
use crate::map::{transform_frame, FramePrediction, MapClass};

pub const DEFAULT_RESOLUTION: f64 = 0.5;
pub const DEFAULT_THRESHOLD: u32 = 3;
/// Margin added around the observed extent when the grid is sized from frames.
pub const GRID_PADDING: f64 = 5.0;

/// Placement of a raster in the map frame. Cell `(i, j)` covers
/// `[origin.x + i·res, origin.x + (i+1)·res) × [origin.y + j·res, …)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Point2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecFile {
    origin: [f64; 2],
    resolution: f64,
    width: usize,
    height: usize,
}

impl GridSpec {
    pub fn new(origin: Point2, resolution: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) || !origin.is_finite() {
            return Err(Error::InvalidGeometry(format!("bad grid resolution {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidGeometry("grid must be at least 1×1".into()));
        }
        Ok(GridSpec {
            origin,
            resolution,
            width,
            height,
        })
    }

    /// Smallest grid, snapped outward to whole cells, covering `rect`
    /// grown by `padding`.
    pub fn enclosing(rect: &Rect, resolution: f64, padding: f64) -> Result<Self> {
        let r = rect.expanded(padding);
        let ox = (r.min.x / resolution).floor() * resolution;
        let oy = (r.min.y / resolution).floor() * resolution;
        let w = ((r.max.x - ox) / resolution).ceil().max(1.0) as usize;
        let h = ((r.max.y - oy) / resolution).ceil().max(1.0) as usize;
        GridSpec::new(Point2::new(ox, oy), resolution, w, h)
    }

    /// Grid covering every transformed element of `frames` plus
    /// [`GRID_PADDING`]. With no elements at all, a single cell at the origin.
    pub fn for_frames(frames: &[FramePrediction], resolution: f64) -> Result<Self> {
        let mut extent: Option<Rect> = None;
        for fp in frames {
            for el in transform_frame(fp)? {
                let b = el.bbox();
                extent = Some(extent.map_or(b, |e| e.union(&b)));
            }
        }
        match extent {
            Some(r) => GridSpec::enclosing(&r, resolution, GRID_PADDING),
            None => GridSpec::new(Point2::new(0.0, 0.0), resolution, 1, 1),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn extent(&self) -> Rect {
        Rect::new(
            self.origin.x,
            self.origin.y,
            self.origin.x + self.width as f64 * self.resolution,
            self.origin.y + self.height as f64 * self.resolution,
        )
    }

    /// Unbounded cell coordinates of `p` (floor, lower edge inclusive).
    pub fn cell_of(&self, p: Point2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_rect(&self, i: i64, j: i64) -> Rect {
        let x0 = self.origin.x + i as f64 * self.resolution;
        let y0 = self.origin.y + j as f64 * self.resolution;
        Rect::new(x0, y0, x0 + self.resolution, y0 + self.resolution)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GridSpecFile {
            origin: [self.origin.x, self.origin.y],
            resolution: self.resolution,
            width: self.width,
            height: self.height,
        })
        .expect("grid spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: GridSpecFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
        GridSpec::new(Point2::new(f.origin[0], f.origin[1]), f.resolution, f.width, f.height)
    }
}

/// Grid cell containing `p`, or `None` when `p` falls outside the grid.
pub fn point_to_cell(spec: &GridSpec, p: Point2) -> Option<(usize, usize)> {
    let (i, j) = spec.cell_of(p);
    spec.in_bounds(i, j).then_some((i as usize, j as usize))
}

/// Cells crossed by the segment `a→b`, in unbounded cell coordinates.
///
/// Grid traversal over the continuous segment: every cell whose interior the
/// segment enters is reported, and where the segment passes exactly through a
/// cell corner both side neighbours are reported too.
pub fn supercover_segment(spec: &GridSpec, a: Point2, b: Point2) -> Vec<(i64, i64)> {
    let (mut ci, mut cj) = spec.cell_of(a);
    let (ei, ej) = spec.cell_of(b);
    let mut cells = vec![(ci, cj)];
    let u0 = (a.x - spec.origin.x) / spec.resolution;
    let v0 = (a.y - spec.origin.y) / spec.resolution;
    let du = (b.x - a.x) / spec.resolution;
    let dv = (b.y - a.y) / spec.resolution;
    let si: i64 = if du > 0.0 { 1 } else { -1 };
    let sj: i64 = if dv > 0.0 { 1 } else { -1 };
    let mut steps_i = (ei - ci).abs();
    let mut steps_j = (ej - cj).abs();
    let boundary_t = |start: f64, cell: i64, step: i64, d: f64| {
        if d == 0.0 {
            return f64::INFINITY;
        }
        let edge = if step > 0 { cell + 1 } else { cell } as f64;
        (edge - start) / d
    };
    let mut t_i = boundary_t(u0, ci, si, du);
    let mut t_j = boundary_t(v0, cj, sj, dv);
    let dt_i = if du != 0.0 { 1.0 / du.abs() } else { f64::INFINITY };
    let dt_j = if dv != 0.0 { 1.0 / dv.abs() } else { f64::INFINITY };
    while steps_i > 0 || steps_j > 0 {
        let tie = steps_i > 0 && steps_j > 0 && (t_i - t_j).abs() <= 1e-12 * t_i.abs().max(1.0);
        if tie {
            cells.push((ci + si, cj));
            cells.push((ci, cj + sj));
            ci += si;
            cj += sj;
            t_i += dt_i;
            t_j += dt_j;
            steps_i -= 1;
            steps_j -= 1;
        } else if steps_j == 0 || (steps_i > 0 && t_i < t_j) {
            ci += si;
            t_i += dt_i;
            steps_i -= 1;
        } else {
            cj += sj;
            t_j += dt_j;
            steps_j -= 1;
        }
        cells.push((ci, cj));
    }
    cells
}

/// In-bounds cells touched by a polyline, in `(i, j)` order.
pub fn rasterize_polyline(spec: &GridSpec, points: &[Point2]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    let mut push = |(i, j): (i64, i64)| {
        if spec.in_bounds(i, j) {
            out.insert((i as usize, j as usize));
        }
    };
    match points {
        [] => {}
        [p] => push(spec.cell_of(*p)),
        _ => {
            for w in points.windows(2) {
                supercover_segment(spec, w[0], w[1]).into_iter().for_each(&mut push);
            }
        }
    }
    out
}

/// One count layer per [`MapClass`], row-major with `j` as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulationGrid {
    pub spec: GridSpec,
    pub counts: [Vec<u32>; 3],
}

impl AccumulationGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.cell_count();
        AccumulationGrid {
            spec,
            counts: [vec![0; n], vec![0; n], vec![0; n]],
        }
    }

    pub fn layer(&self, class: MapClass) -> &[u32] {
        &self.counts[class.index()]
    }

    pub fn get(&self, class: MapClass, i: usize, j: usize) -> u32 {
        self.counts[class.index()][self.spec.index(i, j)]
    }

    /// Cellwise sum. Both grids must share a spec.
    pub fn add(&mut self, other: &AccumulationGrid) {
        assert_eq!(self.spec, other.spec, "grids differ in spec");
        for (dst, src) in self.counts.iter_mut().zip(&other.counts) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Max-pooled `n×n` blocks of one class layer, with the matching spec.
    pub fn downsampled(&self, class: MapClass, n: usize) -> (GridSpec, Vec<u32>) {
        let n = n.max(1);
        let w = self.spec.width.div_ceil(n);
        let h = self.spec.height.div_ceil(n);
        let spec = GridSpec {
            origin: self.spec.origin,
            resolution: self.spec.resolution * n as f64,
            width: w,
            height: h,
        };
        let layer = self.layer(class);
        let mut out = vec![0u32; w * h];
        for j in 0..self.spec.height {
            for i in 0..self.spec.width {
                let cell = &mut out[(j / n) * w + i / n];
                *cell = (*cell).max(layer[self.spec.index(i, j)]);
            }
        }
        (spec, out)
    }

    fn record_frame(&mut self, fp: &FramePrediction) -> Result<()> {
        for el in transform_frame(fp)? {
            let layer = &mut self.counts[el.class.index()];
            for (i, j) in rasterize_polyline(&self.spec, &el.path()) {
                layer[j * self.spec.width + i] += 1;
            }
        }
        Ok(())
    }
}

/// Counts, per class and cell, how many frame-elements touched the cell.
/// Each (frame, element) pair adds at most one to any cell.
pub fn accumulate(frames: &[FramePrediction], spec: GridSpec) -> Result<AccumulationGrid> {
    frames
        .par_iter()
        .try_fold(
            || AccumulationGrid::zeros(spec),
            |mut grid, fp| {
                grid.record_frame(fp)?;
                Ok(grid)
            },
        )
        .try_reduce(
            || AccumulationGrid::zeros(spec),
            |mut a, b| {
                a.add(&b);
                Ok(a)
            },
        )
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(width: usize, height: usize) -> Self {
        BitGrid {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cells: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = BitGrid::new(width, height);
        for (i, j) in cells {
            g.set(i, j, true);
        }
        g
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.width + i]
    }

    /// Out-of-range coordinates read as unset.
    pub fn get_signed(&self, i: i64, j: i64) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.width
            && (j as usize) < self.height
            && self.bits[j as usize * self.width + i as usize]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[j * self.width + i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &BitGrid) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Set cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(k, _)| (k % self.width, k / self.width))
    }
}

/// Cells whose count strictly exceeds the observation threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMask {
    pub spec: GridSpec,
    pub layers: [BitGrid; 3],
}

impl DenseMask {
    pub fn layer(&self, class: MapClass) -> &BitGrid {
        &self.layers[class.index()]
    }
}

pub fn threshold_mask(grid: &AccumulationGrid, threshold: u32) -> DenseMask {
    let spec = grid.spec;
    let layers = grid.counts.clone().map(|counts| BitGrid {
        width: spec.width,
        height: spec.height,
        bits: counts.iter().map(|&c| c > threshold).collect(),
    });
    DenseMask { spec, layers }
}

/// Writes a binary PGM with the top image row at the highest `j`.
fn write_pgm(path: &Path, spec: &GridSpec, values: &[u32], max_value: u32) -> Result<()> {
    let wide = max_value > 255;
    let mut out = format!("P5\n{} {}\n{}\n", spec.width, spec.height, max_value).into_bytes();
    for j in (0..spec.height).rev() {
        for i in 0..spec.width {
            let v = values[spec.index(i, j)].min(max_value);
            if wide {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            } else {
                out.push(v as u8);
            }
        }
    }
    write_atomic(path, &out)
}

/// Reads a PGM written by this module back into row-major `j` order.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(0, pos, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::parse(1, 0, format!("unsupported image magic `{}`", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(1, 0, format!("bad PGM header field `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    let bpp = if maxval > 255 { 2 } else { 1 };
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != w * h * bpp {
        return Err(Error::parse(0, pos, "PGM body size does not match header"));
    }
    let mut values = vec![0u32; w * h];
    for row in 0..h {
        let j = h - 1 - row;
        for i in 0..w {
            let k = (row * w + i) * bpp;
            values[j * w + i] = if bpp == 2 {
                u16::from_be_bytes([body[k], body[k + 1]]) as u32
            } else {
                body[k] as u32
            };
        }
    }
    Ok((w, h, values))
}

/// Writes one class layer as a 16-bit PGM (counts saturate at 65535) plus a
/// `.grid.json` sidecar holding the grid placement.
pub fn render_heatmap(grid: &AccumulationGrid, class: MapClass, path: &Path) -> Result<()> {
    write_pgm(path, &grid.spec, grid.layer(class), u16::MAX as u32)?;
    write_atomic(&path.with_extension("grid.json"), grid.spec.to_json().as_bytes())
}

fn layer_path(dir: &Path, stem: &str, class: MapClass) -> PathBuf {
    dir.join(format!("{stem}.{class}.pgm"))
}

/// Saves `<stem>.<class>.pgm` for every class and `<stem>.grid.json`.
pub fn save_grid(dir: &Path, stem: &str, grid: &AccumulationGrid) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for class in MapClass::ALL {
        write_pgm(&layer_path(dir, stem, class), &grid.spec, grid.layer(class), u16::MAX as u32)?;
    }
    write_atomic(&dir.join(format!("{stem}.grid.json")), grid.spec.to_json().as_bytes())
}

/// Saves a mask as 8-bit PGMs (0 or 255) with the same naming as [`save_grid`].
pub fn save_mask(dir: &Path, stem: &str, mask: &DenseMask) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for class in MapClass::ALL {
        let values: Vec<u32> = mask.layer(class).bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(&layer_path(dir, stem, class), &mask.spec, &values, 255)?;
    }
    write_atomic(&dir.join(format!("{stem}.grid.json")), mask.spec.to_json().as_bytes())
}

/// Loads a grid directory written by [`save_grid`]. The directory must hold
/// exactly one `*.grid.json` sidecar.
pub fn load_grid(dir: &Path) -> Result<AccumulationGrid> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".grid.json"))
                .map(str::to_owned)
        })
        .collect();
    stems.sort();
    let stem = match stems.as_slice() {
        [one] => one.clone(),
        [] => return Err(Error::io(dir, std::io::Error::other("no .grid.json sidecar found"))),
        _ => return Err(Error::io(dir, std::io::Error::other("several .grid.json sidecars found"))),
    };
    let sidecar = dir.join(format!("{stem}.grid.json"));
    let spec = GridSpec::from_json(&fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?)?;
    let mut grid = AccumulationGrid::zeros(spec);
    for class in MapClass::ALL {
        let (w, h, values) = read_pgm(&layer_path(dir, &stem, class))?;
        if (w, h) != (spec.width, spec.height) {
            return Err(Error::parse(1, 0, format!("{class} layer size differs from sidecar")));
        }
        grid.counts[class.index()] = values;
    }
    Ok(grid)
}
