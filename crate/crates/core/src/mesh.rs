//! Parameter charts for the sphere and torus and the wide-stencil graphs
//! built on top of them.
//!
//! A chart is a tensor product of two 1-D vertex grids. Each axis starts from
//! a uniform grid and is refined inside axis-aligned bands by repeated
//! halving, followed by a balancing pass so adjacent cells never differ by
//! more than a factor of two in width.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_RESOLUTION: usize = 8;

const WIDTH_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("resolution {0} below the minimum of {MIN_RESOLUTION} per axis")]
    ResolutionTooSmall(usize),
    #[error("refinement bands overlap on axis {axis:?}: centers {a} and {b}")]
    OverlappingBands { axis: Axis, a: f64, b: f64 },
    #[error("refinement band centered at {center} (half-width {half_width}) lies outside the domain")]
    BandOutsideDomain { center: f64, half_width: f64 },
    #[error("refinement factor {0} must be at least 2")]
    FactorTooSmall(u32),
    #[error("stencil order {0} not in {{1, 2, 3}}")]
    BadStencil(usize),
    #[error("graph is disconnected ({reached} of {total} nodes reachable)")]
    Disconnected { reached: usize, total: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    /// Polar coordinates `(r, θ) ∈ [0, π] × [0, 2π)`; `r` is the angle from the north pole.
    SpherePolar,
    /// Square torus `(r, θ) ∈ [−π, π)²`, periodic in both axes.
    TorusSquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    U,
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementBand {
    pub axis: Axis,
    pub center: f64,
    pub half_width: f64,
    pub factor: u32,
}

impl RefinementBand {
    pub fn new(axis: Axis, center: f64, half_width: f64, factor: u32) -> Self {
        Self {
            axis,
            center,
            half_width,
            factor,
        }
    }
}

/// One axis of a chart: vertex coordinates and their dual-interval lengths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Axis1d {
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
    /// Vertex positions. Periodic axes hold `n` vertices in `[lo, hi)`;
    /// closed axes hold both endpoints.
    pub coords: Vec<f64>,
    /// Dual interval length of each vertex.
    pub dual: Vec<f64>,
    /// Width of each cell; cell `i` starts at vertex `i`.
    pub widths: Vec<f64>,
}

impl Axis1d {
    fn build(lo: f64, hi: f64, periodic: bool, cells: usize, bands: &[&RefinementBand]) -> Self {
        let len = hi - lo;
        let base = len / cells as f64;
        let mut cells: Vec<(f64, f64)> = (0..cells)
            .map(|i| {
                let s = lo + len * i as f64 / cells as f64;
                let e = lo + len * (i + 1) as f64 / cells as f64;
                (s, e - s)
            })
            .collect();

        let hits = |s: f64, w: f64, b: &RefinementBand| -> bool {
            let shifts: &[f64] = if periodic { &[0.0, -1.0, 1.0] } else { &[0.0] };
            shifts.iter().any(|k| {
                let c = b.center + k * len;
                s < c + b.half_width && s + w > c - b.half_width
            })
        };

        loop {
            let mut changed = false;
            let mut next = Vec::with_capacity(cells.len());
            for &(s, w) in &cells {
                let target = bands
                    .iter()
                    .filter(|b| hits(s, w, b))
                    .map(|b| base / b.factor as f64)
                    .fold(f64::INFINITY, f64::min);
                if w > target * (1.0 + WIDTH_TOL) {
                    next.push((s, w / 2.0));
                    next.push((s + w / 2.0, w / 2.0));
                    changed = true;
                } else {
                    next.push((s, w));
                }
            }
            cells = next;
            if !changed {
                break;
            }
        }

        // grading: adjacent cells differ by at most a factor of two
        loop {
            let n = cells.len();
            let split: Vec<bool> = (0..n)
                .map(|i| {
                    let w = cells[i].1;
                    let mut nb = Vec::with_capacity(2);
                    if i > 0 {
                        nb.push(cells[i - 1].1);
                    } else if periodic {
                        nb.push(cells[n - 1].1);
                    }
                    if i + 1 < n {
                        nb.push(cells[i + 1].1);
                    } else if periodic {
                        nb.push(cells[0].1);
                    }
                    nb.iter().any(|&o| w > 2.0 * o * (1.0 + WIDTH_TOL))
                })
                .collect();
            if !split.iter().any(|&s| s) {
                break;
            }
            let mut next = Vec::with_capacity(n + 8);
            for (i, &(s, w)) in cells.iter().enumerate() {
                if split[i] {
                    next.push((s, w / 2.0));
                    next.push((s + w / 2.0, w / 2.0));
                } else {
                    next.push((s, w));
                }
            }
            cells = next;
        }

        let mut coords: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let widths: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let n = widths.len();
        let dual = if periodic {
            (0..n)
                .map(|i| 0.5 * (widths[(i + n - 1) % n] + widths[i]))
                .collect()
        } else {
            coords.push(hi);
            let mut d = Vec::with_capacity(n + 1);
            d.push(0.5 * widths[0]);
            for i in 1..n {
                d.push(0.5 * (widths[i - 1] + widths[i]));
            }
            d.push(0.5 * widths[n - 1]);
            d
        };
        Self {
            lo,
            hi,
            periodic,
            coords,
            dual,
            widths,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.hi - self.lo
    }

    /// Coordinate of vertex `i`, allowing indices past either end on periodic axes.
    pub fn unwrapped(&self, i: isize) -> f64 {
        let n = self.len() as isize;
        if self.periodic {
            let k = i.rem_euclid(n);
            let wraps = (i - k) / n;
            self.coords[k as usize] + wraps as f64 * self.period()
        } else {
            self.coords[i as usize]
        }
    }

    /// Lower and upper end of the dual interval of vertex `i`, unwrapped.
    pub fn dual_interval(&self, i: usize) -> (f64, f64) {
        let x = self.coords[i];
        let n = self.widths.len();
        let left = if i > 0 {
            self.widths[i - 1]
        } else if self.periodic {
            self.widths[n - 1]
        } else {
            0.0
        };
        let right = if i < n { self.widths[i] } else { 0.0 };
        (x - 0.5 * left, x + 0.5 * right)
    }

    /// Largest cell width whose cell intersects `[a, b]`.
    pub fn max_width_in(&self, a: f64, b: f64) -> f64 {
        let mut best: f64 = 0.0;
        for (i, &w) in self.widths.iter().enumerate() {
            let s = self.coords[i];
            let shifts: &[f64] = if self.periodic { &[0.0, -1.0, 1.0] } else { &[0.0] };
            for k in shifts {
                let lo = s + k * self.period();
                if lo < b && lo + w > a {
                    best = best.max(w);
                }
            }
        }
        best
    }

    /// Index of the vertex nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let x = if self.periodic {
            self.lo + (x - self.lo).rem_euclid(self.period())
        } else {
            x.clamp(self.lo, self.hi)
        };
        let idx = self.coords.partition_point(|&c| c < x);
        let n = self.len();
        let mut cands = Vec::with_capacity(2);
        if idx > 0 {
            cands.push(idx - 1);
        } else if self.periodic {
            cands.push(n - 1);
        }
        if idx < n {
            cands.push(idx);
        } else if self.periodic {
            cands.push(0);
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in cands {
            let mut d = (self.coords[c] - x).abs();
            if self.periodic {
                d = d.min(self.period() - d);
            }
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }
}

/// Where a node sits in its chart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeLoc {
    Grid(usize, usize),
    NorthPole,
    SouthPole,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamChart {
    pub kind: ChartKind,
    /// Base cell counts per axis before refinement.
    pub resolution: (usize, usize),
    pub u: Axis1d,
    pub v: Axis1d,
    pub bands: Vec<RefinementBand>,
    pub nodes: Vec<[f64; 2]>,
    pub dual_area: Vec<f64>,
}

impl ParamChart {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn domain_area(&self) -> f64 {
        self.u.period() * self.v.period()
    }

    /// Number of interior grid rows (all rows on the torus).
    fn rows(&self) -> (usize, usize) {
        match self.kind {
            ChartKind::SpherePolar => (1, self.u.len() - 1),
            ChartKind::TorusSquare => (0, self.u.len()),
        }
    }

    pub fn grid_index(&self, i: usize, k: usize) -> Option<usize> {
        let (r0, r1) = self.rows();
        if i < r0 || i >= r1 || k >= self.v.len() {
            return None;
        }
        Some((i - r0) * self.v.len() + k)
    }

    pub fn north_pole(&self) -> Option<usize> {
        match self.kind {
            ChartKind::SpherePolar => Some(self.nodes.len() - 2),
            ChartKind::TorusSquare => None,
        }
    }

    pub fn south_pole(&self) -> Option<usize> {
        match self.kind {
            ChartKind::SpherePolar => Some(self.nodes.len() - 1),
            ChartKind::TorusSquare => None,
        }
    }

    pub fn locate(&self, node: usize) -> NodeLoc {
        if Some(node) == self.north_pole() {
            return NodeLoc::NorthPole;
        }
        if Some(node) == self.south_pole() {
            return NodeLoc::SouthPole;
        }
        let nv = self.v.len();
        let (r0, _) = self.rows();
        NodeLoc::Grid(node / nv + r0, node % nv)
    }

    /// Nearest node to a parameter point (poles included on the sphere).
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let i = self.u.nearest(p[0]);
        let k = self.v.nearest(p[1]);
        match self.kind {
            ChartKind::SpherePolar if i == 0 => self.north_pole().unwrap(),
            ChartKind::SpherePolar if i == self.u.len() - 1 => self.south_pole().unwrap(),
            _ => self.grid_index(i, k).unwrap(),
        }
    }

    /// Parameter rectangle of a node's dual cell (unwrapped coordinates).
    pub fn dual_rect(&self, node: usize) -> ([f64; 2], [f64; 2]) {
        match self.locate(node) {
            NodeLoc::Grid(i, k) => {
                let (a, b) = self.u.dual_interval(i);
                let (c, d) = self.v.dual_interval(k);
                ([a, b], [c, d])
            }
            NodeLoc::NorthPole => ([0.0, 0.5 * self.u.widths[0]], [0.0, 2.0 * PI]),
            NodeLoc::SouthPole => {
                let w = *self.u.widths.last().unwrap();
                ([PI - 0.5 * w, PI], [0.0, 2.0 * PI])
            }
        }
    }

    /// Finest cell width of an axis inside `[center − hw, center + hw]`.
    pub fn spacing_in(&self, axis: Axis, center: f64, hw: f64) -> f64 {
        let ax = match axis {
            Axis::U => &self.u,
            Axis::V => &self.v,
        };
        let mut best = f64::INFINITY;
        for (i, &w) in ax.widths.iter().enumerate() {
            let s = ax.coords[i];
            let shifts: &[f64] = if ax.periodic { &[0.0, -1.0, 1.0] } else { &[0.0] };
            for k in shifts {
                let lo = s + k * ax.period();
                if lo < center + hw && lo + w > center - hw {
                    best = best.min(w);
                }
            }
        }
        best
    }
}

fn domain(kind: ChartKind) -> [(f64, f64, bool); 2] {
    match kind {
        ChartKind::SpherePolar => [(0.0, PI, false), (0.0, 2.0 * PI, true)],
        ChartKind::TorusSquare => [(-PI, PI, true), (-PI, PI, true)],
    }
}

fn validate_bands(kind: ChartKind, bands: &[RefinementBand]) -> Result<(), MeshError> {
    let dom = domain(kind);
    for b in bands {
        if b.factor < 2 {
            return Err(MeshError::FactorTooSmall(b.factor));
        }
        let (lo, hi, periodic) = match b.axis {
            Axis::U => dom[0],
            Axis::V => dom[1],
        };
        let inside = if periodic {
            b.center >= lo && b.center < hi
        } else {
            b.center >= lo && b.center <= hi
        };
        if !inside || !(b.half_width > 0.0) || b.half_width >= 0.5 * (hi - lo) {
            return Err(MeshError::BandOutsideDomain {
                center: b.center,
                half_width: b.half_width,
            });
        }
    }
    for (i, a) in bands.iter().enumerate() {
        for b in &bands[i + 1..] {
            if a.axis != b.axis {
                continue;
            }
            let (lo, hi, periodic) = match a.axis {
                Axis::U => dom[0],
                Axis::V => dom[1],
            };
            let mut d = (a.center - b.center).abs();
            if periodic {
                d = d.min((hi - lo) - d);
            }
            if d < a.half_width + b.half_width {
                return Err(MeshError::OverlappingBands {
                    axis: a.axis,
                    a: a.center,
                    b: b.center,
                });
            }
        }
    }
    Ok(())
}

/// Build a chart with `resolution = (cells along u, cells along v)`.
pub fn build_chart(
    kind: ChartKind,
    resolution: (usize, usize),
    bands: &[RefinementBand],
) -> Result<ParamChart, MeshError> {
    for r in [resolution.0, resolution.1] {
        if r < MIN_RESOLUTION {
            return Err(MeshError::ResolutionTooSmall(r));
        }
    }
    validate_bands(kind, bands)?;
    let dom = domain(kind);
    let ub: Vec<&RefinementBand> = bands.iter().filter(|b| b.axis == Axis::U).collect();
    let vb: Vec<&RefinementBand> = bands.iter().filter(|b| b.axis == Axis::V).collect();
    let u = Axis1d::build(dom[0].0, dom[0].1, dom[0].2, resolution.0, &ub);
    let v = Axis1d::build(dom[1].0, dom[1].1, dom[1].2, resolution.1, &vb);

    let mut nodes = Vec::new();
    let mut dual_area = Vec::new();
    let rows = match kind {
        ChartKind::SpherePolar => 1..u.len() - 1,
        ChartKind::TorusSquare => 0..u.len(),
    };
    for i in rows {
        for k in 0..v.len() {
            nodes.push([u.coords[i], v.coords[k]]);
            dual_area.push(u.dual[i] * v.dual[k]);
        }
    }
    if kind == ChartKind::SpherePolar {
        nodes.push([0.0, 0.0]);
        dual_area.push(u.dual[0] * v.period());
        nodes.push([PI, 0.0]);
        dual_area.push(u.dual[u.len() - 1] * v.period());
    }
    Ok(ParamChart {
        kind,
        resolution,
        u,
        v,
        bands: bands.to_vec(),
        nodes,
        dual_area,
    })
}

/// Add refinement bands of equal width and factor around each center on `axis`.
pub fn refine_near(
    chart: &ParamChart,
    axis: Axis,
    centers: &[f64],
    half_width: f64,
    factor: u32,
) -> Result<ParamChart, MeshError> {
    if factor < 2 {
        return Err(MeshError::FactorTooSmall(factor));
    }
    if centers.is_empty() {
        return Ok(chart.clone());
    }
    let mut bands = chart.bands.clone();
    bands.extend(
        centers
            .iter()
            .map(|&c| RefinementBand::new(axis, c, half_width, factor)),
    );
    build_chart(chart.kind, chart.resolution, &bands)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Parameter position of `a` (unwrapped as needed so `origin + disp` lands on `b`).
    pub origin: [f64; 2],
    pub disp: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct MeshGraph {
    pub chart: Arc<ParamChart>,
    pub stencil: usize,
    pub edges: Vec<Edge>,
    offsets: Vec<usize>,
    adjacency: Vec<(u32, u32)>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive index-space directions within `k` steps, one per ± pair.
pub fn stencil_directions(k: usize) -> Vec<(isize, isize)> {
    let k = k as isize;
    let mut dirs = Vec::new();
    for a in 0..=k {
        for b in -k..=k {
            if a == 0 && b <= 0 {
                continue;
            }
            if gcd(a as i64, b as i64) == 1 {
                dirs.push((a, b));
            }
        }
    }
    dirs
}

pub fn build_graph(chart: Arc<ParamChart>, stencil: usize) -> Result<MeshGraph, MeshError> {
    if !(1..=3).contains(&stencil) {
        return Err(MeshError::BadStencil(stencil));
    }
    let dirs = stencil_directions(stencil);
    let nu = chart.u.len() as isize;
    let nv = chart.v.len() as isize;
    let mut edges = Vec::new();
    let (r0, r1) = chart.rows();
    let (r0, r1) = (r0 as isize, r1 as isize);

    for i in r0..r1 {
        for k in 0..nv {
            let a = chart.grid_index(i as usize, k as usize).unwrap();
            let origin = [chart.u.coords[i as usize], chart.v.coords[k as usize]];
            for &(di, dk) in &dirs {
                let ti = i + di;
                let tk = k + dk;
                let (ti_wrapped, tu) = if chart.u.periodic {
                    (ti.rem_euclid(nu), chart.u.unwrapped(ti))
                } else {
                    if ti < r0 || ti >= r1 {
                        continue;
                    }
                    (ti, chart.u.coords[ti as usize])
                };
                let tv = chart.v.unwrapped(tk);
                let b = chart
                    .grid_index(ti_wrapped as usize, tk.rem_euclid(nv) as usize)
                    .unwrap();
                if a == b {
                    continue;
                }
                edges.push(Edge {
                    a,
                    b,
                    origin,
                    disp: [tu - origin[0], tv - origin[1]],
                });
            }
        }
    }
    if chart.kind == ChartKind::SpherePolar {
        let np = chart.north_pole().unwrap();
        let sp = chart.south_pole().unwrap();
        let first = 1usize;
        let last = chart.u.len() - 2;
        for k in 0..nv as usize {
            let th = chart.v.coords[k];
            edges.push(Edge {
                a: np,
                b: chart.grid_index(first, k).unwrap(),
                origin: [0.0, th],
                disp: [chart.u.coords[first], 0.0],
            });
            edges.push(Edge {
                a: sp,
                b: chart.grid_index(last, k).unwrap(),
                origin: [PI, th],
                disp: [chart.u.coords[last] - PI, 0.0],
            });
        }
    }
    // direction deduplication can still leave repeated node pairs on tiny periodic grids
    edges.sort_by(|x, y| (x.a.min(x.b), x.a.max(x.b)).cmp(&(y.a.min(y.b), y.a.max(y.b))));
    edges.dedup_by(|x, y| x.a.min(x.b) == y.a.min(y.b) && x.a.max(x.b) == y.a.max(y.b));

    let n = chart.node_count();
    let mut degree = vec![0usize; n];
    for e in &edges {
        degree[e.a] += 1;
        degree[e.b] += 1;
    }
    let mut offsets = vec![0usize; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + degree[i];
    }
    let mut fill = offsets.clone();
    let mut adjacency = vec![(0u32, 0u32); offsets[n]];
    for (ei, e) in edges.iter().enumerate() {
        adjacency[fill[e.a]] = (e.b as u32, ei as u32);
        fill[e.a] += 1;
        adjacency[fill[e.b]] = (e.a as u32, ei as u32);
        fill[e.b] += 1;
    }
    let g = MeshGraph {
        chart,
        stencil,
        edges,
        offsets,
        adjacency,
    };
    let reached = g.reachable_from(0);
    if reached != n {
        return Err(MeshError::Disconnected { reached, total: n });
    }
    Ok(g)
}

impl MeshGraph {
    pub fn node_count(&self) -> usize {
        self.chart.node_count()
    }

    /// `(neighbor, edge index)` pairs of a node.
    pub fn neighbors(&self, node: usize) -> &[(u32, u32)] {
        &self.adjacency[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    fn reachable_from(&self, start: usize) -> usize {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(x) = queue.pop_front() {
            for &(y, _) in self.neighbors(x) {
                let y = y as usize;
                if !seen[y] {
                    seen[y] = true;
                    count += 1;
                    queue.push_back(y);
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from(0) == self.node_count()
    }
}
