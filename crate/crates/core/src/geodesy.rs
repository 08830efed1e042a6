//! Graph geodesics, volumes and diameter estimates.
//!
//! Edge lengths integrate `√(vᵀ g v)` along the straight parameter segment of
//! each edge with Gauss–Legendre quadrature. Graph distances overestimate the
//! continuum distance; on the round sphere the relative error of landmark
//! pairs is measured against great-circle distances and reported as `τ_mesh`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mesh::{build_chart, build_graph, ChartKind, MeshError, MeshGraph, ParamChart};
use crate::metrics::{dual_cell_quadrature, embed, MetricField};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Error)]
pub enum GeodesyError {
    #[error("quadrature order {0} not in {{1, 2, 4}}")]
    BadQuadrature(usize),
    #[error("non-finite edge length on edge {edge} ({a} → {b})")]
    NonFinite { edge: usize, a: usize, b: usize },
    #[error("source node {0} out of range")]
    BadSource(usize),
    #[error("graph is disconnected: node {0} unreachable")]
    Disconnected(usize),
    #[error("metric belongs to a different chart")]
    ChartMismatch,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Stable identity of a metric field, used to tag distance data.
pub fn metric_hash(field: &MetricField) -> String {
    let bytes = serde_json::to_vec(field).expect("metric fields serialize");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Clone, Debug)]
pub struct EdgeLengths {
    pub values: Vec<f64>,
    pub quadrature: usize,
    pub metric_hash: String,
}

/// `∫₀¹ √(g(origin + t·disp)[disp, disp]) dt`.
pub fn segment_length(field: &MetricField, origin: [f64; 2], disp: [f64; 2], q: usize) -> f64 {
    let rule = gauss_legendre(q).expect("validated quadrature");
    rule.iter()
        .map(|&(x, w)| {
            let t = 0.5 * (x + 1.0);
            let p = [origin[0] + t * disp[0], origin[1] + t * disp[1]];
            0.5 * w * field.eval(p).quad(disp).max(0.0).sqrt()
        })
        .sum()
}

pub fn edge_lengths(
    graph: &MeshGraph,
    field: &MetricField,
    quadrature: usize,
) -> Result<EdgeLengths, GeodesyError> {
    if ![1, 2, 4].contains(&quadrature) {
        return Err(GeodesyError::BadQuadrature(quadrature));
    }
    if let Some(k) = field.chart_kind() {
        if k != graph.chart.kind {
            return Err(GeodesyError::ChartMismatch);
        }
    }
    let values: Vec<f64> = graph
        .edges
        .par_iter()
        .map(|e| segment_length(field, e.origin, e.disp, quadrature))
        .collect();
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() || *v <= 0.0 {
            let e = &graph.edges[i];
            return Err(GeodesyError::NonFinite {
                edge: i,
                a: e.a,
                b: e.b,
            });
        }
    }
    Ok(EdgeLengths {
        values,
        quadrature,
        metric_hash: metric_hash(field),
    })
}

/// Compressed adjacency with per-arc weights.
#[derive(Clone, Debug, Default)]
pub struct WeightedGraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl WeightedGraph {
    pub fn from_mesh(graph: &MeshGraph, lengths: &EdgeLengths) -> Self {
        let n = graph.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for node in 0..n {
            for &(nb, e) in graph.neighbors(node) {
                targets.push(nb);
                weights.push(lengths.values[e as usize]);
            }
            offsets.push(targets.len());
        }
        Self {
            offsets,
            targets,
            weights,
        }
    }

    /// Build from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut deg = vec![0usize; n];
        for &(a, b, _) in edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for &(a, b, w) in edges {
            targets[fill[a]] = b as u32;
            weights[fill[a]] = w;
            fill[a] += 1;
            targets[fill[b]] = a as u32;
            weights[fill[b]] = w;
            fill[b] += 1;
        }
        Self {
            offsets,
            targets,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// SHA-256 prefix of the adjacency and weights.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for o in &self.offsets {
            h.update((*o as u64).to_le_bytes());
        }
        for t in &self.targets {
            h.update(t.to_le_bytes());
        }
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    pub fn arcs(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[node]..self.offsets[node + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&t, &w)| (t as usize, w))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, u32);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra. Returns distances and, for every node, the index
/// (into `sources`) of the source that reached it first.
pub fn dijkstra_multi(g: &WeightedGraph, sources: &[(usize, f64)]) -> (Vec<f64>, Vec<u32>) {
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut owner = vec![u32::MAX; n];
    let mut heap = BinaryHeap::new();
    for (i, &(s, d0)) in sources.iter().enumerate() {
        if d0 < dist[s] {
            dist[s] = d0;
            owner[s] = i as u32;
            heap.push(HeapItem(d0, s as u32));
        }
    }
    while let Some(HeapItem(d, u)) = heap.pop() {
        let u = u as usize;
        if d > dist[u] {
            continue;
        }
        for (v, w) in g.arcs(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                owner[v] = owner[u];
                heap.push(HeapItem(nd, v as u32));
            }
        }
    }
    (dist, owner)
}

pub fn dijkstra(g: &WeightedGraph, source: usize) -> Vec<f64> {
    dijkstra_multi(g, &[(source, 0.0)]).0
}

/// Distance rows from a set of sources to every node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub sources: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub metric_hash: String,
    pub tau_mesh: Option<f64>,
}

impl DistanceMatrix {
    pub fn compute(
        g: &WeightedGraph,
        sources: &[usize],
        metric_hash: &str,
    ) -> Result<Self, GeodesyError> {
        let n = g.node_count();
        if let Some(&s) = sources.iter().find(|&&s| s >= n) {
            return Err(GeodesyError::BadSource(s));
        }
        let rows: Vec<Vec<f64>> = sources.par_iter().map(|&s| dijkstra(g, s)).collect();
        for row in &rows {
            if let Some(i) = row.iter().position(|d| !d.is_finite()) {
                return Err(GeodesyError::Disconnected(i));
            }
        }
        Ok(Self {
            sources: sources.to_vec(),
            rows,
            metric_hash: metric_hash.to_string(),
            tau_mesh: None,
        })
    }

    pub fn row_of(&self, source: usize) -> Option<&[f64]> {
        self.sources
            .iter()
            .position(|&s| s == source)
            .map(|i| self.rows[i].as_slice())
    }

    /// `d(sources[a], sources[b])`.
    pub fn between(&self, a: usize, b: usize) -> f64 {
        self.rows[a][self.sources[b]]
    }

    pub fn max_entry(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, &d| m.max(d))
    }

    /// Largest `|d(a,b) − d(b,a)|` over source pairs.
    pub fn asymmetry(&self) -> f64 {
        let k = self.sources.len();
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                worst = worst.max((self.between(a, b) - self.between(b, a)).abs());
            }
        }
        worst
    }

    /// Source-by-source block as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,target,distance\n");
        for (a, &sa) in self.sources.iter().enumerate() {
            for &sb in &self.sources {
                s.push_str(&format!("{sa},{sb},{}\n", self.rows[a][sb]));
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct DiameterEstimate {
    pub value: f64,
    pub landmarks: Vec<usize>,
    pub distances: DistanceMatrix,
}

/// Farthest-point sampling: start at `start`, repeatedly add the node
/// farthest from the current landmark set. The diameter estimate is the
/// largest distance seen from any landmark.
pub fn farthest_point_sampling(
    g: &WeightedGraph,
    count: usize,
    start: usize,
    metric_hash: &str,
) -> Result<DiameterEstimate, GeodesyError> {
    let n = g.node_count();
    if start >= n {
        return Err(GeodesyError::BadSource(start));
    }
    let count = count.clamp(1, n);
    let mut landmarks = vec![start];
    let mut rows = vec![dijkstra(g, start)];
    if let Some(i) = rows[0].iter().position(|d| !d.is_finite()) {
        return Err(GeodesyError::Disconnected(i));
    }
    let mut mind = rows[0].clone();
    while landmarks.len() < count {
        let (next, &far) = mind
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if far == 0.0 {
            break;
        }
        let row = dijkstra(g, next);
        for (m, d) in mind.iter_mut().zip(&row) {
            *m = m.min(*d);
        }
        landmarks.push(next);
        rows.push(row);
    }
    let distances = DistanceMatrix {
        sources: landmarks.clone(),
        rows,
        metric_hash: metric_hash.to_string(),
        tau_mesh: None,
    };
    Ok(DiameterEstimate {
        value: distances.max_entry(),
        landmarks,
        distances,
    })
}

/// Riemannian volume of each node's dual cell (2×2 Gauss per cell).
pub fn node_volumes(chart: &ParamChart, field: &MetricField) -> Vec<f64> {
    (0..chart.node_count())
        .into_par_iter()
        .map(|node| {
            dual_cell_quadrature(chart, node)
                .iter()
                .map(|&(p, w)| w * field.eval(p).det().max(0.0).sqrt())
                .sum()
        })
        .collect()
}

pub fn volume(chart: &ParamChart, field: &MetricField, mask: Option<&[bool]>) -> f64 {
    let v = node_volumes(chart, field);
    match mask {
        Some(m) => v.iter().zip(m).filter(|x| *x.1).map(|x| x.0).sum(),
        None => v.iter().sum(),
    }
}

/// Length of a parameter polyline.
pub fn curve_length(field: &MetricField, polyline: &[[f64; 2]], quadrature: usize) -> f64 {
    polyline
        .windows(2)
        .map(|w| {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            segment_length(field, w[0], d, quadrature)
        })
        .sum()
}

/// Great-circle distance on the unit sphere between chart points.
pub fn great_circle(p: [f64; 2], q: [f64; 2]) -> f64 {
    let a = embed(p);
    let b = embed(q);
    let c = crate::metrics::cross(a, b);
    crate::metrics::norm(c).atan2(crate::metrics::dot(a, b))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TauMesh {
    pub resolution: usize,
    pub stencil: usize,
    pub tau: f64,
    pub mean: f64,
}

/// Landmark count used for τ_mesh calibration.
pub const TAU_LANDMARKS: usize = 24;

/// Relative landmark-pair error of graph distances on the unit round sphere
/// at `resolution × 2·resolution`, with q = 4 edge quadrature.
pub fn calibrate_tau_mesh(resolution: usize, stencil: usize) -> Result<TauMesh, GeodesyError> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), TauMesh>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap().get(&(resolution, stencil)) {
        return Ok(*t);
    }
    let chart = Arc::new(build_chart(
        ChartKind::SpherePolar,
        (resolution, 2 * resolution),
        &[],
    )?);
    let graph = build_graph(chart.clone(), stencil)?;
    let field = MetricField::RoundSphere { radius: 1.0 };
    let lens = edge_lengths(&graph, &field, 4)?;
    let wg = WeightedGraph::from_mesh(&graph, &lens);
    let est = farthest_point_sampling(&wg, TAU_LANDMARKS, 0, &lens.metric_hash)?;
    let mut worst: f64 = 0.0;
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for (a, &la) in est.landmarks.iter().enumerate() {
        for &lb in &est.landmarks {
            if la == lb {
                continue;
            }
            let exact = great_circle(chart.nodes[la], chart.nodes[lb]);
            let rel = (est.distances.rows[a][lb] - exact).abs() / exact;
            worst = worst.max(rel);
            sum += rel;
            cnt += 1;
        }
    }
    let t = TauMesh {
        resolution,
        stencil,
        tau: worst,
        mean: sum / cnt.max(1) as f64,
    };
    cache.lock().unwrap().insert((resolution, stencil), t);
    Ok(t)
}

/// Unit-sphere distance oracle: `π` between the poles.
pub const POLE_TO_POLE: f64 = PI;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{IlmanenWells, Sym2};
    use proptest::prelude::*;

    fn torus_graph(n: usize, k: usize) -> MeshGraph {
        let c = Arc::new(build_chart(ChartKind::TorusSquare, (n, n), &[]).unwrap());
        build_graph(c, k).unwrap()
    }

    #[test]
    fn flat_torus_axis_distance_is_exact() {
        let g = torus_graph(32, 1);
        let f = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let l = edge_lengths(&g, &f, 2).unwrap();
        let wg = WeightedGraph::from_mesh(&g, &l);
        let c = &g.chart;
        let a = c.grid_index(0, 0).unwrap();
        let b = c.grid_index(16, 0).unwrap();
        let d = dijkstra(&wg, a);
        assert!((d[b] - PI).abs() < 1e-12);
        // diagonal with k = 1 costs the taxicab-like 8-neighbour length
        let e = c.grid_index(4, 4).unwrap();
        assert!((d[e] - 4.0 * 2f64.sqrt() * 2.0 * PI / 32.0).abs() < 1e-12);
    }

    #[test]
    fn round_sphere_pole_distance_and_volume() {
        let c = Arc::new(build_chart(ChartKind::SpherePolar, (32, 64), &[]).unwrap());
        let g = build_graph(c.clone(), 2).unwrap();
        let f = MetricField::RoundSphere { radius: 1.0 };
        let l = edge_lengths(&g, &f, 4).unwrap();
        let wg = WeightedGraph::from_mesh(&g, &l);
        let d = dijkstra(&wg, c.north_pole().unwrap());
        assert!((d[c.south_pole().unwrap()] - PI).abs() < 1e-12);
        let v = volume(&c, &f, None);
        assert!((v - 4.0 * PI).abs() / (4.0 * PI) < 1e-3, "{v}");
        let vols = node_volumes(&c, &f);
        assert!(vols.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn bad_quadrature_rejected() {
        let g = torus_graph(8, 1);
        let f = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        assert!(matches!(
            edge_lengths(&g, &f, 3),
            Err(GeodesyError::BadQuadrature(3))
        ));
    }

    #[test]
    fn source_out_of_range() {
        let g = torus_graph(8, 1);
        let f = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let l = edge_lengths(&g, &f, 1).unwrap();
        let wg = WeightedGraph::from_mesh(&g, &l);
        assert!(matches!(
            DistanceMatrix::compute(&wg, &[1000], "x"),
            Err(GeodesyError::BadSource(1000))
        ));
    }

    #[test]
    fn fps_diameter_of_flat_torus() {
        let g = torus_graph(32, 3);
        let f = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let l = edge_lengths(&g, &f, 1).unwrap();
        let wg = WeightedGraph::from_mesh(&g, &l);
        let est = farthest_point_sampling(&wg, 8, 0, &l.metric_hash).unwrap();
        // continuum diameter is √2·π; graph distances sit slightly above
        let want = 2f64.sqrt() * PI;
        assert!(est.value >= want - 1e-9 && est.value < want * 1.05, "{}", est.value);
        assert_eq!(est.landmarks.len(), 8);
        assert!(est.distances.asymmetry() < 1e-12);
    }

    #[test]
    fn multi_source_owner_partition() {
        let g = torus_graph(16, 1);
        let f = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let l = edge_lengths(&g, &f, 1).unwrap();
        let wg = WeightedGraph::from_mesh(&g, &l);
        let (d, own) = dijkstra_multi(&wg, &[(0, 0.0), (136, 0.0)]);
        assert_eq!(own[0], 0);
        assert_eq!(own[136], 1);
        assert!(own.iter().all(|&o| o < 2));
        assert!(d.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn wells_only_lengthen_edges() {
        let c = Arc::new(build_chart(ChartKind::SpherePolar, (32, 64), &[]).unwrap());
        let g = build_graph(c, 2).unwrap();
        let g0 = MetricField::RoundSphere { radius: 1.0 };
        let gj = MetricField::IlmanenWells(IlmanenWells::standard(3, 1.0).unwrap());
        let l0 = edge_lengths(&g, &g0, 4).unwrap();
        let lj = edge_lengths(&g, &gj, 4).unwrap();
        for (a, b) in l0.values.iter().zip(&lj.values) {
            assert!(b >= a);
        }
        assert_ne!(l0.metric_hash, lj.metric_hash);
    }

    #[test]
    fn curve_length_of_equator() {
        let f = MetricField::RoundSphere { radius: 2.0 };
        let poly: Vec<[f64; 2]> = (0..=64)
            .map(|i| [PI / 2.0, 2.0 * PI * i as f64 / 64.0])
            .collect();
        assert!((curve_length(&f, &poly, 2) - 4.0 * PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn triangle_inequality_and_symmetry(seed in 0usize..1000) {
            let g = torus_graph(12, 2);
            let f = MetricField::Constant { tensor: Sym2::new(1.5, 0.3, 0.8) };
            let l = edge_lengths(&g, &f, 2).unwrap();
            let wg = WeightedGraph::from_mesh(&g, &l);
            let n = g.node_count();
            let (a, b, c) = (seed % n, (seed * 7 + 3) % n, (seed * 13 + 5) % n);
            let dm = DistanceMatrix::compute(&wg, &[a, b, c], "t").unwrap();
            prop_assert!(dm.asymmetry() < 1e-12);
            prop_assert!(dm.between(0, 2) <= dm.between(0, 1) + dm.between(1, 2) + 1e-12);
        }

        #[test]
        fn domination_is_monotone_on_graph(scale in 1.0f64..3.0) {
            let g = torus_graph(12, 1);
            let f0 = MetricField::Constant { tensor: Sym2::new(1.0, 0.2, 1.0) };
            let f1 = MetricField::Scaled { factor: scale, base: Box::new(f0.clone()) };
            let w0 = WeightedGraph::from_mesh(&g, &edge_lengths(&g, &f0, 1).unwrap());
            let w1 = WeightedGraph::from_mesh(&g, &edge_lengths(&g, &f1, 1).unwrap());
            let d0 = dijkstra(&w0, 0);
            let d1 = dijkstra(&w1, 0);
            for (a, b) in d0.iter().zip(&d1) {
                prop_assert!(*b >= *a - 1e-12);
            }
        }
    }
}
