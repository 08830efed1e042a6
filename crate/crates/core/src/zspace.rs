//! The glued space `Z = M_0 ⊔ (M × [0, h]) ⊔ M_j / ∼` as a layered graph.
//!
//! Level 0 is `M_0` (and the slab bottom). Levels `1..L` are slab copies of
//! `M` at heights `ℓ·h/(L−1)` carrying `g_j` lengths. At the top level the
//! nodes in `W` are shared with `M_j`; the remaining `M_j` nodes form extra
//! nodes connected to the slab only through them. Consecutive levels are
//! joined by vertical edges and by slanted copies of every mesh edge, so
//! descending paths are not forced into a staircase.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flatbound::{h_min, selection, FlatBoundError, Prepared};
use crate::geodesy::{dijkstra, EdgeLengths, WeightedGraph};
use crate::mesh::MeshGraph;

#[derive(Debug, Error, PartialEq)]
pub enum ZError {
    #[error("slab height h = {0} must be positive")]
    Height(f64),
    #[error("need at least 2 slab levels, got {0}")]
    Levels(usize),
    #[error("W mask has {got} entries for {expected} nodes")]
    MaskSize { expected: usize, got: usize },
}

#[derive(Clone, Debug)]
pub struct ZSpaceGraph {
    pub mesh_nodes: usize,
    pub levels: usize,
    pub h: f64,
    pub w: Vec<bool>,
    pub graph: WeightedGraph,
    top: Vec<usize>,
    pub outside_count: usize,
    /// `W = ∅`: the `M_j` copy is cut off from the slab.
    pub empty_w: bool,
}

impl ZSpaceGraph {
    pub fn base(&self, i: usize) -> usize {
        i
    }

    pub fn slab(&self, level: usize, i: usize) -> usize {
        level * self.mesh_nodes + i
    }

    /// Node representing `i ∈ M_j`.
    pub fn top(&self, i: usize) -> usize {
        self.top[i]
    }

    pub fn height(&self, level: usize) -> f64 {
        self.h * level as f64 / (self.levels - 1) as f64
    }

    pub fn step(&self) -> f64 {
        self.h / (self.levels - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Every neighbor of an `M_j` node outside `W` is an `M_j` node.
    pub fn outside_attached_only_via_w(&self) -> bool {
        let first_outside = self.levels * self.mesh_nodes;
        let top_start = (self.levels - 1) * self.mesh_nodes;
        (first_outside..self.node_count()).all(|z| {
            self.graph.arcs(z).all(|(y, _)| {
                y >= first_outside || (y >= top_start && self.w[y - top_start])
            })
        })
    }

    /// Number of connected components (union-find over arcs).
    pub fn components(&self) -> usize {
        let n = self.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for a in 0..n {
            for (b, _) in self.graph.arcs(a) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
        (0..n).filter(|&x| find(&mut parent, x) == x).count()
    }
}

/// Level count giving a vertical step close to `spacing`.
pub fn suggest_levels(h: f64, spacing: f64, max_levels: usize) -> usize {
    ((h / spacing).ceil() as usize + 1).clamp(2, max_levels.max(2))
}

pub fn build_z(
    graph: &MeshGraph,
    len_j: &EdgeLengths,
    len_0: &EdgeLengths,
    w: &[bool],
    h: f64,
    levels: usize,
) -> Result<ZSpaceGraph, ZError> {
    build_z_spanned(graph, len_j, len_0, w, h, levels, 1)
}

/// As [`build_z`], with slanted edges from each level to the next `span`
/// levels, which widens the set of representable descent slopes.
pub fn build_z_spanned(
    graph: &MeshGraph,
    len_j: &EdgeLengths,
    len_0: &EdgeLengths,
    w: &[bool],
    h: f64,
    levels: usize,
    span: usize,
) -> Result<ZSpaceGraph, ZError> {
    let span = span.max(1);
    if !(h > 0.0) {
        return Err(ZError::Height(h));
    }
    if levels < 2 {
        return Err(ZError::Levels(levels));
    }
    let n = graph.node_count();
    if w.len() != n {
        return Err(ZError::MaskSize {
            expected: n,
            got: w.len(),
        });
    }
    let dh = h / (levels - 1) as f64;
    let top_start = (levels - 1) * n;
    let mut top = vec![0usize; n];
    let mut next = levels * n;
    for i in 0..n {
        if w[i] {
            top[i] = top_start + i;
        } else {
            top[i] = next;
            next += 1;
        }
    }
    let total = next;
    let mut edges: Vec<(usize, usize, f64)> =
        Vec::with_capacity(graph.edges.len() * ((1 + 2 * span) * levels) + n * levels);
    for (ei, e) in graph.edges.iter().enumerate() {
        let l0 = len_0.values[ei];
        let lj = len_j.values[ei];
        edges.push((e.a, e.b, l0));
        for lv in 1..levels {
            edges.push((lv * n + e.a, lv * n + e.b, lj));
        }
        for m in 1..=span.min(levels - 1) {
            let rise = m as f64 * dh;
            let slant = (lj * lj + rise * rise).sqrt();
            for lv in 0..levels - m {
                edges.push((lv * n + e.a, (lv + m) * n + e.b, slant));
                edges.push((lv * n + e.b, (lv + m) * n + e.a, slant));
            }
        }
        // M_j edges not already present as top-level slab edges
        if !(w[e.a] && w[e.b]) {
            edges.push((top[e.a], top[e.b], lj));
        }
    }
    for lv in 0..levels - 1 {
        for i in 0..n {
            edges.push((lv * n + i, (lv + 1) * n + i, dh));
        }
    }
    let wg = WeightedGraph::from_edges(total, &edges);
    Ok(ZSpaceGraph {
        mesh_nodes: n,
        levels,
        h,
        w: w.to_vec(),
        graph: wg,
        top,
        outside_count: total - levels * n,
        empty_w: !w.iter().any(|&x| x),
    })
}

/// Distance rows from Z nodes.
pub fn z_distances(z: &ZSpaceGraph, sources: &[usize]) -> Vec<Vec<f64>> {
    sources.par_iter().map(|&s| dijkstra(&z.graph, s)).collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmbeddingParams {
    /// Gap bound on `W × W` used to size `h`.
    pub delta: f64,
    pub diameter: f64,
    pub tau_mesh: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Shortcut {
    pub p: usize,
    pub q: usize,
    pub d_j: f64,
    pub d_z: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub h: f64,
    pub h_required: f64,
    pub levels: usize,
    /// `h ≥ √(2δD + δ²)`; when false the embedding lemma does not apply and
    /// the checks below are diagnostics only.
    pub hypothesis_ok: bool,
    pub pairs: usize,
    pub phi0_max_error: f64,
    pub phi0_violations: usize,
    pub phij_slack: f64,
    /// `d_Z(φ_j p, φ_j q) < d_j(p, q) − slack`.
    pub phij_lower_violations: usize,
    /// `d_Z(φ_j p, φ_j q) > d_j(p, q) + 1e−9`.
    pub phij_upper_violations: usize,
    /// Largest `d_j − d_Z` over the sampled pairs.
    pub phij_worst_deficit: f64,
    pub shortcuts: Vec<Shortcut>,
    pub sandwich_pairs: usize,
    pub sandwich_lower_violations: usize,
    pub sandwich_upper_violations: usize,
    pub w_count: usize,
    pub outside_count: usize,
    pub components: usize,
    pub structure_ok: bool,
}

impl EmbeddingReport {
    pub fn certified(&self) -> bool {
        self.hypothesis_ok
            && self.structure_ok
            && self.phi0_violations == 0
            && self.phij_lower_violations == 0
            && self.phij_upper_violations == 0
            && self.sandwich_lower_violations == 0
            && self.sandwich_upper_violations == 0
    }
}

pub const PHI0_TOL: f64 = 1e-9;

/// Check both embeddings on all pairs of `nodes` and the slab sandwich
/// inequalities on a subset of slab pairs.
pub fn verify_embedding(
    z: &ZSpaceGraph,
    wg_j: &WeightedGraph,
    wg_0: &WeightedGraph,
    nodes: &[usize],
    params: EmbeddingParams,
) -> EmbeddingReport {
    let h_req = h_min(params.delta, params.diameter).unwrap_or(f64::INFINITY);
    let mut rep = EmbeddingReport {
        h: z.h,
        h_required: h_req,
        levels: z.levels,
        hypothesis_ok: z.h >= h_req - 1e-12,
        phij_slack: params.tau_mesh * params.diameter,
        phij_worst_deficit: f64::NEG_INFINITY,
        w_count: z.w.iter().filter(|&&x| x).count(),
        outside_count: z.outside_count,
        ..Default::default()
    };
    rep.components = z.components();
    rep.structure_ok = z.outside_attached_only_via_w();

    let d0: Vec<Vec<f64>> = nodes.par_iter().map(|&p| dijkstra(wg_0, p)).collect();
    let dj: Vec<Vec<f64>> = nodes.par_iter().map(|&p| dijkstra(wg_j, p)).collect();
    let base_src: Vec<usize> = nodes.iter().map(|&p| z.base(p)).collect();
    let top_src: Vec<usize> = nodes.iter().map(|&p| z.top(p)).collect();
    let zb = z_distances(z, &base_src);
    let zt = z_distances(z, &top_src);

    for (a, &p) in nodes.iter().enumerate() {
        for &q in &nodes[a + 1..] {
            rep.pairs += 1;
            let e0 = (zb[a][z.base(q)] - d0[a][q]).abs();
            rep.phi0_max_error = rep.phi0_max_error.max(e0);
            if e0 > PHI0_TOL {
                rep.phi0_violations += 1;
            }
            let dz = zt[a][z.top(q)];
            let d = dj[a][q];
            rep.phij_worst_deficit = rep.phij_worst_deficit.max(d - dz);
            if dz < d - rep.phij_slack {
                rep.phij_lower_violations += 1;
                rep.shortcuts.push(Shortcut {
                    p,
                    q,
                    d_j: d,
                    d_z: dz,
                });
            }
            if dz > d + PHI0_TOL {
                rep.phij_upper_violations += 1;
            }
        }
    }
    rep.shortcuts
        .sort_by(|x, y| (y.d_j - y.d_z).total_cmp(&(x.d_j - x.d_z)));
    rep.shortcuts.truncate(16);

    // sandwich: √(d_0² + Δh²) ≤ d_Z((x,h),(y,h')) ≤ √(d_j² + Δh²) + |Δh|
    let probe: Vec<usize> = (0..nodes.len().min(6)).collect();
    let lv_probe: Vec<usize> = {
        let mut v = vec![0, z.levels / 2, z.levels - 1];
        v.dedup();
        v
    };
    let mut srcs = Vec::new();
    for &a in &probe {
        for &lv in &lv_probe {
            srcs.push((a, lv));
        }
    }
    let rows: Vec<Vec<f64>> = srcs
        .par_iter()
        .map(|&(a, lv)| dijkstra(&z.graph, z.slab(lv, nodes[a])))
        .collect();
    for (si, &(a, lv)) in srcs.iter().enumerate() {
        for &q in nodes {
            for lv2 in 0..z.levels {
                let dz = rows[si][z.slab(lv2, q)];
                let dhh = (z.height(lv) - z.height(lv2)).abs();
                let lo = (d0[a][q].powi(2) + dhh * dhh).sqrt();
                let hi = (dj[a][q].powi(2) + dhh * dhh).sqrt() + dhh;
                rep.sandwich_pairs += 1;
                if dz < lo - PHI0_TOL {
                    rep.sandwich_lower_violations += 1;
                }
                if dz > hi + PHI0_TOL {
                    rep.sandwich_upper_violations += 1;
                }
            }
        }
    }
    rep
}

/// One Z-space verification run built from a prepared pipeline instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZRun {
    pub adversarial: bool,
    pub kappa: Option<f64>,
    pub lambda_prime: Option<f64>,
    /// `δ` used to size `h`.
    pub delta: f64,
    /// Largest `|d_j − d_0|` over probe pairs inside `W`.
    pub max_w_gap: f64,
    pub diameter: f64,
    pub probes: Vec<usize>,
    pub report: EmbeddingReport,
}

/// Sampling and slab resolution for [`run_valid`] and [`run_adversarial`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ZRunConfig {
    /// Nodes whose pairwise embeddings are checked (poles first).
    pub probes: usize,
    pub max_levels: usize,
    /// Slab levels per base mesh spacing of height.
    pub slab_refine: f64,
    /// Levels spanned by slanted edges; with `slab_refine = span` the
    /// descent slopes along an axis edge are `1/span, 2/span, …, 1`.
    pub span: usize,
}

impl Default for ZRunConfig {
    fn default() -> Self {
        Self {
            probes: 24,
            max_levels: 64,
            slab_refine: 3.0,
            span: 3,
        }
    }
}

/// Probe nodes: the first landmarks of the sample plus both poles.
pub fn probe_nodes(prep: &Prepared, count: usize) -> Vec<usize> {
    let chart = &prep.inst.chart;
    let mut v: Vec<usize> = chart.north_pole().into_iter().chain(chart.south_pole()).collect();
    for &l in &prep.sample.landmarks {
        if v.len() >= count {
            break;
        }
        if !v.contains(&l) {
            v.push(l);
        }
    }
    v
}

fn max_gap_on(prep: &Prepared, nodes: &[usize], w: &[bool]) -> f64 {
    let inst = &prep.inst;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = nodes
        .par_iter()
        .map(|&p| (dijkstra(&inst.wg0, p), dijkstra(&inst.wgj, p)))
        .collect();
    let mut m: f64 = 0.0;
    for (a, &p) in nodes.iter().enumerate() {
        if !w[p] {
            continue;
        }
        for &q in &nodes[a + 1..] {
            if w[q] {
                m = m.max((rows[a].1[q] - rows[a].0[q]).abs());
            }
        }
    }
    m
}

/// Unrefined `u` spacing of the chart.
fn base_spacing(prep: &Prepared) -> f64 {
    let c = &prep.inst.chart;
    (c.u.hi - c.u.lo) / c.resolution.0 as f64
}

/// Valid run: `W` from the good-set selection at (κ, λ'),
/// `δ = max(λ' + δ_ε, max_W |d_j − d_0| / 2)` and `h = h_min(δ, D)`.
pub fn run_valid(
    prep: &Prepared,
    kappa: f64,
    lambda_prime: f64,
    cfg: ZRunConfig,
) -> Result<ZRun, FlatBoundError> {
    let sel = selection(prep, kappa, lambda_prime)?;
    let nodes = probe_nodes(prep, cfg.probes);
    let max_w_gap = max_gap_on(prep, &nodes, &sel.w_nodes);
    let delta = (lambda_prime + sel.delta).max(0.5 * max_w_gap);
    let h = h_min(delta, prep.diameter)?;
    let levels = suggest_levels(h, base_spacing(prep) / cfg.slab_refine, cfg.max_levels);
    let inst = &prep.inst;
    let z = build_z_spanned(&inst.graph, &inst.lenj, &inst.len0, &sel.w_nodes, h, levels, cfg.span)?;
    let report = verify_embedding(
        &z,
        &inst.wgj,
        &inst.wg0,
        &nodes,
        EmbeddingParams {
            delta,
            diameter: prep.diameter,
            tau_mesh: prep.tau_mesh,
        },
    );
    Ok(ZRun {
        adversarial: false,
        kappa: Some(kappa),
        lambda_prime: Some(lambda_prime),
        delta,
        max_w_gap,
        diameter: prep.diameter,
        probes: nodes,
        report,
    })
}

/// Nodes within round distance `radius` of either pole.
pub fn polar_caps(chart: &crate::mesh::ParamChart, radius: f64) -> Vec<bool> {
    use crate::mesh::NodeLoc;
    use std::f64::consts::PI;
    (0..chart.node_count())
        .map(|i| match chart.locate(i) {
            NodeLoc::Grid(iu, _) => {
                let r = chart.u.coords[iu];
                r < radius || r > PI - radius
            }
            _ => true,
        })
        .collect()
}

/// Adversarial run: glue `w`, take `δ = max_{W×W} |d_j − d_0| / 2` (over all
/// of `W` when it has at most 512 nodes, else over the probes in `W`) and
/// halve the admissible height, `h = h_min(δ, D) / 2`.
pub fn run_adversarial(
    prep: &Prepared,
    w: &[bool],
    cfg: ZRunConfig,
) -> Result<ZRun, FlatBoundError> {
    let inst = &prep.inst;
    let nodes = probe_nodes(prep, cfg.probes);
    let w_nodes: Vec<usize> = (0..w.len()).filter(|&i| w[i]).collect();
    let gap_nodes = if w_nodes.len() <= 512 { &w_nodes } else { &nodes };
    let max_w_gap = max_gap_on(prep, gap_nodes, w);
    let delta = 0.5 * max_w_gap;
    let h = 0.5 * h_min(delta, prep.diameter)?;
    let levels = suggest_levels(h, base_spacing(prep) / cfg.slab_refine, cfg.max_levels);
    let z = build_z_spanned(&inst.graph, &inst.lenj, &inst.len0, w, h, levels, cfg.span)?;
    let report = verify_embedding(
        &z,
        &inst.wgj,
        &inst.wg0,
        &nodes,
        EmbeddingParams {
            delta,
            diameter: prep.diameter,
            tau_mesh: prep.tau_mesh,
        },
    );
    Ok(ZRun {
        adversarial: true,
        kappa: None,
        lambda_prime: None,
        delta,
        max_w_gap,
        diameter: prep.diameter,
        probes: nodes,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::edge_lengths;
    use crate::mesh::{build_chart, build_graph, ChartKind};
    use crate::metrics::{MetricField, Sym2};
    use std::sync::Arc;

    fn setup(n: usize) -> (MeshGraph, EdgeLengths, EdgeLengths) {
        let c = Arc::new(build_chart(ChartKind::TorusSquare, (n, n), &[]).unwrap());
        let g = build_graph(c, 2).unwrap();
        let f0 = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let fj = MetricField::Constant {
            tensor: Sym2::new(1.5, 0.2, 1.2),
        };
        let l0 = edge_lengths(&g, &f0, 1).unwrap();
        let lj = edge_lengths(&g, &fj, 1).unwrap();
        (g, l0, lj)
    }

    #[test]
    fn degenerate_gluing_is_isometric() {
        let (g, l0, _) = setup(12);
        let w = vec![true; g.node_count()];
        let z = build_z(&g, &l0, &l0, &w, 1e-9, 2).unwrap();
        let wg = WeightedGraph::from_mesh(&g, &l0);
        let nodes = [0, 17, 50, 99, 143];
        let rep = verify_embedding(
            &z,
            &wg,
            &wg,
            &nodes,
            EmbeddingParams {
                delta: 0.0,
                diameter: 5.0,
                tau_mesh: 0.0,
            },
        );
        assert!(rep.phi0_max_error < 1e-6);
        assert!(rep.phij_worst_deficit < 1e-6);
        assert!(rep.certified(), "{rep:?}");
    }

    #[test]
    fn structure_and_errors() {
        let (g, l0, lj) = setup(10);
        let n = g.node_count();
        let mut w = vec![true; n];
        for x in w.iter_mut().take(30) {
            *x = false;
        }
        let z = build_z(&g, &lj, &l0, &w, 0.5, 3).unwrap();
        assert_eq!(z.outside_count, 30);
        assert_eq!(z.node_count(), 3 * n + 30);
        assert!(z.outside_attached_only_via_w());
        assert_eq!(z.components(), 1);
        let none = vec![false; n];
        let z = build_z(&g, &lj, &l0, &none, 0.5, 3).unwrap();
        assert!(z.empty_w);
        assert_eq!(z.components(), 2);
        let d = z_distances(&z, &[z.top(0)]);
        assert!(d[0][z.base(0)].is_infinite());
        assert_eq!(build_z(&g, &lj, &l0, &w, 0.0, 3).unwrap_err(), ZError::Height(0.0));
        assert_eq!(build_z(&g, &lj, &l0, &w, 1.0, 1).unwrap_err(), ZError::Levels(1));
    }

    #[test]
    fn base_is_exact_and_slab_sandwich_holds() {
        let (g, l0, lj) = setup(12);
        let w = vec![true; g.node_count()];
        let z = build_z(&g, &lj, &l0, &w, 0.7, 4).unwrap();
        let wg0 = WeightedGraph::from_mesh(&g, &l0);
        let wgj = WeightedGraph::from_mesh(&g, &lj);
        let nodes: Vec<usize> = (0..g.node_count()).step_by(13).collect();
        let rep = verify_embedding(
            &z,
            &wgj,
            &wg0,
            &nodes,
            EmbeddingParams {
                delta: 0.1,
                diameter: 6.0,
                tau_mesh: 0.05,
            },
        );
        assert_eq!(rep.phi0_violations, 0);
        assert_eq!(rep.sandwich_lower_violations, 0);
        assert_eq!(rep.sandwich_upper_violations, 0);
        assert_eq!(rep.phij_upper_violations, 0);
        assert!(rep.sandwich_pairs > 0);
    }

    #[test]
    fn taller_slab_never_shortens_top_distances() {
        let (g, l0, lj) = setup(10);
        let w = vec![true; g.node_count()];
        let za = build_z(&g, &lj, &l0, &w, 0.2, 3).unwrap();
        let zb = build_z(&g, &lj, &l0, &w, 0.4, 3).unwrap();
        let da = z_distances(&za, &[za.top(0)]);
        let db = z_distances(&zb, &[zb.top(0)]);
        for i in 0..g.node_count() {
            assert!(db[0][zb.top(i)] >= da[0][za.top(i)] - 1e-12);
        }
    }

    #[test]
    fn level_count_suggestion() {
        assert_eq!(suggest_levels(1.0, 0.1, 64), 11);
        assert_eq!(suggest_levels(1e-9, 0.1, 64), 2);
        assert_eq!(suggest_levels(100.0, 0.1, 64), 64);
    }

    #[test]
    fn wider_span_never_lengthens() {
        let (g, l0, lj) = setup(10);
        let w = vec![true; g.node_count()];
        let a = build_z_spanned(&g, &lj, &l0, &w, 0.6, 7, 1).unwrap();
        let b = build_z_spanned(&g, &lj, &l0, &w, 0.6, 7, 3).unwrap();
        assert_eq!(a.node_count(), b.node_count());
        let da = dijkstra(&a.graph, a.top(0));
        let db = dijkstra(&b.graph, b.top(0));
        assert!(da.iter().zip(&db).all(|(x, y)| *y <= *x + 1e-12));
        assert!(da.iter().zip(&db).any(|(x, y)| *y < *x - 1e-9));
    }
}
