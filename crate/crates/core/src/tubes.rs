//! Volume-to-length chain on tubes foliated by minimizing `g_0`-geodesics.
//!
//! A tube is parametrized by `(t, s)`: `t` runs along a leaf, `s` labels the
//! leaf. The transversal `N` is the curve `t = t_mid`, measured by its `g_0`
//! arclength, so the transversal density factor is 1 and `h_0 = 1` for every
//! supported family. The Jacobian of the foliation is
//! `J(t, s) = ρ_0(t, s) / (|∂_t|_0 · |∂_s|_0(t_mid, s))`, `A = min J`.
//! The closed forms assume `g_0` is the unit round sphere or the reference
//! torus `dr² + 25 dθ²`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{dijkstra, TauMesh};
use crate::families::Instance;
use crate::mesh::ParamChart;
use crate::metrics::{cross, dot, norm, MetricField, Sym2};
use crate::quadrature::{adaptive, Quad};

#[derive(Debug, Error)]
pub enum TubeError {
    #[error("empty band: {0}")]
    EmptyBand(String),
    #[error("band outside the chart or leaves not minimizing: {0}")]
    BadBand(String),
    #[error("leaf family {0} is not defined on this metric's chart")]
    Unsupported(&'static str),
    #[error("g_j does not dominate g_0 on the tube: min relative eigenvalue {lambda_min:.6} at (t, s) = ({t:.4}, {s:.4})")]
    NotDominated { lambda_min: f64, t: f64, s: f64 },
}

/// Leaf families whose leaves minimize `g_0` by symmetry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LeafFamily {
    /// Great-circle arcs from the pole `axis` of a rotated polar frame;
    /// `s = 0` is the half-plane through `zero`.
    SphereMeridian { axis: [f64; 3], zero: [f64; 3] },
    /// `θ = s`, `r = t` on the square torus.
    TorusRLine,
    /// `r = s`, `θ = t` on the square torus.
    TorusThetaCircle,
}

impl LeafFamily {
    /// Meridians of the standard chart.
    pub fn standard_meridians() -> Self {
        LeafFamily::SphereMeridian {
            axis: [0.0, 0.0, 1.0],
            zero: [1.0, 0.0, 0.0],
        }
    }

    /// Meridians of the frame with pole on the equator at `θ = 0`; the leaf
    /// `s = 0` crosses the north pole at `t = π/2`.
    pub fn through_north_pole() -> Self {
        LeafFamily::SphereMeridian {
            axis: [1.0, 0.0, 0.0],
            zero: [0.0, 0.0, 1.0],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LeafFamily::SphereMeridian { .. } => "sphere-meridian",
            LeafFamily::TorusRLine => "torus-r-line",
            LeafFamily::TorusThetaCircle => "torus-theta-circle",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TubeSpec {
    pub family: LeafFamily,
    /// Leaf parameter range `[a, b]`.
    pub t: [f64; 2],
    /// Transversal parameter range.
    pub s: [f64; 2],
    /// Leaf labels tabulated in reports (odd count, symmetric about the
    /// middle of the band).
    pub leaves: Vec<f64>,
    pub a: f64,
    pub h0: f64,
    #[serde(skip)]
    frame: Option<[[f64; 3]; 3]>,
}

/// Point and tangents of the parametrization.
enum Sample {
    Ambient {
        x: [f64; 3],
        dt: [f64; 3],
        ds: [f64; 3],
    },
    Chart {
        p: [f64; 2],
        swap: bool,
    },
}

fn wrap(x: f64) -> f64 {
    -PI + (x + PI).rem_euclid(2.0 * PI)
}

impl TubeSpec {
    fn t_mid(&self) -> f64 {
        0.5 * (self.t[0] + self.t[1])
    }

    fn sample(&self, t: f64, s: f64) -> Sample {
        match self.family {
            LeafFamily::SphereMeridian { .. } => {
                let [e1, e2, e3] = self.frame.expect("frame set at build");
                let (st, ct) = t.sin_cos();
                let (ss, cs) = s.sin_cos();
                let mut x = [0.0; 3];
                let mut dt = [0.0; 3];
                let mut ds = [0.0; 3];
                for i in 0..3 {
                    let rad = cs * e1[i] + ss * e2[i];
                    x[i] = st * rad + ct * e3[i];
                    dt[i] = ct * rad - st * e3[i];
                    ds[i] = st * (-ss * e1[i] + cs * e2[i]);
                }
                Sample::Ambient { x, dt, ds }
            }
            LeafFamily::TorusRLine => Sample::Chart {
                p: [wrap(t), wrap(s)],
                swap: false,
            },
            LeafFamily::TorusThetaCircle => Sample::Chart {
                p: [wrap(s), wrap(t)],
                swap: true,
            },
        }
    }

    /// Metric in `(t, s)` coordinates.
    fn tensor(&self, g: &MetricField, t: f64, s: f64) -> Option<Sym2> {
        match self.sample(t, s) {
            Sample::Ambient { x, dt, ds } => g.ambient_tensor(x, dt, ds),
            Sample::Chart { p, swap } => {
                let m = g.eval(p);
                Some(if swap { Sym2::new(m.yy, m.xy, m.xx) } else { m })
            }
        }
    }

    /// Chart point of `(t, s)`, for snapping leaf endpoints to nodes.
    pub fn chart_point(&self, t: f64, s: f64) -> [f64; 2] {
        match self.sample(t, s) {
            Sample::Ambient { x, .. } => {
                let r = norm(cross(x, [0.0, 0.0, 1.0])).atan2(x[2]);
                let th = x[1].atan2(x[0]).rem_euclid(2.0 * PI);
                [r, th]
            }
            Sample::Chart { p, .. } => p,
        }
    }

    /// `g_0` measure of the transversal.
    pub fn transversal_measure(&self) -> f64 {
        self.mu_n_density() * (self.s[1] - self.s[0])
    }

    fn mu_n_density(&self) -> f64 {
        match self.family {
            LeafFamily::SphereMeridian { .. } => self.t_mid().sin(),
            LeafFamily::TorusRLine => 5.0,
            LeafFamily::TorusThetaCircle => 1.0,
        }
    }
}

/// Build a tube of the given family over `t × s`. Leaves are tabulated at
/// roughly the chart's `u`-spacing across the transversal.
pub fn build_symmetric_tube(
    chart: &ParamChart,
    family: LeafFamily,
    t: [f64; 2],
    s: [f64; 2],
) -> Result<TubeSpec, TubeError> {
    let (tl, sl) = (t[1] - t[0], s[1] - s[0]);
    if !(tl > 0.0) || !(sl > 0.0) {
        return Err(TubeError::EmptyBand(format!("t = {t:?}, s = {s:?}")));
    }
    let sphere = matches!(family, LeafFamily::SphereMeridian { .. });
    if sphere != (chart.kind == crate::mesh::ChartKind::SpherePolar) {
        return Err(TubeError::Unsupported(family.name()));
    }
    let (frame, a) = match family {
        LeafFamily::SphereMeridian { axis, zero } => {
            if !(t[0] > 0.0 && t[1] < PI) {
                return Err(TubeError::BadBand(format!("meridian range {t:?} must lie in (0, π)")));
            }
            if sl >= 2.0 * PI {
                return Err(TubeError::BadBand("transversal wraps the axis".into()));
            }
            let n = norm(axis);
            if !(n > 0.0) {
                return Err(TubeError::BadBand("zero axis".into()));
            }
            let e3 = axis.map(|c| c / n);
            let z = dot(zero, e3);
            let e1 = [zero[0] - z * e3[0], zero[1] - z * e3[1], zero[2] - z * e3[2]];
            let n1 = norm(e1);
            if !(n1 > 1e-9) {
                return Err(TubeError::BadBand("zero direction parallel to axis".into()));
            }
            let e1 = e1.map(|c| c / n1);
            let e2 = cross(e3, e1);
            // J = sin t / sin t_mid, minimized at an end since sin is concave
            let a = t[0].sin().min(t[1].sin()) / (0.5 * (t[0] + t[1])).sin();
            (Some([e1, e2, e3]), a)
        }
        LeafFamily::TorusRLine | LeafFamily::TorusThetaCircle => {
            if tl > PI || sl >= 2.0 * PI {
                return Err(TubeError::BadBand(format!("leaf length {tl} exceeds half a period")));
            }
            (None, 1.0)
        }
    };
    let mut widths = chart.u.widths.clone();
    widths.sort_by(f64::total_cmp);
    let spacing = widths[widths.len() / 2];
    let across = sl * match family {
        LeafFamily::SphereMeridian { .. } => (0.5 * (t[0] + t[1])).sin(),
        _ => 1.0,
    };
    let mut count = ((across / spacing).ceil() as usize + 1).clamp(3, 401);
    if count % 2 == 0 {
        count += 1;
    }
    let leaves = (0..count)
        .map(|i| s[0] + sl * (i as f64 + 0.5) / count as f64)
        .collect();
    Ok(TubeSpec {
        family,
        t,
        s,
        leaves,
        a,
        h0: 1.0,
        frame,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafRow {
    pub id: usize,
    pub s: f64,
    pub l0: f64,
    pub lj: f64,
    pub excess: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TubeReport {
    pub vol0: f64,
    pub volj: f64,
    /// `Vol_j(T) − Vol_0(T)`, integrated as one difference.
    pub volume_gap: f64,
    /// `∫_N (L_j − L_0) dμ_N`.
    pub length_gap: f64,
    pub a: f64,
    pub h0: f64,
    /// `A·h_0·∫_N (L_j − L_0) dμ_N`.
    pub rhs: f64,
    /// `volume_gap − rhs`; the chain asserts this is ≥ `−slack`.
    pub residual: f64,
    pub slack: f64,
    pub chain_holds: bool,
    /// `length_gap / μ(N)`.
    pub mean_excess: f64,
    pub max_leaf_excess: f64,
    pub leaf_order_violations: usize,
    pub leaves: Vec<LeafRow>,
}

const PANELS: usize = 48;
const TOL: f64 = 1e-9;

/// Domination on a grid over the tube in `(t, s)` coordinates.
fn check_tube_domination(
    g_j: &MetricField,
    g_0: &MetricField,
    tube: &TubeSpec,
) -> Result<(), TubeError> {
    let n = 97;
    let worst = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let t = tube.t[0] + (tube.t[1] - tube.t[0]) * (k / n) as f64 / (n - 1) as f64;
            let s = tube.s[0] + (tube.s[1] - tube.s[0]) * (k % n) as f64 / (n - 1) as f64;
            let gj = tube.tensor(g_j, t, s).ok_or(TubeError::Unsupported(tube.family.name()))?;
            let g0 = tube.tensor(g_0, t, s).ok_or(TubeError::Unsupported(tube.family.name()))?;
            Ok((g0.relative_eigs(&gj).0, t, s))
        })
        .collect::<Result<Vec<_>, TubeError>>()?
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    if worst.0 < 1.0 - 1e-12 {
        return Err(TubeError::NotDominated {
            lambda_min: worst.0,
            t: worst.1,
            s: worst.2,
        });
    }
    Ok(())
}

fn speed(m: &Sym2) -> f64 {
    m.xx.max(0.0).sqrt()
}

fn leaf_length(g: &MetricField, tube: &TubeSpec, s: f64) -> Quad {
    adaptive(
        |t| (speed(&tube.tensor(g, t, s).unwrap()), 0.0),
        tube.t[0],
        tube.t[1],
        PANELS,
        TOL,
    )
}

fn leaf_excess(g_j: &MetricField, g_0: &MetricField, tube: &TubeSpec, s: f64) -> Quad {
    adaptive(
        |t| {
            let a = speed(&tube.tensor(g_j, t, s).unwrap());
            let b = speed(&tube.tensor(g_0, t, s).unwrap());
            (a - b, 0.0)
        },
        tube.t[0],
        tube.t[1],
        PANELS,
        TOL,
    )
}

fn density_gap(g_j: &MetricField, g_0: &MetricField, tube: &TubeSpec, t: f64, s: f64) -> f64 {
    let a = tube.tensor(g_j, t, s).unwrap().det().max(0.0).sqrt();
    let b = tube.tensor(g_0, t, s).unwrap().det().max(0.0).sqrt();
    a - b
}

fn double<F: Fn(f64, f64) -> f64 + Sync>(tube: &TubeSpec, f: F) -> Quad {
    adaptive(
        |s| {
            let q = adaptive(|t| (f(t, s), 0.0), tube.t[0], tube.t[1], PANELS, TOL);
            (q.value, q.error)
        },
        tube.s[0],
        tube.s[1],
        PANELS,
        TOL,
    )
}

/// Verify `Vol_j(T) − Vol_0(T) ≥ A·h_0·∫_N (L_j − L_0) dμ_N` up to the
/// quadrature error, and tabulate the leaves.
pub fn tube_check(g_j: &MetricField, g_0: &MetricField, tube: &TubeSpec) -> Result<TubeReport, TubeError> {
    check_tube_domination(g_j, g_0, tube)?;
    let vol0 = double(tube, |t, s| tube.tensor(g_0, t, s).unwrap().det().max(0.0).sqrt());
    let volj = double(tube, |t, s| tube.tensor(g_j, t, s).unwrap().det().max(0.0).sqrt());
    let gap = double(tube, |t, s| density_gap(g_j, g_0, tube, t, s));
    let mu = tube.mu_n_density();
    let lg = adaptive(
        |s| {
            let q = leaf_excess(g_j, g_0, tube, s);
            (mu * q.value, mu * q.error)
        },
        tube.s[0],
        tube.s[1],
        PANELS,
        TOL,
    );
    let rows: Vec<LeafRow> = tube
        .leaves
        .par_iter()
        .enumerate()
        .map(|(id, &s)| {
            let l0 = leaf_length(g_0, tube, s).value;
            let lj = leaf_length(g_j, tube, s).value;
            LeafRow {
                id,
                s,
                l0,
                lj,
                excess: leaf_excess(g_j, g_0, tube, s).value,
            }
        })
        .collect();
    let rhs = tube.a * tube.h0 * lg.value;
    let residual = gap.value - rhs;
    let slack = gap.error + tube.a * tube.h0 * lg.error + 1e-12 * (1.0 + vol0.value);
    let leaf_slack = 1e-9 * (1.0 + tube.t[1] - tube.t[0]);
    Ok(TubeReport {
        vol0: vol0.value,
        volj: volj.value,
        volume_gap: gap.value,
        length_gap: lg.value,
        a: tube.a,
        h0: tube.h0,
        rhs,
        residual,
        slack,
        chain_holds: residual >= -slack,
        mean_excess: lg.value / tube.transversal_measure(),
        max_leaf_excess: rows.iter().fold(0.0, |m, r| m.max(r.excess)),
        leaf_order_violations: rows.iter().filter(|r| r.lj < r.l0 - leaf_slack).count(),
        leaves: rows,
    })
}

/// Graph distances between snapped leaf endpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafDistances {
    pub id: usize,
    pub l0: f64,
    pub lj: f64,
    pub d0: f64,
    pub dj: f64,
    /// `g_0` length of the endpoint snapping (both ends).
    pub snap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafOrdering {
    pub rows: Vec<LeafDistances>,
    /// `d_j < d_0 − 1e−12`.
    pub dj_below_d0: usize,
    /// `|d_0 − L_0| > τ·L_0 + snap`.
    pub d0_off_leaf: usize,
}

/// Check `d_j ≥ d_0 ≈ L_0` on the graph for the tabulated leaves.
pub fn leaf_ordering(inst: &Instance, tube: &TubeSpec, report: &TubeReport, tau: &TauMesh) -> LeafOrdering {
    let rows: Vec<LeafDistances> = report
        .leaves
        .par_iter()
        .map(|row| {
            let p = tube.chart_point(tube.t[0], row.s);
            let q = tube.chart_point(tube.t[1], row.s);
            let (a, b) = (inst.chart.nearest_node(p), inst.chart.nearest_node(q));
            let snap = snap_length(&inst.g0, tube, &inst.chart, row.s, a, b);
            LeafDistances {
                id: row.id,
                l0: row.l0,
                lj: row.lj,
                d0: dijkstra(&inst.wg0, a)[b],
                dj: dijkstra(&inst.wgj, a)[b],
                snap,
            }
        })
        .collect();
    LeafOrdering {
        dj_below_d0: rows.iter().filter(|r| r.dj < r.d0 - 1e-12).count(),
        d0_off_leaf: rows
            .iter()
            .filter(|r| (r.d0 - r.l0).abs() > tau.tau * r.l0 + r.snap)
            .count(),
        rows,
    }
}

fn snap_length(g0: &MetricField, tube: &TubeSpec, chart: &ParamChart, s: f64, a: usize, b: usize) -> f64 {
    let seg = |p: [f64; 2], node: usize| {
        let n = node_point(chart, node);
        match tube.family {
            LeafFamily::SphereMeridian { .. } => {
                crate::geodesy::great_circle(p, n) * g0.eval([PI / 2.0, 0.0]).xx.sqrt()
            }
            _ => {
                let d = [wrap(n[0] - p[0]), wrap(n[1] - p[1])];
                g0.eval(p).quad(d).sqrt()
            }
        }
    };
    seg(tube.chart_point(tube.t[0], s), a) + seg(tube.chart_point(tube.t[1], s), b)
}

fn node_point(chart: &ParamChart, node: usize) -> [f64; 2] {
    use crate::mesh::NodeLoc;
    match chart.locate(node) {
        NodeLoc::Grid(i, k) => [chart.u.coords[i], chart.v.coords[k]],
        NodeLoc::NorthPole => [0.0, 0.0],
        NodeLoc::SouthPole => [PI, 0.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{Discretization, FamilyKind, FamilySpec};
    use crate::mesh::{build_chart, ChartKind};
    use crate::metrics::{IlmanenWells, WarpProfile};

    fn sphere() -> ParamChart {
        build_chart(ChartKind::SpherePolar, (32, 64), &[]).unwrap()
    }

    fn torus() -> ParamChart {
        build_chart(ChartKind::TorusSquare, (32, 32), &[]).unwrap()
    }

    #[test]
    fn closed_form_constants() {
        let t = build_symmetric_tube(&torus(), LeafFamily::TorusRLine, [-1.0, 1.0], [0.0, 0.5]).unwrap();
        assert_eq!((t.a, t.h0), (1.0, 1.0));
        let t = build_symmetric_tube(
            &sphere(),
            LeafFamily::standard_meridians(),
            [0.3, PI - 0.3],
            [0.0, 0.2],
        )
        .unwrap();
        assert!((t.a - 0.3f64.sin()).abs() < 1e-12);
        assert!(t.leaves.len() % 2 == 1);
    }

    #[test]
    fn rejects_bad_bands() {
        let c = torus();
        assert!(matches!(
            build_symmetric_tube(&c, LeafFamily::TorusRLine, [0.0, 1.0], [0.2, 0.2]),
            Err(TubeError::EmptyBand(_))
        ));
        assert!(matches!(
            build_symmetric_tube(&c, LeafFamily::TorusRLine, [0.0, 4.0], [0.0, 1.0]),
            Err(TubeError::BadBand(_))
        ));
        assert!(matches!(
            build_symmetric_tube(&c, LeafFamily::standard_meridians(), [0.1, 1.0], [0.0, 1.0]),
            Err(TubeError::Unsupported(_))
        ));
        assert!(build_symmetric_tube(&sphere(), LeafFamily::standard_meridians(), [0.0, 1.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn identical_metrics_give_equality() {
        let g = MetricField::RoundSphere { radius: 1.0 };
        let tube = build_symmetric_tube(&sphere(), LeafFamily::through_north_pole(), [0.6, 2.5], [-0.3, 0.3]).unwrap();
        let r = tube_check(&g, &g, &tube).unwrap();
        assert_eq!(r.volume_gap, 0.0);
        assert_eq!(r.length_gap, 0.0);
        assert!(r.chain_holds);
        // area of the lune piece: 0.6 · (cos 0.6 − cos 2.5)
        assert!((r.vol0 - 0.6 * (0.6f64.cos() - 2.5f64.cos())).abs() < 1e-9);
        for l in &r.leaves {
            assert!((l.l0 - 1.9).abs() < 1e-10);
        }
    }

    #[test]
    fn tip_leaf_carries_twice_the_depth() {
        let wells = IlmanenWells::standard(2, 1.0).unwrap();
        let gj = MetricField::IlmanenWells(wells);
        let g0 = MetricField::RoundSphere { radius: 1.0 };
        let tube = build_symmetric_tube(&sphere(), LeafFamily::through_north_pole(), [0.5, PI - 0.5], [-0.3, 0.3]).unwrap();
        let r = tube_check(&gj, &g0, &tube).unwrap();
        let mid = &r.leaves[r.leaves.len() / 2];
        assert!(mid.s.abs() < 1e-12);
        assert!((mid.excess - 2.0).abs() < 1e-6, "{}", mid.excess);
        assert!(r.chain_holds, "{r:?}");
        assert!(r.residual >= 0.0);
        assert_eq!(r.leaf_order_violations, 0);
        assert!(r.mean_excess < mid.excess);
    }

    #[test]
    fn warped_torus_circles() {
        let g0 = MetricField::WarpedTorus { warp: WarpProfile::Constant { value: 5.0 } };
        let gj = MetricField::WarpedTorus {
            warp: WarpProfile::DyadicCinches { j: 1, h0: 1.5, scale: 5.0 },
        };
        let tube = build_symmetric_tube(&torus(), LeafFamily::TorusThetaCircle, [-1.5, 1.5], [-0.5, 0.5]).unwrap();
        let r = tube_check(&gj, &g0, &tube).unwrap();
        assert!(r.chain_holds && r.length_gap > 0.0);
        // θ-circles: volume gap equals the length gap exactly (A = h₀ = 1)
        assert!((r.volume_gap - r.length_gap).abs() < 1e-7);
        let lines = build_symmetric_tube(&torus(), LeafFamily::TorusRLine, [-1.0, 1.0], [0.0, 0.5]).unwrap();
        let r = tube_check(&gj, &g0, &lines).unwrap();
        assert!(r.max_leaf_excess.abs() < 1e-12);
        assert!(r.volume_gap > 0.0 && r.chain_holds);
    }

    #[test]
    fn refuses_without_domination() {
        let spec = FamilySpec::new(FamilyKind::CinchedSphere, 2);
        let gj = spec.metric().unwrap();
        let g0 = spec.reference();
        let tube = build_symmetric_tube(&sphere(), LeafFamily::standard_meridians(), [0.5, 2.6], [0.0, 1.0]).unwrap();
        assert!(matches!(tube_check(&gj, &g0, &tube), Err(TubeError::NotDominated { .. })));
    }

    #[test]
    fn graph_ordering_on_wells() {
        let spec = FamilySpec::ilmanen(2);
        let inst = Instance::build(&spec, Discretization { resolution: 24, ..Default::default() }).unwrap();
        let tube = build_symmetric_tube(&inst.chart, LeafFamily::standard_meridians(), [0.4, 2.7], [0.0, 1.0]).unwrap();
        let r = tube_check(&inst.gj, &inst.g0, &tube).unwrap();
        let tau = crate::geodesy::calibrate_tau_mesh(24, 2).unwrap();
        let o = leaf_ordering(&inst, &tube, &r, &tau);
        assert_eq!(o.dj_below_d0, 0);
        assert_eq!(o.d0_off_leaf, 0, "{:?}", o.rows);
    }
}
