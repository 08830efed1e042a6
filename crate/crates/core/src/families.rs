//! The example metric families, their chart refinement, and ready-to-use
//! instances bundling a chart, graph and both metrics' lengths and volumes.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{edge_lengths, node_volumes, EdgeLengths, GeodesyError, WeightedGraph};
use crate::mesh::{
    build_chart, build_graph, Axis, ChartKind, MeshError, MeshGraph, ParamChart, RefinementBand,
};
use crate::metrics::{IlmanenWells, MetricError, MetricField, RadialProfile, WarpProfile};

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error("invalid family parameter: {0}")]
    Param(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Round sphere with thin deep wells; `g_j ≥ g_0`.
    Ilmanen,
    /// Round sphere conformally pinched along the equator; `g_j ≤ g_0`.
    CinchedSphere,
    /// Warped torus cinched on dyadic circles; `g_j ≤ g_0`.
    FinslerTorus,
    /// Conformal equatorial bump `f_j ≥ 1` supported in a `1/j` band; `g_j ≥ g_0`.
    SphereBulge,
    /// `g_j = g_0` on the round sphere.
    RoundSphere,
    /// `g_j = g_0` on the torus with `dr² + 25 dθ²`.
    FlatTorus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub j: u32,
    /// Well radius override; defaults to `j⁻²`.
    pub rho: Option<f64>,
    /// Well depth `R`.
    pub depth: f64,
    /// Cinch floor; defaults per family.
    pub h0: Option<f64>,
}

/// Refinement factors are powers of two capped here.
pub const MAX_REFINE: u32 = 16;

fn pow2_factor(base: f64, target: f64, cap: u32) -> u32 {
    let mut f = 1u32;
    while base / f as f64 > target && f < cap {
        f *= 2;
    }
    f
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, j: u32) -> Self {
        Self {
            kind,
            j,
            rho: None,
            depth: 1.0,
            h0: None,
        }
    }

    pub fn ilmanen(j: u32) -> Self {
        Self::new(FamilyKind::Ilmanen, j)
    }

    pub fn chart_kind(&self) -> ChartKind {
        match self.kind {
            FamilyKind::FinslerTorus | FamilyKind::FlatTorus => ChartKind::TorusSquare,
            _ => ChartKind::SpherePolar,
        }
    }

    pub fn h0(&self) -> f64 {
        self.h0.unwrap_or(match self.kind {
            FamilyKind::FinslerTorus => 0.2,
            FamilyKind::SphereBulge => 1.5,
            _ => 0.5,
        })
    }

    fn validate(&self) -> Result<(), FamilyError> {
        if self.j == 0 {
            return Err(FamilyError::Param("j must be ≥ 1".into()));
        }
        if self.kind == FamilyKind::FinslerTorus && self.j > 12 {
            return Err(FamilyError::Param("torus cinch level j must be ≤ 12".into()));
        }
        let h0 = self.h0();
        let ok = match self.kind {
            FamilyKind::SphereBulge => h0 >= 1.0,
            FamilyKind::CinchedSphere | FamilyKind::FinslerTorus => h0 > 0.0 && h0 <= 1.0,
            _ => true,
        };
        if !ok || !h0.is_finite() {
            return Err(FamilyError::Param(format!("h0 = {h0} out of range for {:?}", self.kind)));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0 && r < 1.0 + 1e-12) {
                return Err(FamilyError::Param(format!("rho = {r} must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn wells(&self) -> Result<IlmanenWells, FamilyError> {
        let mut w = IlmanenWells::standard(self.j, self.depth)?;
        if let Some(r) = self.rho {
            w.rho = r;
        }
        Ok(w)
    }

    pub fn reference(&self) -> MetricField {
        match self.chart_kind() {
            ChartKind::SpherePolar => MetricField::RoundSphere { radius: 1.0 },
            ChartKind::TorusSquare => MetricField::WarpedTorus {
                warp: WarpProfile::Constant { value: 5.0 },
            },
        }
    }

    pub fn metric(&self) -> Result<MetricField, FamilyError> {
        self.validate()?;
        Ok(match self.kind {
            FamilyKind::Ilmanen => MetricField::IlmanenWells(self.wells()?),
            FamilyKind::CinchedSphere | FamilyKind::SphereBulge => MetricField::ConformalRadial {
                profile: RadialProfile::EquatorialCinch {
                    j: self.j,
                    h0: self.h0(),
                },
            },
            FamilyKind::FinslerTorus => MetricField::WarpedTorus {
                warp: WarpProfile::DyadicCinches {
                    j: self.j,
                    h0: self.h0(),
                    scale: 5.0,
                },
            },
            FamilyKind::RoundSphere | FamilyKind::FlatTorus => self.reference(),
        })
    }

    /// Bands resolving the family's features at the given base resolution.
    pub fn bands(&self, resolution: (usize, usize)) -> Result<Vec<RefinementBand>, FamilyError> {
        self.validate()?;
        let hu = match self.chart_kind() {
            ChartKind::SpherePolar => PI / resolution.0 as f64,
            ChartKind::TorusSquare => 2.0 * PI / resolution.0 as f64,
        };
        let hv = 2.0 * PI / resolution.1 as f64;
        let mut bands = Vec::new();
        match self.kind {
            FamilyKind::Ilmanen => {
                let w = self.wells()?;
                let hw = (1.5 * w.rho).min(0.45 * PI);
                let fu = pow2_factor(hu, w.rho / 4.0, MAX_REFINE);
                for c in &w.centers {
                    if fu >= 2 {
                        bands.push(RefinementBand::new(Axis::U, c[0], hw, fu));
                    }
                    let s = c[0].sin();
                    if s > 1e-9 {
                        let fv = pow2_factor(hv, w.rho / (4.0 * s), MAX_REFINE);
                        let hwv = (hw / s).min(0.45 * PI);
                        if fv >= 2 {
                            bands.push(RefinementBand::new(Axis::V, c[1], hwv, fv));
                        }
                    }
                }
            }
            FamilyKind::CinchedSphere | FamilyKind::SphereBulge => {
                let width = 1.0 / self.j as f64;
                let f = pow2_factor(hu, width / 8.0, MAX_REFINE);
                if f >= 2 {
                    bands.push(RefinementBand::new(Axis::U, 0.5 * PI, width.min(1.5), f));
                }
            }
            FamilyKind::FinslerTorus => {
                let delta = 0.25f64.powi(self.j as i32);
                let f = pow2_factor(hu, delta / 4.0, 4 * MAX_REFINE);
                if f >= 2 {
                    let warp = WarpProfile::DyadicCinches {
                        j: self.j,
                        h0: self.h0(),
                        scale: 5.0,
                    };
                    for c in warp.centers() {
                        bands.push(RefinementBand::new(Axis::U, c, 1.5 * delta, f));
                    }
                }
            }
            FamilyKind::RoundSphere | FamilyKind::FlatTorus => {}
        }
        Ok(bands)
    }

    pub fn chart(&self, resolution: (usize, usize)) -> Result<ParamChart, FamilyError> {
        let bands = self.bands(resolution)?;
        Ok(build_chart(self.chart_kind(), resolution, &bands)?)
    }

    pub fn label(&self) -> String {
        let name = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        format!("{name}-j{}", self.j)
    }
}

/// Graph, both metrics, their edge lengths and node volumes on one chart.
#[derive(Clone)]
pub struct Instance {
    pub spec: FamilySpec,
    pub chart: Arc<ParamChart>,
    pub graph: MeshGraph,
    pub g0: MetricField,
    pub gj: MetricField,
    pub len0: EdgeLengths,
    pub lenj: EdgeLengths,
    pub wg0: WeightedGraph,
    pub wgj: WeightedGraph,
    pub vol0: Vec<f64>,
    pub volj: Vec<f64>,
    /// Factor applied to `g_j` (1 unless rescaled).
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    /// Base cells along `u`; `v` gets twice as many on the sphere.
    pub resolution: usize,
    pub stencil: usize,
    pub quadrature: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            resolution: 48,
            stencil: 2,
            quadrature: 4,
        }
    }
}

impl Discretization {
    pub fn axes(&self, kind: ChartKind) -> (usize, usize) {
        match kind {
            ChartKind::SpherePolar => (self.resolution, 2 * self.resolution),
            ChartKind::TorusSquare => (self.resolution, self.resolution),
        }
    }
}

impl Instance {
    pub fn build(spec: &FamilySpec, disc: Discretization) -> Result<Self, FamilyError> {
        let chart = Arc::new(spec.chart(disc.axes(spec.chart_kind()))?);
        Self::on_chart(spec, chart, disc)
    }

    /// Same as `build` but on a caller-supplied chart.
    pub fn on_chart(
        spec: &FamilySpec,
        chart: Arc<ParamChart>,
        disc: Discretization,
    ) -> Result<Self, FamilyError> {
        let gj = spec.metric()?;
        let g0 = spec.reference();
        let graph = build_graph(chart.clone(), disc.stencil)?;
        let len0 = edge_lengths(&graph, &g0, disc.quadrature)?;
        let lenj = edge_lengths(&graph, &gj, disc.quadrature)?;
        let wg0 = WeightedGraph::from_mesh(&graph, &len0);
        let wgj = WeightedGraph::from_mesh(&graph, &lenj);
        let vol0 = node_volumes(&chart, &g0);
        let volj = node_volumes(&chart, &gj);
        Ok(Self {
            spec: spec.clone(),
            chart,
            graph,
            g0,
            gj,
            len0,
            lenj,
            wg0,
            wgj,
            vol0,
            volj,
            scale: 1.0,
        })
    }

    /// Replace `g_j` with `factor · g_j`; lengths scale by `√factor` and
    /// volumes by `factor` (two-dimensional charts).
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.gj = MetricField::Scaled {
            factor,
            base: Box::new(self.gj.clone()),
        };
        let s = factor.sqrt();
        out.lenj = EdgeLengths {
            values: self.lenj.values.iter().map(|l| l * s).collect(),
            quadrature: self.lenj.quadrature,
            metric_hash: crate::geodesy::metric_hash(&out.gj),
        };
        out.wgj = WeightedGraph::from_mesh(&out.graph, &out.lenj);
        out.volj = self.volj.iter().map(|v| v * factor).collect();
        out.scale = self.scale * factor;
        out
    }

    pub fn vol0_total(&self) -> f64 {
        self.vol0.iter().sum()
    }

    pub fn volj_total(&self) -> f64 {
        self.volj.iter().sum()
    }
}

fn wrapped(d: f64) -> f64 {
    let d = d.abs().rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Limit distance of the cinched torus family,
/// `min{√(s² + 25θ²), s·√24/5 + θ}` with `s = |Δr|`, `θ = |Δθ|` wrapped.
pub fn finsler_limit(p: [f64; 2], q: [f64; 2]) -> f64 {
    let s = wrapped(q[0] - p[0]);
    let t = wrapped(q[1] - p[1]);
    (s * s + 25.0 * t * t).sqrt().min(s * 24f64.sqrt() / 5.0 + t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::check_dominates;

    #[test]
    fn ilmanen_bands_resolve_wells() {
        let spec = FamilySpec::ilmanen(8);
        let chart = spec.chart((48, 96)).unwrap();
        let w = spec.wells().unwrap();
        for c in &w.centers {
            let h = chart.spacing_in(Axis::U, c[0], w.rho);
            assert!(h <= w.rho / 3.5, "{h}");
        }
        assert!(chart.node_count() > 48 * 96);
    }

    #[test]
    fn torus_bands_for_j3() {
        let spec = FamilySpec::new(FamilyKind::FinslerTorus, 3);
        let bands = spec.bands((64, 64)).unwrap();
        assert_eq!(bands.len(), 7);
        let a = spec.chart((64, 64)).unwrap();
        let b = spec.chart((64, 64)).unwrap();
        assert_eq!(a.node_count(), b.node_count());
        assert!(a.node_count() > 64 * 64);
    }

    #[test]
    fn domination_directions() {
        let disc = (32, 64);
        for j in [1, 2, 4] {
            let s = FamilySpec::ilmanen(j);
            let c = s.chart(disc).unwrap();
            assert!(check_dominates(&s.metric().unwrap(), &s.reference(), &c, 0.0)
                .unwrap()
                .dominated);
            let b = FamilySpec::new(FamilyKind::SphereBulge, j);
            let c = b.chart(disc).unwrap();
            assert!(check_dominates(&b.metric().unwrap(), &b.reference(), &c, 0.0)
                .unwrap()
                .dominated);
            let cs = FamilySpec::new(FamilyKind::CinchedSphere, j);
            let c = cs.chart(disc).unwrap();
            let gj = cs.metric().unwrap();
            assert!(check_dominates(&cs.reference(), &gj, &c, 0.0).unwrap().dominated);
            assert!(!check_dominates(&gj, &cs.reference(), &c, 0.0).unwrap().dominated);
            let t = FamilySpec::new(FamilyKind::FinslerTorus, j);
            let c = t.chart((32, 32)).unwrap();
            let gj = t.metric().unwrap();
            assert!(check_dominates(&t.reference(), &gj, &c, 0.0).unwrap().dominated);
            assert!(!check_dominates(&gj, &t.reference(), &c, 0.0).unwrap().dominated);
        }
    }

    #[test]
    fn rescaling_matches_direct_computation() {
        let spec = FamilySpec::ilmanen(2);
        let inst = Instance::build(
            &spec,
            Discretization {
                resolution: 16,
                stencil: 1,
                quadrature: 2,
            },
        )
        .unwrap();
        let r = inst.rescaled(1.5);
        let direct = edge_lengths(&inst.graph, &r.gj, 2).unwrap();
        for (a, b) in direct.values.iter().zip(&r.lenj.values) {
            assert!((a - b).abs() <= 1e-12 * a);
        }
        let v = node_volumes(&inst.chart, &r.gj);
        for (a, b) in v.iter().zip(&r.volj) {
            assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FamilySpec::ilmanen(0).metric().is_err());
        let mut s = FamilySpec::new(FamilyKind::SphereBulge, 2);
        s.h0 = Some(0.5);
        assert!(s.metric().is_err());
        let mut s = FamilySpec::ilmanen(2);
        s.rho = Some(-1.0);
        assert!(s.metric().is_err());
    }

    #[test]
    fn finsler_limit_values() {
        assert!((finsler_limit([0.0, 0.0], [PI, 0.0]) - PI * 24f64.sqrt() / 5.0).abs() < 1e-12);
        assert!((finsler_limit([0.0, 0.0], [0.0, PI]) - PI).abs() < 1e-12);
        assert!((finsler_limit([0.0, 0.0], [0.0, -PI]) - PI).abs() < 1e-12);
        assert!((wrapped(1.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert_eq!(finsler_limit([1.0, 2.0], [1.0, 2.0]), 0.0);
    }
}
