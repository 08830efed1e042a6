//! Riemannian metric tensor fields on the parameter charts and pointwise
//! comparison of two fields.
//!
//! Sphere families are defined through a symmetric bilinear form on the
//! ambient tangent space of the unit sphere in R³ and pulled back through the
//! polar chart, which keeps them well defined at the poles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{ChartKind, NodeLoc, ParamChart};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("tensor at node {node} is not positive definite (xx={xx}, xy={xy}, yy={yy})")]
    NotPositiveDefinite { node: usize, xx: f64, xy: f64, yy: f64 },
    #[error("metric families live on different charts")]
    ChartMismatch,
    #[error("grid tensor expects {expected} values, got {got}")]
    GridSize { expected: usize, got: usize },
    #[error("malformed tensor data: {0}")]
    Parse(String),
    #[error("invalid parameter: {0}")]
    Param(String),
}

/// Symmetric 2×2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::new(a, 0.0, b)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn quad(&self, v: [f64; 2]) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.yy.is_finite()
    }

    /// Eigenvalues of `self⁻¹·b`, i.e. the roots of `det(b − λ·self) = 0`, ascending.
    pub fn relative_eigs(&self, b: &Sym2) -> (f64, f64) {
        // reduce to the symmetric matrix L⁻¹ b L⁻ᵀ with self = L Lᵀ; its
        // discriminant is a sum of squares, so equal inputs give exactly 1
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        let i11 = 1.0 / l11;
        let i21 = -l21 / (l11 * l22);
        let i22 = 1.0 / l22;
        let m11 = i11 * i11 * b.xx;
        let m12 = i11 * (i21 * b.xx + i22 * b.xy);
        let m22 = i21 * i21 * b.xx + 2.0 * i21 * i22 * b.xy + i22 * i22 * b.yy;
        let mid = 0.5 * (m11 + m22);
        let rad = (0.5 * (m11 - m22)).hypot(m12);
        (mid - rad, mid + rad)
    }
}

/// Smooth cinch `ĥ(x) = h0 + (1 − h0)(3t² − 2t³)`, `t = min(|x|, 1)`.
///
/// `ĥ(0) = h0`, `ĥ(±1) = 1`, `ĥ'(0) = ĥ'(±1) = 0`, so the glued profile is C¹.
pub fn cinch(h0: f64, x: f64) -> f64 {
    let t = x.abs().min(1.0);
    h0 + (1.0 - h0) * t * t * (3.0 - 2.0 * t)
}

/// Conformal factor profile of a rotationally symmetric sphere metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RadialProfile {
    Constant { value: f64 },
    /// Cinch of half-width `1/j` centered on the equator.
    EquatorialCinch { j: u32, h0: f64 },
}

impl RadialProfile {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Constant { value } => value,
            RadialProfile::EquatorialCinch { j, h0 } => {
                let x = j as f64 * (r - 0.5 * PI);
                if x.abs() >= 1.0 {
                    1.0
                } else {
                    cinch(h0, x)
                }
            }
        }
    }
}

/// Warping function of `dr² + f(r)² dθ²` on the square torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WarpProfile {
    Constant { value: f64 },
    /// `scale · ĥ((r − s_i)/δ)` near the `2^j − 1` dyadic points
    /// `s_i = −π + 2πi/2^j`, `δ = 4^{−j}`, and `scale` elsewhere.
    DyadicCinches { j: u32, h0: f64, scale: f64 },
}

impl WarpProfile {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            WarpProfile::Constant { value } => value,
            WarpProfile::DyadicCinches { j, h0, scale } => {
                let r = -PI + (r + PI).rem_euclid(2.0 * PI);
                let m = 1u64 << j;
                let step = 2.0 * PI / m as f64;
                let i = ((r + PI) / step).round().clamp(1.0, (m - 1) as f64);
                let s = -PI + step * i;
                let delta = 0.25f64.powi(j as i32);
                let x = (r - s) / delta;
                if x.abs() >= 1.0 {
                    scale
                } else {
                    scale * cinch(h0, x)
                }
            }
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        match *self {
            WarpProfile::Constant { .. } => vec![],
            WarpProfile::DyadicCinches { j, .. } => {
                let m = 1u64 << j;
                (1..m)
                    .map(|i| -PI + 2.0 * PI * i as f64 / m as f64)
                    .collect()
            }
        }
    }
}

/// Spherical metric with radial wells: `g0 + (a(s)² − 1) ds ⊗ ds` near each
/// center, where `s` is the round distance to the center and
/// `a(s) = 1 + c(1 − (s/ρ)²)²` for `s < ρ`. With `c = 15·depth/(8ρ)`
/// every radial segment across a well is longer by exactly `depth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlmanenWells {
    pub j: u32,
    pub rho: f64,
    pub depth: f64,
    /// Centers in chart coordinates `(r, θ)`.
    pub centers: Vec<[f64; 2]>,
}

impl IlmanenWells {
    /// Standard layout: `ρ = j⁻²`, wells at the north pole (j = 1), both poles
    /// (j = 2), plus `j − 2` interior centers on a π/16 × π/8 lattice for j ≥ 3.
    pub fn standard(j: u32, depth: f64) -> Result<Self, MetricError> {
        if j == 0 {
            return Err(MetricError::Param("well index j must be ≥ 1".into()));
        }
        if !(depth >= 0.0) {
            return Err(MetricError::Param("well depth must be ≥ 0".into()));
        }
        let rho = 1.0 / (j as f64 * j as f64);
        let mut centers = vec![[0.0, 0.0]];
        if j >= 2 {
            centers.push([PI, 0.0]);
        }
        if j >= 3 {
            let m = (j - 2) as f64;
            for i in 1..=(j - 2) {
                let r = PI / 16.0 * (16.0 * i as f64 / (j - 1) as f64).round();
                let th = PI / 8.0 * (16.0 * (i - 1) as f64 / m).round();
                centers.push([r, th]);
            }
        }
        Ok(Self {
            j,
            rho,
            depth,
            centers,
        })
    }

    pub fn amplitude(&self) -> f64 {
        15.0 * self.depth / (8.0 * self.rho)
    }

    pub fn radial_factor(&self, s: f64) -> f64 {
        if s >= self.rho {
            1.0
        } else {
            let t = 1.0 - (s / self.rho).powi(2);
            1.0 + self.amplitude() * t * t
        }
    }

    pub fn center_points(&self) -> Vec<[f64; 3]> {
        self.centers.iter().map(|c| embed(*c)).collect()
    }

    /// Well containing `x`: `(a(s), center, sin s)`.
    fn well_at(&self, x: [f64; 3]) -> Option<(f64, [f64; 3], f64)> {
        for c in &self.centers {
            let q = embed(*c);
            let sin_s = norm(cross(x, q));
            let s = sin_s.atan2(dot(x, q));
            if s < self.rho {
                return Some((self.radial_factor(s), q, sin_s));
            }
        }
        None
    }

    /// `B(u, w)` given the round value `base = u·w`.
    fn apply(&self, x: [f64; 3], u: [f64; 3], w: [f64; 3], base: f64) -> f64 {
        match self.well_at(x) {
            None => base,
            // at the center the well is isotropic
            Some((a, _, sin_s)) if sin_s < 1e-12 => a * a * base,
            Some((a, q, sin_s)) => {
                let dsu = -dot(q, u) / sin_s;
                let dsw = -dot(q, w) / sin_s;
                base + (a * a - 1.0) * dsu * dsw
            }
        }
    }

    fn form(&self, x: [f64; 3], u: [f64; 3], w: [f64; 3]) -> f64 {
        self.apply(x, u, w, dot(u, w))
    }

    /// Chart tensor; away from the wells it is bitwise the round tensor.
    fn chart_tensor(&self, p: [f64; 2]) -> Sym2 {
        let s = p[0].sin();
        let round = Sym2::diag(1.0, s * s);
        let (x, er, et) = frame(p);
        if self.well_at(x).is_none() {
            return round;
        }
        Sym2::new(
            self.apply(x, er, er, round.xx),
            self.apply(x, er, et, 0.0),
            self.apply(x, et, et, round.yy),
        )
    }
}

/// Bilinear interpolation of per-vertex tensors on a periodic rectilinear grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTensor {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub period: [f64; 2],
    pub values: Vec<Sym2>,
}

impl GridTensor {
    /// One tensor per chart node of a torus chart, in node order.
    pub fn from_chart(chart: &ParamChart, values: Vec<Sym2>) -> Result<Self, MetricError> {
        if chart.kind != ChartKind::TorusSquare {
            return Err(MetricError::Param(
                "grid tensors are supported on torus charts".into(),
            ));
        }
        if values.len() != chart.node_count() {
            return Err(MetricError::GridSize {
                expected: chart.node_count(),
                got: values.len(),
            });
        }
        for (node, t) in values.iter().enumerate() {
            if !t.is_spd() {
                return Err(MetricError::NotPositiveDefinite {
                    node,
                    xx: t.xx,
                    xy: t.xy,
                    yy: t.yy,
                });
            }
        }
        Ok(Self {
            u: chart.u.coords.clone(),
            v: chart.v.coords.clone(),
            period: [chart.u.period(), chart.v.period()],
            values,
        })
    }

    /// Parse `node,xx,xy,yy` lines (a header line and `#` comments are skipped).
    pub fn from_csv(chart: &ParamChart, text: &str) -> Result<Self, MetricError> {
        let mut values = vec![None; chart.node_count()];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("node") {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(MetricError::Parse(format!("line {}: expected 4 fields", ln + 1)));
            }
            let node: usize = f[0]
                .parse()
                .map_err(|_| MetricError::Parse(format!("line {}: bad node index", ln + 1)))?;
            let nums: Result<Vec<f64>, _> = f[1..].iter().map(|s| s.parse::<f64>()).collect();
            let nums = nums.map_err(|_| MetricError::Parse(format!("line {}: bad number", ln + 1)))?;
            if node >= values.len() {
                return Err(MetricError::Parse(format!("line {}: node out of range", ln + 1)));
            }
            values[node] = Some(Sym2::new(nums[0], nums[1], nums[2]));
        }
        let got = values.iter().filter(|v| v.is_some()).count();
        if got != values.len() {
            return Err(MetricError::GridSize {
                expected: values.len(),
                got,
            });
        }
        Self::from_chart(chart, values.into_iter().map(Option::unwrap).collect())
    }

    fn bracket(coords: &[f64], period: f64, x: f64) -> (usize, usize, f64) {
        let n = coords.len();
        let lo = coords[0];
        let x = lo + (x - lo).rem_euclid(period);
        let idx = coords.partition_point(|&c| c <= x);
        let i0 = if idx == 0 { n - 1 } else { idx - 1 };
        let i1 = (i0 + 1) % n;
        let a = coords[i0];
        let mut b = coords[i1];
        if b <= a {
            b += period;
        }
        let mut xx = x;
        if xx < a {
            xx += period;
        }
        (i0, i1, ((xx - a) / (b - a)).clamp(0.0, 1.0))
    }

    pub fn eval(&self, p: [f64; 2]) -> Sym2 {
        let (i0, i1, s) = Self::bracket(&self.u, self.period[0], p[0]);
        let (k0, k1, t) = Self::bracket(&self.v, self.period[1], p[1]);
        let nv = self.v.len();
        let g = |i: usize, k: usize| self.values[i * nv + k];
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
        let m = [g(i0, k0), g(i1, k0), g(i0, k1), g(i1, k1)];
        // nonnegative weights of SPD corners: the result stays in the SPD cone
        let mut out = Sym2::new(0.0, 0.0, 0.0);
        for (wi, mi) in w.iter().zip(m.iter()) {
            out.xx += wi * mi.xx;
            out.xy += wi * mi.xy;
            out.yy += wi * mi.yy;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MetricField {
    /// Round sphere of the given radius.
    RoundSphere { radius: f64 },
    /// `f(r)² · g_round`.
    ConformalRadial { profile: RadialProfile },
    /// `dr² + f(r)² dθ²` on the square torus.
    WarpedTorus { warp: WarpProfile },
    IlmanenWells(IlmanenWells),
    Constant { tensor: Sym2 },
    Grid(GridTensor),
    /// `factor · base`.
    Scaled { factor: f64, base: Box<MetricField> },
}

pub(crate) fn embed(p: [f64; 2]) -> [f64; 3] {
    let (sr, cr) = p[0].sin_cos();
    let (st, ct) = p[1].sin_cos();
    [sr * ct, sr * st, cr]
}

/// Chart point and its coordinate frame `(∂_r, ∂_θ)` in R³.
pub(crate) fn frame(p: [f64; 2]) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let (sr, cr) = p[0].sin_cos();
    let (st, ct) = p[1].sin_cos();
    (
        [sr * ct, sr * st, cr],
        [cr * ct, cr * st, -sr],
        [-sr * st, sr * ct, 0.0],
    )
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl MetricField {
    pub fn chart_kind(&self) -> Option<ChartKind> {
        match self {
            MetricField::RoundSphere { .. }
            | MetricField::ConformalRadial { .. }
            | MetricField::IlmanenWells(_) => Some(ChartKind::SpherePolar),
            MetricField::WarpedTorus { .. } | MetricField::Grid(_) => Some(ChartKind::TorusSquare),
            MetricField::Constant { .. } => None,
            MetricField::Scaled { base, .. } => base.chart_kind(),
        }
    }

    /// Ambient bilinear form `B_x(u, w)` for sphere families.
    pub fn ambient_form(&self, x: [f64; 3], u: [f64; 3], w: [f64; 3]) -> Option<f64> {
        match self {
            MetricField::RoundSphere { radius } => Some(radius * radius * dot(u, w)),
            MetricField::ConformalRadial { profile } => {
                let r = norm(cross(x, [0.0, 0.0, 1.0])).atan2(x[2]);
                let f = profile.value(r);
                Some(f * f * dot(u, w))
            }
            MetricField::IlmanenWells(wells) => Some(wells.form(x, u, w)),
            MetricField::Scaled { factor, base } => base.ambient_form(x, u, w).map(|v| factor * v),
            _ => None,
        }
    }

    /// Pull-back of the ambient form onto the frame `(e1, e2)` at `x`.
    pub fn ambient_tensor(&self, x: [f64; 3], e1: [f64; 3], e2: [f64; 3]) -> Option<Sym2> {
        Some(Sym2::new(
            self.ambient_form(x, e1, e1)?,
            self.ambient_form(x, e1, e2)?,
            self.ambient_form(x, e2, e2)?,
        ))
    }

    /// Tensor in chart coordinates at a parameter point.
    pub fn eval(&self, p: [f64; 2]) -> Sym2 {
        match self {
            MetricField::RoundSphere { radius } => {
                let s = p[0].sin();
                Sym2::diag(radius * radius, radius * radius * s * s)
            }
            MetricField::ConformalRadial { profile } => {
                let f = profile.value(p[0]);
                let s = p[0].sin();
                Sym2::diag(f * f, f * f * s * s)
            }
            MetricField::IlmanenWells(wells) => wells.chart_tensor(p),
            MetricField::WarpedTorus { warp } => {
                let f = warp.value(p[0]);
                Sym2::diag(1.0, f * f)
            }
            MetricField::Constant { tensor } => *tensor,
            MetricField::Grid(grid) => grid.eval(p),
            MetricField::Scaled { factor, base } => base.eval(p).scale(*factor),
        }
    }

    /// Tensor representing the metric at a chart node in a nondegenerate frame.
    /// Grid nodes use the chart frame; sphere poles use an orthonormal frame of
    /// the tangent plane (or a point just off the pole for fields without an
    /// ambient form). Both fields compared at a node must use the same frame,
    /// which holds since the choice depends only on the node.
    pub fn node_tensor(&self, chart: &ParamChart, node: usize) -> Sym2 {
        match chart.locate(node) {
            NodeLoc::Grid(..) => self.eval(chart.nodes[node]),
            loc => {
                let z = if loc == NodeLoc::NorthPole { 1.0 } else { -1.0 };
                let x = [0.0, 0.0, z];
                self.ambient_tensor(x, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
                    .unwrap_or_else(|| {
                        let r = if z > 0.0 { 1e-4 } else { PI - 1e-4 };
                        let t = self.eval([r, 0.0]);
                        let s = r.sin();
                        Sym2::new(t.xx, t.xy / s, t.yy / (s * s))
                    })
            }
        }
    }

    /// Check that every node tensor is symmetric positive definite.
    pub fn validate(&self, chart: &ParamChart) -> Result<(), MetricError> {
        if let Some(k) = self.chart_kind() {
            if k != chart.kind {
                return Err(MetricError::ChartMismatch);
            }
        }
        for node in 0..chart.node_count() {
            let t = self.node_tensor(chart, node);
            if !t.is_spd() {
                return Err(MetricError::NotPositiveDefinite {
                    node,
                    xx: t.xx,
                    xy: t.xy,
                    yy: t.yy,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorComparison {
    /// `(λ_min, λ_max)` of `g_a⁻¹ g_b` at each node.
    pub eigs: Vec<(f64, f64)>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Local Lipschitz-type constant `√(max λ_max)`.
    pub q: f64,
}

pub fn compare_eigs(
    g_a: &MetricField,
    g_b: &MetricField,
    chart: &ParamChart,
) -> Result<TensorComparison, MetricError> {
    let mut eigs = Vec::with_capacity(chart.node_count());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for node in 0..chart.node_count() {
        let a = g_a.node_tensor(chart, node);
        let b = g_b.node_tensor(chart, node);
        if !a.is_spd() {
            return Err(MetricError::NotPositiveDefinite {
                node,
                xx: a.xx,
                xy: a.xy,
                yy: a.yy,
            });
        }
        let e = a.relative_eigs(&b);
        lo = lo.min(e.0);
        hi = hi.max(e.1);
        eigs.push(e);
    }
    Ok(TensorComparison {
        eigs,
        lambda_min: lo,
        lambda_max: hi,
        q: hi.max(0.0).sqrt(),
    })
}

/// Rounding tolerance applied on top of the caller's slack.
pub const DOMINATION_ROUNDING: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationReport {
    pub dominated: bool,
    pub lambda_min: f64,
    pub worst_node: usize,
    pub worst_point: [f64; 2],
}

/// Does `g_j ≥ g_0` hold at every node, up to `slack`?
pub fn check_dominates(
    g_j: &MetricField,
    g_0: &MetricField,
    chart: &ParamChart,
    slack: f64,
) -> Result<DominationReport, MetricError> {
    let cmp = compare_eigs(g_0, g_j, chart)?;
    let (worst_node, _) = cmp
        .eigs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .unwrap();
    Ok(DominationReport {
        dominated: cmp.lambda_min >= 1.0 - slack - DOMINATION_ROUNDING,
        lambda_min: cmp.lambda_min,
        worst_node,
        worst_point: chart.nodes[worst_node],
    })
}

/// Gauss points and weights (parameter area) over a node's dual cell.
pub fn dual_cell_quadrature(chart: &ParamChart, node: usize) -> Vec<([f64; 2], f64)> {
    let (ur, vr) = chart.dual_rect(node);
    let (nu, nv) = match chart.locate(node) {
        NodeLoc::Grid(..) => (2, 2),
        _ => (2, 8),
    };
    let gu = crate::quadrature::gauss_on(ur[0], ur[1], nu);
    let gv = crate::quadrature::gauss_on(vr[0], vr[1], nv);
    let mut out = Vec::with_capacity(nu * nv);
    for &(u, wu) in &gu {
        for &(v, wv) in &gv {
            out.push(([u, v], wu * wv));
        }
    }
    out
}

/// `(∫ ‖g_b − g_a‖^p dμ_a)^{1/p}` where `‖·‖` is the Frobenius norm of
/// `g_a⁻¹ g_b − I`, i.e. `√Σ(λ_i − 1)²`.
pub fn lp_norm(
    g_b: &MetricField,
    g_a: &MetricField,
    chart: &ParamChart,
    p: f64,
) -> Result<f64, MetricError> {
    if !(p >= 1.0) {
        return Err(MetricError::Param(format!("p must be ≥ 1, got {p}")));
    }
    let mut acc = 0.0;
    for node in 0..chart.node_count() {
        for (pt, w) in dual_cell_quadrature(chart, node) {
            let a = g_a.eval(pt);
            let b = g_b.eval(pt);
            let dens = a.det().max(0.0).sqrt();
            if dens == 0.0 {
                continue;
            }
            let (l1, l2) = a.relative_eigs(&b);
            let n = ((l1 - 1.0).powi(2) + (l2 - 1.0).powi(2)).sqrt();
            acc += n.powf(p) * dens * w;
        }
    }
    Ok(acc.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_chart;
    use proptest::prelude::*;

    #[test]
    fn cinch_endpoints() {
        assert_eq!(cinch(0.5, 0.0), 0.5);
        assert_eq!(cinch(0.5, 1.0), 1.0);
        assert_eq!(cinch(0.5, -1.0), 1.0);
        assert_eq!(cinch(0.2, 3.0), 1.0);
        // derivative vanishes at both ends
        let h = 1e-6;
        assert!(((cinch(0.5, h) - cinch(0.5, 0.0)) / h).abs() < 1e-5);
        assert!(((cinch(0.5, 1.0) - cinch(0.5, 1.0 - h)) / h).abs() < 1e-5);
    }

    #[test]
    fn relative_eigs_diagonal() {
        let a = Sym2::diag(2.0, 4.0);
        let b = Sym2::diag(6.0, 4.0);
        let (lo, hi) = a.relative_eigs(&b);
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
        let (lo, hi) = a.relative_eigs(&a);
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wells_layout() {
        let w = IlmanenWells::standard(1, 1.0).unwrap();
        assert_eq!(w.centers, vec![[0.0, 0.0]]);
        let w = IlmanenWells::standard(2, 1.0).unwrap();
        assert_eq!(w.centers.len(), 2);
        let w = IlmanenWells::standard(8, 1.0).unwrap();
        assert_eq!(w.centers.len(), 8);
        assert!((w.rho - 1.0 / 64.0).abs() < 1e-15);
        // wells are disjoint
        let pts = w.center_points();
        for i in 0..pts.len() {
            for k in i + 1..pts.len() {
                let s = norm(cross(pts[i], pts[k])).atan2(dot(pts[i], pts[k]));
                assert!(s > 2.0 * w.rho, "{i} {k} {s}");
            }
        }
        assert!(IlmanenWells::standard(0, 1.0).is_err());
    }

    #[test]
    fn well_radial_excess_matches_depth() {
        // ∫_0^ρ (a(s) − 1) ds = c·ρ·8/15 = depth
        let w = IlmanenWells::standard(3, 1.0).unwrap();
        let n = 20_000;
        let h = w.rho / n as f64;
        let excess: f64 = (0..n)
            .map(|i| (w.radial_factor((i as f64 + 0.5) * h) - 1.0) * h)
            .sum();
        assert!((excess - 1.0).abs() < 1e-6);
    }

    #[test]
    fn well_metric_dominates_round_and_is_isotropic_at_center() {
        let chart = build_chart(ChartKind::SpherePolar, (32, 64), &[]).unwrap();
        let w = MetricField::IlmanenWells(IlmanenWells::standard(2, 1.0).unwrap());
        let g0 = MetricField::RoundSphere { radius: 1.0 };
        let rep = check_dominates(&w, &g0, &chart, 0.0).unwrap();
        assert!(rep.dominated);
        let np = chart.north_pole().unwrap();
        let t = w.node_tensor(&chart, np);
        let a = IlmanenWells::standard(2, 1.0).unwrap().radial_factor(0.0);
        assert!((t.xx - a * a).abs() < 1e-12 && t.xy.abs() < 1e-12 && (t.yy - a * a).abs() < 1e-12);
    }

    #[test]
    fn conformal_cinch_fails_domination() {
        let chart = build_chart(ChartKind::SpherePolar, (32, 64), &[]).unwrap();
        let g = MetricField::ConformalRadial {
            profile: RadialProfile::EquatorialCinch { j: 2, h0: 0.5 },
        };
        let g0 = MetricField::RoundSphere { radius: 1.0 };
        let rep = check_dominates(&g, &g0, &chart, 0.0).unwrap();
        assert!(!rep.dominated);
        assert!((rep.worst_point[0] - 0.5 * PI).abs() < 0.1);
        assert!((rep.lambda_min - 0.25).abs() < 1e-12);
    }

    #[test]
    fn warp_profile_centers() {
        let w = WarpProfile::DyadicCinches {
            j: 2,
            h0: 0.2,
            scale: 5.0,
        };
        assert_eq!(w.centers().len(), 3);
        assert!((w.value(0.0) - 1.0).abs() < 1e-12);
        assert!((w.value(-PI / 2.0) - 1.0).abs() < 1e-12);
        assert!((w.value(1.0) - 5.0).abs() < 1e-12);
        assert!((w.value(PI - 1e-9) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_metric_eigs() {
        let chart = build_chart(ChartKind::TorusSquare, (16, 16), &[]).unwrap();
        let base = MetricField::Constant {
            tensor: Sym2::new(2.0, 0.3, 1.0),
        };
        let s = MetricField::Scaled {
            factor: 3.0,
            base: Box::new(base.clone()),
        };
        let c = compare_eigs(&base, &s, &chart).unwrap();
        assert!((c.lambda_min - 3.0).abs() < 1e-12 && (c.lambda_max - 3.0).abs() < 1e-12);
        assert!((c.q - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grid_tensor_reproduces_nodes_and_rejects_indefinite() {
        let chart = build_chart(ChartKind::TorusSquare, (8, 8), &[]).unwrap();
        let vals: Vec<Sym2> = chart
            .nodes
            .iter()
            .map(|p| Sym2::new(2.0 + p[0].sin(), 0.1 * p[1].cos(), 1.5))
            .collect();
        let g = GridTensor::from_chart(&chart, vals.clone()).unwrap();
        for (n, p) in chart.nodes.iter().enumerate() {
            let t = g.eval(*p);
            assert!((t.xx - vals[n].xx).abs() < 1e-12);
        }
        let mut bad = vals;
        bad[3] = Sym2::new(1.0, 2.0, 1.0);
        assert!(matches!(
            GridTensor::from_chart(&chart, bad),
            Err(MetricError::NotPositiveDefinite { node: 3, .. })
        ));
    }

    #[test]
    fn grid_tensor_csv_roundtrip() {
        let chart = build_chart(ChartKind::TorusSquare, (8, 8), &[]).unwrap();
        let mut text = String::from("node,xx,xy,yy\n");
        for n in 0..chart.node_count() {
            text.push_str(&format!("{n},1.0,0.0,{}\n", 1.0 + n as f64 * 0.01));
        }
        let g = GridTensor::from_csv(&chart, &text).unwrap();
        assert!((g.values[5].yy - 1.05).abs() < 1e-15);
        assert!(GridTensor::from_csv(&chart, "0,1,0,1\n").is_err());
    }

    #[test]
    fn lp_norm_of_scaling() {
        // g_b = 4 g_a: Frobenius distance √2·3 everywhere
        let chart = build_chart(ChartKind::TorusSquare, (16, 16), &[]).unwrap();
        let a = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let b = MetricField::Scaled {
            factor: 4.0,
            base: Box::new(a.clone()),
        };
        let v = lp_norm(&b, &a, &chart, 2.0).unwrap();
        let want = (18.0 * 4.0 * PI * PI).sqrt();
        assert!((v - want).abs() / want < 1e-12);
        assert!(lp_norm(&b, &a, &chart, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn relative_eigs_ordered_and_reciprocal(
            a in 0.1f64..5.0, c in 0.1f64..5.0, bx in -0.9f64..0.9,
            d in 0.1f64..5.0, f in 0.1f64..5.0, ex in -0.9f64..0.9,
        ) {
            let ga = Sym2::new(a, bx * (a * c).sqrt(), c);
            let gb = Sym2::new(d, ex * (d * f).sqrt(), f);
            let (lo, hi) = ga.relative_eigs(&gb);
            prop_assert!(lo <= hi && lo > 0.0);
            let (ilo, ihi) = gb.relative_eigs(&ga);
            prop_assert!((ilo * hi - 1.0).abs() < 1e-9);
            prop_assert!((ihi * lo - 1.0).abs() < 1e-9);
            // λ_min v·A·v ≤ v·B·v ≤ λ_max v·A·v
            for t in 0..16 {
                let th = t as f64 * PI / 8.0;
                let v = [th.cos(), th.sin()];
                let qa = ga.quad(v);
                let qb = gb.quad(v);
                prop_assert!(qb >= lo * qa * (1.0 - 1e-9));
                prop_assert!(qb <= hi * qa * (1.0 + 1e-9));
            }
        }

        #[test]
        fn self_comparison_is_identity(xx in 0.1f64..10.0, yy in 0.1f64..10.0, r in -0.9f64..0.9) {
            let t = Sym2::new(xx, r * (xx * yy).sqrt(), yy);
            let (lo, hi) = t.relative_eigs(&t);
            prop_assert!((lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
        }
    }
}
