//! Explicit intrinsic flat distance upper bounds and the end-to-end pipeline
//! that produces them from a pair of metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{self, Cache, CacheError};
use crate::families::Instance;
use crate::geodesy::{calibrate_tau_mesh, DistanceMatrix, GeodesyError};
use crate::goodset::{
    epsilon_from_lambda, pair_gaps, sample_pairs, select_good_set, GoodSetError, GoodSetInputs,
    GoodSetSelection, LemmaReport, PairGaps, PairSample, Sampling,
};
use crate::metrics::{check_dominates, DominationReport, MetricError};

#[derive(Debug, Error)]
pub enum FlatBoundError {
    #[error("negative or non-finite input: {0}")]
    BadInput(String),
    #[error("g_j does not dominate g_0: min relative eigenvalue {lambda_min:.6} at (r, θ) = ({:.4}, {:.4})", point[0], point[1])]
    NotDominated { lambda_min: f64, point: [f64; 2] },
    #[error("parameters infeasible: κ = {kappa}, λ' = {lambda_prime} give κε = {kappa_epsilon:.4} ≥ 1/2")]
    Infeasible {
        kappa: f64,
        lambda_prime: f64,
        kappa_epsilon: f64,
    },
    #[error("no feasible (κ, λ') in the grid")]
    AllInfeasible,
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("no biLipschitz certificate available")]
    NoCertificate,
    #[error(transparent)]
    GoodSet(#[from] GoodSetError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Z(#[from] crate::zspace::ZError),
}

fn nonneg(name: &str, x: f64) -> Result<(), FlatBoundError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(FlatBoundError::BadInput(format!("{name} = {x}")))
    }
}

/// Smallest admissible slab height `√(2δD + δ²)`.
pub fn h_min(delta: f64, diameter: f64) -> Result<f64, FlatBoundError> {
    nonneg("δ", delta)?;
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(FlatBoundError::BadInput(format!("D = {diameter}")));
    }
    Ok((2.0 * delta * diameter + delta * delta).sqrt())
}

/// `2V_j + hV`.
pub fn bound_basic(v_j: f64, h: f64, v: f64) -> Result<f64, FlatBoundError> {
    nonneg("V_j", v_j)?;
    nonneg("h", h)?;
    nonneg("V", v)?;
    Ok(2.0 * v_j + h * v)
}

/// Slab height used by the pipeline: `h_min(λ' + δ, D)`.
pub fn pipeline_h(lambda_prime: f64, delta: f64, diameter: f64) -> Result<f64, FlatBoundError> {
    h_min(lambda_prime + delta, diameter)
}

/// `(2/κ)Vol_0 + 2|Vol_j − Vol_0| + hV`.
pub fn pipeline_value(kappa: f64, vol0: f64, volj: f64, h: f64, v: f64) -> f64 {
    2.0 / kappa * vol0 + 2.0 * (volj - vol0).abs() + h * v
}

/// `2^{(n+1)/2} λ^{n+1} · 2ε · Vol_0`.
pub fn hls_bound(epsilon: f64, lambda: f64, vol0: f64, n: u32) -> Result<f64, FlatBoundError> {
    nonneg("ε", epsilon)?;
    nonneg("Vol_0", vol0)?;
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(FlatBoundError::BadInput(format!("λ = {lambda} must be ≥ 1")));
    }
    let e = n as f64 + 1.0;
    Ok(2f64.powf(e / 2.0) * lambda.powf(e) * 2.0 * epsilon * vol0)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BiLipschitz {
    /// `max(d_j/d_0, d_0/d_j)` over sampled pairs.
    pub lambda: f64,
    /// `sup |d_j − d_0|` over sampled pairs.
    pub epsilon_uniform: f64,
    pub pairs: usize,
}

pub fn bilipschitz_certificate(gaps: &PairGaps) -> Option<BiLipschitz> {
    let k = gaps.k;
    let mut lam: f64 = 1.0;
    let mut eps: f64 = 0.0;
    let mut pairs = 0;
    for a in 0..k {
        for b in a + 1..k {
            let d0 = gaps.d0[a * k + b];
            let dj = gaps.dj[a * k + b];
            if d0 <= 0.0 || dj <= 0.0 {
                continue;
            }
            lam = lam.max(dj / d0).max(d0 / dj);
            eps = eps.max(gaps.get(a, b));
            pairs += 1;
        }
    }
    (pairs > 0).then_some(BiLipschitz {
        lambda: lam,
        epsilon_uniform: eps,
        pairs,
    })
}

pub fn hls_from_certificate(
    cert: Option<&BiLipschitz>,
    vol0: f64,
    n: u32,
) -> Result<f64, FlatBoundError> {
    let c = cert.ok_or(FlatBoundError::NoCertificate)?;
    hls_bound(c.epsilon_uniform, c.lambda, vol0, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Basic,
    Pipeline,
    Hls,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatBoundReport {
    pub family: String,
    pub j: u32,
    pub kind: BoundKind,
    /// Landmark diameter estimate of `M_j` before inflation.
    pub diameter_estimate: f64,
    /// `D = estimate × (1 + τ_mesh)`.
    pub diameter: f64,
    pub tau_mesh: f64,
    /// `V = max(Vol_j, Vol_0)`.
    pub v: f64,
    pub vol0: f64,
    pub volj: f64,
    /// `Vol_j(M ∖ W)`.
    pub v_j: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub lambda_prime: f64,
    pub h: f64,
    pub bound: f64,
    /// Basic bound `2V_j + h_min(δ, D)·V` for the same selection.
    pub basic_bound: f64,
    pub hls: Option<HlsSummary>,
    /// Factor applied to `g_j` before running (1 unless rescaled).
    pub metric_scale: f64,
    pub w_fraction: f64,
    pub landmarks: usize,
    pub lemmas: LemmaReport,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HlsSummary {
    pub lambda: f64,
    pub epsilon_uniform: f64,
    pub bound: f64,
}

impl FlatBoundReport {
    /// Bound recomputed from the report's own fields.
    pub fn recompute(&self) -> f64 {
        match self.kind {
            BoundKind::Pipeline => {
                pipeline_value(self.kappa, self.vol0, self.volj, self.h, self.v)
            }
            BoundKind::Basic => 2.0 * self.v_j + self.h * self.v,
            BoundKind::Hls => self.hls.map(|x| x.bound).unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Landmarks for the pair sample (farthest-point under `g_0`).
    pub landmarks: usize,
    /// Landmarks for the `g_j` diameter estimate.
    pub diameter_landmarks: usize,
    pub seed: u64,
    /// Apply the `(1 − 1/2j)` rescaling when plain domination fails.
    pub allow_rescale: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            landmarks: 120,
            diameter_landmarks: 16,
            seed: 1,
            allow_rescale: false,
        }
    }
}

/// Everything the bound depends on that does not involve (κ, λ').
pub struct Prepared {
    pub inst: Instance,
    pub domination: DominationReport,
    pub sample: PairSample,
    pub d0: DistanceMatrix,
    pub dj: DistanceMatrix,
    pub gaps: PairGaps,
    pub diameter_estimate: f64,
    pub diameter: f64,
    pub tau_mesh: f64,
    pub v: f64,
    pub certificate: Option<BiLipschitz>,
}

/// Seeded first landmark for farthest-point sampling.
pub fn start_node(nodes: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..nodes)
}

/// Check the domination hypothesis (rescaling if allowed) and compute the
/// distance data. `resolution` selects the τ_mesh calibration.
pub fn prepare(
    inst: &Instance,
    cfg: &PipelineConfig,
    resolution: usize,
    cache: Option<&Cache>,
) -> Result<Prepared, FlatBoundError> {
    let chart = &inst.chart;
    let mut dom = check_dominates(&inst.gj, &inst.g0, chart, 0.0)?;
    let mut inst = inst.clone();
    if !dom.dominated && cfg.allow_rescale {
        let slack = 1.0 / (2.0 * inst.spec.j as f64);
        let relaxed = check_dominates(&inst.gj, &inst.g0, chart, slack)?;
        if relaxed.dominated {
            inst = inst.rescaled(1.0 / (1.0 - slack));
            dom = check_dominates(&inst.gj, &inst.g0, chart, 0.0)?;
        }
    }
    if !dom.dominated {
        return Err(FlatBoundError::NotDominated {
            lambda_min: dom.lambda_min,
            point: dom.worst_point,
        });
    }
    let start = start_node(chart.node_count(), cfg.seed);
    let fps0 = cache::fps(cache, chart, &inst.wg0, cfg.landmarks, start, &inst.len0.metric_hash)?;
    let landmarks = fps0.landmarks.clone();
    let sample = sample_pairs(&inst.wg0, &inst.vol0, &Sampling::Landmarks(landmarks.clone()))?;
    let dj = cache::distance_matrix(cache, chart, &inst.wgj, &landmarks, &inst.lenj.metric_hash)?;
    let d0 = fps0.distances;
    let gaps = pair_gaps(&sample, &dj, &d0)?;
    let fpsj = cache::fps(
        cache,
        chart,
        &inst.wgj,
        cfg.diameter_landmarks.max(2),
        start,
        &inst.lenj.metric_hash,
    )?;
    let tau = calibrate_tau_mesh(resolution, inst.graph.stencil)?.tau;
    let est = fpsj.value.max(dj.max_entry());
    let v = inst.vol0_total().max(inst.volj_total());
    let certificate = bilipschitz_certificate(&gaps);
    Ok(Prepared {
        inst,
        domination: dom,
        sample,
        d0,
        dj,
        gaps,
        diameter_estimate: est,
        diameter: est * (1.0 + tau),
        tau_mesh: tau,
        v,
        certificate,
    })
}

/// Good-set selection for one (κ, λ'), with ε from the ball volumes.
pub fn selection(prep: &Prepared, kappa: f64, lambda_prime: f64) -> Result<GoodSetSelection, FlatBoundError> {
    let inst = &prep.inst;
    let eps = epsilon_from_lambda(&inst.vol0, &prep.d0, lambda_prime, kappa)?;
    if kappa * eps >= 0.5 {
        return Err(FlatBoundError::Infeasible {
            kappa,
            lambda_prime,
            kappa_epsilon: kappa * eps,
        });
    }
    let inputs = GoodSetInputs {
        sample: &prep.sample,
        dj: &prep.dj,
        d0: &prep.d0,
        node_vol0: &inst.vol0,
        node_volj: &inst.volj,
    };
    let slack = 2.0 * prep.tau_mesh * prep.diameter;
    Ok(select_good_set(&inputs, &prep.gaps, eps, kappa, lambda_prime, slack)?)
}

/// Pipeline bound for one (κ, λ').
pub fn evaluate(prep: &Prepared, kappa: f64, lambda_prime: f64) -> Result<FlatBoundReport, FlatBoundError> {
    let inst = &prep.inst;
    let sel = selection(prep, kappa, lambda_prime)?;
    let eps = sel.epsilon;
    let h = pipeline_h(lambda_prime, sel.delta, prep.diameter)?;
    let vol0 = sel.vol0_total;
    let volj = sel.volj_total;
    let bound = pipeline_value(kappa, vol0, volj, h, prep.v);
    let basic = bound_basic(sel.volj_outside, h_min(sel.delta, prep.diameter)?, prep.v)?;
    let hls = prep.certificate.map(|c| HlsSummary {
        lambda: c.lambda,
        epsilon_uniform: c.epsilon_uniform,
        bound: hls_bound(c.epsilon_uniform, c.lambda, vol0, 2).unwrap_or(f64::NAN),
    });
    let w_fraction = sel.vol0_w_nodes / vol0;
    Ok(FlatBoundReport {
        family: inst.spec.label(),
        j: inst.spec.j,
        kind: BoundKind::Pipeline,
        diameter_estimate: prep.diameter_estimate,
        diameter: prep.diameter,
        tau_mesh: prep.tau_mesh,
        v: prep.v,
        vol0,
        volj,
        v_j: sel.volj_outside,
        delta: sel.delta,
        epsilon: eps,
        kappa,
        lambda_prime,
        h,
        bound,
        basic_bound: basic,
        hls,
        metric_scale: inst.scale,
        w_fraction,
        landmarks: prep.sample.len(),
        lemmas: sel.lemmas,
    })
}

pub fn bound_pipeline(
    inst: &Instance,
    cfg: &PipelineConfig,
    resolution: usize,
    kappa: f64,
    lambda_prime: f64,
) -> Result<FlatBoundReport, FlatBoundError> {
    let prep = prepare(inst, cfg, resolution, None)?;
    evaluate(&prep, kappa, lambda_prime)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridPoint {
    pub kappa: f64,
    pub lambda_prime: f64,
    pub bound: Option<f64>,
    pub error: Option<String>,
}

/// Minimize the pipeline bound over a (κ, λ') grid; ties go to the smaller
/// λ', then the smaller κ.
pub fn optimize_params(
    prep: &Prepared,
    kappas: &[f64],
    lambdas: &[f64],
) -> Result<(FlatBoundReport, Vec<GridPoint>), FlatBoundError> {
    if kappas.is_empty() || lambdas.is_empty() {
        return Err(FlatBoundError::EmptyGrid);
    }
    let mut grid = Vec::new();
    for &l in lambdas {
        for &k in kappas {
            grid.push((k, l));
        }
    }
    let results: Vec<Result<FlatBoundReport, FlatBoundError>> =
        grid.par_iter().map(|&(k, l)| evaluate(prep, k, l)).collect();
    let mut best: Option<FlatBoundReport> = None;
    let mut points = Vec::new();
    for ((k, l), r) in grid.iter().zip(results) {
        match r {
            Ok(rep) => {
                points.push(GridPoint {
                    kappa: *k,
                    lambda_prime: *l,
                    bound: Some(rep.bound),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some(b) => {
                        rep.bound < b.bound
                            || (rep.bound == b.bound
                                && (rep.lambda_prime, rep.kappa) < (b.lambda_prime, b.kappa))
                    }
                };
                if better {
                    best = Some(rep);
                }
            }
            Err(FlatBoundError::Infeasible { .. }) | Err(FlatBoundError::GoodSet(_)) => {
                points.push(GridPoint {
                    kappa: *k,
                    lambda_prime: *l,
                    bound: None,
                    error: Some("infeasible".into()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    best.map(|b| (b, points)).ok_or(FlatBoundError::AllInfeasible)
}
