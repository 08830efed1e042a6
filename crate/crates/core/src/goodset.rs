//! Discrete good-set selection.
//!
//! Pairs of landmarks stand in for `M × M` with the product of their g_0
//! Voronoi-cell volumes as weights. A measure-`(1−ε)` pair set is chosen by
//! sorting on the distance gap `|d_j − d_0|`, its slices are measured, and the
//! points whose slices are almost full form the good set `W`. Everything is
//! exact at landmark level; the extension of `W` to all mesh nodes uses the
//! landmark rows as the slice sample.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{dijkstra_multi, DistanceMatrix, WeightedGraph};

pub const MIN_RANDOM_LANDMARKS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GoodSetError {
    #[error("ε = {0} outside (0, 1)")]
    EpsilonRange(f64),
    #[error("κ = {0} must exceed 1")]
    KappaRange(f64),
    #[error("κε = {0} ≥ 1: no point can have a slice that large")]
    KappaEpsilonTooLarge(f64),
    #[error("λ' = {0} must be positive")]
    LambdaRange(f64),
    #[error("random sampling needs at least {MIN_RANDOM_LANDMARKS} landmarks, got {0}")]
    TooFewSamples(usize),
    #[error("empty or duplicate landmark list")]
    BadLandmarks,
    #[error("landmark node {0} has no distance row")]
    MissingRow(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Sampling {
    Landmarks(Vec<usize>),
    Random { count: usize, seed: u64 },
}

/// Full product over a landmark set; pair `(a, b)` has weight `w_a·w_b`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSample {
    pub landmarks: Vec<usize>,
    /// g_0 volume of each landmark's Voronoi cell.
    pub weights: Vec<f64>,
    /// Landmark index owning each node.
    pub cell_of: Vec<u32>,
    pub seed: Option<u64>,
}

impl PairSample {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn pair_weight(&self, a: usize, b: usize) -> f64 {
        self.weights[a] * self.weights[b]
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.volume().powi(2)
    }

    pub fn unordered_pairs(&self) -> usize {
        self.len() * (self.len() - 1) / 2
    }

    /// Sum of per-node values over each landmark cell.
    pub fn cell_sums(&self, per_node: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (n, &c) in self.cell_of.iter().enumerate() {
            out[c as usize] += per_node[n];
        }
        out
    }
}

pub fn sample_pairs(
    g0: &WeightedGraph,
    node_vol0: &[f64],
    sampling: &Sampling,
) -> Result<PairSample, GoodSetError> {
    let n = g0.node_count();
    let (landmarks, seed) = match sampling {
        Sampling::Landmarks(l) => {
            let mut sorted = l.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if l.is_empty() || sorted.len() != l.len() || sorted.iter().any(|&x| x >= n) {
                return Err(GoodSetError::BadLandmarks);
            }
            (l.clone(), None)
        }
        Sampling::Random { count, seed } => {
            if *count < MIN_RANDOM_LANDMARKS {
                return Err(GoodSetError::TooFewSamples(*count));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut picks = sample(&mut rng, n, (*count).min(n)).into_vec();
            picks.sort_unstable();
            (picks, Some(*seed))
        }
    };
    let sources: Vec<(usize, f64)> = landmarks.iter().map(|&l| (l, 0.0)).collect();
    let (_, owner) = dijkstra_multi(g0, &sources);
    let mut weights = vec![0.0; landmarks.len()];
    for (node, &o) in owner.iter().enumerate() {
        weights[o as usize] += node_vol0[node];
    }
    Ok(PairSample {
        landmarks,
        weights,
        cell_of: owner,
        seed,
    })
}

/// Symmetric `k × k` table of `max(|d_j − d_0|)` over both directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairGaps {
    pub k: usize,
    pub gap: Vec<f64>,
    /// `d_0` between landmarks, symmetrized by averaging.
    pub d0: Vec<f64>,
    pub dj: Vec<f64>,
}

impl PairGaps {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.gap[a * self.k + b]
    }

    pub fn max_gap(&self) -> f64 {
        self.gap.iter().fold(0.0, |m, &g| m.max(g))
    }
}

fn landmark_rows<'a>(
    sample: &PairSample,
    dm: &'a DistanceMatrix,
) -> Result<Vec<&'a [f64]>, GoodSetError> {
    sample
        .landmarks
        .iter()
        .map(|&l| dm.row_of(l).ok_or(GoodSetError::MissingRow(l)))
        .collect()
}

pub fn pair_gaps(
    sample: &PairSample,
    dj: &DistanceMatrix,
    d0: &DistanceMatrix,
) -> Result<PairGaps, GoodSetError> {
    let rj = landmark_rows(sample, dj)?;
    let r0 = landmark_rows(sample, d0)?;
    let k = sample.len();
    let lm = &sample.landmarks;
    let mut gap = vec![0.0; k * k];
    let mut dd0 = vec![0.0; k * k];
    let mut ddj = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let g1 = (rj[a][lm[b]] - r0[a][lm[b]]).abs();
            let g2 = (rj[b][lm[a]] - r0[b][lm[a]]).abs();
            gap[a * k + b] = g1.max(g2);
            dd0[a * k + b] = 0.5 * (r0[a][lm[b]] + r0[b][lm[a]]);
            ddj[a * k + b] = 0.5 * (rj[a][lm[b]] + rj[b][lm[a]]);
        }
    }
    Ok(PairGaps {
        k,
        gap,
        d0: dd0,
        dj: ddj,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SEpsilon {
    pub epsilon: f64,
    pub delta: f64,
    /// Row-major `k × k` membership.
    pub mask: Vec<bool>,
    pub retained_weight: f64,
    pub total_weight: f64,
    pub max_pair_weight: f64,
}

impl SEpsilon {
    pub fn contains(&self, k: usize, a: usize, b: usize) -> bool {
        self.mask[a * k + b]
    }
}

/// Smallest gap threshold δ whose sublevel set carries at least `(1 − ε)` of
/// the pair weight; every pair with gap ≤ δ is kept, so ties stay together
/// and the set is symmetric.
pub fn select_s_epsilon(
    sample: &PairSample,
    gaps: &PairGaps,
    epsilon: f64,
) -> Result<SEpsilon, GoodSetError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(GoodSetError::EpsilonRange(epsilon));
    }
    let k = sample.len();
    let mut order: Vec<usize> = (0..k * k).collect();
    order.sort_by(|&x, &y| gaps.gap[x].total_cmp(&gaps.gap[y]));
    let total = sample.total_weight();
    let target = (1.0 - epsilon) * total;
    let mut acc = 0.0;
    let mut delta = gaps.gap[order[k * k - 1]];
    for &idx in &order {
        acc += sample.pair_weight(idx / k, idx % k);
        if acc >= target {
            delta = gaps.gap[idx];
            break;
        }
    }
    let mask: Vec<bool> = gaps.gap.iter().map(|&g| g <= delta).collect();
    let retained = mask
        .iter()
        .enumerate()
        .filter(|x| *x.1)
        .map(|(i, _)| sample.pair_weight(i / k, i % k))
        .sum();
    let wmax = sample.weights.iter().fold(0.0f64, |m, &w| m.max(w));
    Ok(SEpsilon {
        epsilon,
        delta,
        mask,
        retained_weight: retained,
        total_weight: total,
        max_pair_weight: wmax * wmax,
    })
}

/// `Vol_0(S_p)` for every landmark `p`.
pub fn slice_volumes(sample: &PairSample, s: &SEpsilon) -> Vec<f64> {
    let k = sample.len();
    (0..k)
        .map(|a| {
            (0..k)
                .filter(|&b| s.contains(k, a, b))
                .map(|b| sample.weights[b])
                .sum()
        })
        .collect()
}

/// Slice volume at every mesh node: the weight of landmarks `b` with
/// `|d_j(b, p) − d_0(b, p)| ≤ δ`. Landmark nodes take their landmark value.
pub fn node_slice_volumes(
    sample: &PairSample,
    dj: &DistanceMatrix,
    d0: &DistanceMatrix,
    delta: f64,
    landmark_slices: &[f64],
) -> Result<Vec<f64>, GoodSetError> {
    let rj = landmark_rows(sample, dj)?;
    let r0 = landmark_rows(sample, d0)?;
    let n = rj[0].len();
    let mut out: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            (0..sample.len())
                .filter(|&b| (rj[b][p] - r0[b][p]).abs() <= delta)
                .map(|b| sample.weights[b])
                .sum()
        })
        .collect();
    for (a, &l) in sample.landmarks.iter().enumerate() {
        out[l] = landmark_slices[a];
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WSelection {
    pub kappa: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub mask: Vec<bool>,
    pub vol0_w: f64,
    pub vol0_total: f64,
    /// κε ≥ 1/2: slices of two good points need not meet.
    pub half_flag: bool,
}

/// `W = {p : Vol_0(S_p) > (1 − κε) Vol_0(M)}`.
pub fn select_w(
    weights: &[f64],
    slices: &[f64],
    vol0_total: f64,
    kappa: f64,
    epsilon: f64,
) -> Result<WSelection, GoodSetError> {
    if !(kappa > 1.0) {
        return Err(GoodSetError::KappaRange(kappa));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(GoodSetError::EpsilonRange(epsilon));
    }
    if kappa * epsilon >= 1.0 {
        return Err(GoodSetError::KappaEpsilonTooLarge(kappa * epsilon));
    }
    let threshold = (1.0 - kappa * epsilon) * vol0_total;
    let mask: Vec<bool> = slices.iter().map(|&s| s > threshold).collect();
    let vol0_w = weights
        .iter()
        .zip(&mask)
        .filter(|x| *x.1)
        .map(|x| x.0)
        .sum();
    Ok(WSelection {
        kappa,
        epsilon,
        threshold,
        mask,
        vol0_w,
        vol0_total,
        half_flag: kappa * epsilon >= 0.5,
    })
}

/// `ε = min_x Vol_0(B(x, λ')) / (2κ Vol_0(M))` over the rows of `d0`.
pub fn epsilon_from_lambda(
    node_vol0: &[f64],
    d0: &DistanceMatrix,
    lambda_prime: f64,
    kappa: f64,
) -> Result<f64, GoodSetError> {
    if !(lambda_prime > 0.0) {
        return Err(GoodSetError::LambdaRange(lambda_prime));
    }
    if !(kappa > 1.0) {
        return Err(GoodSetError::KappaRange(kappa));
    }
    let total: f64 = node_vol0.iter().sum();
    let min_ball = d0
        .rows
        .par_iter()
        .map(|row| {
            row.iter()
                .zip(node_vol0)
                .filter(|x| *x.0 <= lambda_prime)
                .map(|x| x.1)
                .sum::<f64>()
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min_ball / (2.0 * kappa * total))
}

/// Cap-area value of ε on the unit round sphere.
pub fn sphere_cap_epsilon(lambda_prime: f64, kappa: f64) -> f64 {
    (1.0 - lambda_prime.min(std::f64::consts::PI).cos()) / (4.0 * kappa)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PairCheck {
    pub pairs_checked: usize,
    pub violations: usize,
    /// Smallest `bound − value` seen (negative means violated).
    pub worst_margin: f64,
    pub bound: f64,
    /// Violations with the slack term removed (informational).
    pub violations_without_slack: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `Vol_0(W) > (κ−1)/κ·Vol_0(M)` on landmarks.
    pub volume_of_w: Check,
    /// Same bound for the node-level W.
    pub volume_of_w_nodes: Check,
    /// `Vol_j(M∖W) ≤ Vol_0(M)/κ + |Vol_j(M) − Vol_0(M)|` on landmarks.
    pub outside_volume: Check,
    pub outside_volume_nodes: Check,
    /// `Vol_0(S_p ∩ S_q) > (1 − 2κε)Vol_0(M)` for p, q ∈ W.
    pub slice_intersection: PairCheck,
    /// `|d_j − d_0| ≤ 2λ' + 2δ + slack` for p, q ∈ W.
    pub distance_gap: PairCheck,
    /// Intersection check skipped because κε ≥ 1/2.
    pub intersection_applicable: bool,
}

impl LemmaReport {
    /// Landmark-level lemmas all hold.
    pub fn ok(&self) -> bool {
        self.volume_of_w.ok
            && self.outside_volume.ok
            && self.slice_intersection.violations == 0
            && self.distance_gap.violations == 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoodSetSelection {
    pub epsilon: f64,
    pub kappa: f64,
    pub lambda_prime: f64,
    pub delta: f64,
    pub s: SEpsilon,
    pub slices: Vec<f64>,
    pub w: WSelection,
    pub node_slices: Vec<f64>,
    pub w_nodes: Vec<bool>,
    pub vol0_total: f64,
    pub volj_total: f64,
    pub vol0_w_nodes: f64,
    /// `Vol_j(M ∖ W)` at node level; this is `V_j` of the basic bound.
    pub volj_outside: f64,
    pub lemmas: LemmaReport,
}

pub struct GoodSetInputs<'a> {
    pub sample: &'a PairSample,
    pub dj: &'a DistanceMatrix,
    pub d0: &'a DistanceMatrix,
    pub node_vol0: &'a [f64],
    pub node_volj: &'a [f64],
}

/// Run the whole selection and check the measure lemmas. `slack` is added
/// to the pairwise distance-gap bound.
pub fn select_good_set(
    inp: &GoodSetInputs,
    gaps: &PairGaps,
    epsilon: f64,
    kappa: f64,
    lambda_prime: f64,
    slack: f64,
) -> Result<GoodSetSelection, GoodSetError> {
    let sample = inp.sample;
    let s = select_s_epsilon(sample, gaps, epsilon)?;
    let slices = slice_volumes(sample, &s);
    let vol0_total: f64 = inp.node_vol0.iter().sum();
    let volj_total: f64 = inp.node_volj.iter().sum();
    let w = select_w(&sample.weights, &slices, vol0_total, kappa, epsilon)?;
    let node_slices = node_slice_volumes(sample, inp.dj, inp.d0, s.delta, &slices)?;
    let threshold = w.threshold;
    let w_nodes: Vec<bool> = node_slices.iter().map(|&v| v > threshold).collect();
    let vol0_w_nodes = masked_sum(inp.node_vol0, &w_nodes, true);
    let volj_outside = masked_sum(inp.node_volj, &w_nodes, false);

    let mut lemmas = LemmaReport {
        intersection_applicable: !w.half_flag,
        ..Default::default()
    };
    let frac = (kappa - 1.0) / kappa;
    lemmas.volume_of_w = Check {
        lhs: w.vol0_w,
        rhs: frac * vol0_total,
        ok: w.vol0_w >= frac * vol0_total * (1.0 - 1e-12),
    };
    lemmas.volume_of_w_nodes = Check {
        lhs: vol0_w_nodes,
        rhs: frac * vol0_total,
        ok: vol0_w_nodes >= frac * vol0_total * (1.0 - 1e-12),
    };
    let outside_rhs = vol0_total / kappa + (volj_total - vol0_total).abs();
    let cell_volj = sample.cell_sums(inp.node_volj);
    let outside_lm: f64 = cell_volj
        .iter()
        .zip(&w.mask)
        .filter(|x| !*x.1)
        .map(|x| x.0)
        .sum();
    lemmas.outside_volume = Check {
        lhs: outside_lm,
        rhs: outside_rhs,
        ok: outside_lm <= outside_rhs * (1.0 + 1e-12),
    };
    lemmas.outside_volume_nodes = Check {
        lhs: volj_outside,
        rhs: outside_rhs,
        ok: volj_outside <= outside_rhs * (1.0 + 1e-12),
    };
    lemmas.slice_intersection = check_intersections(sample, &s, &w);
    lemmas.distance_gap = check_distance_gaps(gaps, &w.mask, lambda_prime, s.delta, slack);

    Ok(GoodSetSelection {
        epsilon,
        kappa,
        lambda_prime,
        delta: s.delta,
        s,
        slices,
        w,
        node_slices,
        w_nodes,
        vol0_total,
        volj_total,
        vol0_w_nodes,
        volj_outside,
        lemmas,
    })
}

fn masked_sum(v: &[f64], mask: &[bool], keep: bool) -> f64 {
    v.iter()
        .zip(mask)
        .filter(|x| *x.1 == keep)
        .map(|x| x.0)
        .sum()
}

fn check_intersections(sample: &PairSample, s: &SEpsilon, w: &WSelection) -> PairCheck {
    let k = sample.len();
    let bound = (1.0 - 2.0 * w.kappa * w.epsilon) * w.vol0_total;
    let good: Vec<usize> = (0..k).filter(|&a| w.mask[a]).collect();
    let mut out = PairCheck {
        bound,
        worst_margin: f64::INFINITY,
        ..Default::default()
    };
    if w.half_flag {
        return out;
    }
    for (i, &a) in good.iter().enumerate() {
        for &c in &good[i..] {
            let inter: f64 = (0..k)
                .filter(|&b| s.contains(k, a, b) && s.contains(k, c, b))
                .map(|b| sample.weights[b])
                .sum();
            out.pairs_checked += 1;
            out.worst_margin = out.worst_margin.min(inter - bound);
            if inter <= bound {
                out.violations += 1;
                out.violations_without_slack += 1;
            }
        }
    }
    out
}

/// `|d_j − d_0| ≤ 2λ' + 2δ + slack` over pairs of good landmarks.
pub fn check_distance_gaps(
    gaps: &PairGaps,
    good: &[bool],
    lambda_prime: f64,
    delta: f64,
    slack: f64,
) -> PairCheck {
    let k = gaps.k;
    let bare = 2.0 * lambda_prime + 2.0 * delta;
    let bound = bare + slack;
    let mut out = PairCheck {
        bound,
        worst_margin: f64::INFINITY,
        ..Default::default()
    };
    for a in 0..k {
        if !good[a] {
            continue;
        }
        for c in a..k {
            if !good[c] {
                continue;
            }
            let g = gaps.get(a, c);
            out.pairs_checked += 1;
            out.worst_margin = out.worst_margin.min(bound - g);
            if g > bound {
                out.violations += 1;
            }
            if g > bare {
                out.violations_without_slack += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{edge_lengths, node_volumes};
    use crate::mesh::{build_chart, build_graph, ChartKind};
    use crate::metrics::{MetricField, Sym2};
    use proptest::prelude::*;
    use std::sync::Arc;

    struct Fixture {
        wg: WeightedGraph,
        vol: Vec<f64>,
        n: usize,
    }

    fn flat_torus() -> Fixture {
        let c = Arc::new(build_chart(ChartKind::TorusSquare, (16, 16), &[]).unwrap());
        let g = build_graph(c.clone(), 2).unwrap();
        let f = MetricField::Constant {
            tensor: Sym2::IDENTITY,
        };
        let l = edge_lengths(&g, &f, 1).unwrap();
        Fixture {
            wg: WeightedGraph::from_mesh(&g, &l),
            vol: node_volumes(&c, &f),
            n: c.node_count(),
        }
    }

    fn synthetic_gaps(k: usize, f: impl Fn(usize, usize) -> f64) -> PairGaps {
        let mut gap = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                gap[a * k + b] = if a == b { 0.0 } else { f(a.min(b), a.max(b)) };
            }
        }
        PairGaps {
            k,
            gap,
            d0: vec![1.0; k * k],
            dj: vec![1.0; k * k],
        }
    }

    fn uniform_sample(k: usize) -> PairSample {
        PairSample {
            landmarks: (0..k).collect(),
            weights: vec![1.0; k],
            cell_of: (0..k as u32).collect(),
            seed: None,
        }
    }

    #[test]
    fn full_product_sample() {
        let fx = flat_torus();
        let lm: Vec<usize> = (0..50).map(|i| i * 5).collect();
        let s = sample_pairs(&fx.wg, &fx.vol, &Sampling::Landmarks(lm)).unwrap();
        assert_eq!(s.unordered_pairs(), 50 * 49 / 2);
        let total: f64 = fx.vol.iter().sum();
        assert!((s.total_weight() - total * total).abs() / (total * total) < 1e-10);
        assert!(s.weights.iter().all(|&w| w > 0.0));
        assert!(sample_pairs(&fx.wg, &fx.vol, &Sampling::Landmarks(vec![1, 1])).is_err());
    }

    #[test]
    fn random_sample_is_deterministic() {
        let fx = flat_torus();
        let a = sample_pairs(&fx.wg, &fx.vol, &Sampling::Random { count: 120, seed: 7 }).unwrap();
        let b = sample_pairs(&fx.wg, &fx.vol, &Sampling::Random { count: 120, seed: 7 }).unwrap();
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.weights, b.weights);
        assert!(a.landmarks.iter().all(|&l| l < fx.n));
        assert_eq!(
            sample_pairs(&fx.wg, &fx.vol, &Sampling::Random { count: 10, seed: 7 }).unwrap_err(),
            GoodSetError::TooFewSamples(10)
        );
    }

    #[test]
    fn identical_metrics_keep_everything() {
        let s = uniform_sample(10);
        let gaps = synthetic_gaps(10, |_, _| 0.0);
        let se = select_s_epsilon(&s, &gaps, 0.1).unwrap();
        assert_eq!(se.delta, 0.0);
        assert!(se.mask.iter().all(|&m| m));
        let sl = slice_volumes(&s, &se);
        assert!(sl.iter().all(|&v| v == 10.0));
        let w = select_w(&s.weights, &sl, 10.0, 2.0, 0.1).unwrap();
        assert!(w.mask.iter().all(|&m| m));
    }

    #[test]
    fn one_bad_point_is_excluded() {
        // landmark 0 is far off from everybody: gap 1 to every other point
        let k = 20;
        let s = uniform_sample(k);
        let gaps = synthetic_gaps(k, |a, _| if a == 0 { 1.0 } else { 0.01 });
        let se = select_s_epsilon(&s, &gaps, 0.15).unwrap();
        assert!((se.delta - 0.01).abs() < 1e-15);
        assert!(se.retained_weight >= 0.85 * se.total_weight);
        let sl = slice_volumes(&s, &se);
        let w = select_w(&s.weights, &sl, k as f64, 2.0, 0.15).unwrap();
        assert!(!w.mask[0]);
        assert!(w.mask[1..].iter().all(|&m| m));
    }

    #[test]
    fn parameter_errors() {
        let s = uniform_sample(4);
        let gaps = synthetic_gaps(4, |_, _| 0.0);
        assert!(select_s_epsilon(&s, &gaps, 0.0).is_err());
        assert!(select_s_epsilon(&s, &gaps, 1.0).is_err());
        assert_eq!(
            select_w(&s.weights, &[4.0; 4], 4.0, 1.0, 0.1).unwrap_err(),
            GoodSetError::KappaRange(1.0)
        );
        assert!(matches!(
            select_w(&s.weights, &[4.0; 4], 4.0, 4.0, 0.3),
            Err(GoodSetError::KappaEpsilonTooLarge(_))
        ));
        assert!(select_w(&s.weights, &[4.0; 4], 4.0, 4.0, 0.2).unwrap().half_flag);
    }

    #[test]
    fn epsilon_full_ball() {
        let fx = flat_torus();
        let dm = DistanceMatrix::compute(&fx.wg, &[0, 37], "t").unwrap();
        let e = epsilon_from_lambda(&fx.vol, &dm, 100.0, 2.0).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        let small = epsilon_from_lambda(&fx.vol, &dm, 0.5, 2.0).unwrap();
        let big = epsilon_from_lambda(&fx.vol, &dm, 1.5, 2.0).unwrap();
        assert!(small <= big);
        assert!(epsilon_from_lambda(&fx.vol, &dm, 0.0, 2.0).is_err());
    }

    #[test]
    fn cap_formula() {
        assert!((sphere_cap_epsilon(std::f64::consts::FRAC_PI_2, 2.0) - 0.125).abs() < 1e-15);
    }

    fn random_gaps(k: usize, seed: u64) -> (PairSample, PairGaps) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mut vals = vec![0.0; k * k];
        for a in 0..k {
            for b in a + 1..k {
                let g: f64 = rng.gen_range(0.0..1.0f64).powi(4);
                vals[a * k + b] = g;
                vals[b * k + a] = g;
            }
        }
        let s = PairSample {
            landmarks: (0..k).collect(),
            weights,
            cell_of: (0..k as u32).collect(),
            seed: Some(seed),
        };
        (
            s,
            PairGaps {
                k,
                gap: vals,
                d0: vec![1.0; k * k],
                dj: vec![1.0; k * k],
            },
        )
    }

    proptest! {
        #[test]
        fn egoroff_measure_and_symmetry(seed in 0u64..500, eps in 0.01f64..0.5) {
            let (s, g) = random_gaps(24, seed);
            let se = select_s_epsilon(&s, &g, eps).unwrap();
            prop_assert!(se.retained_weight >= (1.0 - eps) * se.total_weight * (1.0 - 1e-12));
            let k = s.len();
            for a in 0..k {
                for b in 0..k {
                    prop_assert_eq!(se.contains(k, a, b), se.contains(k, b, a));
                    if se.contains(k, a, b) {
                        prop_assert!(g.get(a, b) <= se.delta);
                    }
                }
            }
        }

        #[test]
        fn delta_monotone_in_epsilon(seed in 0u64..500, e1 in 0.01f64..0.4, d in 0.0f64..0.4) {
            let (s, g) = random_gaps(20, seed);
            let a = select_s_epsilon(&s, &g, e1).unwrap();
            let b = select_s_epsilon(&s, &g, (e1 + d).min(0.99)).unwrap();
            prop_assert!(a.delta >= b.delta);
        }

        #[test]
        fn good_set_volume_bound(seed in 0u64..500, eps in 0.01f64..0.2, kappa in 1.1f64..2.4) {
            let (s, g) = random_gaps(24, seed);
            let se = select_s_epsilon(&s, &g, eps).unwrap();
            let sl = slice_volumes(&s, &se);
            let v = s.volume();
            let w = select_w(&s.weights, &sl, v, kappa, eps).unwrap();
            prop_assert!(w.vol0_w >= (kappa - 1.0) / kappa * v * (1.0 - 1e-12));
            if !w.half_flag {
                let chk = check_intersections(&s, &se, &w);
                prop_assert_eq!(chk.violations, 0);
            }
        }
    }
}
