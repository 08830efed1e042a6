//! Subcommand implementations. Each returns its artifacts and the worst
//! failure seen; the caller decides whether to write.

use std::f64::consts::PI;
use std::fmt::Write as _;

use iflat_core::cache::{self, Cache};
use iflat_core::families::{finsler_limit, FamilyError, FamilyKind, Instance};
use iflat_core::flatbound::{
    optimize_params, prepare, selection, start_node, FlatBoundError, FlatBoundReport, Prepared,
};
use iflat_core::geodesy::{calibrate_tau_mesh, dijkstra};
use iflat_core::mesh::ChartKind;
use iflat_core::tubes::{build_symmetric_tube, leaf_ordering, tube_check, LeafFamily, TubeError};
use iflat_core::zspace::{polar_caps, run_adversarial, run_valid, ZRunConfig};
use serde_json::{json, Value};

use crate::config::{CachePolicy, ExperimentConfig};
use crate::output::{num, worst, Artifacts, Failure, REPORT_SCHEMA};

pub struct Ctx {
    pub cfg: ExperimentConfig,
    cache: Option<Cache>,
}

pub struct Outcome {
    pub artifacts: Artifacts,
    pub stdout: String,
    pub failure: Option<Failure>,
    pub out_dir: Option<std::path::PathBuf>,
}

struct Job {
    record: Value,
    report: Option<FlatBoundReport>,
    failure: Option<Failure>,
}

impl Job {
    fn ok(record: Value) -> Self {
        Self {
            record,
            report: None,
            failure: None,
        }
    }
}

fn fb(e: FlatBoundError) -> Failure {
    use FlatBoundError as E;
    match e {
        E::NotDominated { .. } | E::Infeasible { .. } | E::AllInfeasible | E::NoCertificate | E::GoodSet(_) => {
            Failure::Infeasible(e.to_string())
        }
        E::BadInput(_) | E::EmptyGrid => Failure::BadInput(e.to_string()),
        e => Failure::Internal(e.into()),
    }
}

fn fam(e: FamilyError) -> Failure {
    Failure::BadInput(e.to_string())
}

fn tube_err(e: TubeError) -> Failure {
    match e {
        TubeError::NotDominated { .. } => Failure::Infeasible(e.to_string()),
        e => Failure::BadInput(e.to_string()),
    }
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, Failure> {
        let cache = match (&cfg.output.cache_dir, cfg.output.cache) {
            (Some(dir), CachePolicy::ReadWrite) => Some(Cache::open(dir)?),
            _ => None,
        };
        Ok(Self { cfg, cache })
    }

    fn instance(&self, j: u32) -> Result<Instance, Failure> {
        Instance::build(&self.cfg.spec(j), self.cfg.discretization()).map_err(fam)
    }

    fn prepare(&self, inst: &Instance) -> Result<Prepared, Failure> {
        prepare(
            inst,
            &self.cfg.pipeline(),
            self.cfg.discretization.resolution,
            self.cache.as_ref(),
        )
        .map_err(fb)
    }

    fn kappa(&self) -> f64 {
        self.cfg.pipeline.kappa[0]
    }

    fn lambda_prime(&self) -> f64 {
        self.cfg.pipeline.lambda_prime[0]
    }

    /// Run `job` for every `j`. Infeasible and invariant failures are
    /// recorded and the sweep continues; anything else aborts.
    fn per_j(&self, mut job: impl FnMut(u32) -> Result<Job, Failure>) -> Result<(Vec<Job>, Option<Failure>), Failure> {
        let mut jobs = Vec::new();
        let mut failure = None;
        for &j in &self.cfg.family.j {
            match job(j) {
                Ok(mut r) => {
                    let status = r.failure.as_ref().map_or("ok", Failure::status);
                    r.record["j"] = json!(j);
                    r.record["status"] = json!(status);
                    if let Some(f) = r.failure.take() {
                        r.record["error"] = json!(f.to_string());
                        failure = Some(worst(failure, f));
                    }
                    jobs.push(r);
                }
                Err(f @ (Failure::Infeasible(_) | Failure::Invariant(_))) => {
                    jobs.push(Job::ok(json!({"j": j, "status": f.status(), "error": f.to_string()})));
                    failure = Some(worst(failure, f));
                }
                Err(f) => return Err(f),
            }
        }
        Ok((jobs, failure))
    }

    fn envelope(&self, command: &str, jobs: &[Job], failure: &Option<Failure>) -> Value {
        json!({
            "schema_version": REPORT_SCHEMA,
            "command": command,
            "status": failure.as_ref().map_or("ok", Failure::status),
            "config": self.cfg,
            "runs": jobs.iter().map(|j| &j.record).collect::<Vec<_>>(),
        })
    }

    fn header(&self, command: &str) -> String {
        let d = &self.cfg.discretization;
        format!(
            "iflat {command}: family {} · resolution {} · stencil {} · quadrature {} · seed {}\n",
            kind_name(self.cfg.family.kind),
            d.resolution,
            d.stencil,
            d.quadrature,
            self.cfg.pipeline.seed
        )
    }
}

pub fn kind_name(kind: FamilyKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn failure_line(out: &mut String, job: &Job) {
    if let Some(e) = job.record.get("error") {
        let _ = writeln!(
            out,
            "  j = {}: {} — {}",
            job.record["j"],
            job.record["status"].as_str().unwrap_or(""),
            e.as_str().unwrap_or("")
        );
    }
}

fn finish(
    ctx: &Ctx,
    command: &str,
    jobs: Vec<Job>,
    failure: Option<Failure>,
    mut artifacts: Artifacts,
    summary: String,
) -> Outcome {
    artifacts.json(&format!("{command}.json"), &ctx.envelope(command, &jobs, &failure));
    artifacts.text("summary.txt", summary.clone());
    artifacts.text("config.toml", ctx.cfg.to_toml());
    Outcome {
        artifacts,
        stdout: summary,
        failure,
        out_dir: None,
    }
}

// ---- flatbound / run -------------------------------------------------------

fn flatbound_job(ctx: &Ctx, j: u32) -> Result<Job, Failure> {
    let inst = ctx.instance(j)?;
    let prep = ctx.prepare(&inst)?;
    let p = &ctx.cfg.pipeline;
    let (best, grid) = optimize_params(&prep, &p.kappa, &p.lambda_prime).map_err(fb)?;
    let mut failure = None;
    if !best.lemmas.ok() {
        failure = Some(Failure::Invariant(format!(
            "j = {j}: good-set lemma check failed at κ = {}, λ' = {}",
            best.kappa, best.lambda_prime
        )));
    }
    let again = best.recompute();
    if (again - best.bound).abs() > 1e-9 * best.bound.abs().max(1.0) {
        failure = Some(Failure::Invariant(format!(
            "j = {j}: reported bound {} disagrees with its inputs ({again})",
            best.bound
        )));
    }
    Ok(Job {
        record: json!({
            "family": best.family,
            "domination": prep.domination,
            "report": best,
            "grid": grid,
        }),
        report: Some(best),
        failure,
    })
}

fn series_csv(jobs: &[Job]) -> String {
    let mut s = String::from(
        "j,delta,v_j,h,bound,kappa,lambda_prime,epsilon,diameter,vol0,volj,vol_gap,basic_bound,w_fraction\n",
    );
    for r in jobs.iter().filter_map(|j| j.report.as_ref()) {
        let row = [
            r.delta,
            r.v_j,
            r.h,
            r.bound,
            r.kappa,
            r.lambda_prime,
            r.epsilon,
            r.diameter,
            r.vol0,
            r.volj,
            (r.volj - r.vol0).abs(),
            r.basic_bound,
            r.w_fraction,
        ];
        let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
        let _ = writeln!(s, "{},{}", r.j, cells.join(","));
    }
    s
}

fn bound_lines(out: &mut String, jobs: &[Job]) {
    for job in jobs {
        match &job.report {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "  j = {:<3} bound {:>10.4}  (κ {}, λ' {})  δ {:.4}  V_j {:.4}  h {:.4}  D {:.4}  |Vol_j − Vol_0| {:.4}",
                    r.j,
                    r.bound,
                    r.kappa,
                    r.lambda_prime,
                    r.delta,
                    r.v_j,
                    r.h,
                    r.diameter,
                    (r.volj - r.vol0).abs()
                );
            }
            None => failure_line(out, job),
        }
    }
}

pub fn run(ctx: &Ctx) -> Result<Outcome, Failure> {
    let (jobs, failure) = ctx.per_j(|j| flatbound_job(ctx, j))?;
    let mut summary = ctx.header("run");
    bound_lines(&mut summary, &jobs);
    let mut a = Artifacts::default();
    a.text("series.csv", series_csv(&jobs));
    a.json("report.json", &ctx.envelope("run", &jobs, &failure));
    a.text("summary.txt", summary.clone());
    a.text("config.toml", ctx.cfg.to_toml());
    Ok(Outcome {
        artifacts: a,
        stdout: summary,
        failure,
        out_dir: None,
    })
}

pub fn flatbound(ctx: &Ctx) -> Result<Outcome, Failure> {
    let (jobs, failure) = ctx.per_j(|j| flatbound_job(ctx, j))?;
    let mut summary = ctx.header("flatbound");
    bound_lines(&mut summary, &jobs);
    let mut a = Artifacts::default();
    a.text("series.csv", series_csv(&jobs));
    Ok(finish(ctx, "flatbound", jobs, failure, a, summary))
}

// ---- mesh, distances, volumes -----------------------------------------------

pub fn mesh_build(ctx: &Ctx) -> Result<Outcome, Failure> {
    let mut summary = ctx.header("mesh-build");
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let c = &inst.chart;
        let widths = |w: &[f64]| (w.iter().cloned().fold(f64::INFINITY, f64::min), w.iter().cloned().fold(0.0, f64::max));
        let (umin, umax) = widths(&c.u.widths);
        let (vmin, vmax) = widths(&c.v.widths);
        let connected = inst.graph.is_connected();
        let failure = (!connected).then(|| Failure::Invariant(format!("j = {j}: mesh graph is disconnected")));
        Ok(Job {
            record: json!({
                "family": inst.spec.label(),
                "chart": c.kind,
                "resolution": c.resolution,
                "nodes": c.node_count(),
                "edges": inst.graph.edges.len(),
                "stencil": inst.graph.stencil,
                "bands": c.bands,
                "u_width": [umin, umax],
                "v_width": [vmin, vmax],
                "connected": connected,
                "chart_fingerprint": cache::chart_fingerprint(c),
            }),
            report: None,
            failure,
        })
    })?;
    for job in &jobs {
        let r = &job.record;
        if r.get("nodes").is_some() {
            let _ = writeln!(
                summary,
                "  j = {:<3} {} nodes, {} edges, {} refinement bands, finest u-width {:.5}",
                r["j"],
                r["nodes"],
                r["edges"],
                r["bands"].as_array().map_or(0, Vec::len),
                r["u_width"][0].as_f64().unwrap_or(f64::NAN)
            );
        }
        failure_line(&mut summary, job);
    }
    Ok(finish(ctx, "mesh", jobs, failure, Artifacts::default(), summary))
}

pub fn dist(ctx: &Ctx) -> Result<Outcome, Failure> {
    let mut summary = ctx.header("dist");
    let mut a = Artifacts::default();
    let mut csvs = Vec::new();
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let p = ctx.cfg.pipeline();
        let c = &inst.chart;
        let start = start_node(c.node_count(), p.seed);
        let cache = ctx.cache.as_ref();
        let fps0 = cache::fps(cache, c, &inst.wg0, p.landmarks, start, &inst.len0.metric_hash)?;
        let lm = &fps0.landmarks;
        let dj = cache::distance_matrix(cache, c, &inst.wgj, lm, &inst.lenj.metric_hash)?;
        let fpsj = cache::fps(cache, c, &inst.wgj, p.diameter_landmarks, start, &inst.lenj.metric_hash)?;
        let mut csv = String::from("p,q,u_p,v_p,u_q,v_q,d0,dj\n");
        let (mut below, mut above, mut pairs) = (0usize, 0usize, 0usize);
        let mut min_gap = f64::INFINITY;
        for (a, &pa) in lm.iter().enumerate() {
            for &pb in &lm[a + 1..] {
                let d0 = fps0.distances.rows[a][pb];
                let d1 = dj.rows[a][pb];
                pairs += 1;
                min_gap = min_gap.min(d1 - d0);
                below += (d1 < d0 - 1e-12) as usize;
                above += (d1 > d0 + 1e-12) as usize;
                let (x, y) = (c.nodes[pa], c.nodes[pb]);
                let _ = writeln!(
                    csv,
                    "{pa},{pb},{},{},{},{},{},{}",
                    num(x[0]),
                    num(x[1]),
                    num(y[0]),
                    num(y[1]),
                    num(d0),
                    num(d1)
                );
            }
        }
        let name = format!("dist_{}.csv", inst.spec.label());
        csvs.push((name.clone(), csv));
        Ok(Job::ok(json!({
            "family": inst.spec.label(),
            "landmarks": lm.len(),
            "pairs": pairs,
            "pairs_dj_below_d0": below,
            "pairs_dj_above_d0": above,
            "min_dj_minus_d0": min_gap,
            "diameter_0": fps0.value,
            "diameter_j": fpsj.value.max(dj.max_entry()),
            "csv": name,
        })))
    })?;
    for (n, body) in csvs {
        a.text(&n, body);
    }
    for job in &jobs {
        let r = &job.record;
        if r.get("pairs").is_some() {
            let _ = writeln!(
                summary,
                "  j = {:<3} {} pairs: d_j < d_0 on {}, d_j > d_0 on {}; diam_0 ≈ {:.4}, diam_j ≈ {:.4}",
                r["j"], r["pairs"], r["pairs_dj_below_d0"], r["pairs_dj_above_d0"],
                r["diameter_0"].as_f64().unwrap_or(f64::NAN),
                r["diameter_j"].as_f64().unwrap_or(f64::NAN)
            );
        }
        failure_line(&mut summary, job);
    }
    Ok(finish(ctx, "dist", jobs, failure, a, summary))
}

pub fn volume(ctx: &Ctx) -> Result<Outcome, Failure> {
    let mut summary = ctx.header("volume");
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let (v0, vj) = (inst.vol0_total(), inst.volj_total());
        Ok(Job::ok(json!({
            "family": inst.spec.label(),
            "vol0": v0,
            "volj": vj,
            "vol_gap": (vj - v0).abs(),
            "chart_area": inst.chart.domain_area(),
        })))
    })?;
    for job in &jobs {
        let r = &job.record;
        if let (Some(v0), Some(vj)) = (r["vol0"].as_f64(), r["volj"].as_f64()) {
            let _ = writeln!(summary, "  j = {:<3} Vol_0 {v0:.6}  Vol_j {vj:.6}  |Vol_j − Vol_0| {:.6}", r["j"], (vj - v0).abs());
        }
        failure_line(&mut summary, job);
    }
    Ok(finish(ctx, "volume", jobs, failure, Artifacts::default(), summary))
}

// ---- good set, Z-space, tubes -------------------------------------------------

fn indices(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

pub fn goodset(ctx: &Ctx) -> Result<Outcome, Failure> {
    let mut summary = ctx.header("goodset");
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let prep = ctx.prepare(&inst)?;
        let (k, l) = (ctx.kappa(), ctx.lambda_prime());
        let sel = selection(&prep, k, l).map_err(fb)?;
        let ok = sel.lemmas.ok();
        let w_landmarks: Vec<usize> = indices(&sel.w.mask).iter().map(|&a| prep.sample.landmarks[a]).collect();
        Ok(Job {
            record: json!({
                "family": inst.spec.label(),
                "kappa": k,
                "lambda_prime": l,
                "epsilon": sel.epsilon,
                "delta": sel.delta,
                "vol0": sel.vol0_total,
                "volj": sel.volj_total,
                "vol0_w": sel.vol0_w_nodes,
                "volj_outside": sel.volj_outside,
                "w_landmarks": w_landmarks,
                "w_nodes": indices(&sel.w_nodes),
                "lemmas": sel.lemmas,
            }),
            report: None,
            failure: (!ok).then(|| Failure::Invariant(format!("j = {j}: good-set lemma violated"))),
        })
    })?;
    for job in &jobs {
        let r = &job.record;
        if let Some(eps) = r["epsilon"].as_f64() {
            let _ = writeln!(
                summary,
                "  j = {:<3} ε {eps:.5}  δ {:.5}  Vol_0(W) {:.4} of {:.4}  V_j {:.5}  |W landmarks| {}",
                r["j"],
                r["delta"].as_f64().unwrap_or(f64::NAN),
                r["vol0_w"].as_f64().unwrap_or(f64::NAN),
                r["vol0"].as_f64().unwrap_or(f64::NAN),
                r["volj_outside"].as_f64().unwrap_or(f64::NAN),
                r["w_landmarks"].as_array().map_or(0, Vec::len)
            );
        }
        failure_line(&mut summary, job);
    }
    Ok(finish(ctx, "goodset", jobs, failure, Artifacts::default(), summary))
}

pub fn zspace_verify(ctx: &Ctx, adversarial: bool) -> Result<Outcome, Failure> {
    let mut summary = ctx.header("zspace-verify");
    let zcfg = ZRunConfig::default();
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let prep = ctx.prepare(&inst)?;
        let valid = run_valid(&prep, ctx.kappa(), ctx.lambda_prime(), zcfg).map_err(fb)?;
        let certified = valid.report.certified();
        let mut record = json!({
            "family": inst.spec.label(),
            "certified": certified,
            "valid": valid,
        });
        if adversarial {
            let w = match inst.chart.kind {
                ChartKind::SpherePolar => polar_caps(&inst.chart, 0.2),
                ChartKind::TorusSquare => vec![true; inst.chart.node_count()],
            };
            let adv = run_adversarial(&prep, &w, zcfg).map_err(fb)?;
            record["adversarial"] = json!({
                "shortcuts_detected": adv.report.phij_lower_violations,
                "run": adv,
            });
        }
        Ok(Job {
            record,
            report: None,
            failure: (!certified).then(|| Failure::Invariant(format!("j = {j}: Z-space embedding not certified"))),
        })
    })?;
    for job in &jobs {
        let r = &job.record;
        if let Some(c) = r["certified"].as_bool() {
            let rep = &r["valid"]["report"];
            let _ = writeln!(
                summary,
                "  j = {:<3} certified {c}  h {:.4}  levels {}  φ_0 max error {:.3e}  φ_j violations {}/{}",
                r["j"],
                rep["h"].as_f64().unwrap_or(f64::NAN),
                rep["levels"],
                rep["phi0_max_error"].as_f64().unwrap_or(f64::NAN),
                rep["phij_lower_violations"],
                rep["phij_upper_violations"]
            );
            if let Some(a) = r.get("adversarial") {
                let _ = writeln!(
                    summary,
                    "          adversarial h/2 run: {} shortcut(s), worst deficit {:.4}",
                    a["shortcuts_detected"],
                    a["run"]["report"]["phij_worst_deficit"].as_f64().unwrap_or(f64::NAN)
                );
            }
        }
        failure_line(&mut summary, job);
    }
    Ok(finish(ctx, "zspace", jobs, failure, Artifacts::default(), summary))
}

/// Default tubes per chart: a transversal band and, on the sphere, the
/// meridian tube through the north pole.
fn default_tubes(kind: ChartKind) -> Vec<(&'static str, LeafFamily, [f64; 2], [f64; 2])> {
    match kind {
        ChartKind::SpherePolar => vec![
            ("meridian-band", LeafFamily::standard_meridians(), [0.4, PI - 0.4], [0.0, 1.0]),
            ("through-north-pole", LeafFamily::through_north_pole(), [0.5, PI - 0.5], [-0.3, 0.3]),
        ],
        ChartKind::TorusSquare => vec![
            ("theta-circles", LeafFamily::TorusThetaCircle, [-1.5, 1.5], [-0.5, 0.5]),
            ("r-lines", LeafFamily::TorusRLine, [-1.0, 1.0], [0.0, 0.5]),
        ],
    }
}

fn tube_job(ctx: &Ctx, inst: &Instance, csvs: &mut Vec<(String, String)>) -> Result<Job, Failure> {
    let tau = calibrate_tau_mesh(ctx.cfg.discretization.resolution, ctx.cfg.discretization.stencil)?;
    let mut tubes = Vec::new();
    let mut failure = None;
    for (name, family, t, s) in default_tubes(inst.chart.kind) {
        let tube = build_symmetric_tube(&inst.chart, family, t, s).map_err(tube_err)?;
        let report = tube_check(&inst.gj, &inst.g0, &tube).map_err(tube_err)?;
        let ordering = leaf_ordering(inst, &tube, &report, &tau);
        if !report.chain_holds || report.leaf_order_violations > 0 || ordering.dj_below_d0 > 0 {
            failure = Some(Failure::Invariant(format!(
                "j = {}: tube {name}: chain holds {}, leaf-order violations {}, d_j < d_0 on {} leaves",
                inst.spec.j, report.chain_holds, report.leaf_order_violations, ordering.dj_below_d0
            )));
        }
        let mut csv = String::from("leaf,s,l0,lj,excess\n");
        for l in &report.leaves {
            let _ = writeln!(csv, "{},{},{},{},{}", l.id, num(l.s), num(l.l0), num(l.lj), num(l.excess));
        }
        csvs.push((format!("tube_{}_{name}.csv", inst.spec.label()), csv));
        tubes.push(json!({"name": name, "tube": tube, "report": report, "graph_ordering": ordering}));
    }
    Ok(Job {
        record: json!({"family": inst.spec.label(), "tubes": tubes}),
        report: None,
        failure,
    })
}

fn tube_lines(out: &mut String, r: &Value) {
    for t in r["tubes"].as_array().into_iter().flatten() {
        let rep = &t["report"];
        let _ = writeln!(
            out,
            "  j = {:<3} {:<20} ΔVol {:.5} ≥ A·h₀·∫ΔL {:.5} (slack {:.1e}) holds {}  mean excess {:.5}  max leaf excess {:.5}",
            r["j"],
            t["name"].as_str().unwrap_or(""),
            rep["volume_gap"].as_f64().unwrap_or(f64::NAN),
            rep["rhs"].as_f64().unwrap_or(f64::NAN),
            rep["slack"].as_f64().unwrap_or(f64::NAN),
            rep["chain_holds"],
            rep["mean_excess"].as_f64().unwrap_or(f64::NAN),
            rep["max_leaf_excess"].as_f64().unwrap_or(f64::NAN)
        );
    }
}

pub fn tubes(ctx: &Ctx) -> Result<Outcome, Failure> {
    let mut summary = ctx.header("tubes");
    let mut csvs = Vec::new();
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let mut local = Vec::new();
        let job = tube_job(ctx, &inst, &mut local);
        csvs.extend(local);
        job
    })?;
    let mut a = Artifacts::default();
    for (n, body) in csvs {
        a.text(&n, body);
    }
    for job in &jobs {
        tube_lines(&mut summary, &job.record);
        failure_line(&mut summary, job);
    }
    Ok(finish(ctx, "tubes", jobs, failure, a, summary))
}

// ---- worked examples -----------------------------------------------------------

/// Bound, pole distance and tubes for the well family.
pub fn example_ilmanen(ctx: &Ctx) -> Result<Outcome, Failure> {
    let depth = ctx.cfg.family.depth;
    let target = PI + 2.0 * depth;
    let mut csvs = Vec::new();
    let (jobs, failure) = ctx.per_j(|j| {
        let mut job = flatbound_job(ctx, j)?;
        let inst = ctx.instance(j)?;
        let c = &inst.chart;
        let (n, s) = (c.north_pole().unwrap(), c.south_pole().unwrap());
        let dj = dijkstra(&inst.wgj, n)[s];
        let d0 = dijkstra(&inst.wg0, n)[s];
        let rel = (dj - target).abs() / target;
        job.record["pole_distance"] = json!({
            "d0": d0,
            "dj": dj,
            "limit": target,
            "relative_error": rel,
            "within_3_percent": rel <= 0.03,
        });
        let mut local = Vec::new();
        let tubes = tube_job(ctx, &inst, &mut local)?;
        csvs.extend(local);
        job.record["tubes"] = tubes.record["tubes"].clone();
        if job.failure.is_none() {
            job.failure = tubes.failure;
        }
        Ok(job)
    })?;
    let mut summary = ctx.header("example ilmanen");
    bound_lines(&mut summary, &jobs);
    for job in &jobs {
        let p = &job.record["pole_distance"];
        if let Some(dj) = p["dj"].as_f64() {
            let _ = writeln!(
                summary,
                "  j = {:<3} pole-to-pole: d_0 {:.5}  d_j {dj:.5}  π + 2R {target:.5}  relative error {:.2}%",
                job.record["j"],
                p["d0"].as_f64().unwrap_or(f64::NAN),
                100.0 * p["relative_error"].as_f64().unwrap_or(f64::NAN)
            );
            tube_lines(&mut summary, &job.record);
        }
    }
    let mut a = Artifacts::default();
    a.text("series.csv", series_csv(&jobs));
    for (n, body) in csvs {
        a.text(&n, body);
    }
    Ok(finish(ctx, "example", jobs, failure, a, summary))
}

pub const FINSLER_PAIRS: [([f64; 2], [f64; 2]); 5] = [
    ([0.0, 0.0], [0.0, PI]),
    ([0.0, 0.0], [PI, 0.0]),
    ([0.0, 0.0], [PI / 2.0, PI / 2.0]),
    ([0.0, 0.0], [PI / 4.0, PI]),
    ([-PI / 2.0, 0.0], [PI / 2.0, PI / 2.0]),
];

/// `d_j` against the limit formula on designated pairs of the cinched torus.
pub fn example_finsler(ctx: &Ctx) -> Result<Outcome, Failure> {
    let mut table = String::from("j,r_p,theta_p,r_q,theta_q,d0,dj,d_inf,dj_minus_d_inf\n");
    let (jobs, failure) = ctx.per_j(|j| {
        let inst = ctx.instance(j)?;
        let c = &inst.chart;
        let mut rows = Vec::new();
        for (p, q) in FINSLER_PAIRS {
            let (np, nq) = (c.nearest_node(p), c.nearest_node(q));
            let (xp, xq) = (c.nodes[np], c.nodes[nq]);
            let d0 = dijkstra(&inst.wg0, np)[nq];
            let dj = dijkstra(&inst.wgj, np)[nq];
            let dinf = finsler_limit(xp, xq);
            let _ = writeln!(
                table,
                "{j},{},{},{},{},{},{},{},{}",
                num(xp[0]),
                num(xp[1]),
                num(xq[0]),
                num(xq[1]),
                num(d0),
                num(dj),
                num(dinf),
                num(dj - dinf)
            );
            rows.push(json!({"p": xp, "q": xq, "d0": d0, "dj": dj, "d_inf": dinf}));
        }
        let dom = iflat_core::metrics::check_dominates(&inst.gj, &inst.g0, c, 0.0)?;
        Ok(Job::ok(json!({
            "family": inst.spec.label(),
            "dominated": dom.dominated,
            "lambda_min": dom.lambda_min,
            "pairs": rows,
        })))
    })?;
    let mut summary = ctx.header("example finsler-torus");
    let _ = writeln!(summary, "  {:>3}  {:>17}  {:>17}  {:>9}  {:>9}  {:>9}", "j", "p (r, θ)", "q (r, θ)", "d_0", "d_j", "d_∞");
    for job in &jobs {
        for row in job.record["pairs"].as_array().into_iter().flatten() {
            let pt = |v: &Value| format!("({:.3}, {:.3})", v[0].as_f64().unwrap_or(f64::NAN), v[1].as_f64().unwrap_or(f64::NAN));
            let _ = writeln!(
                summary,
                "  {:>3}  {:>17}  {:>17}  {:>9.5}  {:>9.5}  {:>9.5}",
                job.record["j"],
                pt(&row["p"]),
                pt(&row["q"]),
                row["d0"].as_f64().unwrap_or(f64::NAN),
                row["dj"].as_f64().unwrap_or(f64::NAN),
                row["d_inf"].as_f64().unwrap_or(f64::NAN)
            );
        }
        if job.record["dominated"] == json!(false) {
            let _ = writeln!(
                summary,
                "  j = {}: g_j does not dominate g_0 (min relative eigenvalue {:.4}); the flat bound pipeline refuses this family",
                job.record["j"],
                job.record["lambda_min"].as_f64().unwrap_or(f64::NAN)
            );
        }
        failure_line(&mut summary, job);
    }
    let mut a = Artifacts::default();
    a.text("finsler_table.csv", table);
    Ok(finish(ctx, "example", jobs, failure, a, summary))
}
