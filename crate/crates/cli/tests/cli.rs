use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn iflat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iflat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_config_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let out = dir.path().join("out");
    std::fs::write(&cfg, "schema_version = 1\n[family]\nkind = \"ilmanen\"\nj = [1]\ncolour = 3\n").unwrap();
    let o = iflat(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());

    std::fs::write(&cfg, "schema_version = 1\n[family\n").unwrap();
    assert_eq!(code(&iflat(&["run", "--config", s(&cfg), "--out", s(&out)])), 4);
    assert!(!out.exists());

    assert_eq!(code(&iflat(&["run", "--resolution", "3", "--out", s(&out)])), 4);
    assert_eq!(code(&iflat(&["run", "--kappa", "0.5", "--out", s(&out)])), 4);
    assert_eq!(code(&iflat(&["run", "--no-such-flag"])), 4);
    assert!(!out.exists());
}

#[test]
fn reruns_are_byte_identical_and_cache_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = |out: &Path, cached: bool| {
        let mut v = vec!["run".to_string(), "--resolution".into(), "20".into(), "--j".into(), "1,2".into()];
        v.extend(["--out".into(), s(out).to_string()]);
        if cached {
            v.extend(["--cache-dir".into(), s(&cache).to_string()]);
        }
        v
    };
    let run = |out: &Path, cached: bool| {
        let a = args(out, cached);
        let o = iflat(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b, c, d) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"), dir.path().join("d"));
    run(&a, false);
    run(&b, false);
    run(&c, true);
    run(&d, true);
    let series = |p: &Path| std::fs::read(p.join("series.csv")).unwrap();
    assert_eq!(series(&a), series(&b));
    assert!(std::fs::read_dir(&cache).unwrap().count() > 0);

    let runs = |p: &Path| json(&p.join("report.json"))["runs"].clone();
    for warm in [&c, &d] {
        let (x, y) = (runs(&a), runs(warm));
        for (rx, ry) in x.as_array().unwrap().iter().zip(y.as_array().unwrap()) {
            for (k, vx) in rx["report"].as_object().unwrap() {
                if let (Some(fx), Some(fy)) = (vx.as_f64(), ry["report"][k].as_f64()) {
                    assert!((fx - fy).abs() <= 1e-12 * fx.abs().max(1.0), "{k}: {fx} vs {fy}");
                }
            }
        }
    }
}

#[test]
fn emitted_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = iflat(&["run", "--resolution", "16", "--j", "2", "--threads", "2", "--out", s(&a)]);
    assert_eq!(code(&o), 0);
    let o = iflat(&["run", "--config", s(&a.join("config.toml")), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(a.join("series.csv")).unwrap(),
        std::fs::read(b.join("series.csv")).unwrap()
    );
}

#[test]
fn identical_metrics_bound_has_no_gap_terms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = iflat(&["run", "--family", "round-sphere", "--j", "1", "--resolution", "20", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = &json(&out.join("report.json"))["runs"][0]["report"];
    let f = |k: &str| r[k].as_f64().unwrap();
    assert_eq!(f("delta"), 0.0);
    assert_eq!(f("vol0"), f("volj"));
    let d = f("diameter");
    let l = f("lambda_prime");
    let h = (2.0 * l * d + l * l).sqrt();
    assert!((f("h") - h).abs() < 1e-12);
    assert!((f("bound") - (2.0 / f("kappa") * f("vol0") + h * f("v"))).abs() < 1e-9);
}

#[test]
fn torus_family_is_refused_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = iflat(&["flatbound", "--family", "finsler-torus", "--j", "2", "--resolution", "16", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let r = json(&out.join("flatbound.json"));
    assert_eq!(r["status"], "infeasible");
    assert_eq!(r["runs"][0]["status"], "infeasible");
    assert!(r["runs"][0]["error"].as_str().unwrap().contains("dominate"));
}

#[test]
fn ilmanen_example_checks_pole_distance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = iflat(&["example", "ilmanen", "--j", "4", "--resolution", "24", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("example.json"));
    let p = &r["runs"][0]["pole_distance"];
    assert_eq!(p["within_3_percent"], true);
    assert!(p["dj"].as_f64().unwrap() > p["d0"].as_f64().unwrap());
    assert!(r["runs"][0]["report"]["bound"].as_f64().unwrap() > 0.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("pole-to-pole"));
}

#[test]
fn finsler_example_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = iflat(&["example", "finsler-torus", "--j", "4", "--resolution", "24", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("finsler_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    let r = json(&out.join("example.json"));
    assert_eq!(r["runs"][0]["dominated"], false);
    let first = &r["runs"][0]["pairs"][0];
    assert!(first["dj"].as_f64().unwrap() < 0.5 * first["d0"].as_f64().unwrap());
}

#[test]
fn zspace_verify_emits_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = iflat(&["zspace-verify", "--family", "ilmanen", "--j", "2", "--resolution", "16", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("zspace.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["runs"][0]["certified"], true);
    assert_eq!(r["runs"][0]["valid"]["report"]["phi0_violations"], 0);
}

#[test]
fn module_wrappers_run() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["mesh-build", "dist", "volume", "goodset", "tubes"] {
        let out = dir.path().join(cmd);
        let o = iflat(&[cmd, "--j", "2", "--resolution", "16", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("summary.txt").exists());
    }
    let dist = std::fs::read_to_string(dir.path().join("dist/dist_ilmanen-j2.csv")).unwrap();
    assert!(dist.starts_with("p,q,"));
    let d = json(&dir.path().join("dist/dist.json"));
    assert_eq!(d["runs"][0]["pairs_dj_below_d0"], 0);
    let t = json(&dir.path().join("tubes/tubes.json"));
    for tube in t["runs"][0]["tubes"].as_array().unwrap() {
        assert_eq!(tube["report"]["chain_holds"], true);
    }
}
