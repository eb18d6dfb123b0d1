use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn mimik(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mimik"));
    cmd.args(args).env_remove("MIMIK_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn mimik")
}

struct Run {
    dir: TempDir,
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().unwrap_or(-1)
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn text(&self, name: &str) -> String {
        fs::read_to_string(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.text(name)).unwrap()
    }

    fn table(&self, name: &str) -> Vec<Vec<f64>> {
        let mut r = csv::Reader::from_path(self.out.join(name)).unwrap();
        r.records()
            .map(|rec| rec.unwrap().iter().map(|f| f.parse().unwrap()).collect())
            .collect()
    }
}

fn run_with(cmd: &str, cfg: &str, extra: &[&str], env: &[(&str, &str)]) -> Run {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, cfg).unwrap();
    let out = dir.path().join("out");
    let mut args = vec![cmd, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let output = mimik(&args, env);
    Run { dir, out, output }
}

fn run(cmd: &str, cfg: Value) -> Run {
    run_with(cmd, &cfg.to_string(), &[], &[])
}

fn bm_1d() -> Value {
    json!({
        "schema": 1,
        "models": [{"kind": "bm", "sigma": 1.0}],
        "grid": {"lo": -4.0, "hi": 4.0, "h": 0.25}
    })
}

fn bm_pair(rho: f64) -> Value {
    json!({
        "schema": 1,
        "models": [{"kind": "bm", "sigma": 1.0}, {"kind": "bm", "sigma": 1.0}],
        "grid": {"lo": -4.0, "hi": 4.0, "h": 0.25},
        "rho": {"constant": rho}
    })
}

fn with(mut base: Value, key: &str, v: Value) -> Value {
    base.as_object_mut().unwrap().insert(key.into(), v);
    base
}

fn leftovers(dir: &Path) -> Vec<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(".tmp"))
        .collect()
}

#[test]
fn build_bm_writes_tridiagonal_triplets() {
    let r = run("build", bm_1d());
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let rows = r.table("generator.csv");
    assert!(rows.iter().all(|t| (t[0] - t[1]).abs() <= 1.0));
    // 31 interior rows with three entries each; the two boundary rows are empty
    assert_eq!(rows.len(), 31 * 3);
    let v = r.json("validation.json");
    assert_eq!(v["validation"]["passed"], true);
    assert_eq!(v["dims"], json!([33]));
    assert!(leftovers(&r.out).is_empty());
}

#[test]
fn positivity_violation_exits_2() {
    let cfg = json!({
        "schema": 1,
        "models": [{"kind": "bm", "mu": 100.0, "sigma": 1.0}],
        "grid": {"lo": -4.0, "hi": 4.0, "h": 0.25}
    });
    let r = run("build", cfg);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("positivity"), "{}", r.stderr());
}

#[test]
fn schema_errors_exit_1() {
    let cases = [
        with(bm_1d(), "colour", json!("red")),
        with(bm_1d(), "schema", json!(2)),
        with(bm_1d(), "models", json!([{"kind": "heston", "sigma": 1.0}])),
        with(bm_1d(), "models", json!([{"kind": "bm", "sigma": 1.0, "nu": 3}])),
        with(bm_1d(), "grid", json!({"lo": -1.0, "hi": 1.0, "m": 9, "h": 0.25})),
        with(bm_pair(0.5), "rho", json!({"linear": {"c0": 0.1, "cz": 1.0}})),
        with(bm_1d(), "x0", json!([0.0, 1.0])),
    ];
    for cfg in cases {
        let r = run("build", cfg.clone());
        assert_eq!(r.code(), 1, "{cfg}: {}", r.stderr());
    }
    let r = run_with("build", "{ not json", &[], &[]);
    assert_eq!(r.code(), 1);
}

#[test]
fn joint_build_reports_row_sums() {
    for rep in ["direct", "conditional", "nested"] {
        let r = run("build", with(bm_pair(0.5), "representation", json!(rep)));
        assert_eq!(r.code(), 0, "{rep}: {}", r.stderr());
        let v = r.json("validation.json");
        assert_eq!(v["validation"]["passed"], true);
        assert!(v["validation"]["max_row_sum_residual"].as_f64().unwrap() <= 1e-10);
        assert_eq!(v["dims"], json!([33, 33]));
    }
}

#[test]
fn correlated_representation_without_rho_is_rejected() {
    let mut cfg = bm_pair(0.5);
    cfg.as_object_mut().unwrap().remove("rho");
    let r = run("build", with(cfg, "representation", json!("conditional")));
    assert_eq!(r.code(), 1);
}

#[test]
fn evolve_at_time_zero_is_the_identity() {
    let cfg = with(with(bm_1d(), "time", json!({"t": 0.0})), "x0", json!([1.0]));
    let r = run("evolve", cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let rows = r.table("distribution.csv");
    let hit: Vec<_> = rows.iter().filter(|t| t[1] != 0.0).collect();
    assert_eq!(hit.len(), 1);
    assert_eq!(hit[0][0], 1.0);
    assert_eq!(hit[0][1], 1.0);
}

#[test]
fn evolve_bm_moments() {
    let cfg = json!({
        "schema": 1,
        "models": [{"kind": "bm", "sigma": 1.0}],
        "grid": {"lo": -8.0, "hi": 8.0, "h": 0.125},
        "time": {"t": 1.0}
    });
    let r = run("evolve", cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let m = r.json("moments.json");
    let mass = m["moments"]["mass"].as_f64().unwrap();
    let var = m["moments"]["covariance"][0][0].as_f64().unwrap();
    assert!((mass - 1.0).abs() <= 1e-9);
    // absorbing walls at 8 sigma cost far less than the tolerance
    assert!((var - 1.0).abs() <= 1e-6, "{var}");
    let marg = r.table("marginal_1.csv");
    assert_eq!(marg.len(), 129);
}

#[test]
fn evolve_pair_emits_valid_copula_and_correlation() {
    let r = run("evolve", with(bm_pair(0.5), "time", json!({"t": 1.0})));
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let m = r.json("moments.json");
    let c = m["moments"]["correlation"][0][1].as_f64().unwrap();
    assert!((c - 0.5).abs() < 0.02, "{c}");
    assert_eq!(m["copula_axioms"]["passed"], true);
    let cop = r.table("copula.csv");
    assert_eq!(cop.len(), 34 * 34);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = with(bm_pair(0.3), "time", json!({"t": 0.5}));
    let a = run("evolve", cfg.clone());
    let b = run("evolve", cfg);
    for f in ["distribution.csv", "copula.csv", "moments.json"] {
        assert_eq!(a.text(f), b.text(f), "{f}");
    }
}

#[test]
fn csv_uses_lf_and_seventeen_digits() {
    let r = run("evolve", with(bm_1d(), "time", json!({"t": 1.0})));
    let text = r.text("distribution.csv");
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    let line = text.lines().nth(16).unwrap();
    let field = line.split(',').nth(1).unwrap();
    let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17, "{field}");
}

fn fit_config(target: Value, options: Value) -> Value {
    with(
        with(bm_pair(0.0), "time", json!({"t": 1.0})),
        "fit",
        json!({"target": target, "options": options}),
    )
}

#[test]
fn fit_independence_gives_a_flat_field() {
    let r = run("fit-copula", fit_config(json!({"family": "independence"}), json!({})));
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let fit = r.json("fit.json");
    assert_eq!(fit["converged"], true);
    let field = r.table("rho_field.csv");
    assert!(field.iter().all(|row| row[1..].iter().all(|v| v.abs() <= 0.02)));
    let trace: Vec<f64> = fit["trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.out.join("copula_target.csv").exists());
}

#[test]
fn fit_gaussian_recovers_the_parameter() {
    let r = run(
        "fit-copula",
        fit_config(json!({"family": "gaussian", "theta": [0.5]}), json!({"levels": [1]})),
    );
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let fit = r.json("fit.json");
    let p = fit["params"][0].as_f64().unwrap();
    assert!((p.tanh() - 0.5).abs() <= 0.05, "{}", p.tanh());
    assert!(fit["objective"].as_f64().unwrap() <= 0.1 * fit["initial_objective"].as_f64().unwrap());
    let trace: Vec<f64> = fit["trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn fit_non_convergence_exits_3_with_artifacts() {
    let r = run(
        "fit-copula",
        fit_config(json!({"family": "gaussian", "theta": [0.5]}), json!({"max_iter": 1, "levels": [1]})),
    );
    assert_eq!(r.code(), 3, "{}", r.stderr());
    for f in ["fit.json", "rho_field.csv", "copula_fitted.csv", "copula_target.csv"] {
        assert!(r.out.join(f).exists(), "{f}");
    }
    assert_eq!(r.json("fit.json")["converged"], false);
}

#[test]
fn fit_rejects_bad_target_and_missing_block() {
    let r = run("fit-copula", fit_config(json!({"family": "gaussian", "theta": [1.5]}), json!({})));
    assert_eq!(r.code(), 2, "{}", r.stderr());
    let r = run("fit-copula", with(bm_pair(0.0), "time", json!({"t": 1.0})));
    assert_eq!(r.code(), 1);
    let r = run("fit-copula", fit_config(json!({"family": "gaussian", "theta": [0.5]}), json!({"speed": 2})));
    assert_eq!(r.code(), 1);
}

fn sweep(kind: &str, h: Value) -> Value {
    json!({
        "schema": 1,
        "models": [{"kind": "bm", "mu": 1.0, "sigma": 1.0}],
        "grid": {"lo": -4.0, "hi": 4.0, "m": 3},
        "time": {"t": 1.0},
        "sweep": {"kind": kind, "h": h}
    })
}

#[test]
fn converge_symbol_slope_is_second_order() {
    let r = run("converge", sweep("symbol", json!([0.2, 0.1, 0.05, 0.025])));
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let s = r.json("slope.json");
    let slope = s["slope"].as_f64().unwrap();
    assert!((1.8..=2.2).contains(&slope), "{slope}");
    assert_eq!(s["monotone"], true);
    assert_eq!(r.table("rates.csv").len(), 4);
}

#[test]
fn converge_ks_decreases_for_ou() {
    let mut cfg = sweep("ks", json!([0.5, 0.25, 0.125]));
    cfg["models"] = json!([{"kind": "ou", "kappa": 1.0, "sigma": std::f64::consts::SQRT_2}]);
    cfg["x0"] = json!([1.0]);
    let r = run("converge", cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let s = r.json("slope.json");
    assert_eq!(s["monotone"], true, "{s}");
}

#[test]
fn converge_cross_needs_a_pair() {
    let mut cfg = sweep("cross", json!([0.2, 0.1, 0.05]));
    let r = run("converge", cfg.clone());
    assert_eq!(r.code(), 1);
    cfg["models"] = json!([{"kind": "bm", "sigma": 1.0}, {"kind": "bm", "sigma": 2.0}]);
    cfg["rho"] = json!({"constant": -0.4});
    let r = run("converge", cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let errors = r.json("slope.json")["errors"].clone();
    let e: Vec<f64> = errors.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn converge_rejects_empty_and_irregular_sweeps() {
    assert_eq!(run("converge", sweep("symbol", json!([]))).code(), 1);
    assert_eq!(run("converge", sweep("symbol", json!([0.2, 0.1, 0.07]))).code(), 1);
    assert_eq!(run("converge", sweep("ks", json!([0.2, -0.1]))).code(), 1);
}

#[test]
fn monte_carlo_sweep_follows_the_seed() {
    let cfg = json!({
        "schema": 1,
        "models": [{"kind": "cir", "kappa": 1.0, "theta": 1.0, "sigma": 0.5}],
        "grid": {"lo": 0.4, "hi": 3.0, "m": 3},
        "x0": [1.0],
        "time": {"t": 0.5},
        "sweep": {"kind": "ks", "h": [0.1, 0.05], "paths": 2000}
    })
    .to_string();
    let a = run_with("converge", &cfg, &["--seed", "7"], &[]);
    let b = run_with("converge", &cfg, &["--seed", "7"], &[]);
    let c = run_with("converge", &cfg, &["--seed", "8"], &[]);
    assert_eq!(a.code(), 0, "{}", a.stderr());
    assert_eq!(a.text("rates.csv"), b.text("rates.csv"));
    assert_ne!(a.text("rates.csv"), c.text("rates.csv"));
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let cfg = with(bm_pair(0.5), "time", json!({"t": 0.5})).to_string();
    let one = run_with("evolve", &cfg, &[], &[("MIMIK_THREADS", "1")]);
    let four = run_with("evolve", &cfg, &[], &[("MIMIK_THREADS", "4")]);
    assert_eq!(one.code(), 0, "{}", one.stderr());
    assert_eq!(one.text("distribution.csv"), four.text("distribution.csv"));
    let bad = run_with("evolve", &cfg, &[], &[("MIMIK_THREADS", "zero")]);
    assert_eq!(bad.code(), 1);
    drop(bad.dir);
}
