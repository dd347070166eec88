use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffkit"));
    c.env_remove("DIFFKIT_THREADS");
    c
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

struct Run {
    out: Output,
    dir: TempDir,
}

impl Run {
    fn code(&self) -> i32 {
        self.out.status.code().unwrap()
    }

    fn json(&self) -> Value {
        serde_json::from_slice(&self.out.stdout).expect("stdout is JSON")
    }

    fn file(&self, name: &str) -> String {
        std::fs::read_to_string(self.dir.path().join(name)).unwrap()
    }

    fn csv(&self, name: &str) -> Vec<Vec<f64>> {
        self.file(name)
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    }
}

fn run(cmd: &str, config: &str, extra: &[&str]) -> Run {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = bin()
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(extra)
        .output()
        .unwrap();
    Run { out, dir }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn classify_reports() {
    let r = run("classify", r#"{"model": {"family": "gbm", "params": [0.3]}}"#, &[]);
    assert_eq!(r.code(), 0);
    assert_eq!(r.json()["martingale"], "yes");
    let r = run("classify", r#"{"model": {"family": "inverse-bessel3"}}"#, &[]);
    assert_eq!(r.code(), 0);
    assert_eq!(r.json()["martingale"], "no");
    assert_eq!(r.json()["strictly_positive"], "yes");
    // ∫ dx/(x (ln x)^1.001) converges far too slowly to decide
    let slow = r#"{"model": {"sigma": "1", "drift": "(1/x + 1.001/(x*log(x)))/2", "interval": [3, "inf"]}}"#;
    let r = run("classify", slow, &[]);
    assert_eq!(r.code(), 2);
    assert_eq!(r.json()["right"]["accessible"], "inconclusive");
}

#[test]
fn config_errors() {
    for bad in [
        r#"{"model": "#,
        r#"{"model": {"family": "gbm", "params": [0.3]}, "extra": 1}"#,
        r#"{"model": {"family": "gbm", "params": [0.3], "colour": "red"}}"#,
        r#"{"model": {"family": "nope"}}"#,
        r#"{"model": {"sigma": "x^2"}}"#,
        r#"{"model": {"sigma": "x^", "interval": [0, 1]}}"#,
    ] {
        let r = run("classify", bad, &[]);
        assert_eq!(r.code(), 1, "{bad}");
        assert!(!r.out.stderr.is_empty());
    }
    // the command's block is missing
    assert_eq!(run("price-eu", r#"{"model": {"family": "inverse-bessel3"}}"#, &[]).code(), 1);
    let no_config = bin().arg("classify").output().unwrap();
    assert_eq!(no_config.status.code(), Some(1));
}

#[test]
fn golden_files() {
    for (cmd, cfg, file, gold) in [
        ("classify", "classify_gbm.config.json", "classify.json", "classify_gbm.json"),
        ("stationary", "stationary_bm.config.json", "stationary.csv", "stationary_bm.csv"),
    ] {
        let dir = TempDir::new().unwrap();
        let out = bin()
            .arg(cmd)
            .arg("--config")
            .arg(golden(cfg))
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
        let got = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(got, std::fs::read_to_string(golden(gold)).unwrap(), "{cmd}");
    }
}

const EXIT: &str = r#"{"model": {"family": "brownian", "interval": [0, 1]},
    "sim": {"dt": 1e-3, "paths": 4000, "seed": 11},
    "exit": {"x": 0.5, "y": 0.5, "t": [0, 0.1, 0.25, 0.5]}}"#;

#[test]
fn exit_distribution() {
    let a = run("exit-dist", EXIT, &["--threads", "1"]);
    assert_eq!(a.code(), 0);
    let rows = a.csv("exit_dist.csv");
    assert_eq!(rows[0], vec![0.0, 1.0, 0.0]);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));
    let last = &rows[3];
    assert!((last[1] - 0.10798).abs() < 4.0 * last[2] + 0.005, "{last:?}");
    // byte-identical under a different worker count, changes with the seed
    let b = run("exit-dist", EXIT, &["--threads", "3"]);
    assert_eq!(a.file("exit_dist.csv"), b.file("exit_dist.csv"));
    let c = run("exit-dist", EXIT, &["--threads", "1", "--seed", "12"]);
    assert_ne!(a.file("exit_dist.csv"), c.file("exit_dist.csv"));
}

fn pde_config(model: &str, payoff: &str, horizon: f64, extra: &str) -> String {
    format!(
        r#"{{"model": {model}, "pde": {{"payoff": "{payoff}", "spot": 1, "horizon": {horizon}, "nx": 300, "nt": 300, "surface_stride": 25{extra}}}}}"#
    )
}

const IB3: &str = r#"{"family": "inverse-bessel3"}"#;
const GBM: &str = r#"{"family": "gbm", "params": [0.3]}"#;

#[test]
fn european_prices() {
    let r = run("price-eu", &pde_config(IB3, "x", 1.0, ""), &[]);
    assert_eq!(r.code(), 0);
    let p = f(&r.json()["price"]);
    assert!((p / 0.682689 - 1.0).abs() < 5e-3, "{p}");
    assert!(r.file("surface.csv").starts_with("t,x,w,v\n"));
    let r = run("price-eu", &pde_config(IB3, "min(x, 3)", 0.0, ""), &[]);
    assert_eq!(f(&r.json()["price"]), 1.0);
    let r = run("price-eu", &pde_config(IB3, "0", 1.0, ""), &[]);
    assert_eq!(f(&r.json()["price"]), 0.0);
    let a = run("price-eu", &pde_config(IB3, "x", 1.0, ""), &[]);
    assert_eq!(a.file("surface.csv"), run("price-eu", &pde_config(IB3, "x", 1.0, ""), &[]).file("surface.csv"));
}

#[test]
fn nonuniqueness_demo() {
    let r = run("demo-nonuniqueness", &pde_config(IB3, "x", 1.0, ""), &[]);
    assert_eq!(r.code(), 0);
    let v = r.json();
    assert!(f(&v["gap"]) >= 0.25);
    assert_eq!(v["farfield"], "payoff-linear");
    let r = run("demo-nonuniqueness", &pde_config(GBM, "x", 1.0, r#", "farfield": {"dirichlet": 10000}"#), &[]);
    let v = r.json();
    assert!(f(&v["gap"]).abs() <= 0.01);
    assert_eq!(f(&v["farfield"]["dirichlet"]), 10000.0);
    let bad = run("demo-nonuniqueness", &pde_config(GBM, "x", 1.0, r#", "farfield": "far""#), &[]);
    assert_eq!(bad.code(), 1);
}

#[test]
fn american_values() {
    let put = r#"{"model": {"sigma": "0.3*x", "drift": "0.05*x", "interval": [0, "inf"]},
        "optstop": {"lambda": 0.05, "payoff": "max(1-x, 0)", "anchor": 1, "nodes": 1001}}"#;
    let r = run("price-am", put, &[]);
    assert_eq!(r.code(), 0);
    let v = r.json();
    let b = f(&v["region"][0][1]);
    assert!((b / 0.52632 - 1.0).abs() < 0.02, "{b}");
    assert!((f(&v["value"]) / 0.2322 - 1.0).abs() < 0.01);
    let rows = r.csv("stopping.csv");
    // columns x, s~, g^, G, V, in_gamma: G majorizes g^ and V dominates the payoff
    assert!(rows.iter().all(|row| row[3] >= row[2] - 1e-9 && row[4] >= (1.0 - row[0]).max(0.0) - 1e-9));

    let zero = r#"{"model": {"family": "brownian"}, "optstop": {"lambda": 0.5, "payoff": "0", "anchor": 0, "nodes": 201}}"#;
    assert_eq!(f(&run("price-am", zero, &[]).json()["value"]), 0.0);

    let fast = r#"{"model": {"family": "brownian"}, "optstop": {"lambda": 0.5, "payoff": "exp(1.5*x)", "anchor": 0, "nodes": 201}}"#;
    let r = run("price-am", fast, &[]);
    assert_eq!(r.code(), 3);
    let v = r.json();
    assert_eq!(v["value"], "inf");
    assert_eq!(v["finiteness"]["witness"], "right");
}

#[test]
fn stationary_density() {
    let cfg = r#"{"model": {"family": "brownian"}, "stationary": {"transform": "alpha-atom", "alpha": 0.5, "y": 0, "x_min": -10, "x_max": 10, "points": 2001}}"#;
    let r = run("stationary", cfg, &[]);
    assert_eq!(r.code(), 0);
    let rows = r.csv("stationary.csv");
    let n = rows.len();
    let mass: f64 = rows.windows(2).map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0])).sum();
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    for i in 0..n {
        assert!((rows[i][1] - rows[n - 1 - i][1]).abs() < 1e-9);
        assert!((rows[i][1] - (-2.0 * rows[i][0].abs()).exp()).abs() < 1e-6);
    }
}
