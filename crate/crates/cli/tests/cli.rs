use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const QUADRATIC: &str = r#"{"kind": "from_metric", "metric": {"kind": "euclidean", "p": 2}, "psi": {"kind": "power", "p": 2}}"#;

fn half_quadratic() -> String {
    format!(r#"{{"kind": "linear_combination", "terms": [{{"theta": 0.5, "cost": {QUADRATIC}}}]}}"#)
}

struct Run {
    code: i32,
    out: PathBuf,
    stderr: String,
}

fn run(dir: &TempDir, name: &str, subcommand: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = dir.path().join(format!("{name}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join(name);
    let o = Command::new(env!("CARGO_BIN_EXE_actionspace"))
        .arg(subcommand)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .env_remove("ASK_THREADS")
        .output()
        .unwrap();
    Run {
        code: o.status.code().unwrap(),
        out,
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn check_axioms_passes_for_quadratic_cost() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"cost": {QUADRATIC}, "corpus": [[0, 0], [1, 0], [0, 2], [-1, 1]], "samples": 2000}}"#);
    let r = run(&dir, "axioms", "check-axioms", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summary(&r.out);
    assert_eq!(s["result"]["all_pass"], Value::Bool(true));
    let table = rows(&r.out.join("axioms.csv"));
    assert_eq!(table.len(), 4);
    assert!(table.iter().all(|row| &row[2] == "true"));
}

#[test]
fn check_axioms_on_finite_space_is_exhaustive() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"cost": {"kind": "from_metric", "metric": {"kind": "table", "n": 3,
                   "d": [[0, 1, 2], [1, 0, 1.5], [2, 1.5, 0]]}, "psi": {"kind": "power", "p": 2}}}"#;
    let r = run(&dir, "finite", "check-axioms", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summary(&r.out);
    assert_eq!(s["result"]["mode"], "exhaustive");
    assert_eq!(s["result"]["all_pass"], Value::Bool(true));
}

#[test]
fn metric_with_lambda_four_and_square_gauge_doubles_distance() {
    let dir = TempDir::new().unwrap();
    let points: [[f64; 2]; 3] = [[0.0, 0.0], [3.0, 4.0], [-1.0, 2.0]];
    let cfg = format!(r#"{{"cost": {QUADRATIC}, "points": {}, "lambdas": [4]}}"#, serde_json::to_string(&points).unwrap());
    let r = run(&dir, "metric", "metric", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = rows(&r.out.join("metric.csv"));
    assert_eq!(table.len(), 3);
    for row in &table {
        let (i, j): (usize, usize) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
        assert!((num(&row[3]) - 2.0 * d).abs() < 1e-8, "{row:?}");
        assert!((num(&row[6]) - 2.0 * d).abs() < 1e-12, "{row:?}");
        assert!(num(&row[4]) <= num(&row[3]) + 1e-9 && num(&row[3]) <= num(&row[5]) + 1e-9);
    }
}

#[test]
fn malformed_json_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let r = run(&dir, "bad", "metric", "{\"cost\": ", &[]);
    assert_eq!(r.code, 2);
    let s = summary(&r.out);
    assert_eq!(s["status"], "error");
    assert_eq!(s["exit_code"], 2);
}

#[test]
fn unknown_keys_and_invalid_values_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"cost": {QUADRATIC}, "points": [[0], [1]], "lambdas": [1], "colour": "red"}}"#);
    assert_eq!(run(&dir, "unknown", "metric", &cfg, &[]).code, 2);
    let cfg = format!(r#"{{"cost": {QUADRATIC}, "points": [[0], [1]], "lambdas": [-1]}}"#);
    assert_eq!(run(&dir, "negative", "metric", &cfg, &[]).code, 2);
    let cfg = r#"{"cost": {"kind": "from_metric", "metric": {"kind": "euclidean", "p": 2}, "psi": {"kind": "power", "p": 0.5}},
                  "points": [[0], [1]], "lambdas": [1]}"#;
    assert_eq!(run(&dir, "concave_psi", "metric", cfg, &[]).code, 2);
    let missing = Command::new(env!("CARGO_BIN_EXE_actionspace"))
        .args(["mm", "--config", "/nonexistent/config.json", "--out"])
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn action_of_parabola_samples() {
    let dir = TempDir::new().unwrap();
    let n = 64;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let points: Vec<[f64; 1]> = times.iter().map(|t| [t * t]).collect();
    let cfg = format!(
        r#"{{"cost": {QUADRATIC}, "curve": {{"times": {}, "points": {}, "interpolation": "none"}}}}"#,
        serde_json::to_string(&times).unwrap(),
        serde_json::to_string(&points).unwrap()
    );
    let r = run(&dir, "action", "action", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    // Uniform n-piece sum for t^2 under |du|^2 / dt: 4/3 - 1 / (3 n^2)
    let want = 4.0 / 3.0 - 1.0 / (3.0 * (n * n) as f64);
    let v = summary(&r.out)["result"]["value"].as_f64().unwrap();
    assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    let table = rows(&r.out.join("action.csv"));
    assert_eq!(table.last().unwrap()[1].parse::<usize>().unwrap(), n);
}

#[test]
fn density_of_polyline() {
    let dir = TempDir::new().unwrap();
    // speed 2 on [0, 1], speed 1 on [1, 2]: density 4 then 1, integral 5
    let cfg = format!(
        r#"{{"cost": {QUADRATIC}, "curve": {{"times": [0, 1, 2], "points": [[0], [2], [1]]}}, "grid_n": 30}}"#
    );
    let r = run(&dir, "density", "density", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summary(&r.out);
    assert!((s["result"]["action"].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert!((s["result"]["integral"].as_f64().unwrap() - 5.0).abs() < 1e-6);
    for row in rows(&r.out.join("density.csv")) {
        let (t, g) = (num(&row[0]), num(&row[1]));
        let want = if t < 1.0 { 4.0 } else { 1.0 };
        assert!((g - want).abs() < 1e-6, "t = {t}: {g}");
    }
}

#[test]
fn density_without_evaluator_is_a_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{"cost": {QUADRATIC}, "curve": {{"times": [0, 1], "points": [[0], [1]], "interpolation": "none"}}, "grid_n": 4}}"#
    );
    let r = run(&dir, "no_eval", "density", &cfg, &[]);
    assert_eq!(r.code, 3);
    assert_eq!(summary(&r.out)["status"], "error");
}

#[test]
fn geodesic_flags_override_config() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"cost": {QUADRATIC}, "u0": [0, 0], "u1": [2, 1], "depth": 2}}"#);
    let r = run(&dir, "geo", "geodesic", &cfg, &["--depth", "4", "--tau", "2"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = rows(&r.out.join("geodesic.csv"));
    assert_eq!(table.len(), 17);
    for (k, row) in table.iter().enumerate() {
        let s = k as f64 / 16.0;
        assert!((num(&row[0]) - 2.0 * s).abs() < 1e-12);
        assert!((num(&row[1]) - 2.0 * s).abs() < 1e-6 && (num(&row[2]) - s).abs() < 1e-6);
    }
    let res = &summary(&r.out)["result"];
    // |(2, 1)|^2 / 2
    assert!((res["cost"].as_f64().unwrap() - 2.5).abs() < 1e-12);
    let gap = res["gap"].as_f64().unwrap();
    assert!((-1e-9..=1e-3).contains(&gap));
}

#[test]
fn mm_matches_implicit_euler_recursion() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{"cost": {}, "energy": {{"kind": "quadratic", "center": [0]}}, "tau": 0.1, "T": 1, "u0": [1]}}"#,
        half_quadratic()
    );
    let r = run(&dir, "mm", "mm", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = rows(&r.out.join("mm.csv"));
    assert_eq!(table.len(), 11);
    for (n, row) in table.iter().enumerate() {
        let want = 1.1f64.powi(-(n as i32));
        assert!((num(&row[2]) - want).abs() < 1e-8, "step {n}");
        assert!((num(&row[3]) - want * want / 2.0).abs() < 1e-8);
    }
    assert_eq!(&table[0][4], "");
}

#[test]
fn mm_on_finite_space_reports_global_steps() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"cost": {"kind": "from_metric", "metric": {"kind": "table", "n": 3,
                   "d": [[0, 1, 2], [1, 0, 1], [2, 1, 0]]}, "psi": {"kind": "power", "p": 2}},
                  "energy": {"kind": "table", "values": [3, 1, -0.5]}, "tau": 1, "T": 3, "u0": 0}"#;
    let r = run(&dir, "mm_finite", "mm", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(summary(&r.out)["result"]["optimality"], "global");
    // from 0: states cost 3, 1 + 1, 4 - 0.5; from 1: 1 + 3, 1, 1 - 0.5
    let states: Vec<String> = rows(&r.out.join("mm.csv")).iter().map(|r| r[2].to_string()).collect();
    assert_eq!(states, ["0", "1", "2", "2"]);
}

#[test]
fn study_order_is_near_one() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{"cost": {}, "energy": {{"kind": "quadratic", "center": [0]}}, "taus": [0.1, 0.05, 0.025, 0.0125],
            "T": 1, "u0": [1], "reference": {{"kind": "exponential", "rate": 1}}}}"#,
        half_quadratic()
    );
    let r = run(&dir, "study", "study", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = rows(&r.out.join("study.csv"));
    assert_eq!(table.len(), 4);
    assert_eq!(&table[0][2], "");
    for row in &table[1..] {
        assert!((num(&row[2]) - 1.0).abs() < 0.2, "{row:?}");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (
            "check-axioms",
            format!(r#"{{"cost": {QUADRATIC}, "corpus": [[0], [1], [3], [-2]], "samples": 3000, "seed": 11}}"#),
            "axioms.csv",
        ),
        (
            "metric",
            format!(r#"{{"cost": {QUADRATIC}, "points": [[0], [1], [5]], "lambdas": [0.5, 2]}}"#),
            "metric.csv",
        ),
        (
            "density",
            format!(r#"{{"cost": {QUADRATIC}, "curve": {{"times": [0, 1, 2], "points": [[0], [1], [3]]}}, "grid_n": 50}}"#),
            "density.csv",
        ),
        (
            "study",
            format!(
                r#"{{"cost": {}, "energy": {{"kind": "quadratic", "center": [0]}}, "taus": [0.2, 0.1, 0.05], "T": 1, "u0": [1]}}"#,
                half_quadratic()
            ),
            "study.csv",
        ),
    ];
    for (i, (sub, cfg, file)) in cases.iter().enumerate() {
        let a = run(&dir, &format!("a{i}"), sub, cfg, &["--threads", "1"]);
        let b = run(&dir, &format!("b{i}"), sub, cfg, &["--threads", "4"]);
        assert_eq!(a.code, 0, "{}", a.stderr);
        assert_eq!(b.code, 0, "{}", b.stderr);
        for f in [*file, "summary.json"] {
            assert_eq!(
                fs::read(a.out.join(f)).unwrap(),
                fs::read(b.out.join(f)).unwrap(),
                "{sub}: {f} differs"
            );
        }
    }
}

#[test]
fn zero_threads_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"cost": {QUADRATIC}, "points": [[0], [1]], "lambdas": [1]}}"#);
    assert_eq!(run(&dir, "zero", "metric", &cfg, &["--threads", "0"]).code, 2);
}
