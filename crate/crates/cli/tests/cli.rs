use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FORCED: &str = "configs/forced_nonsmooth.json";

fn pavg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pavg"))
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .args(args)
        .output()
        .expect("pavg runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).expect("schema compiles")
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pavg-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn avg_of_the_linear_system() {
    let out = json(&pavg(&["--system", "linear", "avg", "--point", "1.0"]));
    assert_valid(&schema("avg_report.schema.json"), &out);
    assert!((out["g0_value"][0].as_f64().unwrap() + 2.0 * PI).abs() < 1e-12);
    assert!(out["jacobian"].is_null());
}

#[test]
fn avg_at_the_free_cycle_vanishes() {
    let point = format!("{},0", 3.0 * PI / 4.0);
    let out = json(&pavg(&[
        "--system",
        "nonsmooth_vdp",
        "avg",
        "--point",
        &point,
        "--jacobian",
    ]));
    assert_valid(&schema("avg_report.schema.json"), &out);
    let g: Vec<f64> = out["g0_value"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(g[0].hypot(g[1]) <= 1e-8);
    assert_eq!(out["jacobian"].as_array().unwrap().len(), 2);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = scratch("bad");
    let cases = [
        ("malformed.json", "{ \"system\": \"linear\", "),
        ("unknown.json", r#"{"system": "linear", "nodes": 64}"#),
        ("odd_nodes.json", r#"{"system": "linear", "quadrature_nodes": 33}"#),
        ("bad_param.json", r#"{"system": "nonsmooth_vdp", "params": {"mu": 1}}"#),
        ("bad_system.json", r#"{"system": "duffing"}"#),
        (
            "bad_expr.json",
            r#"{"system": {"dim": 1, "period": 1, "components": ["x2"]}}"#,
        ),
    ];
    for (name, text) in cases {
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        let o = pavg(&["--config", path.to_str().unwrap(), "avg", "--point", "1,1"]);
        assert_eq!(code(&o), 2, "{name}");
        assert!(o.stdout.is_empty(), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("pavg: "), "{name}");
    }
    // dimension mismatch, missing point, bad flag
    assert_eq!(code(&pavg(&["--system", "linear", "avg", "--point", "1,2"])), 2);
    assert_eq!(code(&pavg(&["--system", "linear", "avg"])), 2);
    assert_eq!(code(&pavg(&["--system", "linear", "avg", "--point", "x"])), 2);
    assert_eq!(code(&pavg(&["avg", "--point", "1"])), 2);
    assert_eq!(
        code(&pavg(&["--config", "/nonexistent.json", "avg", "--point", "1"])),
        2
    );
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn flags_override_the_config() {
    let o = json(&pavg(&[
        "--config", FORCED, "--param", "lambda=0", "--param", "a=0", "avg",
    ]));
    // same point, but now the unforced field is averaged there
    let g = o["g0_value"].as_array().unwrap();
    let forced = json(&pavg(&["--config", FORCED, "avg"]));
    assert!(forced["g0_value"][0].as_f64().unwrap().abs() < 1e-9);
    assert!(g[0].as_f64().unwrap().abs() > 1e-3 || g[1].as_f64().unwrap().abs() > 1e-3);
    let o = json(&pavg(&["--config", FORCED, "--nodes", "64", "avg"]));
    assert_eq!(o["quadrature_nodes"], 64);
}

#[test]
fn roots_csv_and_empty_result() {
    let o = pavg(&[
        "--config", FORCED, "roots", "--lo", "-5,-5", "--hi", "5,5", "--grid", "20",
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("x1,x2,residual,iterations,converged,condition,near_singular")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 7 && r[4] == "true"));
    assert!(rows.iter().any(|r| {
        let (m, n): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        (m.hypot(n) - 3.2).abs() < 1e-8
    }));

    let o = pavg(&["--system", "linear", "roots", "--lo", "1", "--hi", "2"]);
    assert_eq!(code(&o), 3);
    assert!(o.stdout.is_empty());
    assert_eq!(
        code(&pavg(&["--system", "linear", "roots", "--lo", "2", "--hi", "1"])),
        2
    );
}

#[test]
fn certify_reports_validate_and_classify() {
    let v = schema("certify_report.schema.json");
    let fast = ["--lipschitz-samples", "500", "--pairwise-samples", "200"];

    let mut args = vec!["--config", FORCED, "certify"];
    args.extend(fast);
    let o = json(&pavg(&args));
    assert_valid(&v, &o);
    assert_eq!(o["verdict"], "certified");
    let q = o["certificate"]["q"].as_f64().unwrap();
    assert!(q < 1.0);

    let point = format!("{},0", 3.0 * PI / 4.0);
    let mut args = vec!["--system", "nonsmooth_vdp", "certify", "--point", &point];
    args.extend(fast);
    let o = json(&pavg(&args));
    assert_valid(&v, &o);
    assert_eq!(o["verdict"], "degenerate");

    let mut args = vec!["--system", "nonsmooth_vdp", "certify", "--point", "1,1"];
    args.extend(fast);
    let o = json(&pavg(&args));
    assert_valid(&v, &o);
    assert!(o["verdict"].as_str().unwrap().starts_with("failed("));
}

#[test]
fn certify_is_reproducible_for_a_seed() {
    let run = |seed: &str| {
        pavg(&[
            "--config",
            FORCED,
            "--seed",
            seed,
            "certify",
            "--lipschitz-samples",
            "300",
            "--pairwise-samples",
            "100",
        ])
        .stdout
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

#[test]
fn verify_writes_csv_and_summary() {
    let dir = scratch("verify");
    let (csv, summary) = (dir.join("sweep.csv"), dir.join("sweep.json"));
    let o = pavg(&[
        "--config",
        FORCED,
        "verify",
        "--eps",
        "0.05,0.02,0.01",
        "--out",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_valid(&schema("verify_summary.schema.json"), &doc);
    assert!(doc["order"].as_f64().unwrap() > 0.9);

    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let width = lines[0].split(',').count();
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), width);
        assert_eq!(cells[8], "stable");
        assert!(cells.last().unwrap().is_empty());
    }

    // summary to stdout when only --out is given
    let o = pavg(&[
        "--config",
        FORCED,
        "verify",
        "--eps",
        "0.05,0.02,0.01",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_valid(&schema("verify_summary.schema.json"), &json(&o));
    assert_eq!(
        code(&pavg(&["--config", FORCED, "verify", "--eps", "0.01,0.02,0.05"])),
        2
    );
    assert_eq!(code(&pavg(&["--config", FORCED, "verify", "--eps", "0.05,0.02"])), 2);
    let _ = std::fs::remove_dir_all(dir);
}

fn resonance_rows(args: &[&str]) -> Vec<Vec<String>> {
    let o = pavg(args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("a,lambda,A,M,N,phi,ineq6,ineq7,hurwitz,stable,degenerate")
    );
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn resonance_free_cycles() {
    let rows = resonance_rows(&[
        "resonance",
        "--model",
        "nonsmooth",
        "--lambda",
        "0",
        "--a",
        "0",
        "0",
        "--n",
        "1",
    ]);
    assert_eq!(rows.len(), 1);
    let num = |i: usize| rows[0][i].parse::<f64>().unwrap();
    assert!((num(2) - 3.0 * PI / 4.0).abs() < 1e-12);
    assert!(num(6).abs() < 1e-12 && (num(7) + PI).abs() < 1e-12);
    assert_eq!(rows[0][10], "true");

    let rows = resonance_rows(&[
        "resonance",
        "--model",
        "classical",
        "--lambda",
        "0",
        "--a",
        "0",
        "0",
        "--n",
        "1",
    ]);
    assert_eq!(rows.len(), 1);
    assert!((rows[0][2].parse::<f64>().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn resonance_rejects_bad_flags() {
    let base = [
        "resonance",
        "--model",
        "nonsmooth",
        "--lambda",
        "1",
        "--a",
        "-1",
        "1",
        "--n",
    ];
    for n in ["0", "100001", "-3"] {
        let mut args = base.to_vec();
        args.push(n);
        assert_eq!(code(&pavg(&args)), 2, "n = {n}");
    }
    assert_eq!(
        code(&pavg(&[
            "resonance",
            "--model",
            "duffing",
            "--lambda",
            "1",
            "--a",
            "0",
            "1",
            "--n",
            "3"
        ])),
        2
    );
    assert_eq!(
        code(&pavg(&[
            "resonance",
            "--model",
            "nonsmooth",
            "--lambda",
            "-1",
            "--a",
            "0",
            "1",
            "--n",
            "3"
        ])),
        2
    );
    assert_eq!(
        code(&pavg(&[
            "resonance",
            "--model",
            "nonsmooth",
            "--lambda",
            "1",
            "--a",
            "1",
            "0",
            "--n",
            "3"
        ])),
        2
    );
}

#[test]
fn resonance_svg_marks_points() {
    let dir = scratch("svg");
    let (csv, svg) = (dir.join("curve.csv"), dir.join("curve.svg"));
    let o = pavg(&[
        "resonance",
        "--model",
        "classical",
        "--lambda",
        "0.2",
        "--a",
        "-0.5",
        "0.5",
        "--n",
        "11",
        "--out",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count() - 1;
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("viewBox"));
    // three legend marks plus one per row
    let marks = text.matches("<circle").count() + text.matches("<polyline points").count();
    assert!(text.matches("<circle").count() >= 2);
    assert!(marks >= rows + 3);
    // the classical curve at small forcing has unstable middle branches
    assert!(text.contains(r#"fill="none" stroke="black"/>"#));
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn shipped_configs_validate() {
    let v = schema("config.schema.json");
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_valid(&v, &doc);
        n += 1;
    }
    assert!(n >= 2);
    // the schema agrees with the loader on unknown keys
    assert!(!v.is_valid(&serde_json::json!({"system": "linear", "nodes": 64})));
    assert!(!v.is_valid(&serde_json::json!({"quadrature_nodes": 33})));
    assert!(v.is_valid(&serde_json::json!({"integrator": {"method": "rk4", "steps_per_period": 500}})));
}

#[test]
fn text_field_config_runs() {
    let o = json(&pavg(&["--config", "configs/kink_dsl.json", "avg"]));
    assert!(o["g0_value"][0].as_f64().unwrap().abs() < 1e-12);
    let o = pavg(&["--config", "configs/kink_dsl.json", "verify", "--eps", "0.1,0.05,0.02"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // near x = 1 the field is -(x - 1) + cos t, the shifted linear test system
    let eps: f64 = 0.1;
    assert!((first[1].parse::<f64>().unwrap() - (1.0 + eps * eps / (1.0 + eps * eps))).abs() < 1e-8);
}
