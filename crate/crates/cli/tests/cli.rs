use std::path::{Path, PathBuf};
use std::process::Command;

use exactpert_cli::problem::{parse_problem, parse_str, to_json};
use exactpert_cli::run;
use serde_json::Value;

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems")
}

fn example(name: &str) -> String {
    problems().join(name).to_string_lossy().into_owned()
}

fn exec(args: &[&str]) -> i32 {
    let mut argv = vec!["exactpert".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

/// Runs a command writing JSON and CSV into `dir`; returns (code, json, csv).
fn exec_to(dir: &Path, args: &[&str]) -> (i32, Value, Vec<Vec<String>>) {
    let out = dir.join("out.json");
    let csv = dir.join("out.csv");
    let _ = std::fs::remove_file(&out);
    let _ = std::fs::remove_file(&csv);
    let mut full: Vec<&str> = args.to_vec();
    let (o, c) = (out.to_string_lossy().into_owned(), csv.to_string_lossy().into_owned());
    full.extend(["--out", &o, "--csv", &c]);
    let code = exec(&full);
    let json = std::fs::read_to_string(&out)
        .map(|t| serde_json::from_str(&t).unwrap())
        .unwrap_or(Value::Null);
    let table = std::fs::read_to_string(&csv)
        .map(|t| {
            t.lines()
                .map(|l| l.split(',').map(str::to_string).collect())
                .collect()
        })
        .unwrap_or_default();
    (code, json, table)
}

fn catalan_number(n: u64) -> u64 {
    // C_n = binom(2n, n) / (n + 1), built incrementally in integers
    let mut c = 1u64;
    for k in 0..n {
        c = c * 2 * (2 * k + 1) / (k + 2);
    }
    c
}

#[test]
fn catalan_formal_csv_is_integral() {
    let dir = tempfile::tempdir().unwrap();
    let (code, json, csv) = exec_to(dir.path(), &["formal", &example("catalan.json"), "--order", "8"]);
    assert_eq!(code, 0);
    assert_eq!(csv[0], ["n", "re", "im"]);
    for (n, row) in csv[1..].iter().enumerate() {
        assert_eq!(row[0], n.to_string());
        assert_eq!(row[1], catalan_number(n as u64).to_string());
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(csv.len(), 10);
    assert_eq!(json["config"]["order"], 8);
    assert_eq!(json["command"], "formal");
}

#[test]
fn catalan_resum_matches_quadratic_formula() {
    let dir = tempfile::tempdir().unwrap();
    let (code, json, csv) = exec_to(dir.path(), &["resum", &example("catalan.json"), "--hbar", "0.1"]);
    assert_eq!(code, 0);
    let exact = (1.0 - (0.6f64).sqrt()) / 0.2;
    let value: f64 = csv[1][1].parse().unwrap();
    assert!((value - exact).abs() < 1e-7, "{value}");
    let deviation: f64 = csv[1][3].parse().unwrap();
    assert!(deviation < 1e-7);
    let cfg = &json["config"];
    assert_eq!(cfg["xi_max"], 40.0);
    assert_eq!(cfg["h"], 1e-3);
    assert_eq!(cfg["tol"], 1e-10);
    assert_eq!(cfg["n_max"], 50);
    assert_eq!(cfg["gap_tol"], 1e-6);
}

#[test]
fn eigen_rows_match_quadratic_formula() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, csv) = exec_to(dir.path(), &["eigen", &example("coupled_2x2.json"), "--hbar", "0.1"]);
    assert_eq!(code, 0);
    assert_eq!(csv[0], ["i", "hbar", "value", "oracle", "deviation"]);
    assert_eq!(csv.len(), 3);
    let h: f64 = 0.1;
    let root = (1.0 + 4.0 * h * h).sqrt();
    let exact = [(1.0 - root) / 2.0, (1.0 + root) / 2.0];
    for (row, e) in csv[1..].iter().zip(exact) {
        let v: f64 = row[2].parse().unwrap();
        let o: f64 = row[3].parse().unwrap();
        assert!((v - e).abs() < 1e-7 && (o - e).abs() < 1e-12);
    }
}

#[test]
fn euler_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, json, _) = exec_to(dir.path(), &["check", &example("euler.json")]);
    assert_eq!(code, 0);
    assert_eq!(json["report"]["passed"], true);
}

#[test]
fn every_subcommand_runs_on_its_example() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[(&str, &str, &[&str])] = &[
        ("standard-form", "catalan.json", &[]),
        ("borel", "exponential_standard.json", &[]),
        ("borel", "geometric.json", &[]),
        ("resum", "geometric.json", &[]),
        ("resum", "exponential_standard.json", &[]),
        ("majorant", "catalan.json", &[]),
        ("matrix", "coupled_2x2.json", &["--hbar", "0.05"]),
        ("formal", "coupled_2x2.json", &[]),
        ("check", "two_component.json", &[]),
        ("sweep", "catalan_sweep.json", &[]),
    ];
    for (cmd, file, extra) in cases {
        let mut args = vec![*cmd, &example(file)].iter().map(|s| s.to_string()).collect::<Vec<_>>();
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, json, csv) = exec_to(dir.path(), &refs);
        assert_eq!(code, 0, "{cmd} {file}");
        assert_eq!(json["command"], *cmd);
        assert!(csv.len() > 1, "{cmd} {file}");
    }
}

#[test]
fn exponential_borel_solution_and_resummation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, json, csv) = exec_to(dir.path(), &["borel", &example("exponential_standard.json")]);
    let worst = csv[1..]
        .iter()
        .map(|r| {
            let xi: f64 = r[0].parse().unwrap();
            (r[1].parse::<f64>().unwrap() - xi.exp()).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
    assert!(json["taylor_match"].as_f64().unwrap() < 1e-4);
    // w = hbar (1 + w) gives w = hbar / (1 - hbar)
    let (_, _, csv) = exec_to(dir.path(), &["resum", &example("exponential_standard.json"), "--hbar", "0.25"]);
    let w: f64 = csv[1][1].parse().unwrap();
    assert!((w - 1.0 / 3.0).abs() < 1e-7);
}

#[test]
fn shipped_examples_round_trip() {
    let mut n = 0;
    for entry in std::fs::read_dir(problems()).unwrap() {
        let path = entry.unwrap().path();
        let first = parse_problem(&path).unwrap();
        let text = to_json(&first);
        let second = parse_str(&text).unwrap();
        assert_eq!(first, second, "{}", path.display());
        assert_eq!(text, to_json(&second));
        n += 1;
    }
    assert!(n >= 8);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, file) in [("resum", "catalan.json"), ("eigen", "coupled_2x2.json"), ("majorant", "catalan.json")] {
        let (_, a, csv_a) = exec_to(dir.path(), &[cmd, &example(file)]);
        let (_, b, csv_b) = exec_to(dir.path(), &[cmd, &example(file)]);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(csv_a, csv_b);
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let bin = env!("CARGO_BIN_EXE_exactpert");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("sweep{threads}.json"));
        let status = Command::new(bin)
            .args(["sweep", &example("catalan_sweep.json"), "--out"])
            .arg(&out)
            .env("EXACTPERT_THREADS", threads)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let status = Command::new(bin)
        .args(["formal", &example("catalan.json"), "--quiet"])
        .env("EXACTPERT_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn constructed_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let catalan = example("catalan.json");
    let pole = write(
        d,
        "pole.json",
        r#"{"kind":"implicit","dim":1,"coeffs":[{"k":0,"m":[1],"i":1,"v":[1,0]}],
            "borel":[{"m":[0],"i":1,"rational":{"num":[[1,0]],"den":[[0.05,0],[-1,0]]}}],
            "seed":[[0,0]]}"#,
    );
    let schema = write(d, "schema.json", r#"{"kind":"implicit","dim":1,"coeffs":[{"k":0,"m":[1],"i":1,"v":"one"}],"seed":[[1,0]]}"#);
    let syntax = write(d, "syntax.json", "{\"kind\": \"implicit\",");
    let singular = write(
        d,
        "singular.json",
        r#"{"kind":"implicit","dim":1,"coeffs":[{"k":0,"m":[2],"i":1,"v":[1,0]},{"k":1,"m":[0],"i":1,"v":[-1,0]}],"seed":[[0,0]]}"#,
    );
    let no_root = write(
        d,
        "no_root.json",
        r#"{"kind":"implicit","dim":1,"coeffs":[{"k":0,"m":[2],"i":1,"v":[1,0]},{"k":0,"m":[0],"i":1,"v":[1,0]}],"seed":[[0.5,0]]}"#,
    );
    let coalescing = write(
        d,
        "coalescing.json",
        r#"{"kind":"matrix","size":2,"orders":[[[[1,0],[0,0]],[[0,0],[1,0]]],[[[0,0],[1,0]],[[1,0],[0,0]]]]}"#,
    );
    let missing = d.join("missing.json").to_string_lossy().into_owned();
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["resum", &pole, "--hbar", "0.1"], 2),
        (vec!["formal", &schema], 2),
        (vec!["formal", &syntax], 2),
        (vec!["formal", &missing], 2),
        (vec!["formal", &singular], 2),
        (vec!["resum", &catalan, "--hbar", "0.5"], 2),
        (vec!["resum", &catalan, "--hbar", "-0.1"], 2),
        (vec!["eigen", &coalescing, "--hbar", "0.1"], 2),
        (vec!["eigen", &catalan, "--hbar", "0.1"], 2),
        (vec!["frobnicate", &catalan], 2),
        (vec!["formal", &catalan, "--order", "x"], 2),
        (vec!["formal", &catalan, "--grid-h", "-1"], 2),
        (vec!["formal", &no_root], 3),
        (vec!["resum", &catalan, "--n-max", "1"], 3),
        (vec!["check", &catalan, "--grid-h", "0.05", "--xi-max", "10"], 3),
    ];
    for (args, expected) in cases {
        let mut full = args.clone();
        full.push("--quiet");
        assert_eq!(exec(&full), expected, "{args:?}");
    }
}

#[test]
fn error_messages_name_the_failing_condition() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_exactpert");
    let singular = write(
        dir.path(),
        "singular.json",
        r#"{"kind":"implicit","dim":1,"coeffs":[{"k":0,"m":[2],"i":1,"v":[1,0]},{"k":1,"m":[0],"i":1,"v":[-1,0]}],"seed":[[0,0]]}"#,
    );
    let out = Command::new(bin).args(["formal", &singular]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("Jacobian singular: IFT hypothesis fails"), "{msg}");
    let schema = write(dir.path(), "schema.json", r#"{"kind":"matrix","size":2,"orders":[[[[1,0],[0,0]]]]}"#);
    let out = Command::new(bin).args(["matrix", &schema]).output().unwrap();
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("orders[0]"), "{msg}");
}
