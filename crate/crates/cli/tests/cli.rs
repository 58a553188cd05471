use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn simpair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simpair"))
        .args(args)
        .output()
        .expect("run simpair")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].clone()).collect()
}

fn schema_check(report: &Value) {
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../schema/run_report.schema.json"
    ))
    .unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let messages: Vec<String> = match compiled.validate(report) {
        Ok(()) => Vec::new(),
        Err(errors) => errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect(),
    };
    assert!(messages.is_empty(), "report violates schema: {messages:?}");
}

fn synth(dir: &TempDir, name: &str, args: &[&str]) -> PathBuf {
    let out = path(dir, name);
    let mut full = vec!["synth", "--output", s(&out)];
    full.extend_from_slice(args);
    let run = simpair(&full);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    out
}

#[test]
fn sessionize_appends_session_columns() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "events.csv");
    // minutes 0, 10, 30, 120, 130, deliberately out of order
    fs::write(
        &input,
        "user,ts,note\nu,7200,d\nu,0,a\nu,600,b\nu,7800,e\nu,1800,c\n",
    )
    .unwrap();
    let output = path(&dir, "sessions.csv");
    let run = simpair(&[
        "sessionize",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--actor",
        "user",
        "--time",
        "ts",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let (header, rows) = read_rows(&output);
    assert_eq!(
        header,
        [
            "user",
            "ts",
            "note",
            "session_id",
            "session_index",
            "session_length"
        ]
    );
    assert_eq!(column(&header, &rows, "note"), ["a", "b", "c", "d", "e"]);
    assert_eq!(
        column(&header, &rows, "session_index"),
        ["1", "2", "3", "1", "2"]
    );
    assert_eq!(
        column(&header, &rows, "session_length"),
        ["3", "3", "3", "2", "2"]
    );
    assert_eq!(
        column(&header, &rows, "session_id"),
        ["1", "1", "1", "2", "2"]
    );
}

#[test]
fn sessionize_rejects_zero_timeout() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "events.csv");
    fs::write(&input, "user,ts\nu,0\n").unwrap();
    let run = simpair(&[
        "sessionize",
        "--input",
        s(&input),
        "--output",
        s(&path(&dir, "o.csv")),
        "--actor",
        "user",
        "--time",
        "ts",
        "--timeout",
        "0",
    ]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("timeout"));
}

#[test]
fn sessionize_header_only() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "events.csv");
    fs::write(&input, "user,ts\n").unwrap();
    let output = path(&dir, "o.csv");
    let run = simpair(&[
        "sessionize",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--actor",
        "user",
        "--time",
        "ts",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(
        fs::read_to_string(&output).unwrap(),
        "user,ts,session_id,session_index,session_length\n"
    );
}

#[test]
fn sessionize_reports_bad_timestamp_row() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "events.csv");
    fs::write(&input, "user,ts\nu,0\nu,soon\n").unwrap();
    let run = simpair(&[
        "sessionize",
        "--input",
        s(&input),
        "--output",
        s(&path(&dir, "o.csv")),
        "--actor",
        "user",
        "--time",
        "ts",
    ]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("row 2"), "{}", stderr(&run));
}

#[test]
fn detect_admissions_reversal_with_curves() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "adm.csv",
        &["--generator", "admissions", "--seed", "4"],
    );
    let curves = path(&dir, "curves");
    let report = path(&dir, "report.json");
    let run = simpair(&[
        "detect",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--x",
        "applicant_group",
        "--z",
        "department",
        "--subgroup-test",
        "sign",
        "--curves",
        s(&curves),
        "--output",
        s(&report),
    ]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["pairs"][0]["verdict"], "Reversal");
    assert_eq!(json["command"], "detect");
    assert_eq!(json["invocation"]["subgroup_test"], "sign");
    schema_check(&json);

    let (header, rows) = read_rows(&curves.join("applicant_group__department.csv"));
    assert_eq!(header, ["pair", "group", "x_bin", "mean_outcome", "n"]);
    let find = |group: &str, x: &str| {
        rows.iter()
            .find(|r| r[1] == group && r[2] == x)
            .map(|r| (r[3].parse::<f64>().unwrap(), r[4].clone()))
            .unwrap()
    };
    assert_eq!(find("aggregate", "1"), (34.0 / 105.0, "105".to_string()));
    assert_eq!(find("aggregate", "0"), (71.0 / 105.0, "105".to_string()));
    assert_eq!(find("A", "1"), (0.3, "100".to_string()));
    assert_eq!(find("B", "0"), (0.7, "100".to_string()));
}

#[test]
fn detect_homogeneous_sessions_consistent() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "homog.csv",
        &[
            "--generator",
            "sessions",
            "--seed",
            "2",
            "--n-actors",
            "6000",
            "--base-per-len",
            "0",
        ],
    );
    let run = simpair(&[
        "detect",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--actor",
        "user",
        "--time",
        "ts",
        "--x",
        "session_index",
        "--z",
        "session_length",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let json: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(json["pairs"][0]["verdict"], "Consistent");
    schema_check(&json);
}

#[test]
fn detect_unknown_column_names_it() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "adm.csv",
        &["--generator", "admissions", "--seed", "0"],
    );
    let run = simpair(&[
        "detect",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--x",
        "no_such_column",
        "--z",
        "department",
    ]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("no_such_column"), "{}", stderr(&run));
}

#[test]
fn detect_rejects_bad_config() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "adm.csv",
        &["--generator", "admissions", "--seed", "0"],
    );
    let run = simpair(&[
        "detect",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--x",
        "applicant_group",
        "--z",
        "department",
        "--alpha",
        "1.5",
    ]);
    assert_eq!(code(&run), 1);
}

#[test]
fn detect_session_features_need_actor_and_time() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "s.csv",
        &["--generator", "sessions", "--seed", "0", "--n-actors", "20"],
    );
    let run = simpair(&[
        "detect",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--x",
        "session_index",
        "--z",
        "session_length",
    ]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("--actor"));
}

#[test]
fn timing_flag_adds_duration() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "adm.csv",
        &["--generator", "admissions", "--seed", "0"],
    );
    let base = [
        "detect",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--x",
        "applicant_group",
        "--z",
        "department",
    ];
    let plain: Value = serde_json::from_slice(&simpair(&base).stdout).unwrap();
    assert!(plain.get("duration_seconds").is_none());
    let mut timed_args = base.to_vec();
    timed_args.push("--timing");
    let timed: Value = serde_json::from_slice(&simpair(&timed_args).stdout).unwrap();
    assert!(timed["duration_seconds"].as_f64().unwrap() >= 0.0);
    schema_check(&timed);
}

fn shuffle_args<'a>(data: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "shuffle-test",
        "--input",
        data,
        "--outcome",
        "accepted",
        "--actor",
        "user",
        "--time",
        "ts",
        "--x",
        "session_index",
        "--z",
        "session_length",
        "--strategy",
        "intervals",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn shuffle_test_indicates_paradox_deterministically() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "se.csv",
        &[
            "--generator",
            "sessions",
            "--seed",
            "9",
            "--n-actors",
            "2000",
        ],
    );
    let first = simpair(&shuffle_args(
        s(&data),
        &["--replicates", "50", "--seed", "17"],
    ));
    assert_eq!(code(&first), 2, "{}", stderr(&first));
    let second = simpair(&shuffle_args(
        s(&data),
        &["--replicates", "50", "--seed", "17"],
    ));
    assert_eq!(code(&second), 2);
    assert_eq!(first.stdout, second.stdout, "reports differ between runs");

    let json: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(json["shuffle"]["verdict"], "ParadoxIndicated");
    assert_eq!(
        json["shuffle"]["per_replicate"].as_array().unwrap().len(),
        50
    );
    assert_eq!(json["invocation"]["seed"], 17);
    schema_check(&json);
}

#[test]
fn shuffle_test_not_indicated_exit_zero() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "flat.csv",
        &[
            "--generator",
            "sessions",
            "--seed",
            "1",
            "--n-actors",
            "300",
            "--base-per-len",
            "0",
        ],
    );
    let run = simpair(&[
        "shuffle-test",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--actor",
        "user",
        "--time",
        "ts",
        "--x",
        "session_index",
        "--z",
        "session_length",
        "--strategy",
        "attribute:session_index",
        "--replicates",
        "20",
        "--seed",
        "5",
    ]);
    let json: Value = serde_json::from_slice(&run.stdout).unwrap();
    let verdict = json["shuffle"]["verdict"].as_str().unwrap();
    let expected = match verdict {
        "ParadoxIndicated" => 2,
        "NotIndicated" => 0,
        _ => 3,
    };
    assert_eq!(code(&run), expected);
    assert_eq!(verdict, "NotIndicated");
    assert_eq!(
        json["shuffle"]["strategy"],
        serde_json::json!({"kind": "attribute_shuffle", "attribute": "session_index", "scope": "global"})
    );
    schema_check(&json);
}

#[test]
fn shuffle_test_argument_errors() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "se.csv",
        &["--generator", "sessions", "--seed", "0", "--n-actors", "50"],
    );
    let zero = simpair(&shuffle_args(
        s(&data),
        &["--replicates", "0", "--seed", "1"],
    ));
    assert_eq!(code(&zero), 1);
    let unseeded = simpair(&shuffle_args(s(&data), &["--replicates", "5"]));
    assert_eq!(code(&unseeded), 1);
    assert!(stderr(&unseeded).contains("--seed"));
    let bad_strategy = simpair(&[
        "shuffle-test",
        "--input",
        s(&data),
        "--outcome",
        "accepted",
        "--x",
        "session_index",
        "--z",
        "session_length",
        "--strategy",
        "sideways",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&bad_strategy), 1);
}

#[test]
fn synth_admissions_defaults() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "adm.csv",
        &["--generator", "admissions", "--seed", "0"],
    );
    let (header, rows) = read_rows(&data);
    assert_eq!(rows.len(), 210);
    let group = column(&header, &rows, "applicant_group");
    assert_eq!(group.iter().filter(|g| *g == "1").count(), 105);
    let truth: Value =
        serde_json::from_str(&fs::read_to_string(path(&dir, "adm.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["expected_verdict"], "Reversal");
    assert_eq!(truth["hidden_labels"].as_array().unwrap().len(), 210);
}

#[test]
fn synth_sessions_row_bounds() {
    let dir = TempDir::new().unwrap();
    let data = synth(
        &dir,
        "s.csv",
        &[
            "--generator",
            "sessions",
            "--seed",
            "3",
            "--n-actors",
            "10",
            "--max-len",
            "5",
            "--sessions-per-actor",
            "1",
        ],
    );
    let (_, rows) = read_rows(&data);
    assert!((10..=50).contains(&rows.len()), "{} rows", rows.len());
}

#[test]
fn synth_rejects_invalid_probabilities() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["--generator", "survivor", "--p-reoffend", "1.2"],
        vec!["--generator", "sessions", "--base-intercept", "0.95"],
        vec!["--generator", "admissions", "--cells", "A:1:5:9"],
    ] {
        let out = path(&dir, "bad.csv");
        let mut full = vec!["synth", "--seed", "1", "--output", s(&out)];
        full.extend(args.iter());
        let run = simpair(&full);
        assert_eq!(code(&run), 1, "{args:?}");
    }
}

#[test]
fn synth_requires_seed_and_rejects_foreign_flags() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "x.csv");
    let run = simpair(&["synth", "--generator", "survivor", "--output", s(&out)]);
    assert_eq!(code(&run), 1);
    let run = simpair(&[
        "synth",
        "--generator",
        "admissions",
        "--seed",
        "1",
        "--output",
        s(&out),
        "--periods",
        "4",
    ]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("--periods"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&simpair(&["--help"])), 0);
    assert_eq!(code(&simpair(&["--version"])), 0);
    assert_eq!(code(&simpair(&["detect", "--help"])), 0);
    assert_eq!(code(&simpair(&["frobnicate"])), 1);
}
