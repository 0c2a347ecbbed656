use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const LINE: &str = "id,x,w,y\na,0,T,1\nb,1,C,0\nc,10,T,1\nd,11,C,0\n";

fn genmatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genmatch"))
        .current_dir(dir)
        .args(args)
        .env_remove("GENMATCH_THREADS")
        .output()
        .expect("binary runs")
}

fn setup(data: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), data).unwrap();
    dir
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const MATCH: &[&str] = &[
    "match",
    "--input",
    "data.csv",
    "--treatment-col",
    "w",
    "--id-col",
    "id",
    "--outcome-col",
    "y",
    "--constraints",
    "1,1,2",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(dir: &Path, args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    genmatch(dir, &refs)
}

#[test]
fn line_example_matches_two_groups() {
    let dir = setup(LINE);
    let out = genmatch(dir.path(), MATCH);
    assert!(out.status.success(), "{}", stderr(&out));
    let matches = fs::read_to_string(dir.path().join("matches.csv")).unwrap();
    assert_eq!(matches, "id,group,weight\na,1,0.5\nb,1,0.5\nc,2,0.5\nd,2,0.5\n");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["lmax"], 1.0);
    assert_eq!(report["groups"], 2);
    assert_eq!(report["att"], 1.0);
}

#[test]
fn caliper_infeasibility_exits_two() {
    let dir = setup(LINE);
    let out = run(dir.path(), &with(MATCH, &["--caliper-gc", "0.1"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("a, b, c, d"), "{}", stderr(&out));
}

#[test]
fn infeasible_constraints_exit_two() {
    let dir = setup(LINE);
    let mut args = MATCH.to_vec();
    *args.last_mut().unwrap() = "3,1,4";
    assert_eq!(genmatch(dir.path(), &args).status.code(), Some(2));
    *args.last_mut().unwrap() = "1,1,1,3";
    assert_eq!(genmatch(dir.path(), &args).status.code(), Some(3));
}

#[test]
fn input_errors_exit_three() {
    let dir = setup("id,x,w\na,0,T\nb,oops,C\n");
    let out = genmatch(
        dir.path(),
        &[
            "match",
            "--input",
            "data.csv",
            "--treatment-col",
            "w",
            "--id-col",
            "id",
            "--constraints",
            "1,1,2",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("oops"));
    let out = genmatch(
        dir.path(),
        &[
            "match",
            "--input",
            "missing.csv",
            "--treatment-col",
            "w",
            "--constraints",
            "1,1,2",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let out = genmatch(
        dir.path(),
        &[
            "match",
            "--input",
            "data.csv",
            "--treatment-col",
            "nope",
            "--constraints",
            "1,1,2",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let out = genmatch(dir.path(), &["match", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(3));
    let out = genmatch(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn evaluate_round_trip_is_identical() {
    let dir = setup("id,x1,x2,w,y\n1,0.1,0.3,1,2.0\n2,0.2,0.1,0,1.5\n3,0.9,0.8,1,0.5\n4,0.7,0.9,0,0.1\n5,0.75,0.85,0,0.3\n6,0.4,0.4,0,1.0\n");
    for metric in ["euclidean", "mahalanobis", "scalar"] {
        let out = genmatch(
            dir.path(),
            &[
                "match",
                "--input",
                "data.csv",
                "--treatment-col",
                "w",
                "--id-col",
                "id",
                "--outcome-col",
                "y",
                "--constraints",
                "1,1,2",
                "--metric",
                metric,
                "--output-dir",
                "m",
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        let out = genmatch(
            dir.path(),
            &[
                "evaluate",
                "--input",
                "data.csv",
                "--treatment-col",
                "w",
                "--id-col",
                "id",
                "--outcome-col",
                "y",
                "--matches",
                "m/matches.csv",
                "--metric",
                metric,
                "--constraints",
                "1,1,2",
                "--strict",
                "--output-dir",
                "e",
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        assert_eq!(
            fs::read(dir.path().join("m/report.json")).unwrap(),
            fs::read(dir.path().join("e/report.json")).unwrap(),
            "{metric}"
        );
    }
}

#[test]
fn strict_evaluation_of_violating_groups() {
    let dir = setup(LINE);
    fs::write(dir.path().join("bad.csv"), "id,group,weight\na,1,\nc,1,\nb,2,\nd,2,\n").unwrap();
    let base = [
        "evaluate",
        "--input",
        "data.csv",
        "--treatment-col",
        "w",
        "--id-col",
        "id",
        "--matches",
        "bad.csv",
        "--constraints",
        "1,1,2",
    ];
    let out = genmatch(dir.path(), &base);
    assert!(out.status.success());
    assert!(stderr(&out).contains("warning"));
    assert!(stderr(&out).contains("group 1"));
    let out = run(dir.path(), &with(&base, &["--strict"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_rejects_mismatched_ids() {
    let dir = setup(LINE);
    fs::write(dir.path().join("m.csv"), "id,group\na,1\nb,1\nc,2\n").unwrap();
    let out = genmatch(
        dir.path(),
        &[
            "evaluate",
            "--input",
            "data.csv",
            "--treatment-col",
            "w",
            "--id-col",
            "id",
            "--matches",
            "m.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("unit id mismatch"));
    fs::write(dir.path().join("m.csv"), "id,group\na,1\nb,1\nc,2\nd,2\ne,2\n").unwrap();
    let out = genmatch(
        dir.path(),
        &[
            "evaluate",
            "--input",
            "data.csv",
            "--treatment-col",
            "w",
            "--id-col",
            "id",
            "--matches",
            "m.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn tc_objective_needs_two_conditions() {
    let dir = setup("x,w\n0,a\n1,b\n2,c\n");
    fs::write(dir.path().join("m.csv"), "id,group\n1,1\n2,1\n3,1\n").unwrap();
    let base = [
        "evaluate",
        "--input",
        "data.csv",
        "--treatment-col",
        "w",
        "--matches",
        "m.csv",
        "--objective",
    ];
    let out = run(dir.path(), &with(&base, &["lmax_tc"]));
    assert_eq!(out.status.code(), Some(3));
    let out = run(dir.path(), &with(&base, &["lmax"]));
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "lmax 2");
}

#[test]
fn focus_on_treated_units() {
    // The far control is outside the focus and not needed by any treated unit.
    let dir = setup("id,x,w\na,0,T\nb,1,C\nc,2,T\nd,3,C\ne,100,C\n");
    let base = [
        "match",
        "--input",
        "data.csv",
        "--treatment-col",
        "w",
        "--id-col",
        "id",
        "--constraints",
        "1,1,2",
    ];
    let out = run(
        dir.path(),
        &with(&base, &["--focus", "treated", "--treated-label", "T"]),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let matches = fs::read_to_string(dir.path().join("matches.csv")).unwrap();
    assert!(matches.contains("e,,"), "{matches}");
    fs::write(dir.path().join("focus.txt"), "a\nc\n").unwrap();
    let out = run(dir.path(), &with(&base, &["--focus", "focus.txt", "--output-dir", "f"]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.path().join("f/matches.csv")).unwrap(), matches);
    fs::write(dir.path().join("focus.txt"), "zz\n").unwrap();
    let out = run(dir.path(), &with(&base, &["--focus", "focus.txt"]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn digraph_dump_lists_arcs() {
    let dir = setup(LINE);
    let out = run(dir.path(), &with(MATCH, &["--dump-digraph", "g.txt"]));
    assert!(out.status.success());
    let edges = fs::read_to_string(dir.path().join("g.txt")).unwrap();
    assert_eq!(edges.lines().count(), 8);
    assert!(edges.lines().any(|l| l == "a b 1"));
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = setup(LINE);
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"input": "data.csv", "treatment_col": "w", "id_col": "id", "constraints": "1,1,2", "output_dir": "from_file"}"#,
    )
    .unwrap();
    let out = genmatch(dir.path(), &["match", "--config", "cfg.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("from_file/matches.csv").exists());
    let out = genmatch(
        dir.path(),
        &["match", "--config", "cfg.json", "--output-dir", "from_flag"],
    );
    assert!(out.status.success());
    assert!(dir.path().join("from_flag/matches.csv").exists());
    fs::write(dir.path().join("bad.json"), r#"{"inptu": "data.csv"}"#).unwrap();
    assert_eq!(
        genmatch(dir.path(), &["match", "--config", "bad.json"]).status.code(),
        Some(3)
    );
    fs::write(dir.path().join("bad.json"), "not json").unwrap();
    assert_eq!(
        genmatch(dir.path(), &["match", "--config", "bad.json"]).status.code(),
        Some(3)
    );
}

#[test]
fn thread_settings() {
    let dir = setup(LINE);
    let out = run(dir.path(), &with(MATCH, &["--threads", "0"]));
    assert_eq!(out.status.code(), Some(3));
    let out = Command::new(env!("CARGO_BIN_EXE_genmatch"))
        .current_dir(dir.path())
        .args(MATCH)
        .env("GENMATCH_THREADS", "two")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let out = Command::new(env!("CARGO_BIN_EXE_genmatch"))
        .current_dir(dir.path())
        .args(MATCH)
        .env("GENMATCH_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "simulate".to_string(),
            "--n".into(),
            "1000".into(),
            "--reps".into(),
            "100".into(),
            "--seed".into(),
            "7".into(),
            "--methods".into(),
            "gfm,greedy11".into(),
            "--output-dir".into(),
            out.into(),
        ]
    };
    for out in ["a", "b"] {
        let o = run(dir.path(), &args(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["sim_report.csv", "sim_report.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap()
        );
    }
    let csv = fs::read_to_string(dir.path().join("a/sim_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("gfm,100,0,"));
}

#[test]
fn simulate_guards_and_generated_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = genmatch(
        dir.path(),
        &["simulate", "--methods", "oracle", "--n", "5000", "--reps", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("capped"));
    let out = genmatch(dir.path(), &["simulate", "--methods", "nope"]);
    assert_eq!(out.status.code(), Some(3));
    let out = genmatch(
        dir.path(),
        &["simulate", "--n", "200", "--reps", "2", "--methods", "gfm", "--raw"],
    );
    assert!(out.status.success());
    assert!(stderr(&out).starts_with("seed: "));
    assert!(dir.path().join("sim_raw.csv").exists());
}
