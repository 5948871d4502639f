use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stratlogit"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn stratlogit")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn communities_on_two_triangles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = run(&[
        "communities",
        "--coauthor-edges",
        s(&fixture("two_triangles.csv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("2 communities"));

    let text = std::fs::read_to_string(out.join("partition.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("author,community_id"));
    let ids: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ids, ["0", "0", "0", "1", "1", "1"]);

    let steps: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dendrogram.json")).unwrap()).unwrap();
    assert_eq!(steps[0]["removed_edge"], serde_json::json!(["c", "d"]));
}

#[test]
fn target_community_count_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "communities",
        "--coauthor-edges",
        s(&fixture("two_triangles.csv")),
        "--target",
        "4",
        "--out",
        s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("communities.json")).unwrap()).unwrap();
    assert!(c["best"]["n_communities"].as_u64().unwrap() >= 4);
}

#[test]
fn describe_writes_table_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "describe",
        "--input",
        s(&fixture("cohort_459.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("descriptive.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("Variables,Mean,Standard Deviation,Minimum,Median,Maximum")
    );
    assert_eq!(text.lines().count(), 1 + 9);
    assert!(tmp.path().join("correlation.csv").is_file());
}

#[test]
fn unknown_column_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = run(&[
        "fit",
        "--input",
        s(&fixture("cohort_459.csv")),
        "--columns",
        "TD,NOT_A_FEATURE",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown_feature"), "{}", stderr(&o));
    assert!(
        !out.exists(),
        "nothing should be written before validation passes"
    );
}

#[test]
fn missing_input_is_reported_with_stage_and_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "report",
        "--input",
        "/definitely/not/here.csv",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("ingest stage") && e.contains("[io]"), "{e}");
}

#[test]
fn malformed_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "scholar_id,h_index\nx,1\n").unwrap();
    let o = run(&["ingest", "--input", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("ingest"));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .env("STRAT_THREADS", "zero")
        .args([
            "communities",
            "--coauthor-edges",
            s(&fixture("two_triangles.csv")),
            "--out",
            s(tmp.path()),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_writes_inference_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "fit",
        "--input",
        s(&fixture("cohort_459.csv")),
        "--columns",
        "TD,FR,C",
        "--out",
        s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("inference.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("Variable,Coef,Std.Err,z,P>|z|,Exp(B),Wald"));
    let vars: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(vars, ["const", "TD", "FR", "C"]);
}

#[test]
fn report_is_deterministic_across_runs_threads_and_regeneration() {
    let tmp = tempfile::tempdir().unwrap();
    let input = fixture("cohort_459.csv");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));

    let o = run(&["report", "--input", s(&input), "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .env("STRAT_THREADS", "1")
        .args(["report", "--input", s(&input), "--out", s(&b)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["report", "--from", s(&a), "--out", s(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let first = std::fs::read(a.join("report.json")).unwrap();
    assert!(!first.is_empty());
    for dir in [&b, &c] {
        for f in [
            "report.json",
            "comparison.csv",
            "trends.csv",
            "shap_full.csv",
            "features.csv",
        ] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(dir.join(f)).unwrap(),
                "{f} differs in {}",
                dir.display()
            );
        }
    }
}

#[test]
fn stepwise_selection_from_feature_table() {
    let tmp = tempfile::tempdir().unwrap();
    let i = tmp.path().join("i");
    let o = run(&["ingest", "--input", s(&fixture("cohort_459.csv")), "--out", s(&i)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "select",
        "--features",
        s(&i.join("features.csv")),
        "--select",
        "stepwise",
        "--out",
        s(&tmp.path().join("s")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("s/selection.json")).unwrap()).unwrap();
    assert_eq!(sel["mode"], "stepwise");
    let path = sel["stepwise_path"].as_array().unwrap();
    assert!(path[0]["removed"].is_null());
}
