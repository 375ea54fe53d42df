use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn rdkg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdkg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("RDKG_LLM_API_KEY")
        .env_remove("RDKG_EMBEDDING_API_KEY")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_offline_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let md = fixture("two_topics.md");
    let ing = rdkg(&out, &["ingest", path(&md)]);
    assert!(ing.status.success(), "{}", stderr(&ing));
    assert!(String::from_utf8_lossy(&ing.stdout).contains("units"));
    let boot = rdkg(&out, &["bootstrap", path(&fixture("topic_a.md"))]);
    assert!(boot.status.success(), "{}", stderr(&boot));

    let lecture = out.join("lecture.json");
    let kg = out.join("kg.json");
    let al = rdkg(&out, &["align", path(&lecture), path(&kg), "--dump-coupling"]);
    assert!(al.status.success(), "{}", stderr(&al));
    assert!(out.join("coupling.json").is_file());

    let refine = rdkg(&out, &["refine", path(&lecture), path(&kg), "--max-iterations", "3"]);
    assert!(refine.status.success(), "{}", stderr(&refine));
    for f in ["kg_refined.json", "trace.jsonl", "rd_curve.csv", "report.json", "plot_data.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report = rdkg(&dir.path().join("rep"), &["report", path(&out.join("trace.jsonl"))]);
    assert!(report.status.success(), "{}", stderr(&report));
}

#[test]
fn missing_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = rdkg(dir.path(), &["ingest", path(&dir.path().join("absent.md"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("file not found"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rdkg(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(rdkg(dir.path(), &["ingest"]).status.code(), Some(1));
    let bad_set = rdkg(dir.path(), &["--set", "unknown_key=3", "ingest", path(&fixture("topic_a.md"))]);
    assert_eq!(bad_set.status.code(), Some(1));
    let bad_value = rdkg(dir.path(), &["--epsilon", "-1", "ingest", path(&fixture("topic_a.md"))]);
    assert_eq!(bad_value.status.code(), Some(1));
}

#[test]
fn broken_graph_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(rdkg(&out, &["ingest", path(&fixture("topic_a.md"))]).status.success());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[1, 2").unwrap();
    let o = rdkg(&out, &["align", path(&out.join("lecture.json")), path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_on_empty_trace_fails() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    std::fs::write(&trace, "").unwrap();
    let o = rdkg(dir.path(), &["report", path(&trace)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        assert!(rdkg(&out, &["ingest", path(&fixture("two_topics.md"))]).status.success());
        assert!(rdkg(&out, &["bootstrap", path(&fixture("two_topics.md"))]).status.success());
        let o = rdkg(&out, &["refine", path(&out.join("lecture.json")), path(&out.join("kg.json"))]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["kg_refined.json", "trace.jsonl", "rd_curve.csv", "report.json", "plot_data.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}
