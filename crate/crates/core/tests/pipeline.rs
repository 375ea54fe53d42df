mod common;

use std::path::{Path, PathBuf};

use common::*;
use rdkg_core::analysis::RdTrace;
use rdkg_core::kg::{validate_graph, KnowledgeGraph};
use rdkg_core::pipeline::{
    cmd_align, cmd_bootstrap, cmd_ingest, cmd_refine, cmd_report, RunConfig, COUPLING_FILE, REFINED_KG_FILE,
    TRACE_FILE,
};
use rdkg_core::Error;
use serde_json::Value;

fn ingest(cfg: &RunConfig, name: &str, out: &Path) -> PathBuf {
    cmd_ingest(cfg, &fixture(name), out).unwrap().artifact
}

fn write_kg(kg: &KnowledgeGraph, dir: &Path) -> PathBuf {
    let p = dir.join("input_kg.json");
    kg.save(&p).unwrap();
    p
}

#[test]
fn refine_merges_a_duplicated_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig::default();
    let lecture = ingest(&cfg, DUPLICATE_LECTURE, &out);
    let kg = write_kg(&duplicate_node_kg(), dir.path());
    let s = cmd_refine(&cfg, &lecture, &kg, &out).unwrap();
    assert!(s.complete);
    assert!(s.nodes_after < s.nodes_before);
    assert!(s.objective_after <= s.objective_before);
    let refined = KnowledgeGraph::load(&out.join(REFINED_KG_FILE)).unwrap();
    assert_eq!(refined.nodes.len(), s.nodes_after);
    assert!(validate_graph(&refined).is_empty());
}

#[test]
fn zero_iterations_leaves_the_graph_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig::layered(None, &[("max_iterations".into(), "0".into())]).unwrap();
    let lecture = ingest(&cfg, "two_topics.md", &out);
    let input = fallback_kg("topic_a.md");
    let kg = write_kg(&input, dir.path());
    let s = cmd_refine(&cfg, &lecture, &kg, &out).unwrap();
    assert_eq!(s.points, 1);
    assert_eq!((s.incumbent_t, s.knee), (0, 0));
    assert_eq!(s.objective_before, s.objective_after);
    assert_eq!(KnowledgeGraph::load(&s.kg_path).unwrap(), input);
    let trace = RdTrace::read_jsonl(&out.join(TRACE_FILE), cfg.refinement.beta).unwrap();
    assert_eq!(trace.points.len(), 1);
}

#[test]
fn report_rebuilds_files_from_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig::default();
    let lecture = ingest(&cfg, "two_topics.md", &out);
    let kg = write_kg(&fallback_kg("topic_a.md"), dir.path());
    let refined = cmd_refine(&cfg, &lecture, &kg, &out).unwrap();

    let again = dir.path().join("again");
    let r = cmd_report(&cfg, &refined.trace_path, &again).unwrap();
    assert_eq!(r.points, refined.points);
    assert_eq!(r.knee, refined.knee);
    assert_eq!(
        std::fs::read(again.join("rd_curve.csv")).unwrap(),
        std::fs::read(out.join("rd_curve.csv")).unwrap()
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(again.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["knee_index"], refined.knee);
    assert!(report["coverage_before"].is_null());
}

#[test]
fn report_rejects_short_or_missing_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(cmd_report(&cfg, &empty, dir.path()).is_err());
    assert!(matches!(
        cmd_report(&cfg, &dir.path().join("nope.jsonl"), dir.path()),
        Err(Error::FileNotFound(_))
    ));
}

#[test]
fn nested_output_directories_are_created() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a/b/c");
    let cfg = RunConfig::default();
    let lecture = ingest(&cfg, "topic_a.md", &out);
    assert!(lecture.is_file());
    let boot = cmd_bootstrap(&cfg, &fixture("topic_a.md"), &out).unwrap();
    assert!(boot.path.starts_with(&out));
}

#[test]
fn align_can_dump_the_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig::layered(None, &[("dump_coupling".into(), "true".into())]).unwrap();
    let lecture = ingest(&cfg, "two_topics.md", &out);
    let boot = cmd_bootstrap(&cfg, &fixture("two_topics.md"), &out).unwrap();
    let s = cmd_align(&cfg, &lecture, &boot.path, &out).unwrap();
    assert_eq!(s.coupling_dump.as_deref(), Some(out.join(COUPLING_FILE).as_path()));
    let dump: Value = serde_json::from_str(&std::fs::read_to_string(out.join(COUPLING_FILE)).unwrap()).unwrap();
    assert!(dump.is_object());
    assert!((0.0..=1.0).contains(&s.coverage));
}

#[test]
fn broken_inputs_map_to_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig::default();
    let lecture = ingest(&cfg, "two_topics.md", &out);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let err = cmd_align(&cfg, &lecture, &bad, &out).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let missing = cmd_refine(&cfg, &dir.path().join("none.json"), &bad, &out).unwrap_err();
    assert!(matches!(missing, Error::FileNotFound(_)));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = RunConfig::layered(None, &[("no_such_key".into(), "1".into())]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
